/* Copyright 2026 The pvl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end. Exit codes: 0 success or experiment pass,
// 1 experiment fail, 2 usage error, 3 data error.

#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pvl/harness.hpp"
#include "pvl/model_io.hpp"
#include "pvl/space.hpp"

namespace pvl {

inline constexpr int kExitOk = 0, kExitFail = 1, kExitUsage = 2, kExitData = 3;

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"prefill-equivalence", "serving-transfer", "model-change", "mini1",
                                               "mini2", "gateway", "plan-persistence", "moe-locality"};
  return ids;
}

// Runs one experiment with the bundled fixtures and planted defaults.
inline ExperimentReport run_experiment(const Harness& h, const std::string& id, std::uint64_t seed,
                                       std::optional<double> factor = std::nullopt) {
  PlantedSetup cfg;
  cfg.seed = seed;
  auto planted = [&] { return build_planted_model(default_planted_spec(), planted_base_spec(), seed); };
  if (id == "prefill-equivalence") return h.prefill_equivalence(seed, seed, 32);
  if (id == "serving-transfer") {
    const Vocabulary vocab = generic_vocabulary(24);
    return h.serving_transfer(random_model(small_spec(2), vocab, seed), random_transcript(vocab, seed, 3), 40, {13, 27});
  }
  if (id == "model-change") {
    const PlantedModel a = planted();
    const PlantedModel b = build_planted_model(alternative_plan_spec(), planted_base_spec(), seed);
    return h.model_change(seed, seed + 1, a, b, load_bundled_script("plan", a.vocab()));
  }
  if (id == "mini1") {
    const PlantedModel pm = planted();
    return h.mini1(pm.model, load_bundled_script("drift", pm.vocab()), pm.spec.gateway, cfg);
  }
  if (id == "mini2") {
    const PlantedModel pm = planted();
    return h.mini2(pm, load_bundled_script("aura", pm.vocab()), pm.spec.gateway, cfg, factor.value_or(cfg.edit_factor));
  }
  if (id == "gateway") return h.gateway(planted(), cfg);
  if (id == "plan-persistence") {
    const PlantedModel pm = planted();
    return h.plan_persistence(pm, load_bundled_script("plan", pm.vocab()), cfg);
  }
  if (id == "moe-locality") return h.moe_locality(seed, 1);
  fail(ErrorKind::kPrecondition, "unknown experiment '" + id + "'");
}

namespace detail {

inline LayerRange parse_layers(const std::string& s) {
  auto num = [&](const std::string& t) {
    std::size_t used = 0;
    const int v = std::stoi(t, &used);
    if (used != t.size() || v < 0) throw std::invalid_argument(t);
    return v;
  };
  try {
    const auto c = s.find(':');
    const LayerRange r = c == std::string::npos ? LayerRange::single(num(s)) : LayerRange{num(s.substr(0, c)), num(s.substr(c + 1))};
    if (r.lo <= r.hi) return r;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kPrecondition, "bad layer range '" + s + "' (want N or LO:HI with LO <= HI)");
}

inline void emit(std::ostream& out, const std::string& path, const std::string& body) {
  if (path.empty() || path == "-")
    out << body;
  else
    write_text_file(path, body);
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"pvl: toy transformer with residual-stream instrumentation and persona-vector tools", "pvl"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string model_path, transcript_path, out_dir, format = "json", out_path;
  std::uint64_t seed = 1;
  app.add_option("--model", model_path, "model file (PVL1 binary or JSON)");
  app.add_option("--transcript", transcript_path, "transcript JSON");
  app.add_option("--out-dir", out_dir, "directory for reports and figures");
  app.add_option("--seed", seed, "seed");
  app.add_option("--format", format, "json, csv or svg")->check(CLI::IsMember({"json", "csv", "svg"}));
  app.add_option("-o,--out", out_path, "output file (default stdout)");

  // Shared option values.
  int n_new = 8, layer = 0, k = 4, experts = 1;
  double alpha = 0.0, tau = 0.0, temperature = 1.0;
  bool sample = false, parallel = false;
  std::string direction_path, cache_path, layers = "0", phase = "all", kind = "planted", role = "assistant",
              target = "values", cloud_path;
  std::optional<double> factor, set_to, add;
  std::vector<std::string> positive, negative;
  std::string exp_id;

  auto* build = app.add_subcommand("build-model", "build a planted or random model");
  build->add_option("--kind", kind)->check(CLI::IsMember({"planted", "planted-alt", "random"}));
  build->add_option("--experts", experts);
  auto* gen = app.add_subcommand("generate", "continue a transcript");
  gen->add_option("-n,--n-new", n_new);
  gen->add_flag("--sample", sample);
  gen->add_option("--temperature", temperature);
  auto* pre = app.add_subcommand("prefill", "build a KV cache from a transcript");
  pre->add_flag("--parallel", parallel);
  auto* transfer = app.add_subcommand("transfer", "resume generation from a cache file");
  transfer->add_option("--cache", cache_path)->required();
  transfer->add_option("-n,--n-new", n_new);
  auto* edit = app.add_subcommand("edit-cache", "edit cached keys/values along a direction");
  edit->add_option("--cache", cache_path)->required();
  edit->add_option("--direction", direction_path)->required();
  edit->add_option("--layers", layers);
  edit->add_option("--role", role)->check(CLI::IsMember({"system", "user", "assistant", "any"}));
  edit->add_option("--target", target)->check(CLI::IsMember({"keys", "values", "both"}));
  edit->add_option("--factor", factor);
  edit->add_option("--set", set_to);
  edit->add_option("--add", add);
  auto* extract = app.add_subcommand("extract", "contrastive persona direction");
  extract->add_option("--positive", positive)->required();
  extract->add_option("--negative", negative)->required();
  extract->add_option("--layer", layer);
  auto* steer = app.add_subcommand("steer", "generate with a steering hook");
  auto* cap = app.add_subcommand("cap", "replay a transcript with activation capping");
  for (auto* sc : {steer, cap}) {
    sc->add_option("--direction", direction_path)->required();
    sc->add_option("--layers", layers);
    sc->add_option("--phase", phase)->check(CLI::IsMember({"generation_only", "user_only", "all"}));
    sc->add_option("-n,--n-new", n_new);
  }
  steer->add_option("--alpha", alpha);
  cap->add_option("--tau", tau);
  cap->add_option("--layer", layer, "monitored layer");
  auto* fold = app.add_subcommand("fold", "fold a steering vector into the weights");
  fold->add_option("--direction", direction_path)->required();
  fold->add_option("--alpha", alpha);
  fold->add_option("--layer", layer);
  auto* sweep = app.add_subcommand("sweep", "single-layer steering sweep over the planted probe suite");
  sweep->add_option("--direction", direction_path)->required();
  sweep->add_option("--alpha", alpha);
  auto* cloud = app.add_subcommand("cloud", "role cloud over the planted roles and battery");
  cloud->add_option("--layer", layer);
  auto* analyze = app.add_subcommand("analyze", "PCA of a role cloud");
  analyze->add_option("--cloud", cloud_path)->required();
  analyze->add_option("-k", k);
  auto* exp = app.add_subcommand("exp", "run an experiment");
  exp->add_option("id", exp_id)->required()->check(CLI::IsMember(experiment_ids()));
  exp->add_option("--factor", factor);
  auto* trace = app.add_subcommand("trace", "record residuals and attention streams");
  trace->add_option("-n,--n-new", n_new);
  trace->add_option("--direction", direction_path, "with --format csv: per-turn projection series");
  trace->add_option("--layer", layer);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    auto need = [&](const std::string& v, const char* flag) {
      require(!v.empty(), ErrorKind::kPrecondition, std::string("missing required option ") + flag);
    };
    auto model = [&] {
      need(model_path, "--model");
      return load_model(model_path);
    };
    auto transcript = [&](const Model& m) {
      need(transcript_path, "--transcript");
      return load_script(transcript_path, m.vocab());
    };
    auto direction = [&] { return direction_from_json(read_json_file(direction_path)); };
    auto dump = [&](const nlohmann::json& j) { detail::emit(out, out_path, j.dump(2) + "\n"); };

    if (*build) {
      need(out_path, "--out");
      if (kind == "random") {
        save_model(out_path, random_model(small_spec(experts), generic_vocabulary(24), seed));
      } else {
        const PlantedSpec ps = kind == "planted" ? default_planted_spec() : alternative_plan_spec();
        save_model(out_path, build_planted_model(ps, planted_base_spec(), seed).model);
      }
      return kExitOk;
    }
    if (*gen) {
      const Model m = model();
      const DecodePolicy pol = sample ? DecodePolicy::sample(seed, temperature) : DecodePolicy{};
      dump(generate(m, transcript(m), n_new, pol).to_json());
      return kExitOk;
    }
    if (*pre) {
      need(out_path, "--out");
      const Model m = model();
      const TokenStream s = transcript(m).flatten(m.vocab());
      write_binary_file(out_path, serialize_cache(parallel ? prefill_parallel(m, s) : prefill(m, s)));
      return kExitOk;
    }
    if (*transfer) {
      const Model m = model();
      Transcript tr = transcript(m);
      Session s = Session::resume(m, load_cache_for(m, read_binary_file(cache_path)), tr.flatten(m.vocab()));
      Rng rng(seed);
      continue_generation(s, tr, n_new, {}, rng);
      dump(tr.to_json());
      return kExitOk;
    }
    if (*edit) {
      need(out_path, "--out");
      const Model m = model();
      KVCache c = load_cache_for(m, read_binary_file(cache_path));
      const LayerRange lr = detail::parse_layers(layers);
      CacheSelector sel{lr.lo, lr.hi, {}, std::nullopt, EditTarget::kValues, std::nullopt};
      if (role != "any") sel.role = role_from_string(role);
      sel.target = target == "keys" ? EditTarget::kKeys : target == "both" ? EditTarget::kBoth : EditTarget::kValues;
      require(factor.has_value() + set_to.has_value() + add.has_value() == 1, ErrorKind::kPrecondition,
              "edit-cache: give exactly one of --factor, --set, --add");
      const EditMode mode = factor ? EditMode::scale(*factor) : set_to ? EditMode::set_to(*set_to) : EditMode::add(*add);
      const Direction d = direction();
      const EditReport rep = d.dim() == static_cast<std::size_t>(m.spec().d_head) ? edit_cache(c, sel, d, mode)
                                                                                    : edit_cache(c, sel, d, mode, m);
      write_binary_file(out_path, serialize_cache(c));
      if (rep.empty_selection()) err << "edit-cache: selector matched no entries\n";
      out << nlohmann::json{{"count", rep.count}, {"changed", rep.changed}, {"mean_abs_delta", rep.mean_abs_delta},
                            {"skipped_heads", rep.skipped_heads.size()}}.dump() << "\n";
      return kExitOk;
    }
    if (*extract) {
      const Model m = model();
      std::vector<Transcript> P, N;
      for (const auto& p : positive) P.push_back(load_script(p, m.vocab()));
      for (const auto& p : negative) N.push_back(load_script(p, m.vocab()));
      dump(direction_to_json(extract_direction(m, P, N, layer)));
      return kExitOk;
    }
    if (*steer) {
      const Model m = model();
      Hooks h;
      attach(h, m, SteeringPlan{direction(), detail::parse_layers(layers), alpha, phase_from_string(phase)});
      dump(generate(m, transcript(m), n_new, {}, h).to_json());
      return kExitOk;
    }
    if (*cap) {
      const Model m = model();
      const Direction d = direction();
      Hooks h;
      attach(h, m, CapPlan{d, detail::parse_layers(layers), tau, phase_from_string(phase)});
      const TracedRun run = trace_transcript(m, transcript(m), h, false);
      detail::emit(out, out_path, projection_series(run.trace, d, layer).to_csv());
      return kExitOk;
    }
    if (*fold) {
      need(out_path, "--out");
      const Model m = model();
      save_model(out_path, fold_bias(m, direction(), alpha, layer));
      return kExitOk;
    }
    if (*sweep) {
      const Model m = model();
      const auto suite = planted_probe_suite(m.vocab(), default_behavior_table(), alpha > 0 ? -1 : 1);
      const auto curve = layer_sweep(m, direction(), alpha, suite);
      std::ostringstream csv;
      csv << "layer,flip_rate\n";
      for (std::size_t l = 0; l < curve.size(); ++l) csv << l << ',' << curve[l] << '\n';
      if (format == "csv")
        detail::emit(out, out_path, csv.str());
      else
        dump({{"alpha", alpha}, {"flip_rate", curve}});
      return kExitOk;
    }
    if (*cloud) {
      const Model m = model();
      dump(build_role_cloud(m, planted_role_prompts(), planted_question_battery(), layer).to_json());
      return kExitOk;
    }
    if (*analyze) {
      const RoleCloud c = RoleCloud::from_json(read_json_file(cloud_path));
      const AxisReport r = analyze_cloud(c, static_cast<std::size_t>(std::min<int>(k, static_cast<int>(c.dim()))));
      if (format == "csv") {
        detail::emit(out, out_path, r.loadings_csv());
      } else if (format == "svg") {
        std::vector<SvgPoint> pts;
        for (std::size_t i = 0; i < c.size(); ++i) {
          const Vec x = c.vectors[i] - r.pca.mean;
          pts.push_back({c.labels[i], dot(x, r.pca.components[0]),
                         r.pca.components.size() > 1 ? dot(x, r.pca.components[1]) : 0.0});
        }
        detail::emit(out, out_path, svg_scatter("roles on the first two principal components", pts));
      } else {
        dump(r.to_json());
      }
      return kExitOk;
    }
    if (*exp) {
      Harness h(load_thresholds(), out_dir);
      const ExperimentReport r = run_experiment(h, exp_id, seed, factor);
      out << r.to_json().dump(2) << "\n";
      return r.pass ? kExitOk : kExitFail;
    }
    if (*trace) {
      const Model m = model();
      const TracedRun run = trace_run(m, transcript(m), n_new);
      if (format == "csv") {
        need(direction_path, "--direction");
        detail::emit(out, out_path, projection_series(run.trace, direction(), layer).to_csv());
      } else {
        dump(trace_to_json(run.trace, m.vocab()));
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "pvl: " << e.what() << "\n";
    return e.kind() == ErrorKind::kPrecondition ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    err << "pvl: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace pvl
