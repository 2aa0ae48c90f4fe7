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

// Model files: "PVL1" binary and a JSON mirror for hand-edited test models.

#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pvl/binary.hpp"
#include "pvl/model.hpp"

namespace pvl {

inline constexpr std::uint16_t kModelFormatVersion = 1;

namespace detail {

inline std::uint32_t spec_fields_u32(int v) { return static_cast<std::uint32_t>(v); }

template <class Fn>
void for_spec_fields(ModelSpec& s, Fn&& f) {
  f("d_model", s.d_model);
  f("n_layers", s.n_layers);
  f("n_heads", s.n_heads);
  f("d_head", s.d_head);
  f("d_mlp", s.d_mlp);
  f("vocab_size", s.vocab_size);
  f("n_experts", s.n_experts);
  f("d_pos", s.d_pos);
}

}  // namespace detail

inline std::string serialize_model(const Model& m) {
  bin::Writer w;
  w.raw("PVL1");
  w.put(kModelFormatVersion);
  ModelSpec spec = m.spec();
  detail::for_spec_fields(spec, [&](const char*, int& v) { w.put(detail::spec_fields_u32(v)); });
  w.str(spec.model_id);
  for (const auto& sym : m.vocab().symbols()) w.str(sym);
  for_each_tensor(
      m.weights(), [&](const std::string&, const Mat& x) { w.f64s(x.span()); },
      [&](const std::string&, const Vec& x) { w.f64s(x.span()); });
  w.seal();
  return std::move(w).take();
}

inline Model deserialize_model(std::string_view bytes) {
  bin::Reader r(bytes, "model file");
  r.unseal();
  r.expect("PVL1");
  const auto version = r.get<std::uint16_t>();
  require(version == kModelFormatVersion, ErrorKind::kData,
          "model file: unsupported version " + std::to_string(version));
  ModelSpec spec;
  detail::for_spec_fields(spec, [&](const char*, int& v) { v = static_cast<int>(r.get<std::uint32_t>()); });
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kData, std::string("model file: ") + e.what());
  }
  require(spec.vocab_size <= 1 << 20 && spec.d_model <= 1 << 16, ErrorKind::kData, "model file: implausible spec");
  spec.model_id = r.str();
  std::vector<std::string> syms(static_cast<std::size_t>(spec.vocab_size));
  for (auto& s : syms) s = r.str();
  ModelWeights w = zero_weights(spec);
  for_each_tensor(
      w, [&](const std::string&, Mat& x) { r.f64s(x.span()); },
      [&](const std::string&, Vec& x) { r.f64s(x.span()); });
  r.finish();
  try {
    return Model(std::move(spec), std::move(w), Vocabulary(std::move(syms)));
  } catch (const Error& e) {
    fail(ErrorKind::kData, std::string("model file: ") + e.what());
  }
}

inline nlohmann::json model_to_json(const Model& m) {
  using nlohmann::json;
  json spec;
  ModelSpec s = m.spec();
  detail::for_spec_fields(s, [&](const char* k, int& v) { spec[k] = v; });
  spec["model_id"] = s.model_id;
  json tensors = json::object();
  for_each_tensor(
      m.weights(),
      [&](const std::string& name, const Mat& x) {
        tensors[name] = {{"shape", {x.rows(), x.cols()}},
                         {"data", std::vector<double>(x.span().begin(), x.span().end())}};
      },
      [&](const std::string& name, const Vec& x) {
        tensors[name] = {{"shape", {x.dim()}}, {"data", x.values()}};
      });
  return {{"format", "pvl-model"}, {"version", kModelFormatVersion}, {"spec", spec},
          {"vocab", m.vocab().symbols()}, {"tensors", tensors}};
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format") == "pvl-model", ErrorKind::kData, "model JSON: wrong format tag");
    ModelSpec spec;
    const auto& js = j.at("spec");
    detail::for_spec_fields(spec, [&](const char* k, int& v) {
      if (js.contains(k)) v = js.at(k).get<int>();
    });
    spec.model_id = js.value("model_id", std::string());
    try {
      spec.validate();
    } catch (const Error& e) {
      fail(ErrorKind::kData, std::string("model JSON: ") + e.what());
    }
    ModelWeights w = zero_weights(spec);
    const auto& jt = j.at("tensors");
    auto fill = [&](const std::string& name, std::span<double> dst) {
      // Missing tensors keep their zero/one defaults.
      if (!jt.contains(name)) return;
      const auto data = jt.at(name).at("data").get<std::vector<double>>();
      require(data.size() == dst.size(), ErrorKind::kData,
              "model JSON: tensor " + name + " has " + std::to_string(data.size()) + " values, expected " +
                  std::to_string(dst.size()));
      std::copy(data.begin(), data.end(), dst.begin());
    };
    for_each_tensor(
        w, [&](const std::string& n, Mat& x) { fill(n, x.span()); },
        [&](const std::string& n, Vec& x) { fill(n, x.span()); });
    return Model(std::move(spec), std::move(w), Vocabulary(j.at("vocab").get<std::vector<std::string>>()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("model JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kData) throw;
    fail(ErrorKind::kData, std::string("model JSON: ") + e.what());
  }
}

inline std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kData, "cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Chooses the format by content: binary magic or JSON.
inline Model load_model(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  if (bytes.rfind("PVL1", 0) == 0) return deserialize_model(bytes);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, path + ": neither a PVL1 model nor JSON (" + e.what() + ")");
  }
  return model_from_json(j);
}

inline void save_model(const std::string& path, const Model& m) {
  const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (json)
    write_text_file(path, model_to_json(m).dump(1) + "\n");
  else
    write_binary_file(path, serialize_model(m));
}

inline bool bit_equal(const Model& a, const Model& b) {
  if (!(a.spec() == b.spec()) || !(a.vocab() == b.vocab())) return false;
  return serialize_model(a) == serialize_model(b);
}

}  // namespace pvl
