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

// Experiment reports: JSON, CSV series and small SVG figures.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvl/error.hpp"
#include "pvl/trace.hpp"
#include "pvl/transcript.hpp"

namespace pvl {

inline constexpr int kReportSchemaVersion = 1;

// ISO-8601 UTC; the epoch when PVL_FIXED_CLOCK=1 so reports are byte-stable.
inline std::string report_timestamp() {
  const char* fixed = std::getenv("PVL_FIXED_CLOCK");
  std::time_t t = (fixed && std::string(fixed) == "1") ? 0 : std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Threshold {
  std::string metric;
  std::string op;  // ge, gt, le, lt, eq
  double value = 0.0;
  bool optional = false;  // skipped when the metric is absent

  bool holds(double x) const {
    if (op == "ge") return x >= value;
    if (op == "gt") return x > value;
    if (op == "le") return x <= value;
    if (op == "lt") return x < value;
    if (op == "eq") return x == value;
    fail(ErrorKind::kData, "unknown threshold op '" + op + "'");
  }
};

using ThresholdTable = std::map<std::string, std::vector<Threshold>>;

inline bool is_threshold_op(const std::string& op) {
  return op == "ge" || op == "gt" || op == "le" || op == "lt" || op == "eq";
}

inline ThresholdTable thresholds_from_json(const nlohmann::json& j) {
  ThresholdTable t;
  try {
    for (const auto& [exp, list] : j.at("experiments").items())
      for (const auto& c : list)
        t[exp].push_back({c.at("metric").get<std::string>(), c.at("op").get<std::string>(), c.at("value").get<double>(),
                          c.value("optional", false)});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed thresholds: ") + e.what());
  }
  for (const auto& [exp, list] : t)
    for (const auto& c : list)
      if (!is_threshold_op(c.op)) fail(ErrorKind::kData, "unknown threshold op '" + c.op + "' in " + exp);
  return t;
}

struct ExperimentReport {
  std::string experiment_id;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, double> metrics;
  std::vector<Threshold> thresholds;
  std::vector<std::string> notes;
  std::map<std::string, std::string> csv;  // file name -> contents
  std::map<std::string, std::string> svg;
  std::vector<std::string> artifacts;  // written paths
  bool pass = false;

  double metric(const std::string& name) const {
    auto it = metrics.find(name);
    require(it != metrics.end(), ErrorKind::kPrecondition, "report has no metric '" + name + "'");
    return it->second;
  }

  // A missing metric fails its threshold unless the threshold is optional.
  static bool evaluate(const std::map<std::string, double>& metrics, const std::vector<Threshold>& th) {
    for (const auto& t : th) {
      auto it = metrics.find(t.metric);
      if (it == metrics.end()) {
        if (t.optional) continue;
        return false;
      }
      if (!t.holds(it->second)) return false;
    }
    return true;
  }
  void decide() { pass = evaluate(metrics, thresholds); }

  nlohmann::json to_json() const {
    nlohmann::json th = nlohmann::json::array();
    for (const auto& t : thresholds) th.push_back({{"metric", t.metric}, {"op", t.op}, {"value", t.value}, {"optional", t.optional}});
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    return {{"schema_version", kReportSchemaVersion},
            {"experiment_id", experiment_id},
            {"timestamp", report_timestamp()},
            {"config", config},
            {"metrics", m},
            {"thresholds", th},
            {"pass", pass},
            {"notes", notes},
            {"artifacts", artifacts}};
  }

  // Writes CSV/SVG artifacts and report.json under dir/<experiment_id>/.
  void write(const std::string& out_dir) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(out_dir) / experiment_id;
    fs::create_directories(dir);
    artifacts.clear();
    for (const auto& [name, body] : csv) {
      write_text_file((dir / name).string(), body);
      artifacts.push_back((dir / name).string());
    }
    for (const auto& [name, body] : svg) {
      write_text_file((dir / name).string(), body);
      artifacts.push_back((dir / name).string());
    }
    const auto path = (dir / "report.json").string();
    artifacts.push_back(path);
    write_text_file(path, to_json().dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// SVG

struct SvgSeries {
  std::string name;
  std::vector<double> x, y;
};

struct SvgPoint {
  std::string label;
  double x = 0.0, y = 0.0;
};

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << (v == 0.0 ? 0.0 : v);
  return os.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct Frame {
  static constexpr double W = 640, H = 400, L = 60, R = 150, T = 30, B = 50;
  double x0, x1, y0, y1;
  Frame(double a, double b, double c, double d) : x0(a), x1(b), y0(c), y1(d) {
    if (x1 <= x0) x1 = x0 + 1.0;
    if (y1 <= y0) {
      y0 -= 0.5;
      y1 = y0 + 1.0;
    }
  }
  double px(double x) const { return L + (x - x0) / (x1 - x0) * (W - L - R); }
  double py(double y) const { return H - B - (y - y0) / (y1 - y0) * (H - T - B); }
};

inline const char* palette(std::size_t i) {
  static const char* c[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return c[i % 6];
}

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xl,
                 const std::string& yl) {
  os << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(Frame::W / 2 - 60) << "\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<line x1=\"" << fmt(Frame::L) << "\" y1=\"" << fmt(Frame::H - Frame::B) << "\" x2=\"" << fmt(Frame::W - Frame::R)
     << "\" y2=\"" << fmt(Frame::H - Frame::B) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(Frame::L) << "\" y1=\"" << fmt(Frame::T) << "\" x2=\"" << fmt(Frame::L) << "\" y2=\""
     << fmt(Frame::H - Frame::B) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << fmt(f.px(xv) - 10) << "\" y=\"" << fmt(Frame::H - Frame::B + 16) << "\" font-size=\"10\">"
       << fmt(xv) << "</text>\n";
    os << "<text x=\"5\" y=\"" << fmt(f.py(yv) + 3) << "\" font-size=\"10\">" << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << fmt(Frame::W / 2 - 40) << "\" y=\"" << fmt(Frame::H - 10) << "\" font-size=\"12\">"
     << xml_escape(xl) << "</text>\n";
  os << "<text x=\"5\" y=\"" << fmt(Frame::T - 8) << "\" font-size=\"12\">" << xml_escape(yl) << "</text>\n";
}

}  // namespace detail

inline std::string svg_lines(const std::string& title, const std::vector<SvgSeries>& series,
                             const std::string& xlabel = "turn", const std::string& ylabel = "projection") {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) x0 = x1 = s.x[i], y0 = y1 = s.y[i], first = false;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  detail::Frame f(x0, x1, y0, y1);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n";
  detail::axes(os, f, title, xlabel, ylabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(k) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << detail::fmt(f.px(s.x[i])) << ',' << detail::fmt(f.py(s.y[i]));
    os << "\"/>\n";
    os << "<text x=\"" << detail::fmt(detail::Frame::W - detail::Frame::R + 10) << "\" y=\"" << detail::fmt(40 + 16.0 * k)
       << "\" font-size=\"11\" fill=\"" << detail::palette(k) << "\">" << detail::xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string svg_scatter(const std::string& title, const std::vector<SvgPoint>& pts,
                               const std::string& xlabel = "PC1", const std::string& ylabel = "PC2") {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i == 0) x0 = x1 = pts[i].x, y0 = y1 = pts[i].y;
    x0 = std::min(x0, pts[i].x), x1 = std::max(x1, pts[i].x);
    y0 = std::min(y0, pts[i].y), y1 = std::max(y1, pts[i].y);
  }
  detail::Frame f(x0, x1, y0, y1);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n";
  detail::axes(os, f, title, xlabel, ylabel);
  for (const auto& p : pts) {
    os << "<circle cx=\"" << detail::fmt(f.px(p.x)) << "\" cy=\"" << detail::fmt(f.py(p.y)) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << detail::fmt(f.px(p.x) + 4) << "\" y=\"" << detail::fmt(f.py(p.y) - 4) << "\" font-size=\"8\">"
       << detail::xml_escape(p.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Assistant and user points of a series as two polylines.
inline std::vector<SvgSeries> split_by_role(const ProjectionSeries& s, const std::string& suffix) {
  SvgSeries a{"assistant" + suffix, {}, {}}, u{"user" + suffix, {}, {}};
  for (const auto& p : s.points) {
    auto& dst = p.role == TurnRole::kUser ? u : a;
    if (p.role == TurnRole::kSystem) continue;
    dst.x.push_back(p.turn);
    dst.y.push_back(p.mean_projection);
  }
  return {a, u};
}

}  // namespace pvl
