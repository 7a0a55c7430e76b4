/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dsmpc/error.hpp"
#include "dsmpc/harness.hpp"

namespace dsmpc {
namespace {

using nlohmann::json;

const char* const kRealFields[] = {"episode_reward", "episode_cost", "cost_indicator_rate",
                                   "predictor_mse", "kkt_residual", "wallclock"};

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Tick spacing of 1, 2 or 5 times a power of ten.
double nice_step(double span, int target) {
  const double raw = span / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

const char* to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::TrainPolicy: return "train_policy";
    case Phase::TrainPredictor: return "train_predictor";
    case Phase::Eval: return "eval";
  }
  return "unknown";
}

json to_json(const MetricsRecord& r) {
  json j = json::object();
  j["phase"] = to_string(r.phase);
  j["step"] = r.step;
  j["episode_reward"] = optional_json(r.episode_reward);
  j["episode_cost"] = optional_json(r.episode_cost);
  j["cost_indicator_rate"] = optional_json(r.cost_indicator_rate);
  j["predictor_mse"] = optional_json(r.predictor_mse);
  j["kkt_residual"] = optional_json(r.kkt_residual);
  j["sqp_iters"] = optional_json(r.sqp_iters);
  j["wallclock"] = optional_json(r.wallclock);
  if (r.mpc) j["mpc"] = *r.mpc;
  return j;
}

std::vector<std::string> metrics_schema_errors(const json& r) {
  std::vector<std::string> errs;
  if (!r.is_object()) return {"record is not an object"};
  const auto phase = r.find("phase");
  if (phase == r.end() || !phase->is_string() ||
      (*phase != "train_policy" && *phase != "train_predictor" && *phase != "eval")) {
    errs.push_back("phase must be one of train_policy, train_predictor, eval");
  }
  const auto step = r.find("step");
  if (step == r.end() || !step->is_number_integer() || step->get<std::int64_t>() < 0) {
    errs.push_back("step must be a non-negative integer");
  }
  for (const char* key : kRealFields) {
    const auto it = r.find(key);
    if (it == r.end()) {
      errs.push_back(std::string(key) + " missing");
    } else if (!it->is_null() && !it->is_number()) {
      errs.push_back(std::string(key) + " must be a number or null");
    }
  }
  auto nonneg = [&](const char* key) {
    const auto it = r.find(key);
    if (it != r.end() && it->is_number() && it->get<double>() < 0.0) {
      errs.push_back(std::string(key) + " must be >= 0");
    }
  };
  for (const char* key : {"episode_cost", "predictor_mse", "kkt_residual", "wallclock"}) nonneg(key);
  const auto rate = r.find("cost_indicator_rate");
  if (rate != r.end() && rate->is_number() && (rate->get<double>() < 0.0 || rate->get<double>() > 1.0)) {
    errs.push_back("cost_indicator_rate must be in [0, 1]");
  }
  const auto iters = r.find("sqp_iters");
  if (iters == r.end()) {
    errs.push_back("sqp_iters missing");
  } else if (!iters->is_null() && (!iters->is_number_integer() || iters->get<std::int64_t>() < 0)) {
    errs.push_back("sqp_iters must be a non-negative integer or null");
  }
  if (const auto mpc = r.find("mpc"); mpc != r.end()) {
    if (!mpc->is_object() || !mpc->contains("kkt") || !mpc->contains("sqp_iters") ||
        !mpc->contains("merit_final") || !mpc->contains("fallback") ||
        !(*mpc)["fallback"].is_boolean() || !(*mpc)["sqp_iters"].is_number_integer()) {
      errs.push_back("mpc must carry kkt, sqp_iters, merit_final and a boolean fallback");
    }
  }
  for (const auto& [key, value] : r.items()) {
    const bool known = key == "phase" || key == "step" || key == "sqp_iters" || key == "mpc" ||
                       std::find(std::begin(kRealFields), std::end(kRealFields), key) != std::end(kRealFields);
    if (!known) errs.push_back("unexpected key " + key);
  }
  return errs;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path), path_(path) {
  if (!out_) throw Error(ErrorCode::IoError, "cannot write metrics " + path.string());
}

void MetricsWriter::write(const MetricsRecord& record) {
  if (last_phase_ == record.phase && record.step <= last_step_) {
    throw Error(ErrorCode::IoError, "metrics: step must increase within phase " +
                                        std::string(to_string(record.phase)));
  }
  const json j = to_json(record);
  const auto errs = metrics_schema_errors(j);
  if (!errs.empty()) throw Error(ErrorCode::IoError, "metrics: " + errs.front());
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::IoError, "write failed for " + path_.string());
  last_phase_ = record.phase;
  last_step_ = record.step;
  ++count_;
}

std::vector<json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read metrics " + path.string());
  std::vector<json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    const auto errs = metrics_schema_errors(j);
    if (!errs.empty()) throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(n) + ": " + errs.front());
    out.push_back(std::move(j));
  }
  return out;
}

std::string format_number(double value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

void write_line_chart_svg(const std::filesystem::path& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
  static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  json meta = json::array();
  for (const auto& s : series) meta.push_back({{"name", s.name}, {"x", s.x}, {"y", s.y}});
  svg << "<metadata><![CDATA[" << meta.dump() << "]]></metadata>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  const double xs = nice_step(x1 - x0, 6), ys = nice_step(y1 - y0, 5);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs) {
    svg << "<line x1=\"" << px(t) << "\" y1=\"" << kTop + ph << "\" x2=\"" << px(t) << "\" y2=\""
        << kTop + ph + 5 << "\" stroke=\"#333\"/><text x=\"" << px(t) << "\" y=\"" << kTop + ph + 18
        << "\" text-anchor=\"middle\">" << format_number(t) << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9 * ys; t += ys) {
    svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << kLeft + pw << "\" y2=\""
        << py(t) << "\" stroke=\"#ddd\"/><text x=\"" << kLeft - 8 << "\" y=\"" << py(t) + 4
        << "\" text-anchor=\"end\">" << format_number(std::abs(t) < 1e-12 * ys ? 0.0 : t) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      svg << fixed(px(s.x[i])) << ',' << fixed(py(s.y[i])) << ' ';
    }
    svg << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kW - kRight + 36
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\""
        << kW - kRight + 42 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << svg.str();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace dsmpc
