// Copyright 2026 The spinmix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Parameter sweeps behind the spinmix command line, and their tables.

#ifndef SPINMIX_SWEEP_HPP
#define SPINMIX_SWEEP_HPP

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/estimation.hpp"
#include "spinmix/interferometer.hpp"
#include "spinmix/meanfield.hpp"
#include "spinmix/noise.hpp"
#include "spinmix/parallel.hpp"

namespace spinmix::sweep {

using Cell = std::variant<double, std::string>;

/// Metadata (ordered key/value pairs), column names and rows.
struct Table {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void meta(const std::string& key, const std::string& value) { metadata.emplace_back(key, value); }
  std::optional<std::string> meta_value(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    return std::nullopt;
  }
  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw std::out_of_range("no column " + name);
  }
  double number(std::size_t row, const std::string& name) const {
    const Cell& c = rows.at(row).at(column(name));
    if (const double* d = std::get_if<double>(&c)) return *d;
    return std::numeric_limits<double>::quiet_NaN();
  }
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

inline Cell parse_cell(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (!s.empty() && end == s.c_str() + s.size()) return v;
  return s;
}

inline std::string cell_text(const Cell& c) {
  if (const double* d = std::get_if<double>(&c)) return format_number(*d);
  return std::get<std::string>(c);
}

/// `# key: value` metadata lines, a header row, then comma-separated rows.
inline std::string to_csv(const Table& t) {
  std::ostringstream os;
  for (const auto& [k, v] : t.metadata) os << "# " << k << ": " << v << "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << cell_text(row[i]);
    os << "\n";
  }
  return os.str();
}

inline Table from_csv(const std::string& text) {
  Table t;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ls(s);
    while (std::getline(ls, field, ',')) out.push_back(field);
    return out;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) t.meta(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    if (!header) {
      t.columns = split(line);
      header = true;
      continue;
    }
    std::vector<Cell> row;
    for (const auto& f : split(line)) row.push_back(parse_cell(f));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// {"metadata": {...}, "columns": [...], "rows": [[...], ...]}. Non-finite
/// numbers are written as the strings "nan", "inf", "-inf".
inline nlohmann::ordered_json to_json(const Table& t) {
  nlohmann::ordered_json j;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t.metadata) j["metadata"][k] = v;
  j["columns"] = t.columns;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (const auto& c : row) {
      if (const double* d = std::get_if<double>(&c))
        r.push_back(std::isfinite(*d) ? nlohmann::ordered_json(*d) : nlohmann::ordered_json(format_number(*d)));
      else
        r.push_back(std::get<std::string>(c));
    }
    j["rows"].push_back(std::move(r));
  }
  return j;
}

inline Table from_json(const nlohmann::ordered_json& j) {
  Table t;
  for (const auto& [k, v] : j.at("metadata").items()) t.meta(k, v.get<std::string>());
  t.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& r : j.at("rows")) {
    std::vector<Cell> row;
    for (const auto& c : r) {
      if (c.is_number())
        row.push_back(c.get<double>());
      else
        row.push_back(parse_cell(c.get<std::string>()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

enum class Format { kCsv, kJson };

inline std::string render(const Table& t, Format f) {
  return f == Format::kCsv ? to_csv(t) : to_json(t).dump(2) + "\n";
}

/// Parses "a,b,c" or an inclusive range "lo:step:hi" (or a mix of both,
/// comma-separated). Range points are rounded to 1e-12 so that e.g. -1.5:0.1:1.5
/// contains -1 exactly.
inline std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  std::istringstream is(spec);
  std::string item;
  auto num = [](const std::string& s) {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("bad number '" + s + "'");
    return v;
  };
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    const auto c1 = item.find(':');
    if (c1 == std::string::npos) {
      out.push_back(num(item));
      continue;
    }
    const auto c2 = item.find(':', c1 + 1);
    if (c2 == std::string::npos) throw std::invalid_argument("range must be lo:step:hi, got '" + item + "'");
    const double lo = num(item.substr(0, c1)), step = num(item.substr(c1 + 1, c2 - c1 - 1)),
                 hi = num(item.substr(c2 + 1));
    if (!(step > 0.0) || hi < lo) throw std::invalid_argument("range '" + item + "' must have step > 0 and lo <= hi");
    const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(std::round((lo + i * step) * 1e12) / 1e12);
  }
  if (out.empty()) throw std::invalid_argument("empty grid '" + spec + "'");
  return out;
}

inline PulseConvention parse_convention(const std::string& s) {
  if (s == "inverse") return PulseConvention::kInverse;
  if (s == "pi2") return PulseConvention::kPi2;
  throw std::invalid_argument("pulse convention must be inverse or pi2");
}

/// Settings shared by every command.
struct Common {
  PulseConvention convention = PulseConvention::kInverse;
  PositiveRatioPhase positive_phase = PositiveRatioPhase::kPi2;
  int theta_points = 70;  // per sign of theta
  std::uint64_t seed = 1;
  LossConfig loss{};
  DetectionConfig detection{};
  std::string command_line;
};

inline void stamp(Table& t, const std::string& command, const Common& c) {
  t.meta("program", "spinmix");
  t.meta("version", kVersion);
  t.meta("command", command);
  if (!c.command_line.empty()) t.meta("invocation", c.command_line);
  t.meta("seed", std::to_string(c.seed));
  t.meta("pulse_convention", to_string(c.convention));
  t.meta("positive_ratio_phase", c.positive_phase == PositiveRatioPhase::kPi2 ? "pi/2" : "0");
  t.meta("theta_points_per_side", std::to_string(c.theta_points));
  t.meta("poisson_epsilon", "1e-10");
  t.meta("units", "theta [rad]; area [chi t]; gamma_over_chi [1]; sigma [atoms]; F [rad^-2]");
}

inline void stamp_loss(Table& t, const LossConfig& l) {
  t.meta("loss.trajectories", std::to_string(l.n_traj));
  t.meta("loss.dt", format_number(l.dt));
  t.meta("loss.sector_sampling", to_string(l.sampling));
  t.meta("loss.derivative", to_string(l.derivative));
  t.meta("loss.paired_delta", format_number(l.paired_delta));
  t.meta("loss.mixing_enabled", l.mixing_enabled ? "true" : "false");
}

inline void stamp_detection(Table& t, const DetectionConfig& d) {
  t.meta("detection.grid_halfwidth_sigma", format_number(d.grid_halfwidth));
  t.meta("detection.grid_step_sigma", format_number(d.grid_step));
}

inline FisherOptOptions fisher_options(const Common& c) { return {ThetaGrid::with_points(c.theta_points), {}}; }

inline double meanfield_reference(double eta) {
  return eta > 0.0 && eta < 0.5 ? meanfield::critical_n(eta) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------

/// F(theta) and 1/Delta theta_ep^2 on the symmetric theta grid, plus the
/// shot-noise line F = nbar.
inline Table fisher_curve(double nbar, double eta, const Common& c) {
  const PulseSpec p1 = solve_pulse_for_eta(nbar, eta);
  const PulseSpec p2 = second_pulse(p1, c.convention);
  const PoissonMixture probe = poisson_sectors(nbar);
  const std::vector<double> thetas = ThetaGrid::with_points(c.theta_points).points();
  const auto dists = run_sequence_batch(probe, p1, p2, thetas);
  const FisherOpt opt = fisher_opt(probe, p1, p2, fisher_options(c));

  Table t;
  stamp(t, "fisher-curve", c);
  t.meta("nbar", format_number(nbar));
  t.meta("eta", format_number(eta));
  t.meta("area1", format_number(p1.area));
  t.meta("area2", format_number(p2.area));
  t.meta("phi2", format_number(p2.phi));
  t.meta("f_opt", format_number(opt.f_opt));
  t.meta("theta_opt", format_number(opt.theta_opt));
  t.columns = {"theta", "fisher", "inv_ep2", "shot_noise"};
  for (const auto& d : dists) {
    const double ep = error_propagation(d);
    t.rows.push_back({d.theta, fisher_information(d), std::isinf(ep) ? 0.0 : 1.0 / (ep * ep), nbar});
  }
  return t;
}

struct ScalingFit {
  double alpha = 0.0;
  double residual = 0.0;  // RMS relative deviation of F_opt from alpha nbar^2 on the tail
  double slope = 0.0;     // log-log regression slope on the tail
  int tail_points = 0;
};

/// Least squares F = alpha nbar^2 over nbar >= max(nbar)/2.
inline ScalingFit fit_scaling(const std::vector<double>& nbar, const std::vector<double>& f) {
  const double nmax = *std::max_element(nbar.begin(), nbar.end());
  double sfn = 0.0, sn4 = 0.0;
  std::vector<std::size_t> tail;
  for (std::size_t i = 0; i < nbar.size(); ++i)
    if (nbar[i] >= 0.5 * nmax) {
      tail.push_back(i);
      sfn += f[i] * nbar[i] * nbar[i];
      sn4 += std::pow(nbar[i], 4);
    }
  if (tail.empty()) throw std::invalid_argument("scaling fit needs at least one point");
  ScalingFit out;
  out.tail_points = static_cast<int>(tail.size());
  out.alpha = sfn / sn4;
  double r2 = 0.0;
  for (auto i : tail) r2 += std::pow(f[i] / (out.alpha * nbar[i] * nbar[i]) - 1.0, 2);
  out.residual = std::sqrt(r2 / tail.size());
  if (tail.size() < 2) {
    out.slope = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double mx = 0.0, my = 0.0;
  for (auto i : tail) {
    mx += std::log(nbar[i]);
    my += std::log(f[i]);
  }
  mx /= tail.size();
  my /= tail.size();
  double sxy = 0.0, sxx = 0.0;
  for (auto i : tail) {
    sxy += (std::log(nbar[i]) - mx) * (std::log(f[i]) - my);
    sxx += std::pow(std::log(nbar[i]) - mx, 2);
  }
  out.slope = sxy / sxx;
  return out;
}

struct AlphaLaw {
  double c = 0.0;  // alpha = eta^2 - c eta^3
  double c_residual = 0.0;
  double a = std::numeric_limits<double>::quiet_NaN();  // alpha = a eta^2 - b eta^3
  double b = std::numeric_limits<double>::quiet_NaN();
};

inline AlphaLaw fit_alpha_law(const std::vector<double>& eta, const std::vector<double>& alpha) {
  if (eta.empty()) throw std::invalid_argument("alpha fit needs at least one eta");
  AlphaLaw out;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    num += (eta[i] * eta[i] - alpha[i]) * std::pow(eta[i], 3);
    den += std::pow(eta[i], 6);
  }
  out.c = num / den;
  double r2 = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i)
    r2 += std::pow(alpha[i] - (eta[i] * eta[i] - out.c * std::pow(eta[i], 3)), 2);
  out.c_residual = std::sqrt(r2 / eta.size());
  if (eta.size() >= 2) {
    Eigen::MatrixXd A(eta.size(), 2);
    Eigen::VectorXd y(eta.size());
    for (std::size_t i = 0; i < eta.size(); ++i) {
      A(i, 0) = eta[i] * eta[i];
      A(i, 1) = -std::pow(eta[i], 3);
      y(i) = alpha[i];
    }
    const Eigen::Vector2d ab = A.colPivHouseholderQr().solve(y);
    out.a = ab(0);
    out.b = ab(1);
  }
  return out;
}

/// F_opt on the (eta, nbar) grid, alpha per eta and the alpha(eta) law.
inline Table scaling_fit(const std::vector<double>& etas, const std::vector<double>& nbars, const Common& c) {
  Table t;
  stamp(t, "scaling-fit", c);
  t.meta("eta", format_list(etas));
  t.meta("nbar", format_list(nbars));
  t.columns = {"eta", "nbar", "f_opt", "theta_opt", "alpha", "alpha_residual", "loglog_slope", "tail_points"};
  std::vector<double> alphas;
  std::vector<std::vector<Cell>> rows;
  for (double eta : etas) {
    std::vector<double> f;
    std::vector<double> th;
    for (double n : nbars) {
      const FisherOpt o = noiseless_fisher_opt(n, eta, c.convention, fisher_options(c));
      f.push_back(o.f_opt);
      th.push_back(o.theta_opt);
    }
    const ScalingFit fit = fit_scaling(nbars, f);
    alphas.push_back(fit.alpha);
    for (std::size_t i = 0; i < nbars.size(); ++i)
      t.rows.push_back({eta, nbars[i], f[i], th[i], fit.alpha, fit.residual, fit.slope, double(fit.tail_points)});
  }
  const AlphaLaw law = fit_alpha_law(etas, alphas);
  t.meta("alpha_law", "alpha = eta^2 - c eta^3");
  t.meta("c", format_number(law.c));
  t.meta("c_residual", format_number(law.c_residual));
  t.meta("alpha_law_free", "alpha = a eta^2 - b eta^3");
  t.meta("a", format_number(law.a));
  t.meta("b", format_number(law.b));
  return t;
}

/// F_opt against the area ratio of pulse 2 to pulse 1.
inline Table ratio_scan(double nbar, const std::vector<double>& etas, const std::vector<double>& ratios,
                        const Common& c) {
  Table t;
  stamp(t, "ratio-scan", c);
  t.meta("nbar", format_number(nbar));
  t.columns = {"eta", "ratio", "area1", "area2", "phi2", "f_opt", "theta_opt", "ssn"};
  const PoissonMixture probe = poisson_sectors(nbar);
  for (double eta : etas) {
    const PulseSpec p1 = solve_pulse_for_eta(nbar, eta);
    for (double r : ratios) {
      const PulseSpec p2 = second_pulse(p1, r, c.positive_phase);
      const FisherOpt o = fisher_opt(probe, p1, p2, fisher_options(c));
      t.rows.push_back({eta, r, p1.area, p2.area, p2.phi, o.f_opt, o.theta_opt, o.f_opt > nbar ? 1.0 : 0.0});
    }
  }
  return t;
}

enum class NoiseKind { kNone, kLoss, kDetection };

/// Critical atom number per eta (and per loss rate or detection sigma).
inline Table ssn_map(const std::vector<double>& etas, NoiseKind kind, const std::vector<double>& noise_levels,
                     int nbar_max, const Common& c) {
  Table t;
  stamp(t, "ssn-map", c);
  t.meta("noise", kind == NoiseKind::kNone ? "none" : kind == NoiseKind::kLoss ? "loss" : "detection");
  t.meta("nbar_max", std::to_string(nbar_max));
  if (kind == NoiseKind::kLoss) {
    stamp_loss(t, c.loss);
    const ThetaGrid g = LossyFisherOptions::default_grid();
    t.meta("loss_theta_grid", std::to_string(g.log_points) + " log in [" + format_number(g.log_min) + ", " +
                                  format_number(g.log_max) + "] + " + std::to_string(g.linear_points) +
                                  " linear to pi, both signs");
  }
  if (kind == NoiseKind::kDetection) stamp_detection(t, c.detection);
  const std::string level = kind == NoiseKind::kLoss ? "gamma_over_chi" : kind == NoiseKind::kDetection ? "sigma" : "noise";
  t.columns = {"eta", level, "nbar_cr", "f_opt_at_cr", "theta_opt", "f_opt_below", "status", "meanfield_nbar_cr"};
  if (kind == NoiseKind::kDetection) t.columns.push_back("detection_nbar_cr_leading");

  const std::vector<double> levels = kind == NoiseKind::kNone ? std::vector<double>{0.0} : noise_levels;
  for (double lv : levels) {
    for (double eta : etas) {
      std::map<int, FisherOpt> seen;
      auto fopt = [&](int n) {
        FisherOpt o;
        if (kind == NoiseKind::kNone) {
          o = noiseless_fisher_opt(n, eta, c.convention, fisher_options(c));
        } else if (kind == NoiseKind::kLoss) {
          LossConfig l = c.loss;
          l.gamma_over_chi = lv;
          o = lossy_fisher_opt(n, eta, c.convention, l);
        } else {
          DetectionConfig d = c.detection;
          d.sigma = lv;
          o = detection_fisher_opt(n, eta, c.convention, d, fisher_options(c));
        }
        seen[n] = o;
        return o.f_opt;
      };
      const SsnResult r = ssn_critical_n(fopt, {nbar_max});
      const double nan = std::numeric_limits<double>::quiet_NaN();
      std::vector<Cell> row{eta, lv};
      if (r.found) {
        row.insert(row.end(), {double(r.nbar_cr), r.f_at, seen[r.nbar_cr].theta_opt, r.f_below, std::string("ok")});
      } else {
        row.insert(row.end(), {nan, nan, nan, nan, std::string("no SSN up to nbar_max")});
      }
      row.push_back(meanfield_reference(eta));
      if (kind == NoiseKind::kDetection) row.push_back(meanfield::critical_n_detection(eta, lv).value);
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

/// eta(chi t) under two-body loss, with the noiseless and mean-field curves.
inline Table loss_curves(double nbar, const std::vector<double>& gammas, const std::vector<double>& areas,
                         const Common& c) {
  Table t;
  stamp(t, "loss-curves", c);
  stamp_loss(t, c.loss);
  t.meta("nbar", format_number(nbar));
  t.columns = {"gamma_over_chi", "area", "eta", "eta_noiseless", "eta_meanfield"};
  const PoissonMixture probe = poisson_sectors(nbar);
  std::vector<double> noiseless(areas.size());
  parallel_for(areas.size(), [&](std::size_t j) { noiseless[j] = transfer_fraction(probe, PulseSpec(areas[j], 0.0)); });
  for (double g : gammas) {
    LossConfig l = c.loss;
    l.gamma_over_chi = g;
    const std::vector<double> eta = g == 0.0 ? noiseless : lossy_transfer_curve(nbar, l, areas);
    for (std::size_t j = 0; j < areas.size(); ++j)
      t.rows.push_back({g, areas[j], eta[j], noiseless[j], meanfield::pair_number(std::max(nbar, 1.0), areas[j]) / nbar});
  }
  return t;
}

}  // namespace spinmix::sweep

#endif  // SPINMIX_SWEEP_HPP
