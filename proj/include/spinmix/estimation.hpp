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

// Fisher information, Cramer-Rao and error-propagation sensitivities, the
// optimum over theta, and the sub-shot-noise critical atom number.

#ifndef SPINMIX_ESTIMATION_HPP
#define SPINMIX_ESTIMATION_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/dynamics.hpp"
#include "spinmix/hilbert.hpp"
#include "spinmix/interferometer.hpp"
#include "spinmix/parallel.hpp"

namespace spinmix {

inline constexpr double kProbabilityFloor = 1e-30;

/// F = sum_k (dP_k/dtheta)^2 / P_k over outcomes with P_k above the floor.
inline double fisher_information(const OutputDistribution& dist, double floor = kProbabilityFloor) {
  if (!dist.has_derivative()) throw std::invalid_argument("fisher_information needs dp/dtheta");
  double f = 0.0;
  for (int k = 0; k < dist.size(); ++k) {
    const double p = dist.p[static_cast<std::size_t>(k)];
    if (p > floor) f += dist.dp_dtheta[static_cast<std::size_t>(k)] * dist.dp_dtheta[static_cast<std::size_t>(k)] / p;
  }
  return f;
}

/// Delta theta_ep = (Delta k)_out / |d<k>_out/dtheta|; +infinity at a
/// stationary point of the mean (|slope| < 1e-12).
inline double error_propagation(const OutputDistribution& dist) {
  if (!dist.has_derivative()) throw std::invalid_argument("error_propagation needs dp/dtheta");
  const PairMoments m = output_moments(dist);
  double slope = 0.0;
  for (int k = 0; k < dist.size(); ++k) slope += k * dist.dp_dtheta[static_cast<std::size_t>(k)];
  if (std::abs(slope) < 1e-12) return std::numeric_limits<double>::infinity();
  return std::sqrt(std::max(0.0, m.variance)) / std::abs(slope);
}

struct EstimationResult {
  double theta = 0.0;
  double fisher = 0.0;
  double crb = std::numeric_limits<double>::infinity();  // 1/sqrt(m F)
  double ep = std::numeric_limits<double>::infinity();   // Delta theta_ep / sqrt(m)
  int m = 1;
};

inline EstimationResult estimate(const OutputDistribution& dist, int repetitions = 1) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be positive");
  EstimationResult r;
  r.theta = dist.theta;
  r.m = repetitions;
  r.fisher = fisher_information(dist);
  if (r.fisher > 0.0) r.crb = 1.0 / std::sqrt(repetitions * r.fisher);
  r.ep = error_propagation(dist) / std::sqrt(double(repetitions));
  return r;
}

/// theta -> 0 limit of the Fisher information for an exactly inverted second
/// pulse: 4 sum_M w_M Var_M(k) on the state after pulse 1.
inline double fisher_at_zero(const PoissonMixture& probe, const PulseSpec& pulse1, const PulseSpec& pulse2,
                             PropagatorCache& cache = default_cache()) {
  if (!pulse2.is_inverse_of(pulse1)) throw std::invalid_argument("fisher_at_zero needs pulse2 = inverse of pulse1");
  if (pulse1.area == 0.0) return 0.0;
  const std::size_t nsec = probe.entries.size();
  std::vector<double> var(nsec);
  parallel_for(nsec, [&](std::size_t i) {
    const auto prop = cache.get(probe.entries[i].total);
    const Eigen::VectorXcd psi = prop->evolve_vacuum(pulse1);
    double m1 = 0.0, m2 = 0.0;
    for (int k = 0; k < psi.size(); ++k) {
      const double p = std::norm(psi[k]);
      m1 += k * p;
      m2 += double(k) * k * p;
    }
    var[i] = m2 - m1 * m1;
  });
  double s = 0.0;
  for (std::size_t i = 0; i < nsec; ++i) s += probe.entries[i].weight * var[i];
  return 4.0 * s;
}

/// Phase grid for the search of F_opt: log-spaced points in [1e-3, 0.1] and
/// linear points in (0.1, pi], mirrored to negative theta. The full-quantum
/// output law is not even in theta, so both signs are scanned.
struct ThetaGrid {
  int log_points = 20;
  int linear_points = 50;
  double log_min = 1e-3;
  double log_max = 0.1;
  bool symmetric = true;

  static ThetaGrid with_points(int per_side) {
    ThetaGrid g;
    g.log_points = std::max(2, (2 * per_side) / 7);
    g.linear_points = std::max(2, per_side - g.log_points);
    return g;
  }

  std::vector<double> points() const {
    std::vector<double> pos;
    for (int i = 0; i < log_points; ++i) {
      const double t = log_points == 1 ? 0.0 : double(i) / (log_points - 1);
      pos.push_back(log_min * std::pow(log_max / log_min, t));
    }
    for (int i = 1; i <= linear_points; ++i) pos.push_back(log_max + (kPi - log_max) * double(i) / linear_points);
    std::vector<double> all;
    if (symmetric)
      for (auto it = pos.rbegin(); it != pos.rend(); ++it)
        if (*it < kPi) all.push_back(-*it);
    all.insert(all.end(), pos.begin(), pos.end());
    return all;
  }
};

struct ThetaOptimum {
  double value = 0.0;
  double theta = 0.0;
};

struct RefineOptions {
  int candidates = 3;   // local grid maxima refined
  int iterations = 30;  // golden-section steps per candidate
};

/// Maximum of f over a sorted theta grid, then golden-section refinement in
/// the bracket around the best local maxima.
inline ThetaOptimum maximize_over_theta(std::span<const double> grid,
                                        const std::function<std::vector<double>(std::span<const double>)>& batch,
                                        const std::function<double(double)>& single,
                                        const RefineOptions& opts = {}) {
  const std::vector<double> values = batch(grid);
  const int n = static_cast<int>(grid.size());
  ThetaOptimum best{-std::numeric_limits<double>::infinity(), 0.0};
  for (int i = 0; i < n; ++i)
    if (values[i] > best.value) best = {values[i], grid[i]};
  if (n < 3 || opts.candidates <= 0) return best;

  std::vector<int> peaks;
  for (int i = 0; i < n; ++i) {
    const bool left = i == 0 || values[i] >= values[i - 1];
    const bool right = i == n - 1 || values[i] >= values[i + 1];
    if (left && right) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return values[a] > values[b]; });
  if (static_cast<int>(peaks.size()) > opts.candidates) peaks.resize(static_cast<std::size_t>(opts.candidates));

  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int j : peaks) {
    double lo = grid[std::max(0, j - 1)];
    double hi = grid[std::min(n - 1, j + 1)];
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = single(x1), f2 = single(x2);
    for (int it = 0; it < opts.iterations; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + g * (hi - lo);
        f2 = single(x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - g * (hi - lo);
        f1 = single(x1);
      }
    }
    if (f1 > best.value) best = {f1, x1};
    if (f2 > best.value) best = {f2, x2};
  }
  return best;
}

struct FisherOpt {
  double f_opt = 0.0;
  double theta_opt = 0.0;
  bool zero_limit = false;  // the optimum is the theta -> 0 limit
};

struct FisherOptOptions {
  ThetaGrid grid{};
  RefineOptions refine{};
};

/// F_opt = max_theta F(theta), including the theta -> 0 limit when pulse 2
/// exactly inverts pulse 1.
inline FisherOpt fisher_opt(const PoissonMixture& probe, const PulseSpec& pulse1, const PulseSpec& pulse2,
                            const FisherOptOptions& opts = {}, PropagatorCache& cache = default_cache()) {
  if (pulse1.area == 0.0) return {};
  const std::vector<double> grid = opts.grid.points();
  auto batch = [&](std::span<const double> thetas) {
    const auto dists = run_sequence_batch(probe, pulse1, pulse2, thetas, true, cache);
    std::vector<double> f;
    f.reserve(dists.size());
    for (const auto& d : dists) f.push_back(fisher_information(d));
    return f;
  };
  auto single = [&](double theta) { return fisher_information(run_sequence(probe, {pulse1, pulse2, theta}, true, cache)); };
  const ThetaOptimum opt = maximize_over_theta(grid, batch, single, opts.refine);
  FisherOpt out{opt.value, opt.theta, false};
  if (pulse2.is_inverse_of(pulse1)) {
    const double f0 = fisher_at_zero(probe, pulse1, pulse2, cache);
    if (f0 >= out.f_opt) out = {f0, 0.0, true};
  }
  return out;
}

struct SsnResult {
  bool found = false;
  int nbar_cr = 0;
  double f_at = 0.0;     // F_opt(nbar_cr)
  double f_below = 0.0;  // F_opt(nbar_cr - 1), 0 when nbar_cr == 1
  int evaluations = 0;
  std::string status;
};

struct SsnOptions {
  int n_max = 1 << 14;
};

/// Smallest integer nbar with F_opt(nbar) > nbar: exponential bracketing
/// from nbar = 1, then integer bisection. f_opt(nbar) may throw
/// UnreachableEta, which counts as "no SSN at this nbar".
inline SsnResult ssn_critical_n(const std::function<double(int)>& f_opt, const SsnOptions& opts = {}) {
  std::map<int, double> memo;
  SsnResult res;
  auto eval = [&](int n) {
    auto it = memo.find(n);
    if (it != memo.end()) return it->second;
    double f = 0.0;
    try {
      f = f_opt(n);
    } catch (const UnreachableEta&) {
      f = 0.0;
    }
    ++res.evaluations;
    memo[n] = f;
    return f;
  };
  auto ssn = [&](int n) { return eval(n) > double(n); };

  int lo = 0, hi = 1;
  while (!ssn(hi)) {
    lo = hi;
    if (hi >= opts.n_max) {
      res.status = "no SSN <= " + std::to_string(opts.n_max);
      return res;
    }
    hi = std::min(2 * hi, opts.n_max);
  }
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    if (ssn(mid))
      hi = mid;
    else
      lo = mid;
  }
  res.found = true;
  res.nbar_cr = hi;
  res.f_at = eval(hi);
  res.f_below = hi > 1 ? eval(hi - 1) : 0.0;
  res.status = "ok";
  return res;
}

/// Noiseless F_opt at (nbar, eta): pulse 1 re-solved for eta, pulse 2 from the convention.
inline FisherOpt noiseless_fisher_opt(double nbar, double eta, PulseConvention convention,
                                      const FisherOptOptions& opts = {}, PropagatorCache& cache = default_cache()) {
  const PulseSpec p1 = solve_pulse_for_eta(nbar, eta, 0.0, {}, cache);
  const PulseSpec p2 = second_pulse(p1, convention);
  return fisher_opt(poisson_sectors(nbar), p1, p2, opts, cache);
}

}  // namespace spinmix

#endif  // SPINMIX_ESTIMATION_HPP
