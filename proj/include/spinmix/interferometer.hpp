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

// The five-step interferometer: probe, pulse 1, phase theta, pulse 2 and a
// pair-number readout, mixed over the Poisson probe.

#ifndef SPINMIX_INTERFEROMETER_HPP
#define SPINMIX_INTERFEROMETER_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/dynamics.hpp"
#include "spinmix/hilbert.hpp"
#include "spinmix/parallel.hpp"

namespace spinmix {

struct SequenceSpec {
  PulseSpec pulse1;
  PulseSpec pulse2;
  double theta = 0.0;
};

/// P(k|theta) over the measured pair number k = N_{+1} = N_{-1}.
struct OutputDistribution {
  double theta = 0.0;
  std::vector<double> p;
  std::vector<double> dp_dtheta;  // empty when no derivative channel

  bool has_derivative() const { return !dp_dtheta.empty(); }
  int size() const { return static_cast<int>(p.size()); }
};

/// How the second pulse is realized.
///   kInverse: area2 = -area1, phi2 = 0
///   kPi2:     area2 = +area1, phi2 = pi/2 (pi/2 shift on m_f = 0, then the same pulse)
enum class PulseConvention { kInverse, kPi2 };

inline std::string to_string(PulseConvention c) { return c == PulseConvention::kInverse ? "inverse" : "pi2"; }

/// Mixing phase used for positive area ratios in ratio scans.
enum class PositiveRatioPhase { kPi2, kZero };

inline PulseSpec second_pulse(const PulseSpec& pulse1, PulseConvention convention) {
  return convention == PulseConvention::kInverse ? PulseSpec(-pulse1.area, 0.0)
                                                 : PulseSpec(pulse1.area, kPi / 2);
}

inline PulseSpec second_pulse(const PulseSpec& pulse1, double ratio, PositiveRatioPhase positive) {
  const double phi = (ratio > 0.0 && positive == PositiveRatioPhase::kPi2) ? kPi / 2 : 0.0;
  return PulseSpec(ratio * pulse1.area, phi);
}

namespace detail {

// One sector's contribution for every theta: p and dp/dtheta, column-major
// (k fastest) so the reduction is a flat add.
struct SectorBatch {
  int dim = 0;
  std::vector<double> p;
  std::vector<double> dp;
};

inline SectorBatch sector_batch(const SectorPropagator& prop, const PulseSpec& pulse1, const PulseSpec& pulse2,
                                std::span<const double> thetas, bool with_derivative) {
  const int d = prop.dim();
  const int nt = static_cast<int>(thetas.size());
  const int cols_per_theta = with_derivative ? 2 : 1;
  const int ncols = nt * cols_per_theta;
  const Eigen::VectorXcd psi1 = prop.evolve_vacuum(pulse1);

  Eigen::MatrixXd xr(d, ncols), xi(d, ncols);
  for (int t = 0; t < nt; ++t) {
    for (int k = 0; k < d; ++k) {
      // G2^dagger P(theta) psi1
      const cplx x = psi1[k] * std::polar(1.0, 2.0 * k * pulse2.phi - thetas[t] * k);
      xr(k, t * cols_per_theta) = x.real();
      xi(k, t * cols_per_theta) = x.imag();
      if (with_derivative) {
        const cplx dx = cplx(0.0, -double(k)) * x;
        xr(k, t * 2 + 1) = dx.real();
        xi(k, t * 2 + 1) = dx.imag();
      }
    }
  }
  const auto& v = prop.eigenvectors();
  const auto& lambda = prop.eigenvalues();
  Eigen::MatrixXd yr = v.transpose() * xr;
  Eigen::MatrixXd yi = v.transpose() * xi;
  for (int j = 0; j < d; ++j) {
    const double c = std::cos(lambda[j] * pulse2.area);
    const double s = -std::sin(lambda[j] * pulse2.area);
    for (int col = 0; col < ncols; ++col) {
      const double r = yr(j, col), i = yi(j, col);
      yr(j, col) = c * r - s * i;
      yi(j, col) = s * r + c * i;
    }
  }
  // The trailing gauge G2 is a phase per k and drops out of |psi|^2 and
  // Re(conj(psi) dpsi).
  const Eigen::MatrixXd zr = v * yr;
  const Eigen::MatrixXd zi = v * yi;

  SectorBatch out;
  out.dim = d;
  out.p.resize(static_cast<std::size_t>(d) * nt);
  if (with_derivative) out.dp.resize(static_cast<std::size_t>(d) * nt);
  for (int t = 0; t < nt; ++t) {
    const int c0 = t * cols_per_theta;
    for (int k = 0; k < d; ++k) {
      const std::size_t idx = static_cast<std::size_t>(t) * d + k;
      out.p[idx] = zr(k, c0) * zr(k, c0) + zi(k, c0) * zi(k, c0);
      if (with_derivative) out.dp[idx] = 2.0 * (zr(k, c0) * zr(k, c0 + 1) + zi(k, c0) * zi(k, c0 + 1));
    }
  }
  return out;
}

}  // namespace detail

/// Output distributions at every theta of `thetas`, sharing the per-sector
/// evolution of pulse 1 and batching pulse 2 over theta. Sectors are reduced
/// in increasing M, so results do not depend on the thread count.
inline std::vector<OutputDistribution> run_sequence_batch(const PoissonMixture& probe, const PulseSpec& pulse1,
                                                          const PulseSpec& pulse2, std::span<const double> thetas,
                                                          bool with_derivative = true,
                                                          PropagatorCache& cache = default_cache()) {
  const int nt = static_cast<int>(thetas.size());
  const int kmax_dim = sector_dim(probe.max_total());
  std::vector<OutputDistribution> out(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    out[t].theta = thetas[t];
    out[t].p.assign(static_cast<std::size_t>(kmax_dim), 0.0);
    if (with_derivative) out[t].dp_dtheta.assign(static_cast<std::size_t>(kmax_dim), 0.0);
  }
  if (nt == 0) return out;

  const std::size_t nsec = probe.entries.size();
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, 2 * thread_count()));
  std::vector<detail::SectorBatch> results(chunk);
  for (std::size_t base = 0; base < nsec; base += chunk) {
    const std::size_t n = std::min(chunk, nsec - base);
    parallel_for(n, [&](std::size_t i) {
      const auto prop = cache.get(probe.entries[base + i].total);
      results[i] = detail::sector_batch(*prop, pulse1, pulse2, thetas, with_derivative);
    });
    for (std::size_t i = 0; i < n; ++i) {
      const double w = probe.entries[base + i].weight;
      const auto& r = results[i];
      for (int t = 0; t < nt; ++t) {
        auto& dist = out[static_cast<std::size_t>(t)];
        for (int k = 0; k < r.dim; ++k) {
          const std::size_t idx = static_cast<std::size_t>(t) * r.dim + k;
          dist.p[static_cast<std::size_t>(k)] += w * r.p[idx];
          if (with_derivative) dist.dp_dtheta[static_cast<std::size_t>(k)] += w * r.dp[idx];
        }
      }
    }
  }
  for (auto& dist : out)
    for (auto& pk : dist.p)
      if (pk < 0.0) pk = 0.0;
  return out;
}

inline OutputDistribution run_sequence(const PoissonMixture& probe, const SequenceSpec& seq,
                                       bool with_derivative = true, PropagatorCache& cache = default_cache()) {
  const double theta[] = {seq.theta};
  return std::move(run_sequence_batch(probe, seq.pulse1, seq.pulse2, theta, with_derivative, cache)[0]);
}

/// Mean pair number per sector after one pulse, Poisson weighted, as
/// eta = <N_+1 + N_-1> / nbar.
inline double transfer_fraction(const PoissonMixture& probe, const PulseSpec& pulse,
                                PropagatorCache& cache = default_cache()) {
  if (pulse.area == 0.0) return 0.0;
  const std::size_t nsec = probe.entries.size();
  std::vector<double> mean_k(nsec);
  parallel_for(nsec, [&](std::size_t i) {
    const auto prop = cache.get(probe.entries[i].total);
    const Eigen::VectorXcd psi = prop->evolve_vacuum(pulse);
    double m = 0.0;
    for (int k = 0; k < psi.size(); ++k) m += k * std::norm(psi[k]);
    mean_k[i] = m;
  });
  double s = 0.0;
  for (std::size_t i = 0; i < nsec; ++i) s += probe.entries[i].weight * mean_k[i];
  return 2.0 * s / probe.nbar;
}

inline double transfer_fraction(double nbar, const PulseSpec& pulse, PropagatorCache& cache = default_cache()) {
  return transfer_fraction(poisson_sectors(nbar), pulse, cache);
}

struct EtaSolveOptions {
  double tolerance = 1e-9;
  double epsilon = 1e-10;  // Poisson truncation
  int max_iterations = 200;
};

/// Smallest pulse area whose transfer fraction equals eta_target. The area is
/// bracketed by doubling from a small start until eta reaches the target; if
/// eta turns over first, the first maximum is located and compared with the
/// target.
inline PulseSpec solve_pulse_for_eta(double nbar, double eta_target, double phi = 0.0,
                                     const EtaSolveOptions& opts = {}, PropagatorCache& cache = default_cache()) {
  if (!(eta_target >= 0.0 && eta_target < 1.0)) throw std::invalid_argument("eta must lie in [0,1)");
  if (eta_target == 0.0) return PulseSpec(0.0, phi);
  const PoissonMixture probe = poisson_sectors(nbar, opts.epsilon);
  auto eta_at = [&](double a) { return transfer_fraction(probe, PulseSpec(a, phi), cache); };

  double lo = 0.0;
  double prev = 0.0, eta_prev = 0.0;
  double a = 0.05 / std::sqrt(std::max(nbar, 1.0));
  double hi = -1.0;
  for (int it = 0; it < 80; ++it) {
    const double e = eta_at(a);
    if (e >= eta_target) {
      hi = a;
      break;
    }
    if (e < eta_prev) {
      // Turned over inside (lo_prev, a); golden-section for the first maximum.
      double left = std::max(0.0, prev / 2.0), right = a;
      const double g = (std::sqrt(5.0) - 1.0) / 2.0;
      double x1 = right - g * (right - left), x2 = left + g * (right - left);
      double f1 = eta_at(x1), f2 = eta_at(x2);
      for (int j = 0; j < 100 && right - left > 1e-12 * right; ++j) {
        if (f1 < f2) {
          left = x1;
          x1 = x2;
          f1 = f2;
          x2 = left + g * (right - left);
          f2 = eta_at(x2);
        } else {
          right = x2;
          x2 = x1;
          f2 = f1;
          x1 = right - g * (right - left);
          f1 = eta_at(x1);
        }
        if (std::max(f1, f2) >= eta_target) break;
      }
      const double best = f1 > f2 ? x1 : x2;
      const double eta_best = std::max(f1, f2);
      if (eta_best < eta_target) throw UnreachableEta(eta_target, eta_best);
      hi = best;
      break;
    }
    lo = a;
    prev = a;
    eta_prev = e;
    a *= 2.0;
  }
  if (hi < 0.0) throw UnreachableEta(eta_target, eta_prev);

  double best_a = hi, best_err = std::abs(eta_at(hi) - eta_target);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double e = eta_at(mid);
    const double err = std::abs(e - eta_target);
    if (err < best_err || (err == best_err && mid < best_a)) {
      best_err = err;
      best_a = mid;
    }
    if (err <= opts.tolerance) break;
    if (e < eta_target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return PulseSpec(best_a, phi);
}

inline PairMoments output_moments(const OutputDistribution& dist) {
  double m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < dist.size(); ++k) {
    m1 += k * dist.p[static_cast<std::size_t>(k)];
    m2 += double(k) * k * dist.p[static_cast<std::size_t>(k)];
  }
  return {m1, m2 - m1 * m1};
}

}  // namespace spinmix

#endif  // SPINMIX_INTERFEROMETER_HPP
