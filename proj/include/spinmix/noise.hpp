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

// Two-body loss in m_f = 0 by Monte Carlo wave functions, and Gaussian
// detection noise on the pair-number readout.
//
// Loss: L = sqrt(gamma) a0^2, so a jump maps |k, M-2k, k> to
// sqrt((M-2k)(M-2k-1)) |k, M-2k-2, k> and between jumps the state follows
// H_eff = s H_SMD - i Gamma with Gamma_k = (g/2)(M-2k)(M-2k-1), g = gamma/chi,
// s the sign of the pulse area and time |area| in units of 1/chi. The phase
// stage is lossless.

#ifndef SPINMIX_NOISE_HPP
#define SPINMIX_NOISE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/dynamics.hpp"
#include "spinmix/estimation.hpp"
#include "spinmix/hilbert.hpp"
#include "spinmix/interferometer.hpp"
#include "spinmix/meanfield.hpp"
#include "spinmix/parallel.hpp"

namespace spinmix {

enum class SectorSampling { kStratified, kPoisson };
enum class DerivativeEstimator { kPathwise, kPaired };

inline std::string to_string(SectorSampling s) { return s == SectorSampling::kStratified ? "stratified" : "poisson"; }
inline std::string to_string(DerivativeEstimator d) { return d == DerivativeEstimator::kPathwise ? "pathwise" : "paired"; }

struct LossConfig {
  double gamma_over_chi = 0.0;
  int n_traj = 2000;
  std::uint64_t seed = 1;
  double dt = 0.005;  // largest propagation step, units of 1/(chi sqrt(nbar))
  bool mixing_enabled = true;
  SectorSampling sampling = SectorSampling::kStratified;
  DerivativeEstimator derivative = DerivativeEstimator::kPathwise;
  double paired_delta = 1e-3;

  void validate() const {
    if (!(gamma_over_chi >= 0.0) || !std::isfinite(gamma_over_chi)) throw std::invalid_argument("gamma/chi must be >= 0");
    if (n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(paired_delta > 0.0)) throw std::invalid_argument("paired delta must be positive");
  }
};

struct DetectionConfig {
  double sigma = 1.0;
  double grid_halfwidth = 6.0;  // units of sigma
  double grid_step = 0.05;      // units of sigma

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    if (!(grid_halfwidth > 0.0)) throw std::invalid_argument("grid halfwidth must be positive");
    if (sigma > 0.0 && !(grid_step > 0.0 && grid_step <= 0.1)) throw std::invalid_argument("grid step must be in (0, sigma/10]");
  }
};

/// <N0(t)> = nbar / (1 + 2 gamma t nbar) without spin mixing.
inline double mean_n0_decay(double nbar, double gamma_t) {
  if (nbar < 0.0 || gamma_t < 0.0) throw std::invalid_argument("mean_n0_decay needs non-negative inputs");
  if (std::isinf(gamma_t)) return 0.0;
  return nbar / (1.0 + 2.0 * gamma_t * nbar);
}

// ---------------------------------------------------------------------------
// Random numbers

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-trajectory stream. mt19937_64 is fully specified by the standard and
/// the uniform is built from raw bits, so draws are identical across
/// platforms and thread counts.
class TrajectoryRng {
 public:
  TrajectoryRng(std::uint64_t seed, std::uint64_t trajectory, std::uint64_t stream)
      : engine_(splitmix64(splitmix64(seed ^ splitmix64(trajectory + 1)) + stream)) {}

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

enum : std::uint64_t { kStreamPulse1 = 1, kStreamPulse2 = 2 };

// ---------------------------------------------------------------------------
// Non-Hermitian propagation

/// Trajectory state: column 0 is psi, column 1 (optional) d psi / d theta.
/// Both columns always carry the same normalization factor.
struct TrajectoryState {
  int total = 0;
  Eigen::MatrixXcd psi;
  int jumps = 0;

  int dim() const { return static_cast<int>(psi.rows()); }
  double norm2() const { return psi.col(0).squaredNorm(); }

  void normalize() {
    const double n = std::sqrt(norm2());
    if (!(n > 0.0)) throw IntegratorFailure("trajectory norm vanished");
    psi /= n;
  }
};

inline double loss_rate(int total, int k, double g) {
  const double n0 = total - 2.0 * k;
  return 0.5 * g * n0 * (n0 - 1.0);
}

/// Applies a0^2 (without the sqrt(gamma)): k is kept, M -> M-2.
inline void apply_pair_loss(TrajectoryState& st) {
  if (st.total < 2) throw std::logic_error("pair loss needs at least two atoms in m_f = 0");
  const int new_total = st.total - 2;
  const int nd = sector_dim(new_total);
  Eigen::MatrixXcd out(nd, st.psi.cols());
  for (int k = 0; k < nd; ++k) {
    const double n0 = st.total - 2.0 * k;
    out.row(k) = std::sqrt(n0 * (n0 - 1.0)) * st.psi.row(k);
  }
  st.psi = std::move(out);
  st.total = new_total;
  ++st.jumps;
}

namespace detail {

/// exp(-i tau A) for A = s H0 - i Gamma on one sector, in the gauge frame
/// (phi = 0). With mixing the step is a Chebyshev expansion in
/// X = (A - c)/h, whose terms T_n(X) psi are kept so the state at any
/// s <= tau costs one weighted sum. Without mixing A is diagonal.
class LossyStep {
 public:
  LossyStep(int total, double sign, double g, bool mixing) : sign_(sign), g_(g), mixing_(mixing) { set_sector(total); }

  /// Switches to sector `total`, keeping the term buffers.
  void set_sector(int total) {
    total_ = total;
    d_ = sector_dim(total);
    const double sign = sign_, g = g_;
    const bool mixing = mixing_;
    gamma_.resize(d_);
    diag_.resize(d_);
    off_.resize(std::max(0, d_ - 1));
    for (int k = 0; k < d_; ++k) {
      gamma_[k] = loss_rate(total, k, g);
      diag_[k] = mixing ? sign * smd_diag(total, k) : 0.0;
    }
    for (int k = 0; k + 1 < d_; ++k) off_[k] = mixing ? sign * smd_off(total, k) : 0.0;
    gamma_max_ = d_ > 0 ? gamma_.maxCoeff() : 0.0;
    double emin = std::numeric_limits<double>::infinity(), emax = -emin;
    for (int k = 0; k < d_; ++k) {
      const double r = (k > 0 ? std::abs(off_[k - 1]) : 0.0) + (k + 1 < d_ ? std::abs(off_[k]) : 0.0);
      emin = std::min(emin, diag_[k] - r);
      emax = std::max(emax, diag_[k] + r);
    }
    center_ = cplx(0.5 * (emin + emax), -0.5 * gamma_max_);
    half_width_ = std::max({0.5 * (emax - emin), 0.5 * gamma_max_, 1e-300});
    shifted_.resize(d_);
    for (int k = 0; k < d_; ++k) shifted_[k] = cplx(diag_[k], -gamma_[k]) - center_;
  }

  bool mixing() const { return mixing_; }
  int dim() const { return d_; }
  double gamma_max() const { return gamma_max_; }

  /// Largest step with tau * h below the expansion budget.
  double max_step() const { return mixing_ ? kMaxArgument / half_width_ : std::numeric_limits<double>::infinity(); }

  /// Prepares the expansion of a step of length tau from psi0.
  void prepare(const Eigen::MatrixXcd& psi0, double tau) {
    psi0_ = psi0;
    if (!mixing_) return;
    const double z = tau * half_width_;
    const double scale = std::max(psi0.norm(), 1e-300);
    const int cap = static_cast<int>(2.0 * z) + 80;
    auto slot = [&](int n) -> Eigen::MatrixXcd& {
      if (static_cast<int>(terms_.size()) <= n) terms_.emplace_back();
      terms_[n].resize(d_, psi0.cols());
      return terms_[n];
    };
    slot(0) = psi0;
    nterms_ = 1;
    int small = 0;
    for (int n = 1; n < cap; ++n) {
      Eigen::MatrixXcd& next = slot(n);
      apply_x(terms_[n - 1], next, n >= 2 ? &terms_[n - 2] : nullptr);
      nterms_ = n + 1;
      const double contrib = std::abs(std::cyl_bessel_j(double(n), z)) * next.norm();
      if (!std::isfinite(contrib)) throw IntegratorFailure("Chebyshev recursion overflow in sector M=" + std::to_string(total_));
      small = (n > z && contrib < 1e-16 * scale) ? small + 1 : 0;
      if (small >= 2) return;
    }
    throw IntegratorFailure("Chebyshev series did not converge in sector M=" + std::to_string(total_));
  }

  /// State at s in [0, tau]; only the first `cols` columns.
  void evaluate(double s, Eigen::MatrixXcd& out, int cols) const {
    out.resize(d_, cols);
    if (!mixing_) {
      for (int k = 0; k < d_; ++k) out.row(k) = std::exp(-gamma_[k] * s) * psi0_.row(k).leftCols(cols);
      return;
    }
    const double z = s * half_width_;
    out.setZero();
    cplx phase(1.0, 0.0);
    for (int n = 0; n < nterms_; ++n) {
      const double j = std::cyl_bessel_j(double(n), z);
      const cplx beta = (n == 0 ? 1.0 : 2.0) * phase * j;
      out.noalias() += beta * terms_[n].leftCols(cols);
      phase *= cplx(0.0, -1.0);
    }
    out *= std::exp(cplx(0.0, -s) * center_);
  }

  /// d log|psi(s)|^2 / ds = -2 psi^dagger Gamma psi / |psi|^2.
  double log_norm_slope(const Eigen::VectorXcd& psi) const {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < d_; ++k) {
      const double p = std::norm(psi[k]);
      num += gamma_[k] * p;
      den += p;
    }
    return den > 0.0 ? -2.0 * num / den : 0.0;
  }

 private:
  static constexpr double kMaxArgument = 8.0;

  // out = X in, or 2 X in - prev for the Chebyshev recurrence. Plain real
  // arithmetic on the interleaved storage; std::complex products carry
  // NaN-recovery branches that dominate this loop otherwise.
  void apply_x(const Eigen::MatrixXcd& in, Eigen::MatrixXcd& out, const Eigen::MatrixXcd* prev) const {
    const double f = (prev ? 2.0 : 1.0) / half_width_;
    const double* sh = reinterpret_cast<const double*>(shifted_.data());
    const double* off = off_.data();
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      const double* x = reinterpret_cast<const double*>(in.col(c).data());
      double* y = reinterpret_cast<double*>(out.col(c).data());
      const double* p = prev ? reinterpret_cast<const double*>(prev->col(c).data()) : nullptr;
      for (int k = 0; k < d_; ++k) {
        double re = sh[2 * k] * x[2 * k] - sh[2 * k + 1] * x[2 * k + 1];
        double im = sh[2 * k] * x[2 * k + 1] + sh[2 * k + 1] * x[2 * k];
        if (k > 0) {
          re += off[k - 1] * x[2 * k - 2];
          im += off[k - 1] * x[2 * k - 1];
        }
        if (k + 1 < d_) {
          re += off[k] * x[2 * k + 2];
          im += off[k] * x[2 * k + 3];
        }
        y[2 * k] = f * re - (p ? p[2 * k] : 0.0);
        y[2 * k + 1] = f * im - (p ? p[2 * k + 1] : 0.0);
      }
    }
  }

  double sign_;
  double g_;
  bool mixing_;
  int total_ = 0;
  int d_ = 0;
  Eigen::VectorXd gamma_, diag_, off_;
  Eigen::VectorXcd shifted_;
  double gamma_max_ = 0.0;
  cplx center_;
  double half_width_ = 1.0;
  Eigen::MatrixXcd psi0_;
  std::vector<Eigen::MatrixXcd> terms_;
  int nterms_ = 0;
};

}  // namespace detail

/// Evolves a normalized trajectory through one lossy pulse, drawing jump
/// thresholds from rng. `checkpoints` (sorted, within [0, |area|]) receive a
/// normalized copy of the state as it passes; pass an empty span otherwise.
/// max_step bounds every propagation step (units of chi t).
template <typename Observer>
void lossy_pulse(TrajectoryState& st, const PulseSpec& pulse, double g, bool mixing, double max_step,
                 TrajectoryRng& rng, std::span<const double> checkpoints, Observer&& observe) {
  st.normalize();
  const double duration = std::abs(pulse.area);
  const double sign = pulse.area < 0.0 ? -1.0 : 1.0;
  std::size_t next_cp = 0;
  // Snapshots are normalized copies in the lab frame.
  auto snapshot = [&](const Eigen::MatrixXcd& gauge_psi, bool in_gauge) {
    TrajectoryState snap{st.total, gauge_psi, st.jumps};
    if (in_gauge && pulse.phi != 0.0 && mixing)
      for (int k = 0; k < snap.dim(); ++k) snap.psi.row(k) *= std::polar(1.0, -2.0 * k * pulse.phi);
    snap.normalize();
    observe(next_cp, snap);
    ++next_cp;
  };
  if (duration == 0.0 || (!mixing && g == 0.0)) {
    while (next_cp < checkpoints.size()) snapshot(st.psi, false);
    return;
  }

  auto to_gauge = [&](double sgn) {
    if (pulse.phi == 0.0 || !mixing) return;
    for (int k = 0; k < st.dim(); ++k) st.psi.row(k) *= std::polar(1.0, sgn * 2.0 * k * pulse.phi);
  };
  to_gauge(+1.0);

  double t = 0.0;
  double threshold = g > 0.0 ? rng.uniform() : 0.0;
  detail::LossyStep step(st.total, sign, g, mixing);
  Eigen::MatrixXcd buf, col, cp;
  const int ncols = static_cast<int>(st.psi.cols());

  auto emit = [&](double until, double t0, const detail::LossyStep& s) {
    while (next_cp < checkpoints.size() && checkpoints[next_cp] <= until) {
      s.evaluate(checkpoints[next_cp] - t0, cp, ncols);
      snapshot(cp, true);
    }
  };

  while (t < duration) {
    const double tau = std::min({duration - t, max_step, step.max_step()});
    const double n0 = st.norm2();
    step.prepare(st.psi, tau);
    step.evaluate(tau, buf, ncols);
    const double n1 = buf.col(0).squaredNorm();
    if (!(n1 <= n0 * (1.0 + 1e-9))) throw IntegratorFailure("norm grew during a lossy step in sector M=" + std::to_string(st.total));

    if (g > 0.0 && n1 < threshold) {
      // Jump inside (0, tau]. The cubic Hermite interpolant of log|psi|^2
      // gives the first guess, then safeguarded Newton on the true norm.
      const double l0 = std::log(n0), l1 = std::log(n1), target = std::log(threshold);
      const double d0 = step.log_norm_slope(st.psi.col(0)) * tau, d1 = step.log_norm_slope(buf.col(0)) * tau;
      auto hermite = [&](double u) {
        const double u2 = u * u, u3 = u2 * u;
        return (2 * u3 - 3 * u2 + 1) * l0 + (u3 - 2 * u2 + u) * d0 + (-2 * u3 + 3 * u2) * l1 + (u3 - u2) * d1;
      };
      double ulo = 0.0, uhi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double um = 0.5 * (ulo + uhi);
        (hermite(um) > target ? ulo : uhi) = um;
      }
      double lo = 0.0, hi = tau, s = 0.5 * (ulo + uhi) * tau;
      for (int it = 0; it < 100; ++it) {
        if (!(s > lo && s < hi)) s = 0.5 * (lo + hi);
        step.evaluate(s, col, 1);
        const double f = std::log(col.col(0).squaredNorm()) - target;
        if (f > 0.0)
          lo = s;
        else
          hi = s;
        if (std::abs(f) < 1e-11 || hi - lo < 1e-15 * tau) break;
        const double slope = step.log_norm_slope(col.col(0));
        s = slope < 0.0 ? s - f / slope : 0.5 * (lo + hi);
      }
      emit(t + s, t, step);
      step.evaluate(s, buf, ncols);
      st.psi = buf;
      t += s;
      apply_pair_loss(st);
      st.normalize();
      threshold = rng.uniform();
      step.set_sector(st.total);
      continue;
    }
    emit(t + tau, t, step);
    st.psi = buf;
    t += tau;
  }
  while (next_cp < checkpoints.size()) snapshot(st.psi, true);

  to_gauge(-1.0);
}

inline void lossy_pulse(TrajectoryState& st, const PulseSpec& pulse, double g, bool mixing, double max_step,
                        TrajectoryRng& rng) {
  lossy_pulse(st, pulse, g, mixing, max_step, rng, {}, [](std::size_t, const TrajectoryState&) {});
}

inline double max_step_for(const LossConfig& loss, double nbar) { return loss.dt / std::sqrt(std::max(nbar, 1.0)); }

/// One trajectory: vacuum probe of M0 atoms, lossy pulse 1, lossless phase
/// theta, lossy pulse 2. Pulse 1 draws from stream kStreamPulse1 and pulse 2
/// from kStreamPulse2 of (seed, traj_index).
inline SectorState mcwf_trajectory(int m0, const SequenceSpec& seq, const LossConfig& loss, std::uint64_t traj_index,
                                   double nbar_for_step = 0.0) {
  loss.validate();
  const double step = max_step_for(loss, nbar_for_step > 0.0 ? nbar_for_step : std::max(1, m0));
  TrajectoryState st{m0, Eigen::MatrixXcd::Zero(sector_dim(m0), 1), 0};
  st.psi(0, 0) = 1.0;
  TrajectoryRng rng1(loss.seed, traj_index, kStreamPulse1);
  lossy_pulse(st, seq.pulse1, loss.gamma_over_chi, loss.mixing_enabled, step, rng1);
  for (int k = 0; k < st.dim(); ++k) st.psi(k, 0) *= std::polar(1.0, -seq.theta * k);
  TrajectoryRng rng2(loss.seed, traj_index, kStreamPulse2);
  lossy_pulse(st, seq.pulse2, loss.gamma_over_chi, loss.mixing_enabled, step, rng2);
  st.normalize();
  SectorState out{SectorBasis(st.total), std::vector<cplx>(static_cast<std::size_t>(st.dim()))};
  for (int k = 0; k < st.dim(); ++k) out.amp[static_cast<std::size_t>(k)] = st.psi(k, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Ensembles

struct TrajectorySlot {
  int total = 0;  // initial M
  double weight = 0.0;
};

/// Initial sectors and weights of the trajectory ensemble. Stratified: quotas
/// proportional to w_M by largest remainder, at least one trajectory per
/// retained sector, weight w_M / n_M. Poisson: M drawn from the truncated
/// mixture, weight 1/n.
inline std::vector<TrajectorySlot> trajectory_slots(const PoissonMixture& probe, const LossConfig& loss) {
  std::vector<TrajectorySlot> slots;
  const int n = loss.n_traj;
  if (loss.sampling == SectorSampling::kStratified) {
    const std::size_t ns = probe.entries.size();
    std::vector<int> quota(ns);
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t i = 0; i < ns; ++i) {
      const double q = n * probe.entries[i].weight;
      quota[i] = static_cast<int>(std::floor(q));
      assigned += quota[i];
      rem.push_back({q - quota[i], i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; assigned < n && j < rem.size(); ++j, ++assigned) ++quota[rem[j].second];
    for (std::size_t i = 0; i < ns; ++i) {
      const int q = std::max(1, quota[i]);
      for (int j = 0; j < q; ++j) slots.push_back({probe.entries[i].total, probe.entries[i].weight / q});
    }
    return slots;
  }
  std::vector<double> cdf;
  double c = 0.0;
  for (const auto& e : probe.entries) cdf.push_back(c += e.weight);
  for (int i = 0; i < n; ++i) {
    TrajectoryRng rng(loss.seed, static_cast<std::uint64_t>(i), 0);
    const double u = rng.uniform() * c;
    const std::size_t idx = std::min<std::size_t>(
        static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin()), cdf.size() - 1);
    slots.push_back({probe.entries[idx].total, 1.0 / n});
  }
  return slots;
}

/// Trajectory ensemble of the full lossy sequence. Pulse 1 is run once per
/// trajectory and shared by every theta; pulse 2 reuses the same random
/// stream for every theta (common random numbers).
class LossyInterferometer {
 public:
  LossyInterferometer(const PoissonMixture& probe, const PulseSpec& pulse1, const PulseSpec& pulse2, LossConfig loss)
      : pulse2_(pulse2), loss_(loss), kdim_(sector_dim(probe.max_total())) {
    loss_.validate();
    step_ = max_step_for(loss_, probe.nbar);
    const auto slots = trajectory_slots(probe, loss_);
    after1_.resize(slots.size());
    weights_.resize(slots.size());
    parallel_for(slots.size(), [&](std::size_t i) {
      TrajectoryState st{slots[i].total, Eigen::MatrixXcd::Zero(sector_dim(slots[i].total), 1), 0};
      st.psi(0, 0) = 1.0;
      TrajectoryRng rng(loss_.seed, i, kStreamPulse1);
      lossy_pulse(st, pulse1, loss_.gamma_over_chi, loss_.mixing_enabled, step_, rng);
      after1_[i] = std::move(st);
    });
    for (std::size_t i = 0; i < slots.size(); ++i) weights_[i] = slots[i].weight;
  }

  int trajectories() const { return static_cast<int>(after1_.size()); }
  const LossConfig& config() const { return loss_; }

  OutputDistribution distribution(double theta, bool with_derivative = true) const {
    if (!with_derivative) return run(theta, false);
    if (loss_.derivative == DerivativeEstimator::kPathwise) return run(theta, true);
    OutputDistribution out = run(theta, false);
    const OutputDistribution plus = run(theta + loss_.paired_delta, false);
    const OutputDistribution minus = run(theta - loss_.paired_delta, false);
    out.dp_dtheta.resize(out.p.size());
    for (std::size_t k = 0; k < out.p.size(); ++k)
      out.dp_dtheta[k] = (plus.p[k] - minus.p[k]) / (2.0 * loss_.paired_delta);
    return out;
  }

  /// Mean pair number and N0 after pulse 1.
  struct PulseOneMoments {
    double mean_k = 0.0;
    double mean_n0 = 0.0;
  };
  PulseOneMoments pulse1_moments() const {
    PulseOneMoments m;
    for (std::size_t i = 0; i < after1_.size(); ++i) {
      const auto& st = after1_[i];
      double mk = 0.0;
      for (int k = 0; k < st.dim(); ++k) mk += k * std::norm(st.psi(k, 0));
      m.mean_k += weights_[i] * mk;
      m.mean_n0 += weights_[i] * (st.total - 2.0 * mk);
    }
    return m;
  }

 private:
  OutputDistribution run(double theta, bool with_derivative) const {
    const std::size_t n = after1_.size();
    std::vector<std::vector<double>> p(n), dp(n);
    parallel_for(n, [&](std::size_t i) {
      const auto& s1 = after1_[i];
      TrajectoryState st{s1.total, Eigen::MatrixXcd(s1.dim(), with_derivative ? 2 : 1), s1.jumps};
      for (int k = 0; k < s1.dim(); ++k) {
        const cplx a = s1.psi(k, 0) * std::polar(1.0, -theta * k);
        st.psi(k, 0) = a;
        if (with_derivative) st.psi(k, 1) = cplx(0.0, -double(k)) * a;
      }
      TrajectoryRng rng(loss_.seed, i, kStreamPulse2);
      lossy_pulse(st, pulse2_, loss_.gamma_over_chi, loss_.mixing_enabled, step_, rng);
      const double norm = st.norm2();
      p[i].resize(static_cast<std::size_t>(st.dim()));
      if (with_derivative) dp[i].resize(static_cast<std::size_t>(st.dim()));
      for (int k = 0; k < st.dim(); ++k) {
        p[i][k] = std::norm(st.psi(k, 0)) / norm;
        if (with_derivative) dp[i][k] = 2.0 * std::real(std::conj(st.psi(k, 0)) * st.psi(k, 1)) / norm;
      }
    });
    OutputDistribution out;
    out.theta = theta;
    out.p.assign(static_cast<std::size_t>(kdim_), 0.0);
    if (with_derivative) out.dp_dtheta.assign(static_cast<std::size_t>(kdim_), 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) wsum += weights_[i];
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights_[i] / wsum;
      for (std::size_t k = 0; k < p[i].size(); ++k) {
        out.p[k] += w * p[i][k];
        if (with_derivative) out.dp_dtheta[k] += w * dp[i][k];
      }
    }
    return out;
  }

  PulseSpec pulse2_;
  LossConfig loss_;
  int kdim_;
  double step_ = 0.0;
  std::vector<TrajectoryState> after1_;
  std::vector<double> weights_;
};

inline OutputDistribution lossy_output_distribution(const PoissonMixture& probe, const SequenceSpec& seq,
                                                    const LossConfig& loss) {
  return LossyInterferometer(probe, seq.pulse1, seq.pulse2, loss).distribution(seq.theta);
}

/// eta(area) = 2 <k> / nbar after one lossy pulse, sampled at every area of
/// the grid from one set of trajectories.
inline std::vector<double> lossy_transfer_curve(double nbar, const LossConfig& loss, std::span<const double> area_grid,
                                                double phi = 0.0) {
  loss.validate();
  std::vector<double> areas(area_grid.begin(), area_grid.end());
  if (areas.empty()) return {};
  if (!std::is_sorted(areas.begin(), areas.end()) || areas.front() < 0.0)
    throw std::invalid_argument("area grid must be sorted and non-negative");
  const PoissonMixture probe = poisson_sectors(nbar);
  const auto slots = trajectory_slots(probe, loss);
  const double step = max_step_for(loss, nbar);
  std::vector<std::vector<double>> mk(slots.size(), std::vector<double>(areas.size(), 0.0));
  parallel_for(slots.size(), [&](std::size_t i) {
    TrajectoryState st{slots[i].total, Eigen::MatrixXcd::Zero(sector_dim(slots[i].total), 1), 0};
    st.psi(0, 0) = 1.0;
    TrajectoryRng rng(loss.seed, i, kStreamPulse1);
    lossy_pulse(st, PulseSpec(areas.back(), phi), loss.gamma_over_chi, loss.mixing_enabled, step, rng, areas,
                [&](std::size_t j, const TrajectoryState& snap) {
                  double m = 0.0;
                  for (int k = 0; k < snap.dim(); ++k) m += k * std::norm(snap.psi(k, 0));
                  mk[i][j] = m;
                });
  });
  double wsum = 0.0;
  for (const auto& s : slots) wsum += s.weight;
  std::vector<double> eta(areas.size(), 0.0);
  for (std::size_t i = 0; i < slots.size(); ++i)
    for (std::size_t j = 0; j < areas.size(); ++j) eta[j] += slots[i].weight / wsum * mk[i][j];
  for (auto& e : eta) e *= 2.0 / nbar;
  return eta;
}

struct EnsembleMean {
  double mean = 0.0;
  double standard_error = 0.0;
  int trajectories = 0;
};

/// Ensemble <N0> after a lossy pulse of the given area starting from the
/// Poisson-mixed vacuum probe, with its Monte Carlo standard error.
inline EnsembleMean ensemble_mean_n0(double nbar, double area, const LossConfig& loss) {
  loss.validate();
  const PoissonMixture probe = poisson_sectors(nbar);
  const auto slots = trajectory_slots(probe, loss);
  const double step = max_step_for(loss, nbar);
  std::vector<double> n0(slots.size());
  parallel_for(slots.size(), [&](std::size_t i) {
    TrajectoryState st{slots[i].total, Eigen::MatrixXcd::Zero(sector_dim(slots[i].total), 1), 0};
    st.psi(0, 0) = 1.0;
    TrajectoryRng rng(loss.seed, i, kStreamPulse1);
    lossy_pulse(st, PulseSpec(area, 0.0), loss.gamma_over_chi, loss.mixing_enabled, step, rng);
    double m = 0.0;
    for (int k = 0; k < st.dim(); ++k) m += (st.total - 2.0 * k) * std::norm(st.psi(k, 0));
    n0[i] = m / st.norm2();
  });
  EnsembleMean out;
  out.trajectories = static_cast<int>(slots.size());
  double wsum = 0.0;
  for (const auto& s : slots) wsum += s.weight;
  for (std::size_t i = 0; i < slots.size(); ++i) out.mean += slots[i].weight / wsum * n0[i];
  if (loss.sampling == SectorSampling::kPoisson) {
    double ss = 0.0;
    for (double x : n0) ss += (x - out.mean) * (x - out.mean);
    const double n = static_cast<double>(n0.size());
    out.standard_error = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return out;
  }
  // Stratified: sum over strata of (w_M / W)^2 s_M^2 / n_M.
  double var = 0.0;
  for (std::size_t a = 0; a < slots.size();) {
    std::size_t b = a;
    while (b < slots.size() && slots[b].total == slots[a].total) ++b;
    const double nm = static_cast<double>(b - a);
    if (nm > 1) {
      double mean = 0.0, ss = 0.0;
      for (std::size_t i = a; i < b; ++i) mean += n0[i];
      mean /= nm;
      for (std::size_t i = a; i < b; ++i) ss += (n0[i] - mean) * (n0[i] - mean);
      const double wm = slots[a].weight * nm / wsum;
      var += wm * wm * ss / (nm - 1.0) / nm;
    }
    a = b;
  }
  out.standard_error = std::sqrt(var);
  return out;
}

/// Each lossy theta point costs a full trajectory ensemble, so the default
/// grid is lean: dense in the log range where the lossy optimum sits, coarse
/// beyond, one refined peak.
struct LossyFisherOptions {
  ThetaGrid grid = default_grid();
  RefineOptions refine{1, 10};

  static ThetaGrid default_grid() {
    ThetaGrid g;
    g.log_points = 6;
    g.linear_points = 4;
    g.log_min = 3e-3;
    g.log_max = 0.3;
    return g;
  }
};

/// F_opt over theta for the lossy sequence at (nbar, eta). Pulse 1 has the
/// area that transfers eta without loss.
inline FisherOpt lossy_fisher_opt(double nbar, double eta, PulseConvention convention, const LossConfig& loss,
                                  const LossyFisherOptions& opts = {}, PropagatorCache& cache = default_cache()) {
  const PulseSpec p1 = solve_pulse_for_eta(nbar, eta, 0.0, {}, cache);
  const PulseSpec p2 = second_pulse(p1, convention);
  const LossyInterferometer ifo(poisson_sectors(nbar), p1, p2, loss);
  const std::vector<double> grid = opts.grid.points();
  auto single = [&](double theta) { return fisher_information(ifo.distribution(theta)); };
  auto batch = [&](std::span<const double> thetas) {
    std::vector<double> f;
    for (double t : thetas) f.push_back(single(t));
    return f;
  };
  const ThetaOptimum o = maximize_over_theta(grid, batch, single, opts.refine);
  return {o.value, o.theta, false};
}

// ---------------------------------------------------------------------------
// Detection noise

/// Smeared readout density P(x|theta) on a quadrature grid. `weight` holds
/// the trapezoid weights, so sum(weight * density) approximates the integral.
struct SmearedDistribution {
  double theta = 0.0;
  std::vector<double> x;
  std::vector<double> weight;
  std::vector<double> density;
  std::vector<double> d_density;

  double integral() const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += weight[i] * density[i];
    return s;
  }
};

/// P(x|theta) = sum_k p_k G(x - k; sigma), with dP/dtheta smeared the same
/// way. For 12 sigma < 1 the Gaussians do not overlap and the grid is a union
/// of per-k windows; otherwise one uniform grid covers all outcomes.
inline SmearedDistribution convolve_detection(const OutputDistribution& dist, const DetectionConfig& det) {
  det.validate();
  if (!(det.sigma > 0.0)) throw std::invalid_argument("convolve_detection needs sigma > 0");
  const double sigma = det.sigma;
  const double h = det.grid_step * sigma;
  const double reach = det.grid_halfwidth * sigma;
  const int half_n = static_cast<int>(std::ceil(det.grid_halfwidth / det.grid_step));
  const int kmax = dist.size() - 1;
  const bool deriv = dist.has_derivative();
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * kPi));
  auto gauss = [&](double u) { return norm * std::exp(-0.5 * u * u / (sigma * sigma)); };

  SmearedDistribution out;
  out.theta = dist.theta;
  auto push = [&](double x, double w) {
    double p = 0.0, dp = 0.0;
    const int k_lo = std::max(0, static_cast<int>(std::ceil(x - reach)));
    const int k_hi = std::min(kmax, static_cast<int>(std::floor(x + reach)));
    for (int k = k_lo; k <= k_hi; ++k) {
      const double gk = gauss(x - k);
      p += dist.p[static_cast<std::size_t>(k)] * gk;
      if (deriv) dp += dist.dp_dtheta[static_cast<std::size_t>(k)] * gk;
    }
    out.x.push_back(x);
    out.weight.push_back(w);
    out.density.push_back(p);
    out.d_density.push_back(dp);
  };

  if (2.0 * reach < 1.0) {
    for (int k = 0; k <= kmax; ++k) {
      if (dist.p[static_cast<std::size_t>(k)] == 0.0 && (!deriv || dist.dp_dtheta[static_cast<std::size_t>(k)] == 0.0))
        continue;
      for (int j = -half_n; j <= half_n; ++j) push(k + j * h, (std::abs(j) == half_n ? 0.5 : 1.0) * h);
    }
    return out;
  }
  const double x0 = -half_n * h;
  const int npts = static_cast<int>(std::ceil((kmax + 2.0 * half_n * h) / h)) + 1;
  for (int j = 0; j < npts; ++j) push(x0 + j * h, (j == 0 || j == npts - 1 ? 0.5 : 1.0) * h);
  return out;
}

/// Fisher information of the smeared readout: quadrature of (dP/dtheta)^2 / P.
inline double fisher_detection(const OutputDistribution& dist, const DetectionConfig& det) {
  if (!dist.has_derivative()) throw std::invalid_argument("fisher_detection needs dp/dtheta");
  if (det.sigma == 0.0) return fisher_information(dist);
  const SmearedDistribution s = convolve_detection(dist, det);
  double f = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i)
    if (s.density[i] > kProbabilityFloor) f += s.weight[i] * s.d_density[i] * s.d_density[i] / s.density[i];
  return f;
}

/// Noiseless sequence read out through detection noise; F_opt over theta.
inline FisherOpt detection_fisher_opt(double nbar, double eta, PulseConvention convention, const DetectionConfig& det,
                                      const FisherOptOptions& opts = {}, PropagatorCache& cache = default_cache()) {
  const PulseSpec p1 = solve_pulse_for_eta(nbar, eta, 0.0, {}, cache);
  const PulseSpec p2 = second_pulse(p1, convention);
  const PoissonMixture probe = poisson_sectors(nbar);
  const std::vector<double> grid = opts.grid.points();
  auto batch = [&](std::span<const double> thetas) {
    const auto dists = run_sequence_batch(probe, p1, p2, thetas, true, cache);
    std::vector<double> f;
    for (const auto& d : dists) f.push_back(fisher_detection(d, det));
    return f;
  };
  auto single = [&](double theta) { return fisher_detection(run_sequence(probe, {p1, p2, theta}, true, cache), det); };
  const ThetaOptimum o = maximize_over_theta(grid, batch, single, opts.refine);
  return {o.value, o.theta, false};
}

/// Mean-field counterpart: geometric output law with N = eta nbar pairs
/// created by pulse 1, smeared by detection noise.
inline FisherOpt meanfield_detection_fisher_opt(double nbar, double eta, const DetectionConfig& det,
                                                const FisherOptOptions& opts = {}) {
  const double ncal = eta * nbar;
  ThetaGrid g = opts.grid;
  g.symmetric = false;
  const std::vector<double> grid = g.points();
  auto single = [&](double theta) { return fisher_detection(meanfield::distribution(ncal, theta), det); };
  auto batch = [&](std::span<const double> thetas) {
    std::vector<double> f;
    for (double t : thetas) f.push_back(single(t));
    return f;
  };
  const ThetaOptimum o = maximize_over_theta(grid, batch, single, opts.refine);
  return {o.value, o.theta, false};
}

}  // namespace spinmix

#endif  // SPINMIX_NOISE_HPP
