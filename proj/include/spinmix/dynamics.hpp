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

// Spin-mixing Hamiltonian per sector, cached eigendecompositions, unitary
// pulses and the linear phase encoding.
//
// Energies are in units of chi*hbar and times enter only through the pulse
// area chi*t. In the basis |k> = |k, M-2k, k> the Hamiltonian is tridiagonal:
//
//   <k|H|k>     = (M - 2k - 1/2) * 2k
//   <k+1|H|k>   = e^{-2i phi} (k+1) sqrt((M-2k)(M-2k-1))
//
// The phase is removed by the diagonal unitary G = diag(e^{-2ik phi}):
// H(phi) = G H(0) G^dagger, so one real symmetric eigendecomposition per M
// serves every phi.

#ifndef SPINMIX_DYNAMICS_HPP
#define SPINMIX_DYNAMICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/hilbert.hpp"

namespace spinmix {

/// One spin-mixing pulse. A negative area evolves with e^{+i H |chi t|}.
struct PulseSpec {
  double area = 0.0;
  double phi = 0.0;  // in [0, 2 pi)

  PulseSpec() = default;
  PulseSpec(double area_, double phi_) : area(area_), phi(std::fmod(phi_, kTwoPi)) {
    if (!std::isfinite(area)) throw std::invalid_argument("pulse area must be finite");
    if (phi < 0.0) phi += kTwoPi;
    if (phi >= kTwoPi) phi = 0.0;
  }

  PulseSpec inverse() const { return PulseSpec(-area, phi); }
  bool is_inverse_of(const PulseSpec& other) const {
    return area == -other.area && phi == other.phi;
  }
};

/// Hermitian tridiagonal sector Hamiltonian.
struct SmdMatrix {
  int total = 0;
  double phi = 0.0;
  std::vector<double> diag;  // real diagonal
  std::vector<double> off;   // |<k+1|H|k>|

  int dim() const { return static_cast<int>(diag.size()); }

  cplx element(int row, int col) const {
    if (row == col) return diag[static_cast<std::size_t>(row)];
    if (row == col + 1) return std::polar(off[static_cast<std::size_t>(col)], -2.0 * phi);
    if (col == row + 1) return std::polar(off[static_cast<std::size_t>(row)], 2.0 * phi);
    return 0.0;
  }

  Eigen::MatrixXcd dense() const {
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(dim(), dim());
    for (int i = 0; i < dim(); ++i)
      for (int j = std::max(0, i - 1); j <= std::min(dim() - 1, i + 1); ++j) h(i, j) = element(i, j);
    return h;
  }
};

inline double smd_diag(int total, int k) { return (total - 2.0 * k - 0.5) * (2.0 * k); }

inline double smd_off(int total, int k) {
  const double n0 = total - 2.0 * k;
  return (k + 1.0) * std::sqrt(n0 * (n0 - 1.0));
}

inline SmdMatrix build_smd_matrix(int total, double phi = 0.0) {
  if (total < 0) throw std::invalid_argument("sector total must be non-negative");
  SmdMatrix h;
  h.total = total;
  h.phi = phi;
  const int d = sector_dim(total);
  h.diag.resize(static_cast<std::size_t>(d));
  h.off.resize(static_cast<std::size_t>(d - 1));
  for (int k = 0; k < d; ++k) h.diag[static_cast<std::size_t>(k)] = smd_diag(total, k);
  for (int k = 0; k + 1 < d; ++k) h.off[static_cast<std::size_t>(k)] = smd_off(total, k);
  return h;
}

/// Diagonalized gauge-reduced Hamiltonian H(0) = V diag(lambda) V^T.
class SectorPropagator {
 public:
  explicit SectorPropagator(int total) : total_(total) {
    const SmdMatrix h = build_smd_matrix(total, 0.0);
    const int d = h.dim();
    if (d == 1) {
      eigenvalues_ = Eigen::VectorXd::Constant(1, h.diag[0]);
      eigenvectors_ = Eigen::MatrixXd::Identity(1, 1);
      return;
    }
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(h.diag.data(), d);
    Eigen::VectorXd off = Eigen::Map<const Eigen::VectorXd>(h.off.data(), d - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) throw Error("tridiagonal eigensolver failed for M=" + std::to_string(total));
    eigenvalues_ = solver.eigenvalues();
    eigenvectors_ = solver.eigenvectors();
  }

  int total() const { return total_; }
  int dim() const { return static_cast<int>(eigenvalues_.size()); }
  double phi_gauge() const { return 0.0; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }

  std::size_t bytes() const {
    return sizeof(double) * static_cast<std::size_t>(eigenvectors_.size() + eigenvalues_.size());
  }

  /// amp <- exp(-i area H(phi)) amp, in place.
  void apply(Eigen::Ref<Eigen::VectorXcd> amp, const PulseSpec& pulse) const {
    if (pulse.area == 0.0) return;
    const int d = dim();
    // G^dagger
    if (pulse.phi != 0.0)
      for (int k = 0; k < d; ++k) amp[k] *= std::polar(1.0, 2.0 * k * pulse.phi);
    Eigen::VectorXd re = eigenvectors_.transpose() * amp.real();
    Eigen::VectorXd im = eigenvectors_.transpose() * amp.imag();
    for (int j = 0; j < d; ++j) {
      const cplx c = cplx(re[j], im[j]) * std::polar(1.0, -eigenvalues_[j] * pulse.area);
      re[j] = c.real();
      im[j] = c.imag();
    }
    Eigen::VectorXd out_re = eigenvectors_ * re;
    Eigen::VectorXd out_im = eigenvectors_ * im;
    for (int k = 0; k < d; ++k) {
      cplx a(out_re[k], out_im[k]);
      if (pulse.phi != 0.0) a *= std::polar(1.0, -2.0 * k * pulse.phi);
      amp[k] = a;
    }
  }

  /// exp(-i area H(phi)) |k=0>. Cheaper than apply() because V^T e_0 is the
  /// first row of V.
  Eigen::VectorXcd evolve_vacuum(const PulseSpec& pulse) const {
    const int d = dim();
    Eigen::VectorXd re(d), im(d);
    for (int j = 0; j < d; ++j) {
      const cplx c = eigenvectors_(0, j) * std::polar(1.0, -eigenvalues_[j] * pulse.area);
      re[j] = c.real();
      im[j] = c.imag();
    }
    Eigen::VectorXcd out(d);
    out.real() = eigenvectors_ * re;
    out.imag() = eigenvectors_ * im;
    if (pulse.phi != 0.0)
      for (int k = 0; k < d; ++k) out[k] *= std::polar(1.0, -2.0 * k * pulse.phi);
    return out;
  }

 private:
  int total_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
};

/// Write-once-read-many cache of sector propagators keyed by M, with LRU
/// eviction once the stored eigenvector matrices exceed the byte budget.
class PropagatorCache {
 public:
  explicit PropagatorCache(std::size_t byte_budget = std::size_t{3} << 30) : budget_(byte_budget) {}

  std::shared_ptr<const SectorPropagator> get(int total) {
    {
      std::lock_guard lock(mutex_);
      auto it = map_.find(total);
      if (it != map_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second.pos);
        ++hits_;
        return it->second.prop;
      }
    }
    // Built outside the lock so distinct sectors diagonalize concurrently.
    auto prop = std::make_shared<const SectorPropagator>(total);
    std::lock_guard lock(mutex_);
    auto it = map_.find(total);
    if (it != map_.end()) return it->second.prop;
    ++misses_;
    lru_.push_front(total);
    map_.emplace(total, Slot{prop, lru_.begin()});
    bytes_ += prop->bytes();
    while (bytes_ > budget_ && lru_.size() > 1) {
      const int victim = lru_.back();
      lru_.pop_back();
      auto v = map_.find(victim);
      bytes_ -= v->second.prop->bytes();
      map_.erase(v);
    }
    return prop;
  }

  void clear() {
    std::lock_guard lock(mutex_);
    map_.clear();
    lru_.clear();
    bytes_ = 0;
  }

  std::size_t bytes() const {
    std::lock_guard lock(mutex_);
    return bytes_;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return map_.size();
  }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  struct Slot {
    std::shared_ptr<const SectorPropagator> prop;
    std::list<int>::iterator pos;
  };
  mutable std::mutex mutex_;
  std::unordered_map<int, Slot> map_;
  std::list<int> lru_;
  std::size_t budget_;
  std::size_t bytes_ = 0;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

inline PropagatorCache& default_cache() {
  static PropagatorCache cache;
  return cache;
}

inline SectorState evolve_smd(const SectorState& state, const PulseSpec& pulse,
                              PropagatorCache& cache = default_cache()) {
  SectorState out = state;
  if (pulse.area == 0.0) return out;
  auto prop = cache.get(state.total());
  Eigen::Map<Eigen::VectorXcd> amp(out.amp.data(), out.dim());
  prop->apply(amp, pulse);
  return out;
}

/// Phase encoding exp(-i theta k): H_PS t_PS / hbar = q t_PS (N_+1 + N_-1) = theta k.
inline SectorState apply_phase(const SectorState& state, double theta) {
  SectorState out = state;
  for (int k = 0; k < out.dim(); ++k) out.amp[static_cast<std::size_t>(k)] *= std::polar(1.0, -theta * k);
  return out;
}

struct PairMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline PairMoments pair_moments(const SectorState& state) {
  double m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < state.dim(); ++k) {
    const double p = std::norm(state.amp[static_cast<std::size_t>(k)]);
    m1 += k * p;
    m2 += double(k) * k * p;
  }
  return {m1, m2 - m1 * m1};
}

}  // namespace spinmix

#endif  // SPINMIX_DYNAMICS_HPP
