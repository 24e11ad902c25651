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

// Symmetric Fock sectors {|k, M-2k, k>} and the Poisson-mixed probe.

#ifndef SPINMIX_HILBERT_HPP
#define SPINMIX_HILBERT_HPP

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "spinmix/common.hpp"

namespace spinmix {

/// Basis of the fixed-M sector. Label k counts pairs in m_f = +1/-1, so the
/// occupations are N_{-1} = N_{+1} = k and N_0 = M - 2k.
class SectorBasis {
 public:
  explicit SectorBasis(int total) : total_(total) {
    if (total < 0) throw std::invalid_argument("sector total must be non-negative");
  }

  int total() const { return total_; }
  int dim() const { return sector_dim(total_); }
  int n0(int k) const { return total_ - 2 * k; }
  int n_side(int k) const { return k; }

  friend bool operator==(const SectorBasis&, const SectorBasis&) = default;

 private:
  int total_;
};

inline SectorBasis sector_basis(int total) { return SectorBasis(total); }

/// Amplitudes over the pair number k inside one sector.
struct SectorState {
  SectorBasis basis{0};
  std::vector<cplx> amp;

  int total() const { return basis.total(); }
  int dim() const { return static_cast<int>(amp.size()); }

  double norm2() const {
    double s = 0.0;
    for (const auto& a : amp) s += std::norm(a);
    return s;
  }
};

/// All atoms in m_f = 0.
inline SectorState vacuum_probe(int total) {
  SectorState s{SectorBasis(total), std::vector<cplx>(static_cast<std::size_t>(sector_dim(total)))};
  s.amp[0] = 1.0;
  return s;
}

struct PoissonEntry {
  int total;      // M
  double weight;  // renormalized over the retained window
};

/// Truncated Poisson distribution of the total atom number.
struct PoissonMixture {
  double nbar = 0.0;
  double epsilon = 0.0;
  double retained_mass = 0.0;  // sum of the exact Poisson weights kept
  std::vector<PoissonEntry> entries;

  int min_total() const { return entries.front().total; }
  int max_total() const { return entries.back().total; }
};

/// log of nbar^M e^{-nbar} / M!
inline double log_poisson(double nbar, int total) {
  return total * std::log(nbar) - nbar - std::lgamma(total + 1.0);
}

/// Smallest contiguous window of M around the mode whose Poisson mass is at
/// least 1 - epsilon. Grows greedily toward the heavier neighbor, which is
/// optimal for a unimodal mass function.
inline PoissonMixture poisson_sectors(double nbar, double epsilon = 1e-10) {
  if (!(nbar > 0.0) || !std::isfinite(nbar)) throw std::invalid_argument("nbar must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");

  const int mode = static_cast<int>(std::floor(nbar));
  auto weight = [&](int m) { return std::exp(log_poisson(nbar, m)); };

  int lo = mode;
  int hi = mode;
  double mass = weight(mode);
  double w_lo = lo > 0 ? weight(lo - 1) : 0.0;
  double w_hi = weight(hi + 1);
  while (mass < 1.0 - epsilon) {
    if (lo > 0 && w_lo >= w_hi) {
      mass += w_lo;
      --lo;
      w_lo = lo > 0 ? weight(lo - 1) : 0.0;
    } else {
      mass += w_hi;
      ++hi;
      w_hi = weight(hi + 1);
    }
  }

  PoissonMixture mix;
  mix.nbar = nbar;
  mix.epsilon = epsilon;
  mix.entries.reserve(static_cast<std::size_t>(hi - lo + 1));
  // Recompute the mass in M order so the renormalization is independent of
  // the growth order.
  double total_mass = 0.0;
  for (int m = lo; m <= hi; ++m) {
    const double w = weight(m);
    if (w <= 0.0) continue;
    mix.entries.push_back({m, w});
    total_mass += w;
  }
  mix.retained_mass = total_mass;
  for (auto& e : mix.entries) e.weight /= total_mass;
  return mix;
}

}  // namespace spinmix

#endif  // SPINMIX_HILBERT_HPP
