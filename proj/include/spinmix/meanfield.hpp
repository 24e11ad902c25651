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

// Closed-form parametric (SU(1,1)) predictions, valid for chi*t -> 0,
// nbar -> infinity with chi*t*sqrt(nbar) << 1.

#ifndef SPINMIX_MEANFIELD_HPP
#define SPINMIX_MEANFIELD_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "spinmix/common.hpp"
#include "spinmix/interferometer.hpp"

namespace spinmix::meanfield {

struct MeanFieldPoint {
  double nbar = 0.0;
  double area = 0.0;
  double ncal = 0.0;      // side-mode population after one pulse
  double validity = 0.0;  // chi t sqrt(nbar)
};

/// Side-mode population 8 nbar^2/(4 nbar - 1) sinh^2(sqrt(4 nbar - 1) chi t / 2).
inline double pair_number(double nbar, double area) {
  if (nbar < 1.0) throw std::invalid_argument("mean-field pair number needs nbar >= 1");
  const double g = std::sqrt(4.0 * nbar - 1.0);
  const double s = std::sinh(0.5 * g * area);
  return 8.0 * nbar * nbar / (4.0 * nbar - 1.0) * s * s;
}

inline double validity_parameter(double nbar, double area) { return std::abs(area) * std::sqrt(nbar); }

inline MeanFieldPoint point(double nbar, double area) {
  return {nbar, area, pair_number(nbar, area), validity_parameter(nbar, area)};
}

/// Area giving side-mode population eta*nbar; inverse of pair_number.
inline double area_for_eta(double nbar, double eta) {
  const double g = std::sqrt(4.0 * nbar - 1.0);
  return 2.0 / g * std::asinh(std::sqrt(eta * (4.0 * nbar - 1.0) / (8.0 * nbar)));
}

/// P(k|theta) = 2 x^k / (x + 2)^{k+1}, x = N(N+2)(1 - cos theta), with 0^0 = 1.
inline double probability(double ncal, int k, double theta) {
  const double x = ncal * (ncal + 2.0) * (1.0 - std::cos(theta));
  if (x <= 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(std::log(2.0) + k * std::log(x) - (k + 1.0) * std::log(x + 2.0));
}

/// dP(k|theta)/dtheta of probability().
inline double probability_derivative(double ncal, int k, double theta) {
  const double a = ncal * (ncal + 2.0);
  const double x = a * (1.0 - std::cos(theta));
  if (x <= 0.0) return 0.0;
  return probability(ncal, k, theta) * (k / x - (k + 1.0) / (x + 2.0)) * a * std::sin(theta);
}

/// F = N(N+2) cos^2(theta/2) / (N(N+2) sin^2(theta/2) + 1).
inline double fisher(double ncal, double theta) {
  const double a = ncal * (ncal + 2.0);
  const double s = std::sin(0.5 * theta);
  const double c = std::cos(0.5 * theta);
  return a * c * c / (a * s * s + 1.0);
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Output mean N(N+2) sin^2(theta/2) and variance V s (V s + 1), s = sin^2(theta/2).
/// V is the variance of the total side population N_+1 + N_-1 after pulse 1,
/// 4 (N/2)(N/2 + 1) = N(N+2); with it the moments are those of the geometric
/// law of probability().
inline Moments output_moments(double ncal, double theta) {
  const double s = std::pow(std::sin(0.5 * theta), 2);
  const double v = 4.0 * (0.5 * ncal) * (0.5 * ncal + 1.0);
  return {ncal * (ncal + 2.0) * s, v * s * (v * s + 1.0)};
}

/// Single-mode variance (N/2)(N/2 + 1) of the two-mode squeezed vacuum.
inline double squeezed_vacuum_variance(double ncal) { return 0.5 * ncal * (0.5 * ncal + 1.0); }

/// Noiseless critical atom number (1 - 2 eta)/eta^2.
inline double critical_n(double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (eta >= 0.5) throw std::invalid_argument("mean-field critical nbar needs eta < 1/2");
  return (1.0 - 2.0 * eta) / (eta * eta);
}

struct LeadingOrder {
  double value = 0.0;
  bool within_stated_range = true;  // sigma >~ 1 and small eta
};

/// Leading-order critical atom number 2 sigma / eta^2 under Gaussian detection noise.
inline LeadingOrder critical_n_detection(double eta, double sigma) {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  return {2.0 * sigma / (eta * eta), sigma >= 1.0 && eta < 0.5};
}

/// Discretized probability() with its analytic derivative, truncated once the
/// geometric tail drops below tail_tol.
inline OutputDistribution distribution(double ncal, double theta, double tail_tol = 1e-15, int kmax = 1 << 22) {
  OutputDistribution d;
  d.theta = theta;
  const double x = ncal * (ncal + 2.0) * (1.0 - std::cos(theta));
  const double ratio = x / (x + 2.0);
  double tail = 1.0;
  for (int k = 0; k < kmax; ++k) {
    d.p.push_back(probability(ncal, k, theta));
    d.dp_dtheta.push_back(probability_derivative(ncal, k, theta));
    tail *= ratio;  // P(K > k) = ratio^{k+1}
    if (tail < tail_tol) break;
  }
  return d;
}

}  // namespace spinmix::meanfield

#endif  // SPINMIX_MEANFIELD_HPP
