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

#ifndef SPINMIX_COMMON_HPP
#define SPINMIX_COMMON_HPP

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace spinmix {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr const char* kVersion = "1.0.0";

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested transfer fraction lies above the first maximum of eta(area).
class UnreachableEta : public Error {
 public:
  UnreachableEta(double target, double max_eta)
      : Error("transfer fraction " + std::to_string(target) +
              " is unreachable (first maximum " + std::to_string(max_eta) + ")"),
        target_(target),
        max_eta_(max_eta) {}
  double target() const { return target_; }
  double max_eta() const { return max_eta_; }

 private:
  double target_;
  double max_eta_;
};

/// The non-Hermitian propagator could not advance the state reliably.
class IntegratorFailure : public Error {
 public:
  using Error::Error;
};

/// Number of basis states |k, M-2k, k> in the sector with M atoms.
constexpr int sector_dim(int total) { return total / 2 + 1; }

}  // namespace spinmix

#endif  // SPINMIX_COMMON_HPP
