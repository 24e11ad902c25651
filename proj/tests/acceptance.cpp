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

// Acceptance checks. One PASS/FAIL line per criterion; pass criterion
// numbers as arguments to run a subset. Exit status 1 if any selected
// criterion fails.

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spinmix/estimation.hpp"
#include "spinmix/meanfield.hpp"
#include "spinmix/noise.hpp"
#include "spinmix/sweep.hpp"

using namespace spinmix;
namespace mf = spinmix::meanfield;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a / b - 1.0); }

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

// n = 1000, chi t sqrt(n) = 0.1, exact-inverse second pulse.
struct DeepRegime {
  double nbar = 1000.0;
  double area = 0.1 / std::sqrt(1000.0);
  PoissonMixture probe = poisson_sectors(1000.0);
  PulseSpec p1{area, 0.0};
  double ncal_mf = mf::pair_number(nbar, area);
  double ncal_q = transfer_fraction(probe, p1) * nbar;
};

Outcome c1() {
  const DeepRegime r;
  double worst_p = 0.0, worst_f = 0.0;
  for (double theta : {0.05, 0.2, 0.5}) {
    const auto d = run_sequence(r.probe, {r.p1, r.p1.inverse(), theta});
    double wp = 0.0;
    int kw = 0, n = 0;
    for (int k = 0; k < d.size(); ++k) {
      if (d.p[k] <= 1e-6) continue;
      ++n;
      const double e = rel(d.p[k], mf::probability(r.ncal_mf, k, theta));
      if (e > wp) wp = e, kw = k;
    }
    const double ef = rel(fisher_information(d), mf::fisher(r.ncal_mf, theta));
    note(fmt("theta %.2f: %d outcomes above 1e-6, max |dP/P| %.3g at k=%d, F %.6g vs %.6g (%.3g)", theta, n, wp, kw,
             fisher_information(d), mf::fisher(r.ncal_mf, theta), ef));
    worst_p = std::max(worst_p, wp);
    worst_f = std::max(worst_f, ef);
  }
  const double en = rel(r.ncal_q, r.ncal_mf);
  Outcome o;
  o.pass = en <= 0.02 && worst_p <= 0.02 && worst_f <= 0.02;
  o.detail = fmt("N quantum %.5f vs closed form %.5f (%.2g); max rel dev P %.3g, F %.3g; tol 0.02", r.ncal_q, r.ncal_mf,
                 en, worst_p, worst_f);
  return o;
}

Outcome c2() {
  const DeepRegime r;
  double worst = 0.0;
  std::string s;
  for (double theta : {0.05, 0.2}) {
    const auto d = run_sequence(r.probe, {r.p1, r.p1.inverse(), theta});
    const EstimationResult e = estimate(d, 1);
    const double dev = rel(e.ep, e.crb);
    worst = std::max(worst, dev);
    s += fmt("theta %.2f: ep %.6g crb %.6g (%.2g); ", theta, e.ep, e.crb, dev);
  }
  return {worst <= 0.02, s + "tol 0.02"};
}

Outcome c3() {
  double worst = 0.0;
  std::string s;
  for (auto [nbar, eta] : {std::pair{100.0, 0.2}, std::pair{200.0, 0.1}}) {
    const PoissonMixture probe = poisson_sectors(nbar);
    const PulseSpec p1 = solve_pulse_for_eta(nbar, eta);
    const double f0 = fisher_at_zero(probe, p1, p1.inverse());
    const double f = fisher_information(run_sequence(probe, {p1, p1.inverse(), 1e-3}));
    worst = std::max(worst, rel(f0, f));
    s += fmt("(%g, %g): F0 %.6g F(1e-3) %.6g (%.2g); ", nbar, eta, f0, f, rel(f0, f));
  }
  const DeepRegime r;
  const double f0 = fisher_at_zero(r.probe, r.p1, r.p1.inverse());
  const double target = r.ncal_mf * (r.ncal_mf + 2.0);
  note(fmt("deep regime: F0 %.6g, N(N+2) %.6g with the closed-form N, %.6g with the quantum N", f0, target,
           r.ncal_q * (r.ncal_q + 2.0)));
  const double dev = rel(f0, target);
  s += fmt("deep regime F0 %.6g vs N(N+2) %.6g (%.3g); tol 0.005 / 0.02", f0, target, dev);
  return {worst <= 0.005 && dev <= 0.02, s};
}

Outcome c4() {
  const double eta = 0.2, alpha_ref = eta * eta * (1.0 - 1.3 * eta);
  std::vector<double> a;
  std::string s;
  for (double nbar : {200.0, 400.0, 600.0}) {
    const FisherOpt o = noiseless_fisher_opt(nbar, eta, PulseConvention::kInverse);
    a.push_back(o.f_opt / (nbar * nbar));
    s += fmt("n %g: F_opt/n^2 %.5f (theta %.4g); ", nbar, a.back(), o.theta_opt);
  }
  const double lo = *std::min_element(a.begin(), a.end()), hi = *std::max_element(a.begin(), a.end());
  double worst = 0.0;
  for (double x : a) worst = std::max(worst, rel(x, alpha_ref));
  const double spread = hi / lo - 1.0;
  s += fmt("spread %.3g (tol 0.10), max dev from %.4f %.3g (tol 0.15)", spread, alpha_ref, worst);
  return {spread <= 0.10 && worst <= 0.15, s};
}

SsnResult noiseless_ssn(double eta, int n_max = 16384) {
  return ssn_critical_n([&](int n) { return noiseless_fisher_opt(n, eta, PulseConvention::kInverse).f_opt; }, {n_max});
}

Outcome c5() {
  const SsnResult a = noiseless_ssn(0.05);
  const double ref = mf::critical_n(0.05);
  const SsnResult b = noiseless_ssn(0.2);
  const bool def = b.found && b.f_at > b.nbar_cr && (b.nbar_cr == 1 || b.f_below <= b.nbar_cr - 1);
  const bool ok_a = a.found && rel(a.nbar_cr, ref) <= 0.2;
  return {ok_a && def, fmt("eta 0.05: n_cr %d vs %.0f (%.3g, tol 0.2), %d evals; eta 0.2: n_cr %d, F_opt(n_cr) %.4g, "
                           "F_opt(n_cr - 1) %.4g",
                           a.nbar_cr, ref, rel(a.nbar_cr, ref), a.evaluations, b.nbar_cr, b.f_at, b.f_below)};
}

Outcome c6() {
  const double nbar = 200.0;
  sweep::Common c;
  const auto ratios = sweep::parse_grid("-1.5:0.1:1.5");
  const sweep::Table t = sweep::ratio_scan(nbar, {0.1, 0.2}, ratios, c);
  bool argmax_ok = true;
  int positive_ssn = 0;
  std::string s;
  for (double eta : {0.1, 0.2}) {
    double best = -1.0, best_r = 0.0, f_inv = 0.0, best_pos = 0.0, best_pos_r = 0.0;
    int pos = 0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.number(i, "eta") != eta) continue;
      const double r = t.number(i, "ratio"), f = t.number(i, "f_opt");
      if (f > best) best = f, best_r = r;
      if (r == -1.0) f_inv = f;
      if (r > 0.0) {
        if (f > nbar) ++pos;
        if (f > best_pos) best_pos = f, best_pos_r = r;
      }
    }
    argmax_ok = argmax_ok && best_r == -1.0;
    positive_ssn += pos;
    s += fmt("eta %.1f: argmax ratio %.1f (F_opt %.5g, at -1: %.5g), best positive %.1f (%.5g), %d positive SSN; ",
             eta, best_r, best, f_inv, best_pos_r, best_pos, pos);
  }
  return {argmax_ok && positive_ssn > 0, s};
}

Outcome c7() {
  LossConfig loss;
  loss.mixing_enabled = false;
  loss.n_traj = 2000;
  loss.gamma_over_chi = 0.01;
  const double area = 0.1;  // gamma t = 0.001
  const EnsembleMean m = ensemble_mean_n0(200.0, area, loss);
  const double ref = 200.0 / 1.4;
  const double z = std::abs(m.mean - ref) / m.standard_error;
  return {z <= 3.0, fmt("<N0> %.4f +- %.4f vs %.4f (%.2f SE, tol 3)", m.mean, m.standard_error, ref, z)};
}

Outcome c8() {
  LossConfig loss;
  loss.n_traj = 2000;
  loss.derivative = DerivativeEstimator::kPaired;
  bool none_at_005 = true;
  std::string s;
  loss.gamma_over_chi = 0.05;
  for (double nbar : {50.0, 100.0, 200.0, 400.0})
    for (double eta : {0.1, 0.2, 0.3}) {
      const FisherOpt o = lossy_fisher_opt(nbar, eta, PulseConvention::kInverse, loss);
      note(fmt("gamma 0.05 n %g eta %.1f: F_opt %.4g at theta %.4g", nbar, eta, o.f_opt, o.theta_opt));
      if (o.f_opt > nbar) none_at_005 = false;
    }
  s += none_at_005 ? "gamma 0.05: no SSN point; " : "gamma 0.05: SSN point found; ";

  // Cheapest and most likely points first; stop at the first SSN point.
  loss.gamma_over_chi = 0.01;
  bool any_at_001 = false;
  for (auto [nbar, eta] : {std::pair{50.0, 0.3}, std::pair{50.0, 0.2}, std::pair{100.0, 0.3}, std::pair{100.0, 0.2},
                           std::pair{200.0, 0.3}, std::pair{200.0, 0.2}, std::pair{400.0, 0.3}, std::pair{400.0, 0.2},
                           std::pair{50.0, 0.1}, std::pair{100.0, 0.1}, std::pair{200.0, 0.1}, std::pair{400.0, 0.1}}) {
    const FisherOpt o = lossy_fisher_opt(nbar, eta, PulseConvention::kInverse, loss);
    note(fmt("gamma 0.01 n %g eta %.1f: F_opt %.4g at theta %.4g", nbar, eta, o.f_opt, o.theta_opt));
    if (o.f_opt > nbar) {
      any_at_001 = true;
      s += fmt("gamma 0.01: SSN at (n %g, eta %.1f), F_opt %.4g", nbar, eta, o.f_opt);
      break;
    }
  }
  if (!any_at_001) s += "gamma 0.01: no SSN point";
  return {none_at_005 && any_at_001, s};
}

Outcome c9() {
  const double sigma = 2.0, eta = 0.1;
  const SsnResult r = ssn_critical_n([&](int n) { return meanfield_detection_fisher_opt(n, eta, {sigma}).f_opt; });
  const double ref = mf::critical_n_detection(eta, sigma).value;
  const bool ok_a = r.found && rel(r.nbar_cr, ref) <= 0.25;

  double worst = 0.0;
  const PoissonMixture probe = poisson_sectors(100.0);
  const PulseSpec p1 = solve_pulse_for_eta(100.0, 0.2);
  for (double theta : {0.01, 0.05, 0.2, 0.5}) {
    const auto d = run_sequence(probe, {p1, p1.inverse(), theta});
    worst = std::max(worst, rel(fisher_detection(d, {1e-3}), fisher_information(d)));
  }
  for (double theta : {0.05, 0.5}) {
    const auto d = mf::distribution(20.0, theta);
    worst = std::max(worst, rel(fisher_detection(d, {1e-3}), fisher_information(d)));
  }
  return {ok_a && worst <= 1e-3, fmt("n_cr %d vs 2 sigma/eta^2 = %.0f (%.3g, tol 0.25); sigma 1e-3 vs discrete FI max "
                                     "rel dev %.2g (tol 1e-3)",
                                     r.nbar_cr, ref, rel(r.nbar_cr, ref), worst)};
}

Outcome c10() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> failed;

  double unit = 0.0;
  for (int c = 0; c < 20; ++c) {
    const int m = 1 + static_cast<int>(u(rng) * 300);
    const SectorPropagator prop(m);
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(prop.dim());
    psi[0] = 1.0;
    prop.apply(psi, PulseSpec((u(rng) - 0.5) * 0.2, kTwoPi * u(rng)));
    unit = std::max(unit, std::abs(psi.norm() - 1.0));
    const auto d = run_sequence(poisson_sectors(5 + 200 * u(rng)),
                                {PulseSpec(0.05 * u(rng), 0.0), PulseSpec(-0.05 * u(rng), kTwoPi * u(rng)), 3 * u(rng)});
    unit = std::max(unit, std::abs(std::accumulate(d.p.begin(), d.p.end(), 0.0) - 1.0));
  }
  if (unit > 1e-10) failed.push_back("normalization");

  double fd = 0.0;
  for (int c = 0; c < 20; ++c) {
    const PoissonMixture probe = poisson_sectors(5.0 + 60.0 * u(rng));
    const PulseSpec p1(0.08 * u(rng) + 0.005, kTwoPi * u(rng));
    const PulseSpec p2((u(rng) * 3.0 - 1.5) * p1.area, kTwoPi * u(rng));
    const double theta = (u(rng) - 0.5) * 2.0 * kPi, h = 1e-5;
    const auto d = run_sequence(probe, {p1, p2, theta});
    const auto dp = run_sequence(probe, {p1, p2, theta + h}, false);
    const auto dm = run_sequence(probe, {p1, p2, theta - h}, false);
    for (int k = 0; k < d.size(); ++k) fd = std::max(fd, std::abs(d.dp_dtheta[k] - (dp.p[k] - dm.p[k]) / (2 * h)));
  }
  if (fd > 1e-6) failed.push_back("derivative");

  double gauge = 0.0;
  for (int m = 0; m <= 40; ++m) {
    const SectorPropagator prop(m);
    const PulseSpec pulse((u(rng) - 0.5) * 0.4, kTwoPi * u(rng));
    Eigen::VectorXcd psi(prop.dim());
    for (int k = 0; k < prop.dim(); ++k) psi[k] = cplx(u(rng) - 0.5, u(rng) - 0.5);
    psi /= psi.norm();
    Eigen::VectorXcd a = psi;
    prop.apply(a, pulse);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(build_smd_matrix(m, pulse.phi).dense());
    Eigen::VectorXcd ph(prop.dim());
    for (int j = 0; j < prop.dim(); ++j) ph[j] = std::polar(1.0, -pulse.area * es.eigenvalues()[j]);
    const Eigen::VectorXcd b = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint() * psi;
    for (int k = 0; k < prop.dim(); ++k) gauge = std::max(gauge, std::abs(std::norm(a[k]) - std::norm(b[k])));
  }
  if (gauge > 1e-12) failed.push_back("gauge");

  double mass = 0.0;
  for (double nbar : {0.5, 10.0, 200.0, 1000.0, 5000.0}) {
    const PoissonMixture mix = poisson_sectors(nbar);
    mass = std::max(mass, (1.0 - mix.retained_mass) / mix.epsilon);
  }
  if (mass > 1.0) failed.push_back("poisson mass");

  LossConfig loss;
  loss.gamma_over_chi = 0.05;
  loss.n_traj = 200;
  const PoissonMixture probe = poisson_sectors(40.0);
  const PulseSpec p1 = solve_pulse_for_eta(40.0, 0.2);
  auto lossy = [&] { return LossyInterferometer(probe, p1, p1.inverse(), loss).distribution(0.1); };
  const auto r1 = lossy();
  const int threads = thread_count();
  set_thread_count(threads == 1 ? 2 : 1);
  const auto r2 = lossy();
  set_thread_count(0);
  const auto q1 = run_sequence(probe, {p1, p1.inverse(), 0.1});
  const auto q2 = run_sequence(probe, {p1, p1.inverse(), 0.1});
  const bool same = r1.p == r2.p && r1.dp_dtheta == r2.dp_dtheta && q1.p == q2.p && q1.dp_dtheta == q2.dp_dtheta;
  if (!same) failed.push_back("reruns");

  std::string f;
  for (const auto& x : failed) f += x + " ";
  return {failed.empty(), fmt("normalization %.2g (1e-10), FD %.2g (1e-6), gauge %.2g (1e-12), Poisson tail/eps %.3g "
                              "(<= 1), reruns %s%s%s",
                              unit, fd, gauge, mass, same ? "identical" : "differ", failed.empty() ? "" : "; failed: ",
                              f.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "mean-field consistency", 120, c1},  {2, "saturation identity", 30, c2},
      {3, "theta = 0 limit", 30, c3},          {4, "scaling law", 600, c4},
      {5, "SSN onset", 900, c5},               {6, "ratio-scan shape", 1200, c6},
      {7, "loss-model oracle", 120, c7},       {8, "loss extinction", 3600, c8},
      {9, "detection noise", 600, c9},         {10, "property suite", 300, c10},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    std::printf("[..] %d %s\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
