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

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "spinmix/sweep.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kUnreachableEta = 3, kIntegrator = 4 };

struct Options {
  std::string nbar;
  std::string eta;
  std::string ratio = "-1.5:0.1:1.5";
  std::string gamma = "0.01,0.02,0.03";
  std::string sigma = "1,2,5,10";
  std::string area;
  std::string convention = "inverse";
  std::string positive_phase = "pi2";
  std::string sampling = "stratified";
  std::string derivative = "pathwise";
  std::string noise = "none";
  std::string out;
  std::string format = "csv";
  int trajectories = 2000;
  std::uint64_t seed = 1;
  int theta_points = 70;
  int threads = 0;
  int nbar_max = 4096;
  double dt = 0.005;
};

std::vector<double> required(const std::string& name, const std::string& spec) {
  if (spec.empty()) throw std::invalid_argument("--" + name + " is required");
  return spinmix::sweep::parse_grid(spec);
}

double single(const std::string& name, const std::string& spec) {
  const auto v = required(name, spec);
  if (v.size() != 1) throw std::invalid_argument("--" + name + " takes a single value here");
  return v[0];
}

}  // namespace

int main(int argc, char** argv) {
  using namespace spinmix;
  CLI::App app{"Spin-mixing interferometer sweeps: Fisher curves, scaling fits, ratio scans, SSN and loss maps"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "Flat key = value file; command-line flags take precedence");
  app.require_subcommand(1);

  Options o;
  auto add_common = [&](CLI::App* a) {
    a->add_option("--nbar", o.nbar, "Mean atom number: value, list a,b,c or range lo:step:hi");
    a->add_option("--eta", o.eta, "Transfer fraction(s) of pulse 1");
    a->add_option("--ratio", o.ratio, "Area ratio(s) of pulse 2 to pulse 1")->capture_default_str();
    a->add_option("--gamma-over-chi", o.gamma, "Two-body loss rate(s) gamma/chi")->capture_default_str();
    a->add_option("--sigma", o.sigma, "Detection noise level(s) in atoms")->capture_default_str();
    a->add_option("--area", o.area, "Pulse areas chi t (loss-curves)");
    a->add_option("--trajectories", o.trajectories, "MCWF trajectories")->capture_default_str()->check(CLI::PositiveNumber);
    a->add_option("--seed", o.seed, "Base random seed")->capture_default_str();
    a->add_option("--theta-points", o.theta_points, "Theta grid points per sign")->capture_default_str()->check(CLI::Range(4, 100000));
    a->add_option("--pulse-convention", o.convention, "Second pulse: exact inverse or same area with phi = pi/2")
        ->capture_default_str()
        ->check(CLI::IsMember({"inverse", "pi2"}));
    a->add_option("--positive-ratio-phase", o.positive_phase, "Pulse-2 phase for positive ratios")
        ->capture_default_str()
        ->check(CLI::IsMember({"pi2", "zero"}));
    a->add_option("--sampling", o.sampling, "Initial-sector sampling of the trajectory ensemble")
        ->capture_default_str()
        ->check(CLI::IsMember({"stratified", "poisson"}));
    a->add_option("--derivative", o.derivative, "dP/dtheta estimator under loss")
        ->capture_default_str()
        ->check(CLI::IsMember({"pathwise", "paired"}));
    a->add_option("--dt", o.dt, "Largest propagation step, units of 1/(chi sqrt(nbar))")->capture_default_str()->check(CLI::PositiveNumber);
    a->add_option("--out", o.out, "Output path (default stdout)");
    a->add_option("--format", o.format, "Table format")->capture_default_str()->check(CLI::IsMember({"csv", "json"}));
    a->add_option("--threads", o.threads, "Worker threads (default SPINMIX_THREADS or all cores)")->check(CLI::NonNegativeNumber);
  };
  add_common(&app);

  auto* fisher = app.add_subcommand("fisher-curve", "F(theta) and 1/Delta theta_ep^2 at one (nbar, eta)");
  auto* scaling = app.add_subcommand("scaling-fit", "F_opt against nbar^2 and the alpha(eta) law");
  auto* ratio = app.add_subcommand("ratio-scan", "F_opt against the pulse-2/pulse-1 area ratio");
  auto* ssn = app.add_subcommand("ssn-map", "Critical atom number per eta, optionally with loss or detection noise");
  ssn->add_option("--noise", o.noise, "Noise model")->capture_default_str()->check(CLI::IsMember({"none", "loss", "detection"}));
  ssn->add_option("--nbar-max", o.nbar_max, "Largest nbar searched")->capture_default_str()->check(CLI::PositiveNumber);
  auto* loss = app.add_subcommand("loss-curves", "eta against chi t under two-body loss");
  for (auto* sub : {fisher, scaling, ratio, ssn, loss}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    int threads = o.threads;
    if (app.count("--threads") == 0)
      if (const char* env = std::getenv("SPINMIX_THREADS")) threads = std::stoi(env);
    set_thread_count(threads);

    sweep::Common c;
    c.convention = sweep::parse_convention(o.convention);
    c.positive_phase = o.positive_phase == "pi2" ? PositiveRatioPhase::kPi2 : PositiveRatioPhase::kZero;
    c.theta_points = o.theta_points;
    c.seed = o.seed;
    c.loss.n_traj = o.trajectories;
    c.loss.seed = o.seed;
    c.loss.dt = o.dt;
    c.loss.sampling = o.sampling == "stratified" ? SectorSampling::kStratified : SectorSampling::kPoisson;
    c.loss.derivative = o.derivative == "pathwise" ? DerivativeEstimator::kPathwise : DerivativeEstimator::kPaired;
    for (int i = 0; i < argc; ++i) c.command_line += (i ? " " : "") + std::string(argv[i]);

    sweep::Table table;
    if (*fisher) {
      table = sweep::fisher_curve(single("nbar", o.nbar), single("eta", o.eta), c);
    } else if (*scaling) {
      table = sweep::scaling_fit(required("eta", o.eta), required("nbar", o.nbar), c);
    } else if (*ratio) {
      table = sweep::ratio_scan(single("nbar", o.nbar), required("eta", o.eta), required("ratio", o.ratio), c);
    } else if (*ssn) {
      const auto kind = o.noise == "loss" ? sweep::NoiseKind::kLoss
                        : o.noise == "detection" ? sweep::NoiseKind::kDetection
                                                 : sweep::NoiseKind::kNone;
      std::vector<double> levels;
      if (kind == sweep::NoiseKind::kLoss) levels = required("gamma-over-chi", o.gamma);
      if (kind == sweep::NoiseKind::kDetection) levels = required("sigma", o.sigma);
      table = sweep::ssn_map(required("eta", o.eta), kind, levels, o.nbar_max, c);
    } else if (*loss) {
      table = sweep::loss_curves(single("nbar", o.nbar), required("gamma-over-chi", o.gamma), required("area", o.area), c);
    }

    const std::string text = sweep::render(table, o.format == "csv" ? sweep::Format::kCsv : sweep::Format::kJson);
    if (o.out.empty()) {
      std::cout << text;
    } else {
      std::ofstream f(o.out);
      if (!f) throw std::runtime_error("cannot open " + o.out);
      f << text;
    }
    return kOk;
  } catch (const UnreachableEta& e) {
    std::cerr << "spinmix: " << e.what() << "\n";
    return kUnreachableEta;
  } catch (const IntegratorFailure& e) {
    std::cerr << "spinmix: integrator failure: " << e.what() << "\n";
    return kIntegrator;
  } catch (const std::invalid_argument& e) {
    std::cerr << "spinmix: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "spinmix: " << e.what() << "\n";
    return kFailure;
  }
}
