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

#include <gtest/gtest.h>

#include "spinmix/sweep.hpp"

using namespace spinmix;
using namespace spinmix::sweep;

TEST(ParseGrid, ListsAndRanges) {
  const auto r = parse_grid("-1.5:0.1:1.5");
  ASSERT_EQ(r.size(), 31u);
  EXPECT_EQ(r.front(), -1.5);
  EXPECT_EQ(r.back(), 1.5);
  EXPECT_NE(std::find(r.begin(), r.end(), -1.0), r.end());
  EXPECT_NE(std::find(r.begin(), r.end(), 0.0), r.end());
  EXPECT_EQ(parse_grid("0.05,0.1,0.2"), (std::vector<double>{0.05, 0.1, 0.2}));
  EXPECT_EQ(parse_grid("1,10:10:30"), (std::vector<double>{1, 10, 20, 30}));
  EXPECT_THROW(parse_grid(""), std::invalid_argument);
  EXPECT_THROW(parse_grid("1:0:2"), std::invalid_argument);
  EXPECT_THROW(parse_grid("1:2"), std::invalid_argument);
  EXPECT_THROW(parse_grid("abc"), std::invalid_argument);
  EXPECT_THROW(parse_grid("2x"), std::invalid_argument);
  EXPECT_EQ(parse_convention("pi2"), PulseConvention::kPi2);
  EXPECT_THROW(parse_convention("half"), std::invalid_argument);
}

TEST(Table, CsvAndJsonRoundTrip) {
  Table t;
  t.meta("command", "demo");
  t.meta("note", "a, b");
  t.columns = {"x", "y", "status"};
  t.rows = {{0.1, 1.0 / 3.0, std::string("ok")},
            {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity(), std::string("bad")}};
  for (const Table& u : {from_csv(to_csv(t)), from_json(nlohmann::ordered_json::parse(render(t, Format::kJson)))}) {
    EXPECT_EQ(u.metadata, t.metadata);
    EXPECT_EQ(u.columns, t.columns);
    ASSERT_EQ(u.rows.size(), 2u);
    EXPECT_EQ(u.number(0, "y"), 1.0 / 3.0);
    EXPECT_EQ(std::get<std::string>(u.rows[0][2]), "ok");
    EXPECT_TRUE(std::isnan(u.number(1, "x")));
    EXPECT_TRUE(std::isinf(u.number(1, "y")));
  }
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_THROW(t.column("z"), std::out_of_range);
}

TEST(FisherCurve, RowsAndMetadata) {
  Common c;
  c.theta_points = 14;
  const Table t = fisher_curve(40.0, 0.2, c);
  EXPECT_EQ(t.rows.size(), ThetaGrid::with_points(14).points().size());
  EXPECT_EQ(*t.meta_value("command"), "fisher-curve");
  EXPECT_EQ(*t.meta_value("pulse_convention"), "inverse");
  const double fopt = std::stod(*t.meta_value("f_opt"));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_LE(t.number(i, "inv_ep2"), t.number(i, "fisher") * (1 + 1e-9));
    EXPECT_LE(t.number(i, "fisher"), fopt * (1 + 1e-9));
    EXPECT_EQ(t.number(i, "shot_noise"), 40.0);
  }
  EXPECT_NEAR(fopt, noiseless_fisher_opt(40.0, 0.2, PulseConvention::kInverse, fisher_options(c)).f_opt, 1e-9);
}

TEST(Fits, SyntheticData) {
  const std::vector<double> n{10, 20, 40, 80};
  std::vector<double> f;
  for (double x : n) f.push_back(0.03 * x * x);
  const ScalingFit s = fit_scaling(n, f);
  EXPECT_NEAR(s.alpha, 0.03, 1e-15);
  EXPECT_NEAR(s.slope, 2.0, 1e-12);
  EXPECT_NEAR(s.residual, 0.0, 1e-14);
  EXPECT_EQ(s.tail_points, 2);

  const std::vector<double> eta{0.1, 0.2, 0.3};
  std::vector<double> alpha;
  for (double e : eta) alpha.push_back(e * e - 0.5 * e * e * e);
  const AlphaLaw a = fit_alpha_law(eta, alpha);
  EXPECT_NEAR(a.c, 0.5, 1e-12);
  EXPECT_NEAR(a.a, 1.0, 1e-10);
  EXPECT_NEAR(a.b, 0.5, 1e-10);
  EXPECT_NEAR(a.c_residual, 0.0, 1e-15);
}

TEST(RatioScan, InverseRowMatchesNoiseless) {
  Common c;
  c.theta_points = 14;
  const Table t = ratio_scan(30.0, {0.2}, {-1.0, 0.5, 1.0}, c);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_NEAR(t.number(0, "area2"), -t.number(0, "area1"), 0.0);
  EXPECT_EQ(t.number(0, "phi2"), 0.0);
  EXPECT_EQ(t.number(2, "phi2"), kPi / 2);
  EXPECT_NEAR(t.number(0, "f_opt"), noiseless_fisher_opt(30.0, 0.2, PulseConvention::kInverse, fisher_options(c)).f_opt,
              1e-9);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.number(i, "ssn"), t.number(i, "f_opt") > 30.0 ? 1.0 : 0.0);
}

TEST(SsnMap, CriticalNumberDefinition) {
  Common c;
  c.theta_points = 14;
  const Table t = ssn_map({0.3}, NoiseKind::kNone, {}, 256, c);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(std::get<std::string>(t.rows[0][t.column("status")]), "ok");
  const int ncr = static_cast<int>(t.number(0, "nbar_cr"));
  EXPECT_GT(t.number(0, "f_opt_at_cr"), ncr);
  if (ncr > 1) {
    EXPECT_LE(t.number(0, "f_opt_below"), ncr - 1);
  }
  EXPECT_NEAR(t.number(0, "meanfield_nbar_cr"), 0.4 / 0.09, 1e-12);
  // F_opt(nbar) is monotone here, so the smallest SSN nbar is the first crossing.
  for (int n = std::max(1, ncr - 3); n < ncr; ++n)
    EXPECT_LE(noiseless_fisher_opt(n, 0.3, c.convention, fisher_options(c)).f_opt, n);
}

TEST(LossCurves, NoiselessColumn) {
  Common c;
  c.loss.n_traj = 50;
  const Table t = loss_curves(80.0, {0.0, 0.05}, {0.01, 0.02}, c);
  ASSERT_EQ(t.rows.size(), 4u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(t.number(i, "eta"), t.number(i, "eta_noiseless"));
  for (std::size_t i = 2; i < 4; ++i) EXPECT_LT(t.number(i, "eta"), t.number(i, "eta_noiseless"));
  EXPECT_EQ(*t.meta_value("loss.trajectories"), "50");
}
