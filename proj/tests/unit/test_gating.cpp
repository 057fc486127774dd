#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "pssc/gating.hpp"
#include "pssc/gradcheck.hpp"
#include "pssc/ops.hpp"
#include "pssc/rng.hpp"

using namespace pssc;
using namespace pssc::gating;

namespace {

std::vector<double> random_logits(RngStream& rng, int n, double scale = 3.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

void expect_values(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

Tensor<double> random_tensor(Shape shape, RngStream& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

}  // namespace

TEST(Cumax, UniformLogits) { expect_values(cumax(std::vector<double>{0, 0, 0, 0}).values, {0.25, 0.5, 0.75, 1.0}, 1e-12); }

TEST(Cumax, SaturatedLogit) { expect_values(cumax(std::vector<double>{1000, 0, 0}).values, {1, 1, 1}, 1e-12); }

TEST(Cumax, HandEvaluatedSoftmax) {
  // softmax of (0, ln 3, 0) is (1, 3, 1) / 5
  expect_values(cumax(std::vector<double>{0, std::log(3.0), 0}).values, {0.2, 0.8, 1.0}, 1e-12);
}

TEST(Cumax, RejectsNonFinite) {
  EXPECT_THROW(cumax(std::vector<double>{0, std::numeric_limits<double>::infinity()}), std::invalid_argument);
  EXPECT_THROW(cumax(std::vector<double>{std::nan("")}), std::invalid_argument);
  EXPECT_THROW(cumax(std::vector<double>{}), std::invalid_argument);
}

TEST(CumaxProperty, MonotoneInRangeTerminalOne) {
  RngStream rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + rng.uniform_int(40);
    const auto g = cumax(random_logits(rng, n, 1.0 + 20.0 * rng.uniform())).values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ASSERT_GE(g[i], 0.0);
      ASSERT_LE(g[i], 1.0 + 1e-12);
      if (i > 0) ASSERT_GE(g[i], g[i - 1]);
    }
    ASSERT_NEAR(g.back(), 1.0, 1e-6);
  }
}

TEST(BandPass, SaturatedInterval) {
  const auto g = band_pass_gate(std::vector<double>{1000, 0, 0, 0}, std::vector<double>{0, 0, 1000, 0});
  expect_values(g.values, {1, 1, 0, 0}, 1e-12);
}

TEST(BandPass, EqualLogitsBoundedByQuarter) {
  RngStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto l = random_logits(rng, 8);
    for (double v : band_pass_gate(l, l).values) ASSERT_LE(v, 0.25 + 1e-12);
  }
  expect_values(band_pass_gate(std::vector<double>{0, 0}, std::vector<double>{0, 0}).values, {0.25, 0.0}, 1e-12);
}

TEST(BandPass, LengthMismatch) {
  EXPECT_THROW(band_pass_gate(std::vector<double>{0, 0}, std::vector<double>{0}), std::invalid_argument);
}

TEST(BandPassProperty, EntriesInUnitInterval) {
  RngStream rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + rng.uniform_int(20);
    for (double v : band_pass_gate(random_logits(rng, n), random_logits(rng, n)).values) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(RectMask, OuterProducts) {
  auto m = rect_mask(GateVector{{1, 0}}, GateVector{{0, 1}});
  expect_values(m.values, {0, 1, 0, 0}, 0);
  m = rect_mask(GateVector{{0.5, 1}}, GateVector{{1, 0}});
  expect_values(m.values, {0.5, 0, 1, 0}, 0);
  m = rect_mask(GateVector{{1, 1, 1}}, GateVector{{1, 1}});
  expect_values(m.values, std::vector<double>(6, 1.0), 0);
  EXPECT_EQ(m.height, 3);
  EXPECT_EQ(m.width, 2);
}

TEST(AggregateMasks, IdenticalCopies) {
  const auto r = rect_mask(GateVector{{0.3, 0.9}}, GateVector{{0.2, 0.7, 1.0}});
  const std::vector<SpatialMask> rects(4, r);
  const auto m = aggregate_masks(rects);
  expect_values(m.values, r.values, 1e-15);
  EXPECT_EQ(m.num_rects, 4);
}

TEST(AggregateMasks, DisjointRectanglesAverage) {
  const auto a = rect_mask(GateVector{{1, 0}}, GateVector{{1, 0}});
  const auto b = rect_mask(GateVector{{0, 1}}, GateVector{{0, 1}});
  const std::vector<SpatialMask> rects{a, b};
  expect_values(aggregate_masks(rects).values, {0.5, 0, 0, 0.5}, 0);
}

TEST(AggregateMasks, RandomMeanBoundedByMax) {
  RngStream rng(8);
  std::vector<SpatialMask> rects;
  for (int j = 0; j < 3; ++j) {
    rects.push_back(rect_mask(band_pass_gate(random_logits(rng, 5), random_logits(rng, 5)),
                              band_pass_gate(random_logits(rng, 4), random_logits(rng, 4))));
  }
  const auto m = aggregate_masks(rects);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double mean = (rects[0].values[i] + rects[1].values[i] + rects[2].values[i]) / 3.0;
    const double mx = std::max({rects[0].values[i], rects[1].values[i], rects[2].values[i]});
    EXPECT_NEAR(m.values[i], mean, 1e-15);
    EXPECT_LE(m.values[i], mx + 1e-15);
  }
}

TEST(AggregateMasks, EmptyAndMismatched) {
  EXPECT_THROW(aggregate_masks(std::vector<SpatialMask>{}), std::invalid_argument);
  const std::vector<SpatialMask> bad{rect_mask(GateVector{{1}}, GateVector{{1}}),
                                     rect_mask(GateVector{{1, 1}}, GateVector{{1}})};
  EXPECT_THROW(aggregate_masks(bad), std::invalid_argument);
}

TEST(AggregateMasksProperty, PermutationInvariant) {
  RngStream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SpatialMask> rects;
    for (int j = 0; j < 4; ++j) {
      rects.push_back(rect_mask(cumax(random_logits(rng, 6)), cumax(random_logits(rng, 6))));
    }
    const auto a = aggregate_masks(rects);
    std::reverse(rects.begin(), rects.end());
    std::swap(rects[0], rects[2]);
    const auto b = aggregate_masks(rects);
    for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_NEAR(a.values[i], b.values[i], 1e-15);
  }
}

TEST(SoftmaxMask, UniformIsAllOnes) {
  const auto m = softmax_mask(std::vector<double>{0, 0}, std::vector<double>{0, 0});
  expect_values(m.values, {1, 1, 1, 1}, 1e-12);
}

TEST(SoftmaxMask, SaturatedIsSinglePixel) {
  const auto m = softmax_mask(std::vector<double>{0, 800, 0}, std::vector<double>{900, 0});
  expect_values(m.values, {0, 0, 1, 0, 0, 0}, 1e-12);
}

TEST(SoftmaxMask, HumpWithUnitPreNormalizedSum) {
  const std::vector<double> lh{-1, 1, 2, 0.5}, lw{0.3, -0.7, 1.1};
  const auto m = softmax_mask(lh, lw);
  double mx = 0, sum = 0;
  for (double v : m.values) {
    mx = std::max(mx, v);
    sum += v;
  }
  EXPECT_NEAR(mx, 1.0, 1e-12);
  // Max-normalization divides by max(softmax_h) * max(softmax_w).
  auto sm = [](const std::vector<double>& l) {
    std::vector<double> e;
    double z = 0;
    for (double x : l) z += std::exp(x);
    for (double x : l) e.push_back(std::exp(x) / z);
    return e;
  };
  const auto ph = sm(lh), pw = sm(lw);
  const double scale = *std::max_element(ph.begin(), ph.end()) * *std::max_element(pw.begin(), pw.end());
  EXPECT_NEAR(sum * scale, 1.0, 1e-12);
  EXPECT_NEAR(m.at(2, 2), ph[2] * pw[2] / scale, 1e-12);
}

// Gradient checks on the tape ops that implement the gates.

TEST(GatingGradients, Cumax) {
  RngStream rng(21);
  ParameterTable<double> p;
  p.add("l", random_tensor({2, 3, 7}, rng));
  const auto w = random_tensor({2, 3, 7}, rng);
  auto fn = [&](Tape<double>& t, ParameterTable<double>& tbl) {
    return ops::dot_const(ops::cumax_last(t.parameter(tbl.at("l"))), w);
  };
  const auto r = grad_check(fn, p);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GatingGradients, BandPass) {
  RngStream rng(22);
  ParameterTable<double> p;
  p.add("lo", random_tensor({2, 6}, rng));
  p.add("hi", random_tensor({2, 6}, rng));
  const auto w = random_tensor({2, 6}, rng);
  auto fn = [&](Tape<double>& t, ParameterTable<double>& tbl) {
    auto g = ops::mul(ops::cumax_last(t.parameter(tbl.at("lo"))), ops::one_minus(ops::cumax_last(t.parameter(tbl.at("hi")))));
    return ops::dot_const(g, w);
  };
  const auto r = grad_check(fn, p);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GatingGradients, RectMaskAndAggregate) {
  RngStream rng(23);
  ParameterTable<double> p;
  p.add("gh", random_tensor({2, 3, 5}, rng));
  p.add("gw", random_tensor({2, 3, 4}, rng));
  const auto w = random_tensor({2, 5, 4}, rng);
  auto fn = [&](Tape<double>& t, ParameterTable<double>& tbl) {
    auto m = ops::mean_rects(ops::outer_rects(t.parameter(tbl.at("gh")), t.parameter(tbl.at("gw"))));
    return ops::dot_const(m, w);
  };
  const auto r = grad_check(fn, p);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GatingGradients, SoftmaxMask) {
  RngStream rng(24);
  ParameterTable<double> p;
  p.add("lh", random_tensor({1, 2, 5}, rng));
  p.add("lw", random_tensor({1, 2, 3}, rng));
  const auto w = random_tensor({1, 5, 3}, rng);
  auto fn = [&](Tape<double>& t, ParameterTable<double>& tbl) {
    auto gh = ops::normalize_max_last(ops::softmax_last(t.parameter(tbl.at("lh"))));
    auto gw = ops::normalize_max_last(ops::softmax_last(t.parameter(tbl.at("lw"))));
    return ops::dot_const(ops::mean_rects(ops::outer_rects(gh, gw)), w);
  };
  const auto r = grad_check(fn, p);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GatingOps, TapeMatchesValueFunctions) {
  RngStream rng(25);
  const auto l = random_logits(rng, 9);
  Tape<double> t;
  auto v = ops::cumax_last(t.constant(Tensor<double>({1, 9}, l)));
  const auto ref = cumax(l).values;
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(v.value()[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)], 1e-15);
}
