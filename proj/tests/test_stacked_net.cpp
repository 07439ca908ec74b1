#include <doctest.h>

#include <cmath>

#include "swe/stacked_net.hpp"

using namespace swe;
using namespace swe::stacked;

namespace {

StackedNet random_net(std::size_t L, std::size_t d, Rng& rng, double scale = 0.6) {
  StackedNet net;
  for (std::size_t l = 0; l < L; ++l) net.blocks.push_back(gaussian_matrix(d, d, 0.0, scale, rng));
  net.readout = gaussian_vector(d, 0.0, 1.0, rng);
  return net;
}

// Independent straight-line forward pass.
double plain_forward(const StackedNet& net, std::vector<double> h) {
  const std::size_t d = h.size();
  for (const Matrix& w : net.blocks) {
    std::vector<double> next(d);
    for (std::size_t i = 0; i < d; ++i) {
      double a = 0.0;
      for (std::size_t j = 0; j < d; ++j) a += w(i, j) * h[j];
      next[i] = h[i] + std::tanh(a);
    }
    h = next;
  }
  double y = 0.0;
  for (std::size_t i = 0; i < d; ++i) y += net.readout[i] * h[i];
  return y;
}

TaskConfig small_task() {
  TaskConfig c;
  c.depth = 8;
  c.dim = 4;
  c.train_samples = 64;
  c.test_samples = 32;
  c.seed = 3;
  return c;
}

StackedOptions options(std::uint64_t seed) {
  StackedOptions o;
  o.batch = 8;
  o.seed = seed;
  o.record_every = 10;
  o.check_ties = true;
  return o;
}

SweSchedule sched(SweMode mode, std::size_t T, std::size_t tau, double eta = 0.05) {
  return SweSchedule::make(mode, 8, T, tau, eta);
}

}  // namespace

TEST_CASE("forward examples") {
  Rng rng(1);
  StackedNet zero{LayerWeights(3, Matrix(4, 4)), gaussian_vector(4, 0.0, 1.0, rng)};
  const auto x = gaussian_vector(4, 0.0, 1.0, rng);
  CHECK(forward(zero, x).y == doctest::Approx(dot(zero.readout, x)).epsilon(1e-15));

  StackedNet scalar{{Matrix{{0.5}}}, {1.0}};
  CHECK(forward(scalar, std::vector<double>{1.0}).y == 1.0 + std::tanh(0.5));

  for (int trial = 0; trial < 20; ++trial) {
    const auto net = random_net(1 + rng.below(5), 1 + rng.below(6), rng);
    const auto in = gaussian_vector(net.dim(), 0.0, 1.0, rng);
    CHECK(std::abs(forward(net, in).y - plain_forward(net, in)) <= 1e-12);
  }
  CHECK_THROWS_AS(forward(scalar, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST_CASE("backward examples") {
  StackedNet zero{LayerWeights(2, Matrix(1, 1)), {1.7}};
  const std::vector<double> x{0.6};
  const auto f = forward(zero, x);
  const auto g = backward(zero, f.cache, 1.0);
  for (const auto& m : g) CHECK(m(0, 0) == doctest::Approx(1.7 * 0.6).epsilon(1e-15));

  Rng rng(2);
  const auto net = random_net(3, 3, rng);
  const auto in = gaussian_vector(3, 0.0, 1.0, rng);
  for (const auto& m : backward(net, forward(net, in).cache, 0.0)) CHECK(frob_norm(m) == 0.0);

  ForwardCache truncated = forward(net, in).cache;
  truncated.hidden.pop_back();
  CHECK_THROWS_AS(backward(net, truncated, 1.0), DimensionError);
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto net = random_net(1 + rng.below(5), 1 + rng.below(4), rng);
    const auto in = gaussian_vector(net.dim(), 0.0, 1.0, rng);
    const auto g = backward(net, forward(net, in).cache, 1.0);
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < net.depth(); ++l)
      for (std::size_t i = 0; i < net.dim(); ++i)
        for (std::size_t j = 0; j < net.dim(); ++j) {
          StackedNet p = net, m = net;
          const double h = 1e-6;
          p.blocks[l](i, j) += h;
          m.blocks[l](i, j) -= h;
          const double fd = (plain_forward(p, in) - plain_forward(m, in)) / (2 * h);
          num += (fd - g[l](i, j)) * (fd - g[l](i, j));
          den += fd * fd;
        }
    CHECK(std::sqrt(num) <= 1e-5 * std::max(std::sqrt(den), 1e-8));
  }
}

TEST_CASE("make_task") {
  const auto a = make_task(small_task());
  const auto b = make_task(small_task());
  CHECK(a.train_x == b.train_x);
  CHECK(a.train_y == b.train_y);
  CHECK(a.teacher.depth() == 8);
  CHECK(norm2(a.teacher.readout) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(dataset_mse(a.teacher, a.test_x, a.test_y) == 0.0);
}

TEST_CASE("teacher initialization stays at zero loss") {
  const auto task = make_task(small_task());
  const auto run = train_stacked_from(task, task.teacher.blocks, sched(SweMode::NoSharing, 30, 0), options(1));
  for (const auto& row : run.trace.rows()) {
    CHECK(*row[1] == 0.0);
    CHECK(*row[2] == 0.0);
  }
}

TEST_CASE("tie classes are bit-identical while shared") {
  const auto task = make_task(small_task());
  for (UnitShape unit : {UnitShape{1, 8}, UnitShape{2, 4}, UnitShape{4, 2}}) {
    auto s = sched(SweMode::Swe, 60, 40);
    s.unit = unit;
    const auto run = train_stacked(task, s, options(2));
    CHECK(run.tie_checks == 39);
    CHECK_FALSE(run.tie_violation.has_value());
  }
  const auto always = train_stacked(task, sched(SweMode::AlwaysShared, 60, 60), options(2));
  CHECK(always.tie_checks == 60);
  CHECK_FALSE(always.tie_violation);
  for (const auto& w : always.final_blocks) CHECK(w == always.final_blocks[0]);
}

TEST_CASE("schedule boundaries reproduce the baseline modes bit for bit") {
  const auto task = make_task(small_task());
  const std::size_t T = 50;
  const auto zero = train_stacked(task, sched(SweMode::Swe, T, 0), options(4));
  const auto none = train_stacked(task, sched(SweMode::NoSharing, T, 0), options(4));
  CHECK(zero.trace == none.trace);
  CHECK(zero.final_blocks == none.final_blocks);

  const auto full = train_stacked(task, sched(SweMode::Swe, T, T), options(4));
  const auto always = train_stacked(task, sched(SweMode::AlwaysShared, T, T), options(4));
  CHECK(full.trace == always.trace);
  CHECK(full.final_blocks == always.final_blocks);

  auto independent = sched(SweMode::Swe, T, 20);
  independent.unit = {8, 1};
  CHECK(train_stacked(task, independent, options(4)).trace == none.trace);
  CHECK(train_stacked(task, sched(SweMode::Swe, T, 20), options(4)).trace ==
        train_stacked(task, sched(SweMode::Swe, T, 20), options(4)).trace);
}

TEST_CASE("untying changes the trajectory") {
  const auto task = make_task(small_task());
  const auto a = train_stacked(task, sched(SweMode::Swe, 60, 30), options(5));
  const auto b = train_stacked(task, sched(SweMode::AlwaysShared, 60, 60), options(5));
  CHECK(a.trace.at(2, "train_mse") == b.trace.at(2, "train_mse"));
  CHECK_FALSE(a.trace.at(3, "train_mse") == b.trace.at(3, "train_mse"));
  CHECK_FALSE(a.trace.at(6, "train_mse") == b.trace.at(6, "train_mse"));
}

TEST_CASE("sweeps") {
  const auto task = make_task(small_task());
  auto base = options(0);
  base.check_ties = false;
  const auto untie = untie_sweep(task, 40, 0.05, {0.0, 0.5, 1.0}, {0, 1}, base);
  CHECK(untie.rows.size() == 6);
  CHECK(untie.summary.size() == 3);
  CHECK(untie.summary[0].config == "untie=0");
  auto opt0 = base;
  opt0.seed = 0;
  CHECK(untie.rows[0].final_test_mse ==
        train_stacked(task, sched(SweMode::NoSharing, 40, 0), opt0).final_test_mse);
  CHECK(untie.rows[4].final_test_mse ==
        train_stacked(task, sched(SweMode::AlwaysShared, 40, 40), opt0).final_test_mse);
  CHECK_THROWS(untie_sweep(task, 40, 0.05, {1.5}, {0}, base));

  const auto grouping =
      grouping_sweep(task, 40, 10, 0.05, {{8, 1}, {4, 2}, {2, 4}, {1, 8}}, {0, 1, 2}, base);
  CHECK(grouping.rows.size() == 12);
  REQUIRE(grouping.summary.size() == 4);
  CHECK(grouping.summary[3].config == "unit=1x8");
  for (const auto& s : grouping.summary) CHECK(std::isfinite(s.median_final_test_mse));
  CHECK(grouping.rows[0].final_test_mse ==
        train_stacked(task, sched(SweMode::NoSharing, 40, 0), opt0).final_test_mse);
  CHECK(grouping.rows[9].final_test_mse ==
        train_stacked(task, sched(SweMode::Swe, 40, 10), opt0).final_test_mse);
  CHECK_THROWS_AS(grouping_sweep(task, 40, 10, 0.05, {{3, 2}}, {0}, base), DimensionError);
}
