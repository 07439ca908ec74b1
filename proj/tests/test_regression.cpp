#include <doctest.h>

#include <cmath>
#include <numeric>

#include "swe/regression.hpp"

using namespace swe;
using namespace swe::regress;

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double sq_norm(const std::vector<double>& a) { return dot(a, a); }

SweSchedule sched(SweMode mode, std::size_t L, std::size_t T, std::size_t tau, double eta) {
  return SweSchedule::make(mode, L, T, tau, eta);
}

}  // namespace

TEST_CASE("make_problem") {
  const auto a = make_problem(200, 120, 50, 3);
  const auto b = make_problem(200, 120, 50, 3);
  CHECK(a.x == b.x);
  CHECK(a.w_star == b.w_star);
  CHECK(a.x_test == b.x_test);

  const double mean = std::accumulate(a.w_star.begin(), a.w_star.end(), 0.0) / 200.0;
  CHECK(std::abs(mean - 1.0) <= 4.0 / std::sqrt(200.0));

  CHECK(a.y == matvec(a.x, a.w_star));
  CHECK(a.y_test == matvec(a.x_test, a.w_star));
  double branch_sum = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(a.stem[i] + a.branch[i] == doctest::Approx(a.w_star[i]).epsilon(1e-15));
    branch_sum += a.branch[i];
  }
  CHECK(std::abs(branch_sum) <= 1e-10);

  const auto small = make_problem(60, 40, 0, 4);
  CHECK(sym_eig(matmul_nt(small.x, small.x)).eigenvalues.front() > 0.0);
  CHECK_THROWS(make_problem(0, 10, 10, 1));
}

TEST_CASE("stem_projection") {
  CHECK(stem_projection({2.5, 2.5, 2.5}) == std::vector<double>{2.5, 2.5, 2.5});
  CHECK(stem_projection({1, -1}) == std::vector<double>{0, 0});
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto w = gaussian_vector(17, 0.3, 1.0, rng);
    const auto p = stem_projection(w);
    std::vector<double> rest(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) rest[i] = w[i] - p[i];
    CHECK(std::abs(sq_norm(w) - sq_norm(p) - sq_norm(rest)) <= 1e-10 * sq_norm(w));
    CHECK(std::abs(dot(p, rest)) <= 1e-12 * sq_norm(w));
    const auto pp = stem_projection(p);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(pp[i] == doctest::Approx(p[i]).epsilon(1e-15));
  }
}

TEST_CASE("block_means") {
  const auto c = block_means(std::vector<double>(10, 3.0), 4);
  CHECK(c.first == 3.0);
  CHECK(c.second == 3.0);
  std::vector<double> w(8, 1.0);
  std::fill(w.begin() + 4, w.end(), 2.0);
  CHECK(block_means(w, 4) == std::pair<double, double>{1.0, 2.0});
  CHECK_THROWS(block_means(w, 5));
  CHECK_THROWS(block_means(w, 0));
}

TEST_CASE("default step size matches an eigen-decomposition oracle") {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto p = make_problem(50, 30, 0, seed);
    const Matrix gram = matmul_nt(p.x, p.x) * (1.0 / 30.0);
    const double lmax = sym_eig(symmetric_part(gram)).eigenvalues.back();
    CHECK(default_eta(p) == doctest::Approx(1.0 / (2.0 * lmax)).epsilon(1e-10));
  }
  const auto tall = make_problem(10, 40, 0, 3);
  const Matrix gram = matmul_tn(tall.x, tall.x) * (1.0 / 40.0);
  CHECK(default_eta(tall) ==
        doctest::Approx(1.0 / (2.0 * sym_eig(symmetric_part(gram)).eigenvalues.back())).epsilon(1e-10));
}

TEST_CASE("shared model fits a constant ground truth") {
  Rng rng(6);
  const Matrix x = gaussian_matrix(20, 40, 0.0, 1.0, rng);
  const auto p = make_problem_from(x, std::vector<double>(40, 0.7));
  const auto run = train_regression(p, sched(SweMode::AlwaysShared, 40, 400, 400, default_eta(p)));
  CHECK(run.final_train_mse <= 1e-20 * std::max(1.0, run.initial_train_mse));
  for (double v : run.w) CHECK(v == doctest::Approx(0.7).epsilon(1e-10));
}

TEST_CASE("plain descent from zero reaches the minimum-norm interpolant") {
  const auto p = make_problem(30, 10, 0, 7);
  const auto run = train_regression(p, sched(SweMode::NoSharing, 30, 5000, 0, default_eta(p)));
  const auto mn = min_norm_solution(p);
  CHECK(std::sqrt(sq_dist(run.w, mn)) <= 1e-6);
}

TEST_CASE("shared phase: coordinates tied and follow the scalar recursion") {
  const auto p = make_problem(40, 25, 100, 8);
  const double eta = default_eta(p);
  const std::size_t tau = 30;
  const auto run = train_regression(p, sched(SweMode::Swe, 40, 60, tau, eta));
  REQUIRE(run.w_at_untie.size() == 40);
  for (double v : run.w_at_untie) CHECK(v == run.w_at_untie.front());

  // w₀ ← w₀ − η·(2/(nL))·Σ s_i(s_i·w₀ − y_i), s_i = Σ_j x_ij, for τ−1 steps.
  long double w0 = 0.0L;
  for (std::size_t t = 1; t < tau; ++t) {
    long double g = 0.0L;
    for (std::size_t i = 0; i < 25; ++i) {
      long double s = 0.0L;
      for (std::size_t j = 0; j < 40; ++j) s += p.x(i, j);
      g += s * (s * w0 - p.y[i]);
    }
    w0 -= eta * g * 2.0L / (25.0L * 40.0L);
  }
  CHECK(std::abs(run.w_at_untie.front() - static_cast<double>(w0)) <= 1e-12 * std::abs(static_cast<double>(w0)));

  for (std::size_t r = 0; r < run.trace.size(); ++r) {
    const double step = *run.trace.rows()[r][0];
    if (step < tau) CHECK(run.trace.at(r, "head_mean") == run.trace.at(r, "tail_mean"));
  }
}

TEST_CASE("error decomposes into stem and branch parts") {
  const auto p = make_problem(30, 12, 0, 9);
  for (std::size_t T : {1u, 5u, 20u, 80u}) {
    const auto run = train_regression(p, sched(SweMode::Swe, 30, T, std::min<std::size_t>(T, 10), default_eta(p)));
    const auto pw = stem_projection(run.w);
    std::vector<double> rest(30);
    for (std::size_t i = 0; i < 30; ++i) rest[i] = run.w[i] - pw[i];
    const double total = sq_dist(run.w, p.w_star);
    CHECK(std::abs(total - sq_dist(pw, p.stem) - sq_dist(rest, p.branch)) <= 1e-9 * std::max(total, 1.0));
    CHECK(*run.trace.back()[5] == doctest::Approx(std::sqrt(total)).epsilon(1e-12));
  }
}

TEST_CASE("closed-form shared solution") {
  Rng rng(10);
  const Matrix x = gaussian_matrix(15, 20, 0.0, 1.0, rng);
  const auto flat = make_problem_from(x, std::vector<double>(20, -1.25));
  CHECK(shared_phase_closed_form(flat) == -1.25);

  // n = 1, x = 𝟙: w₀ = y₁/L.
  std::vector<double> w(6);
  for (std::size_t i = 0; i < 6; ++i) w[i] = 0.5 * static_cast<double>(i) - 1.0;
  const auto ones = make_problem_from(Matrix(1, 6, 1.0), w);
  CHECK(shared_phase_closed_form(ones) == doctest::Approx(ones.y[0] / 6.0).epsilon(1e-14));

  const auto p = make_problem(60, 30, 0, 11);
  const auto run = train_regression(p, sched(SweMode::AlwaysShared, 60, 400, 400, default_eta(p)));
  const double w0 = shared_phase_closed_form(p);
  for (double v : run.w) CHECK(std::abs(v - w0) <= 1e-8);

  CHECK_THROWS_AS(shared_phase_closed_form(make_problem_from(Matrix{{1, -1, 1, -1}}, {1, 2, 3, 4})),
                  NumericalError);
}

TEST_CASE("minimum-norm solution") {
  Rng rng(12);
  const Matrix sq = gaussian_matrix(5, 5, 0.0, 1.0, rng);
  const std::vector<double> w{1, -2, 0.5, 3, 0};
  const auto ps = make_problem_from(sq, w);
  const auto sol = min_norm_solution(ps);
  for (std::size_t i = 0; i < 5; ++i) CHECK(sol[i] == doctest::Approx(w[i]).epsilon(1e-9));

  const auto p = make_problem(200, 120, 0, 13);
  const auto mn = min_norm_solution(p);
  auto r = matvec(p.x, mn);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= p.y[i];
  CHECK(norm2(r) <= 1e-8 * norm2(p.y));

  // Null-space perturbations interpolate too but are longer.
  const auto small = make_problem(20, 8, 0, 14);
  const auto base = min_norm_solution(small);
  const Matrix gram = matmul_nt(small.x, small.x);
  for (int trial = 0; trial < 10; ++trial) {
    const auto z = gaussian_vector(20, 0.0, 1.0, rng);
    const Matrix coef = solve_spd(gram, Matrix::column(matvec(small.x, z)));
    const auto back = matvec(transpose(small.x), coef.data());
    std::vector<double> alt(20);
    for (std::size_t i = 0; i < 20; ++i) alt[i] = base[i] + z[i] - back[i];
    auto res = matvec(small.x, alt);
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= small.y[i];
    CHECK(norm2(res) <= 1e-9 * norm2(small.y));
    CHECK(sq_norm(base) < sq_norm(alt));
  }
}

TEST_CASE("error scan structure") {
  const auto scan = prop1_error_scan({20, 40}, {10, 20}, {0, 1, 2});
  CHECK(scan.rows.size() == 12);
  for (const auto& row : scan.rows) {
    CHECK(row.ratio_sqrt == doctest::Approx(std::sqrt(double(row.dim) / double(row.samples))));
    CHECK(row.stem_norm > 0.0);
  }
  CHECK(std::isfinite(scan.slope));
  CHECK(cell_median_error(scan, 40, 10) > 0.0);
  CHECK_THROWS(cell_median_error(scan, 30, 10));
  CHECK(scan_columns() ==
        std::vector<std::string>{"L", "n", "seed", "err_stem", "stem_norm", "ratio_sqrt_L_over_n"});
}

TEST_CASE("divergence names the step size") {
  const auto p = make_problem(20, 10, 0, 15);
  try {
    (void)train_regression(p, sched(SweMode::NoSharing, 20, 500, 0, 50 * default_eta(p)));
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("eta") != std::string::npos);
  }
}
