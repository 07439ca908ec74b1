// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "swe/core_math.hpp"
#include "swe/deep_linear.hpp"
#include "swe/regression.hpp"
#include "swe/stacked_net.hpp"
#include "swe/stats.hpp"
#include "swe/swe_optim.hpp"

using namespace swe;

namespace {

struct Verdict {
  bool ok = true;
  std::ostringstream detail;
  void require(bool cond, const std::string& why) {
    if (!cond && ok) detail << "first failure: " << why << "; ";
    ok = ok && cond;
  }
};

int failures = 0;

void criterion(int id, const char* name, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.ok = false;
    v.detail << "exception: " << e.what() << "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.ok) ++failures;
  std::printf("%s %2d %s: %s(%.1fs)\n", v.ok ? "PASS" : "FAIL", id, name, v.detail.str().c_str(), secs);
  std::fflush(stdout);
}

std::vector<double> spread(std::size_t d) {
  std::vector<double> ev(d);
  for (std::size_t i = 0; i < d; ++i)
    ev[i] = d == 1 ? 0.5 : 0.5 + 1.5 * static_cast<double>(i) / static_cast<double>(d - 1);
  return ev;
}

struct GridTarget {
  std::string label;
  Matrix phi;
};

std::vector<GridTarget> spd_grid(std::size_t d) {
  std::vector<GridTarget> out;
  for (double a : {0.5, 2.0})
    out.push_back({"alpha=" + std::to_string(a).substr(0, 3), dln::TargetSpec{dln::AlphaIdentity{a}, d}.build()});
  out.push_back({"spectrum", dln::TargetSpec{dln::SpdSpectrum{spread(d), 11}, d}.build()});
  return out;
}

std::string tag(const std::string& label, std::size_t L, std::size_t d) {
  return label + " L=" + std::to_string(L) + " d=" + std::to_string(d);
}

dln::DlnRun shared_run(const Matrix& phi, std::size_t L, bool contraction, bool envelope) {
  const double eta = dln::eta_sharing_discrete(phi, L);
  dln::StopRule stop;
  stop.max_steps = 50'000'000;
  stop.loss_threshold_rel = 1e-10;
  dln::TrainOptions o;
  o.record_every = 1'000'000;
  o.check_contraction = contraction;
  o.check_envelope = envelope;
  return dln::train_dln(phi, dln::InitKind::Identity,
                        SweSchedule::make(SweMode::AlwaysShared, L, stop.max_steps, stop.max_steps, eta),
                        eta, stop, o);
}

dln::DlnRun zas_run(const Matrix& phi, std::size_t L, double threshold, bool bound) {
  const double eta = dln::eta_zas(phi, L);
  dln::StopRule stop;
  stop.max_steps = 400'000'000;
  stop.loss_threshold_rel = threshold;
  dln::TrainOptions o;
  o.record_every = 100'000'000;
  o.check_bound = bound;
  return dln::train_dln(phi, dln::InitKind::Zas, SweSchedule::make(SweMode::NoSharing, L, stop.max_steps, 0, eta),
                        eta, stop, o);
}

double fd_rel_error(const GradientSet& g, const std::function<double(std::size_t, std::size_t, std::size_t, double)>& f,
                    double h) {
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < g.size(); ++l)
    for (std::size_t i = 0; i < g[l].rows(); ++i)
      for (std::size_t j = 0; j < g[l].cols(); ++j) {
        const double fd = (f(l, i, j, h) - f(l, i, j, -h)) / (2 * h);
        num += (fd - g[l](i, j)) * (fd - g[l](i, j));
        den += fd * fd;
      }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

std::optional<double> at_step(const Trace& t, std::size_t step, std::string_view column) {
  for (std::size_t r = 0; r < t.size(); ++r)
    if (*t.rows()[r][0] == static_cast<double>(step)) return t.at(r, column);
  return std::nullopt;
}

}  // namespace

int main() {
  criterion(1, "gradient oracles", [](Verdict& v) {
    Rng rng(101);
    double worst_linear = 0.0, worst_net = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t L = 1 + rng.below(5), d = 1 + rng.below(4);
      LayerWeights layers;
      for (std::size_t l = 0; l < L; ++l) layers.push_back(Matrix::identity(d) + gaussian_matrix(d, d, 0.0, 0.3, rng));
      const dln::DlnState s(layers, gaussian_matrix(d, d, 0.0, 1.0, rng));
      const double err = fd_rel_error(s.grads(), [&](std::size_t l, std::size_t i, std::size_t j, double h) {
        LayerWeights p = layers;
        p[l](i, j) += h;
        return dln::DlnState(p, s.target()).loss();
      }, 1e-5);
      worst_linear = std::max(worst_linear, err);
      v.require(err <= 1e-6, "deep linear " + tag("trial " + std::to_string(trial), L, d));
    }
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t L = 1 + rng.below(5), d = 1 + rng.below(4);
      stacked::StackedNet net;
      for (std::size_t l = 0; l < L; ++l) net.blocks.push_back(gaussian_matrix(d, d, 0.0, 0.6, rng));
      net.readout = gaussian_vector(d, 0.0, 1.0, rng);
      const auto x = gaussian_vector(d, 0.0, 1.0, rng);
      const double err = fd_rel_error(
          stacked::backward(net, stacked::forward(net, x).cache, 1.0),
          [&](std::size_t l, std::size_t i, std::size_t j, double h) {
            auto p = net;
            p.blocks[l](i, j) += h;
            return stacked::forward(p, x).y;
          },
          1e-6);
      worst_net = std::max(worst_net, err);
      v.require(err <= 1e-5, "stacked " + tag("trial " + std::to_string(trial), L, d));
    }
    v.detail << "max rel err linear " << worst_linear << ", stacked " << worst_net << " ";
  });

  // Criteria 2 and 3 share their runs.
  {
    Verdict contraction, envelope;
    std::size_t pairs = 0, envelope_steps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t d : {2u, 4u})
      for (const auto& [label, phi] : spd_grid(d))
        for (std::size_t L : {2u, 4u, 8u}) {
          const auto run = shared_run(phi, L, true, true);
          const auto name = tag(label, L, d);
          contraction.require(run.converged, name + " did not reach 1e-10");
          contraction.require(run.contraction.passed(),
                              name + " violated at step " + std::to_string(run.contraction.first_violation.value_or(0)));
          envelope.require(run.eta <= dln::eta_sharing_lemma(phi, L), name + " eta above the lemma bound");
          envelope.require(run.envelope.passed(),
                           name + " left the envelope at step " + std::to_string(run.envelope.first_violation.value_or(0)));
          pairs += run.contraction.steps_checked;
          envelope_steps += run.envelope.steps_checked;
        }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    contraction.require(secs < 60.0, "runtime");
    contraction.detail << pairs << " steps checked, 18 runs ";
    envelope.detail << envelope_steps << " steps checked ";
    criterion(2, "shared contraction bound", [&](Verdict& v) {
      v.ok = contraction.ok;
      v.detail << contraction.detail.str() << "[" << secs << "s] ";
    });
    criterion(3, "stem eigenvalue envelope", [&](Verdict& v) {
      v.ok = envelope.ok;
      v.detail << envelope.detail.str();
    });
  }

  criterion(4, "ZAS loss bound", [](Verdict& v) {
    std::size_t checked = 0;
    for (std::size_t d : {2u, 4u})
      for (const auto& [label, phi] : spd_grid(d))
        for (std::size_t L : {2u, 4u, 8u}) {
          const auto run = zas_run(phi, L, 1e-10, true);
          const auto name = tag(label, L, d);
          v.require(run.bound.steps_checked == run.steps, name + " not checked at every step");
          v.require(run.bound.passed(),
                    name + " violated at step " + std::to_string(run.bound.first_violation.value_or(0)));
          checked += run.bound.steps_checked;
        }
    v.detail << checked << " steps checked ";
  });

  criterion(5, "ZAS/shared iteration ratio", [](Verdict& v) {
    const Matrix phi = Matrix::identity(4) * 2.0;
    std::vector<double> ratios;
    for (std::size_t L : {2u, 4u, 8u}) {
      dln::StopRule stop;
      stop.max_steps = 50'000'000;
      stop.loss_threshold_rel = 1e-8;
      dln::TrainOptions o;
      o.record_every = 1'000'000;
      const double eta = dln::eta_sharing_discrete(phi, L);
      const auto swe = dln::train_dln(phi, dln::InitKind::Identity,
                                      SweSchedule::make(SweMode::AlwaysShared, L, stop.max_steps, stop.max_steps, eta),
                                      eta, stop, o);
      const auto zas = zas_run(phi, L, 1e-8, false);
      v.require(swe.converged && zas.converged, "L=" + std::to_string(L) + " did not converge");
      ratios.push_back(static_cast<double>(zas.steps) / static_cast<double>(swe.steps));
      v.detail << "L=" << L << " " << zas.steps << "/" << swe.steps << " ";
    }
    v.require(ratios[0] < ratios[1] && ratios[1] < ratios[2], "ratio not increasing");
    v.require(ratios[2] >= 4.0 * ratios[0], "growth below 4x");
    v.detail << "growth " << ratios[2] / ratios[0] << "x ";
  });

  criterion(6, "initial decay rates", [](Verdict& v) {
    const Matrix phi = Matrix::identity(4) * 2.0;
    for (std::size_t L : {3u, 6u}) {
      const double zas = dln::initial_decay_rate(dln::DlnState(dln::init_zas(L, 4), phi), 1e-7, false);
      const double shared = dln::initial_decay_rate(dln::DlnState(dln::init_identity(L, 4), phi), 1e-7, true);
      const double Ld = static_cast<double>(L);
      v.require(std::abs(zas + 2.0) <= 0.02, "ZAS L=" + std::to_string(L));
      v.require(std::abs(shared + 2.0 * Ld) <= 0.02 * Ld, "shared L=" + std::to_string(L));
      v.detail << "L=" << L << " zas " << zas << " shared " << shared << " ";
    }
  });

  criterion(7, "two-phase symmetric-stem pipeline", [](Verdict& v) {
    int passed = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix phi = dln::TargetSpec{dln::NearSpd{dln::SpdSpectrum{spread(4), seed}, 0.3, seed}, 4}.build();
      const auto r = dln::train_symmetric_two_phase(phi, 4);
      const bool ok = r.phase1_ok() && r.converged() && r.phase2.final_loss <= 1e-8 * r.initial_loss;
      v.require(ok, "seed " + std::to_string(seed));
      passed += ok;
    }
    v.detail << passed << "/10 ";
  });

  criterion(8, "regression generalization regime", [](Verdict& v) {
    std::vector<double> ratios;
    double worst_fit = 0.0, worst_gap = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = regress::make_problem(200, 120, 1000, seed);
      const double eta = regress::default_eta(p);
      const auto swe = regress::train_regression(p, SweSchedule::make(SweMode::Swe, 200, 500, 100, eta));
      const auto gd = regress::train_regression(p, SweSchedule::make(SweMode::NoSharing, 200, 500, 0, eta));
      for (const auto* r : {&swe, &gd}) {
        worst_fit = std::max(worst_fit, r->final_train_mse / r->initial_train_mse);
        v.require(r->final_train_mse <= 1e-4 * r->initial_train_mse, "(a) train MSE seed " + std::to_string(seed));
      }
      const auto [head, tail] = regress::block_means(swe.w_at_untie, 100);
      worst_gap = std::max(worst_gap, std::abs(head - tail));
      v.require(std::abs(head - tail) <= 1e-10, "(c) block means seed " + std::to_string(seed));
      ratios.push_back(swe.final_test_mse / gd.final_test_mse);
    }
    const double med = median(ratios);
    v.require(med <= 0.5, "(b) median test MSE ratio " + std::to_string(med));
    v.detail << "(a) worst train ratio " << worst_fit << " (b) median SWE/GD " << med << " (c) max gap "
             << worst_gap << " ";
  });

  criterion(9, "shared-solution error scaling", [](Verdict& v) {
    std::vector<std::uint64_t> seeds(20);
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
    const auto scan = regress::prop1_error_scan({50, 100, 200, 400}, {25, 50, 100, 200}, seeds);
    v.require(std::abs(scan.slope - 0.5) <= 0.15, "slope");
    std::vector<double> err, norm;
    for (std::size_t L : {50u, 100u, 200u, 400u}) {
      err.push_back(regress::cell_median_error(scan, L, L / 2));
      norm.push_back(regress::cell_median_stem_norm(scan, L, L / 2));
    }
    const auto [lo, hi] = std::minmax_element(err.begin(), err.end());
    const double spread_err = (*hi - *lo) / *lo;
    v.require(spread_err < 0.3, "error varies by " + std::to_string(spread_err));
    v.require(norm.back() >= 2.5 * norm.front(), "stem norm growth");
    v.detail << "slope " << scan.slope << ", n=L/2 error spread " << spread_err << ", stem norm growth "
             << norm.back() / norm.front() << "x ";
  });

  criterion(10, "closed-form shared solution", [](Verdict& v) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = regress::make_problem(200, 120, 0, seed);
      const auto run = regress::train_regression(
          p, SweSchedule::make(SweMode::AlwaysShared, 200, 1000, 1000, regress::default_eta(p)));
      const double w0 = regress::shared_phase_closed_form(p);
      for (double w : run.w) worst = std::max(worst, std::abs(w - w0));
    }
    v.require(worst <= 1e-8, "max deviation " + std::to_string(worst));
    v.detail << "max |w - w0| " << worst << " ";
  });

  criterion(11, "schedule structural invariants (L=8)", [](Verdict& v) {
    stacked::TaskConfig tc;
    tc.train_samples = 128;
    tc.test_samples = 64;
    const auto task = stacked::make_task(tc);
    stacked::StackedOptions o;
    o.record_every = 10;
    o.check_ties = true;
    const std::size_t T = 200;

    std::size_t checks = 0;
    for (UnitShape unit : {UnitShape{1, 8}, UnitShape{2, 4}, UnitShape{4, 2}}) {
      auto s = SweSchedule::make(SweMode::Swe, 8, T, 120, 0.05);
      s.unit = unit;
      const auto run = stacked::train_stacked(task, s, o);
      v.require(run.tie_checks == 119 && !run.tie_violation, "tie classes " + std::to_string(unit.size) + "x" +
                                                                  std::to_string(unit.repeats));
      checks += run.tie_checks;
    }

    Rng rng(7);
    stacked::StackedNet net{LayerWeights(8, gaussian_matrix(16, 16, 0.0, 0.1, rng)), gaussian_vector(16, 0.0, 1.0, rng)};
    const auto x = gaussian_vector(16, 0.0, 1.0, rng);
    const Matrix g0 = stacked::backward(net, stacked::forward(net, x).cache, 1.0)[3];
    const GradientSet equal(8, g0);
    LayerWeights a = net.blocks, b = net.blocks;
    sgd_step(a, apply_schedule(equal, SweSchedule::make(SweMode::Swe, 8, 10, 5, 0.05), 1), 0.05);
    sgd_step(b, apply_schedule(equal, SweSchedule::make(SweMode::NoSharing, 8, 10, 0, 0.05), 1), 0.05);
    // The mean of eight equal matrices is exact only up to summation rounding.
    double gap = 0.0;
    for (std::size_t l = 0; l < 8; ++l) gap = std::max(gap, frob_norm(a[l] - b[l]));
    v.require(gap <= 8 * 0.05 * frob_norm(g0) * 2.3e-16, "equal-gradient step differs from plain descent");

    const auto zero = stacked::train_stacked(task, SweSchedule::make(SweMode::Swe, 8, T, 0, 0.05), o);
    const auto none = stacked::train_stacked(task, SweSchedule::make(SweMode::NoSharing, 8, T, 0, 0.05), o);
    v.require(zero.trace == none.trace && zero.final_blocks == none.final_blocks, "tau=0 differs from no sharing");
    const auto full = stacked::train_stacked(task, SweSchedule::make(SweMode::Swe, 8, T, T, 0.05), o);
    const auto always = stacked::train_stacked(task, SweSchedule::make(SweMode::AlwaysShared, 8, T, T, 0.05), o);
    v.require(full.trace == always.trace && full.final_blocks == always.final_blocks, "tau=T differs from always shared");
    v.detail << checks << " tied steps verified, boundary traces bit-identical ";
  });

  criterion(12, "loss drop after untying", [](Verdict& v) {
    const auto task = stacked::make_task(stacked::TaskConfig{});
    const std::size_t T = 2000, tau = 200, after = tau + T / 10;
    std::vector<double> before_loss, after_loss, swe_test, shared_test;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      stacked::StackedOptions o;
      o.seed = seed;
      o.record_steps = {tau - 1, after};
      const auto swe = stacked::train_stacked(task, SweSchedule::make(SweMode::Swe, 8, T, tau, 0.05), o);
      const auto shared = stacked::train_stacked(task, SweSchedule::make(SweMode::AlwaysShared, 8, T, T, 0.05), o);
      before_loss.push_back(at_step(swe.trace, tau - 1, "train_mse").value());
      after_loss.push_back(at_step(swe.trace, after, "train_mse").value());
      swe_test.push_back(swe.final_test_mse);
      shared_test.push_back(shared.final_test_mse);
    }
    const double mb = median(before_loss), ma = median(after_loss);
    const double ms = median(swe_test), mc = median(shared_test);
    v.require(ma < mb, "train loss did not drop after untying");
    v.require(ms <= mc, "SWE test MSE above always-shared");
    v.detail << "train " << mb << " -> " << ma << ", test SWE " << ms << " vs shared " << mc << " ";
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
