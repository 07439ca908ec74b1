#include "swe/deep_linear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dln_backend.hpp"

namespace swe::dln {

// --- targets -----------------------------------------------------------------

namespace {

Matrix build_spd(const SpdSpectrum& spec, std::size_t dim) {
  Rng rng(spec.rotation_seed);
  const Matrix q = random_orthogonal(dim, rng);
  Matrix phi(dim, dim);
  for (std::size_t k = 0; k < dim; ++k)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) phi(i, j) += spec.eigenvalues[k] * q(i, k) * q(j, k);
  return symmetric_part(phi);
}

void validate_spectrum(const SpdSpectrum& spec, std::size_t dim) {
  if (spec.eigenvalues.size() != dim) {
    throw std::invalid_argument("target: spectrum has " + std::to_string(spec.eigenvalues.size()) +
                                " eigenvalues for dimension " + std::to_string(dim));
  }
  for (double v : spec.eigenvalues) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("target: spectrum eigenvalues must be positive and finite");
    }
  }
}

}  // namespace

void TargetSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("target: dimension must be positive");
  if (const auto* a = std::get_if<AlphaIdentity>(&kind)) {
    if (!std::isfinite(a->alpha)) throw std::invalid_argument("target: alpha must be finite");
  } else if (const auto* s = std::get_if<SpdSpectrum>(&kind)) {
    validate_spectrum(*s, dim);
  } else if (const auto* n = std::get_if<NearSpd>(&kind)) {
    validate_spectrum(n->base, dim);
    if (!(n->rho >= 0.0) || n->rho > 1.0 / 3.0) {
      throw std::invalid_argument("target: near_spd rho must lie in [0, 1/3]");
    }
  }
}

Matrix TargetSpec::build() const {
  validate();
  if (const auto* a = std::get_if<AlphaIdentity>(&kind)) return a->alpha * Matrix::identity(dim);
  if (const auto* s = std::get_if<SpdSpectrum>(&kind)) return build_spd(*s, dim);
  const auto& n = std::get<NearSpd>(kind);
  Matrix phi0 = build_spd(n.base, dim);
  const double smin = *std::min_element(n.base.eigenvalues.begin(), n.base.eigenvalues.end());
  Rng rng(n.perturbation_seed);
  Matrix e = gaussian_matrix(dim, dim, 0.0, 1.0, rng);
  const double norm = frob_norm(e);
  if (norm == 0.0) return phi0;
  e *= n.rho * smin / norm;
  return phi0 + e;
}

// --- state -------------------------------------------------------------------

DlnState::DlnState(LayerWeights layers, Matrix target)
    : layers_(std::move(layers)), target_(std::move(target)) {
  if (layers_.empty()) throw DimensionError("DlnState: depth must be at least 1");
  if (!target_.is_square() || target_.rows() == 0) {
    throw DimensionError("DlnState: target must be square and nonempty, got " +
                         target_.shape_string());
  }
  for (const Matrix& w : layers_) {
    if (!w.same_shape(target_)) {
      throw DimensionError("DlnState: layer shape " + w.shape_string() + " vs target " +
                           target_.shape_string());
    }
  }
  refresh();
}

void DlnState::refresh() {
  const std::size_t L = layers_.size();
  const Matrix eye = Matrix::identity(dim());
  prefix_.assign(L + 1, eye);
  suffix_.assign(L + 1, eye);
  for (std::size_t l = 1; l <= L; ++l) prefix_[l] = matmul(layers_[l - 1], prefix_[l - 1]);
  for (std::size_t l = L; l >= 1; --l) suffix_[l - 1] = matmul(suffix_[l], layers_[l - 1]);
}

double DlnState::loss() const {
  const Matrix r = product() - target_;
  return 0.5 * frob_inner(r, r);
}

GradientSet DlnState::grads() const {
  const std::size_t L = depth();
  const Matrix r = product() - target_;
  GradientSet g;
  g.reserve(L);
  for (std::size_t l = 1; l <= L; ++l) {
    // S_{l+1}ᵀ · r · P_{l−1}ᵀ
    g.push_back(matmul_nt(matmul_tn(suffix(l + 1), r), prefix(l - 1)));
  }
  return g;
}

void DlnState::set_layers(LayerWeights layers) {
  if (layers.size() != layers_.size()) {
    throw DimensionError("DlnState::set_layers: depth changed from " +
                         std::to_string(layers_.size()) + " to " + std::to_string(layers.size()));
  }
  layers_ = std::move(layers);
  refresh();
}

void DlnState::apply(const GradientSet& g, double eta, std::size_t step) {
  sgd_step(layers_, g, eta, step);
  refresh();
}

double dln_loss(const DlnState& s) { return s.loss(); }
GradientSet dln_grads(const DlnState& s) { return s.grads(); }

LayerWeights init_identity(std::size_t depth, std::size_t dim) {
  if (depth == 0) throw DimensionError("init_identity: depth must be at least 1");
  return LayerWeights(depth, Matrix::identity(dim));
}

LayerWeights init_zas(std::size_t depth, std::size_t dim) {
  LayerWeights w = init_identity(depth, dim);
  w.back() = Matrix(dim, dim);
  return w;
}

// --- step-size bounds --------------------------------------------------------

void require_spd(const Matrix& phi, const char* where) {
  if (!phi.is_square() || !is_symmetric(phi, 1e-10)) {
    throw std::invalid_argument(std::string(where) + ": target must be symmetric");
  }
  if (!(sym_eig(phi).eigenvalues.front() > 0.0)) {
    throw std::invalid_argument(std::string(where) + ": target must be positive definite");
  }
}

namespace {

std::pair<double, double> spd_extremes(const Matrix& phi, const char* where) {
  require_spd(phi, where);
  const auto ev = sym_eig(phi).eigenvalues;
  return {ev.front(), ev.back()};
}

}  // namespace

double eta_sharing_lemma(const Matrix& phi, std::size_t depth) {
  const auto [lmin, lmax] = spd_extremes(phi, "eta_sharing_lemma");
  (void)lmin;
  return 1.0 / (static_cast<double>(depth) * std::max(lmax * lmax, 1.0));
}

double eta_sharing_discrete(const Matrix& phi, std::size_t depth) {
  const auto [lmin, lmax] = spd_extremes(phi, "eta_sharing_discrete");
  const double L = static_cast<double>(depth);
  const double d = static_cast<double>(phi.rows());
  return std::min(lmin * lmin, 1.0) /
         (4.0 * std::sqrt(d) * L * L * std::max(std::pow(lmax, 4), 1.0));
}

double eta_zas(const Matrix& phi, std::size_t depth) {
  if (!phi.is_square()) throw DimensionError("eta_zas: target must be square");
  const double L = static_cast<double>(depth);
  const double xi = std::max({2.0 * frob_norm(phi), 3.0 / std::sqrt(L), 1.0});
  return std::min(1.0 / (4.0 * L * L * L * std::pow(xi, 6)), 1.0 / (144.0 * L * L * std::pow(xi, 4)));
}

double shared_contraction_rate(const Matrix& phi, std::size_t depth, double eta) {
  const auto [lmin, lmax] = spd_extremes(phi, "shared_contraction_rate");
  (void)lmax;
  return (2.0 * static_cast<double>(depth) - 2.0) * std::min(lmin * lmin, 1.0) * eta;
}

double auto_eta(const Matrix& phi, std::size_t depth, InitKind init) {
  if (init == InitKind::Zas) return eta_zas(phi, depth);
  return eta_sharing_discrete(symmetric_part(phi), depth);
}

// --- training ----------------------------------------------------------------

namespace detail {

namespace {

class DenseEngine final : public Engine {
 public:
  DenseEngine(LayerWeights layers, Matrix target) : state_(std::move(layers), std::move(target)) {
    loss_ = state_.loss();
  }

  double loss() const override { return loss_; }

  void step(const SweSchedule& schedule, std::size_t t, double eta) override {
    state_.apply(apply_schedule(state_.grads(), schedule, t), eta, t);
    loss_ = state_.loss();
  }

  double grad_norm_mean() const override {
    const GradientSet g = state_.grads();
    double total = 0.0;
    for (const Matrix& m : g) total += frob_norm(m);
    return total / static_cast<double>(g.size());
  }

  std::optional<std::pair<double, double>> stem_extremes() const override {
    const LayerWeights& w = state_.layers();
    for (std::size_t l = 1; l < w.size(); ++l)
      if (!(w[l] == w[0])) return std::nullopt;
    if (!is_symmetric(w[0], 1e-12)) return std::nullopt;
    const auto ev = sym_eig(w[0]).eigenvalues;
    return std::make_pair(ev.front(), ev.back());
  }

  double distance_to(const Matrix& reference) const override {
    return frob_norm(state_.product() - reference);
  }

  LayerWeights layers() const override { return state_.layers(); }

 private:
  DlnState state_;
  double loss_ = 0.0;
};

}  // namespace

std::unique_ptr<Engine> make_dense_engine(LayerWeights layers, Matrix target) {
  return std::make_unique<DenseEngine>(std::move(layers), std::move(target));
}

}  // namespace detail

const std::vector<std::string>& dln_trace_columns() {
  static const std::vector<std::string> cols = {"step",          "loss",
                                                "bound",         "lambda_min_stem",
                                                "lambda_max_stem", "grad_norm_mean"};
  return cols;
}

namespace {

enum class BoundKind { None, Shared, Zas };

struct LoopSetup {
  BoundKind bound_kind = BoundKind::None;
  // Shared-theorem constants, valid when Φ is SPD.
  double min_lambda_sq = 0.0;  // min(λ²_min, 1)
  double envelope_lo = 0.0;
  double envelope_hi = 0.0;
  bool spd = false;
};

LoopSetup make_setup(const Matrix& target, std::size_t depth, std::optional<InitKind> init) {
  LoopSetup s;
  if (target.is_square() && is_symmetric(target, 1e-10)) {
    const auto ev = sym_eig(target).eigenvalues;
    if (ev.front() > 0.0) {
      const double L = static_cast<double>(depth);
      s.spd = true;
      s.min_lambda_sq = std::min(ev.front() * ev.front(), 1.0);
      s.envelope_lo = std::min(std::pow(ev.front(), 1.0 / L), 1.0) - 1e-9;
      s.envelope_hi = std::max(std::pow(ev.back(), 1.0 / L), 1.0) + 1e-9;
    }
  }
  if (init == InitKind::Zas) s.bound_kind = BoundKind::Zas;
  else if (init == InitKind::Identity && s.spd) s.bound_kind = BoundKind::Shared;
  return s;
}

std::string describe(const SweSchedule& s) {
  std::ostringstream out;
  out << to_string(s.mode) << " T=" << s.total_steps << " tau=" << s.untie_step
      << " unit=" << s.unit.size << "x" << s.unit.repeats;
  return out.str();
}

DlnRun run_loop(detail::Engine& engine, const Matrix& target, std::size_t depth,
                std::optional<InitKind> init, const SweSchedule& schedule, const StopRule& stop,
                const TrainOptions& options) {
  const LoopSetup setup = make_setup(target, depth, init);
  const double L = static_cast<double>(depth);

  DlnRun run;
  run.trace = Trace(dln_trace_columns());
  run.trace.metadata["schedule"] = describe(schedule);
  run.initial_loss = engine.loss();
  run.eta = schedule.eta.is_constant() ? schedule.eta.constant() : schedule.eta.at(1);
  run.trace.metadata["eta"] = format_double(run.eta);
  const double r0 = options.reference_loss.value_or(run.initial_loss);

  run.contraction.requested = options.check_contraction;
  run.envelope.requested = options.check_envelope;
  run.bound.requested = options.check_bound;
  if (options.check_contraction && !setup.spd && !options.contraction_rate) {
    throw std::invalid_argument("train_dln: contraction check needs an SPD target or an explicit rate");
  }
  if (options.check_envelope && !setup.spd) {
    throw std::invalid_argument("train_dln: envelope check needs an SPD target");
  }

  // Exponent of the bound: Σ η_s·(2L−2)·min(λ²_min,1) for the shared bound,
  // Σ log(1 − η_s/2) for the ZAS bound.
  double bound_log = 0.0;
  bool bound_valid = setup.bound_kind != BoundKind::None;
  auto bound_value = [&]() -> std::optional<double> {
    if (!bound_valid) return std::nullopt;
    return r0 * std::exp(bound_log);
  };

  const std::size_t stride = std::max<std::size_t>(options.record_every, 1);
  std::optional<std::size_t> last_recorded;
  // Stem columns and the envelope apply only while the schedule ties layers.
  bool tied = schedule.shares_at_all();
  auto record = [&](std::size_t t) {
    Trace::Row row(dln_trace_columns().size());
    row[0] = static_cast<double>(t);
    row[1] = engine.loss();
    row[2] = bound_value();
    if (auto ext = tied ? engine.stem_extremes() : std::nullopt) {
      row[3] = ext->first;
      row[4] = ext->second;
    }
    row[5] = engine.grad_norm_mean();
    run.trace.add_row(std::move(row));
    last_recorded = t;
  };

  auto check_envelope = [&](std::size_t t) {
    if (!options.check_envelope || !tied) return;
    auto ext = engine.stem_extremes();
    if (!ext) return;
    run.envelope.steps_checked += 1;
    if (!run.envelope.first_violation &&
        (ext->first < setup.envelope_lo || ext->second > setup.envelope_hi)) {
      run.envelope.first_violation = t;
    }
  };

  auto done = [&]() {
    if (stop.reference) return engine.distance_to(*stop.reference) <= stop.reference_tolerance;
    return engine.loss() <= stop.loss_threshold_rel * r0;
  };

  record(0);
  check_envelope(0);
  const std::size_t horizon = std::min(schedule.total_steps, stop.max_steps);
  std::size_t t = 0;
  bool finished = done();
  while (!finished && t < horizon) {
    ++t;
    const double eta = schedule.eta.at(t);
    const double before = engine.loss();
    const bool shared = schedule.sharing_active(t);
    engine.step(schedule, t, eta);
    tied = shared;
    const double after = engine.loss();

    if (!std::isfinite(after) || after > 1e12) {
      record(t);
      throw DivergenceError("train_dln: loss " + format_double(after) + " at step " +
                                std::to_string(t) + " with eta " + format_double(eta),
                            std::move(run.trace));
    }

    if (setup.bound_kind == BoundKind::Shared) {
      bound_valid = bound_valid && shared;
      bound_log -= (2.0 * L - 2.0) * setup.min_lambda_sq * eta;
    } else if (setup.bound_kind == BoundKind::Zas) {
      bound_log += std::log1p(-0.5 * eta);
    }

    if (options.check_contraction && shared) {
      const double rate = options.contraction_rate.value_or((2.0 * L - 2.0) * setup.min_lambda_sq * eta);
      run.contraction.steps_checked += 1;
      if (!run.contraction.first_violation && !(after <= (1.0 - rate) * before)) {
        run.contraction.first_violation = t;
      }
    }
    if (options.check_bound && bound_valid) {
      run.bound.steps_checked += 1;
      if (!run.bound.first_violation && !(after <= r0 * std::exp(bound_log) * (1.0 + 1e-12))) {
        run.bound.first_violation = t;
      }
    }
    check_envelope(t);

    finished = done();
    if (t % stride == 0 || finished) record(t);
  }
  if (last_recorded != t) record(t);

  run.steps = t;
  run.final_loss = engine.loss();
  run.converged = finished;
  run.final_layers = engine.layers();
  return run;
}

}  // namespace

DlnRun train_dln(const Matrix& target, InitKind init, SweSchedule schedule,
                 std::optional<double> eta, const StopRule& stop, const TrainOptions& options) {
  if (!target.is_square() || target.rows() == 0) {
    throw DimensionError("train_dln: target must be square, got " + target.shape_string());
  }
  const std::size_t depth = schedule.unit.depth();
  schedule.validate(depth);
  if (!eta) eta = auto_eta(target, depth, init);
  schedule.eta = LearningRate(*eta);

  Backend backend = options.backend;
  if (backend == Backend::Auto) {
    backend = is_symmetric(target, 1e-12) ? Backend::Spectral : Backend::Dense;
  }
  std::unique_ptr<detail::Engine> engine;
  if (backend == Backend::Spectral) {
    engine = detail::make_spectral_engine(init, depth, target);
  } else {
    LayerWeights layers = init == InitKind::Zas ? init_zas(depth, target.rows())
                                                : init_identity(depth, target.rows());
    engine = detail::make_dense_engine(std::move(layers), target);
  }
  DlnRun run = run_loop(*engine, target, depth, init, schedule, stop, options);
  run.trace.metadata["init"] = init == InitKind::Zas ? "zas" : "identity";
  run.trace.metadata["backend"] = backend == Backend::Spectral ? "spectral" : "dense";
  return run;
}

DlnRun train_dln_from(const Matrix& target, LayerWeights initial, const SweSchedule& schedule,
                      const StopRule& stop, const TrainOptions& options) {
  schedule.validate(initial.size());
  if (options.backend == Backend::Spectral) {
    throw std::invalid_argument("train_dln_from: explicit layers run on the dense backend only");
  }
  const std::size_t depth = initial.size();
  auto engine = detail::make_dense_engine(std::move(initial), target);
  DlnRun run = run_loop(*engine, target, depth, std::nullopt, schedule, stop, options);
  run.trace.metadata["backend"] = "dense";
  return run;
}

double initial_decay_rate(const DlnState& s, double eta_probe, bool shared) {
  if (!(eta_probe > 0.0)) throw std::invalid_argument("initial_decay_rate: eta_probe must be positive");
  const double r0 = s.loss();
  if (!(r0 > 0.0)) {
    throw std::invalid_argument("initial_decay_rate: loss is zero, decay rate undefined");
  }
  GradientSet g = s.grads();
  if (shared) g = shared_mean_transform(g, UnitShape{1, s.depth()});
  DlnState next = s;
  next.apply(g, eta_probe, 1);
  return (next.loss() - r0) / (eta_probe * r0);
}

ContractionReport check_contraction(const Trace& trace, double rate) {
  if (trace.empty()) throw std::invalid_argument("check_contraction: empty trace");
  ContractionReport report;
  const std::size_t loss_col = trace.column_index("loss");
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const auto& prev = trace.rows()[i - 1];
    const auto& cur = trace.rows()[i];
    if (!prev[loss_col] || !cur[loss_col]) continue;
    const double gap = *cur[0] - *prev[0];
    const double factor = std::pow(1.0 - rate, gap);
    report.pairs_checked += 1;
    if (!(*cur[loss_col] <= factor * *prev[loss_col])) {
      report.ok = false;
      report.first_violation_step = static_cast<std::size_t>(*cur[0]);
      return report;
    }
  }
  return report;
}

// --- two-phase pipeline ------------------------------------------------------

TwoPhaseResult train_symmetric_two_phase(const Matrix& target, std::size_t depth,
                                         const TwoPhaseOptions& options) {
  if (!target.is_square()) throw DimensionError("train_symmetric_two_phase: target must be square");
  const Matrix phi_s = symmetric_part(target);
  require_spd(phi_s, "train_symmetric_two_phase");

  TwoPhaseResult out;
  out.antisymmetric_norm = frob_norm(target - phi_s);
  out.phase1_eta = eta_sharing_discrete(phi_s, depth);
  out.phase2_eta = options.phase2_eta_fraction * out.phase1_eta;

  LayerWeights init = init_identity(depth, target.rows());
  out.initial_loss = DlnState(init, target).loss();

  SweSchedule phase1 = SweSchedule::make(SweMode::SymmetricStemSwe, depth,
                                         options.phase1_max_steps, options.phase1_max_steps,
                                         out.phase1_eta);
  StopRule stop1;
  stop1.max_steps = options.phase1_max_steps;
  stop1.reference = phi_s;
  stop1.reference_tolerance = options.phase1_tolerance;
  TrainOptions opt1;
  opt1.record_every = options.record_every;
  out.phase1 = train_dln_from(target, init, phase1, stop1, opt1);
  out.phase1_symmetric_gap =
      frob_norm(DlnState(out.phase1.final_layers, target).product() - phi_s);

  SweSchedule phase2 = SweSchedule::make(SweMode::NoSharing, depth, options.phase2_max_steps, 0,
                                         out.phase2_eta);
  StopRule stop2;
  stop2.max_steps = options.phase2_max_steps;
  stop2.loss_threshold_rel = options.final_threshold_rel;
  TrainOptions opt2;
  opt2.record_every = options.record_every;
  opt2.reference_loss = out.initial_loss;
  out.phase2 = train_dln_from(target, out.phase1.final_layers, phase2, stop2, opt2);
  return out;
}

}  // namespace swe::dln
