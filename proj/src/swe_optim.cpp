#include "swe/swe_optim.hpp"

#include <cmath>

namespace swe {

std::string_view to_string(SweMode mode) {
  switch (mode) {
    case SweMode::Swe: return "swe";
    case SweMode::NoSharing: return "no_sharing";
    case SweMode::AlwaysShared: return "always_shared";
    case SweMode::Repara: return "repara";
    case SweMode::SymmetricStemSwe: return "symmetric_stem_swe";
  }
  return "?";
}

SweMode parse_mode(std::string_view text) {
  for (SweMode m : {SweMode::Swe, SweMode::NoSharing, SweMode::AlwaysShared, SweMode::Repara,
                    SweMode::SymmetricStemSwe}) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown schedule mode '" + std::string(text) + "'");
}

double LearningRate::at(std::size_t t) const {
  if (per_step_.empty()) return constant_;
  if (t < 1 || t > per_step_.size()) {
    throw DimensionError("LearningRate: step " + std::to_string(t) + " outside table of " +
                         std::to_string(per_step_.size()));
  }
  return per_step_[t - 1];
}

SweSchedule SweSchedule::make(SweMode mode, std::size_t depth, std::size_t total_steps,
                              std::size_t untie_step, double eta) {
  SweSchedule s;
  s.total_steps = total_steps;
  s.untie_step = untie_step;
  s.unit = UnitShape{1, depth};
  s.mode = mode;
  s.eta = LearningRate(eta);
  return s;
}

void SweSchedule::validate(std::size_t depth) const {
  if (untie_step > total_steps) {
    throw DimensionError("schedule: untie_step (" + std::to_string(untie_step) +
                         ") exceeds total_steps (" + std::to_string(total_steps) + ")");
  }
  if (unit.size == 0 || unit.repeats == 0 || unit.depth() != depth) {
    throw DimensionError("schedule: unit shape " + std::to_string(unit.size) + "x" +
                         std::to_string(unit.repeats) + " does not cover depth " +
                         std::to_string(depth));
  }
  if ((mode == SweMode::Repara || mode == SweMode::SymmetricStemSwe) && unit.size != 1) {
    throw DimensionError("schedule: mode " + std::string(to_string(mode)) +
                         " shares across all layers and requires unit size 1");
  }
  if (!eta.is_constant() && eta.per_step().size() < total_steps) {
    throw DimensionError("schedule: learning-rate table shorter than total_steps");
  }
}

bool SweSchedule::sharing_active(std::size_t t) const {
  switch (mode) {
    case SweMode::Swe:
    // τ = T shares through the final step, matching AlwaysShared.
    case SweMode::SymmetricStemSwe: return t < untie_step || untie_step == total_steps;
    case SweMode::AlwaysShared:
    case SweMode::Repara: return true;
    case SweMode::NoSharing: return false;
  }
  return false;
}

bool SweSchedule::shares_at_all() const {
  if (total_steps == 0) return false;
  switch (mode) {
    case SweMode::Swe:
    case SweMode::SymmetricStemSwe: return untie_step > 1 || untie_step == total_steps;
    case SweMode::AlwaysShared:
    case SweMode::Repara: return true;
    case SweMode::NoSharing: return false;
  }
  return false;
}

void check_homogeneous(const GradientSet& g, const char* where) {
  if (g.empty()) throw DimensionError(std::string(where) + ": empty gradient set");
  for (const Matrix& m : g) {
    if (!m.same_shape(g.front())) {
      throw DimensionError(std::string(where) + ": mixed shapes " + g.front().shape_string() +
                           " and " + m.shape_string());
    }
  }
}

namespace {

// Left-to-right sum, one division.
Matrix mean_of(const GradientSet& g) {
  Matrix acc = g.front();
  for (std::size_t i = 1; i < g.size(); ++i) acc += g[i];
  acc *= 1.0 / static_cast<double>(g.size());
  return acc;
}

}  // namespace

LayerWeights equal_group_init(std::size_t depth, UnitShape unit, const InitSampler& sampler,
                              Rng& rng) {
  if (unit.size == 0 || unit.depth() != depth) {
    throw DimensionError("equal_group_init: unit shape " + std::to_string(unit.size) + "x" +
                         std::to_string(unit.repeats) + " does not cover depth " +
                         std::to_string(depth));
  }
  std::vector<Matrix> templates;
  templates.reserve(unit.size);
  for (std::size_t j = 0; j < unit.size; ++j) templates.push_back(sampler(rng));
  LayerWeights out;
  out.reserve(depth);
  for (std::size_t u = 0; u < unit.repeats; ++u)
    for (std::size_t j = 0; j < unit.size; ++j) out.push_back(templates[j]);
  return out;
}

GradientSet shared_mean_transform(const GradientSet& g, UnitShape unit) {
  check_homogeneous(g, "shared_mean_transform");
  if (unit.size == 0 || unit.depth() != g.size()) {
    throw DimensionError("shared_mean_transform: unit shape " + std::to_string(unit.size) + "x" +
                         std::to_string(unit.repeats) + " does not cover " +
                         std::to_string(g.size()) + " layers");
  }
  GradientSet out(g.size());
  const double inv = 1.0 / static_cast<double>(unit.repeats);
  for (std::size_t j = 0; j < unit.size; ++j) {
    Matrix acc = g[j];
    for (std::size_t u = 1; u < unit.repeats; ++u) acc += g[u * unit.size + j];
    acc *= inv;
    for (std::size_t u = 0; u < unit.repeats; ++u) out[u * unit.size + j] = acc;
  }
  return out;
}

GradientSet repara_transform(const GradientSet& g) {
  check_homogeneous(g, "repara_transform");
  const Matrix mean = mean_of(g);
  GradientSet out;
  out.reserve(g.size());
  for (const Matrix& gi : g) {
    Matrix m = mean + gi;
    m *= 0.5;
    out.push_back(std::move(m));
  }
  return out;
}

GradientSet symmetric_stem_transform(const GradientSet& g) {
  check_homogeneous(g, "symmetric_stem_transform");
  if (!g.front().is_square()) {
    throw DimensionError("symmetric_stem_transform: non-square gradients " +
                         g.front().shape_string());
  }
  const Matrix stem = symmetric_part(mean_of(g));
  return GradientSet(g.size(), stem);
}

GradientSet apply_schedule(const GradientSet& g, const SweSchedule& s, std::size_t t) {
  if (t < 1 || t > s.total_steps) {
    throw DimensionError("apply_schedule: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(s.total_steps) + "]");
  }
  if (!s.sharing_active(t)) return g;
  switch (s.mode) {
    case SweMode::Swe:
    case SweMode::AlwaysShared: return shared_mean_transform(g, s.unit);
    case SweMode::Repara: return repara_transform(g);
    case SweMode::SymmetricStemSwe: return symmetric_stem_transform(g);
    case SweMode::NoSharing: break;
  }
  return g;
}

void sgd_step(LayerWeights& weights, const GradientSet& g, double eta, std::size_t step) {
  if (weights.size() != g.size()) {
    throw DimensionError("sgd_step: " + std::to_string(weights.size()) + " layers but " +
                         std::to_string(g.size()) + " gradients");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!weights[i].same_shape(g[i])) {
      throw DimensionError("sgd_step: layer " + std::to_string(i) + " shape " +
                           weights[i].shape_string() + " vs gradient " + g[i].shape_string());
    }
    if (!all_finite(g[i])) {
      throw NumericalError("sgd_step: non-finite gradient for layer " + std::to_string(i) +
                           " at step " + std::to_string(step));
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i) weights[i].add_scaled(g[i], -eta);
}

AdamMoments AdamMoments::zeros_like(const LayerWeights& weights) {
  AdamMoments m;
  for (const Matrix& w : weights) {
    m.first.emplace_back(w.rows(), w.cols());
    m.second.emplace_back(w.rows(), w.cols());
  }
  return m;
}

void adam_step(LayerWeights& weights, const GradientSet& g, AdamMoments& moments,
               const AdamHyper& hyper) {
  if (weights.size() != g.size() || moments.first.size() != g.size() ||
      moments.second.size() != g.size()) {
    throw DimensionError("adam_step: layer, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!weights[i].same_shape(g[i]) || !moments.first[i].same_shape(g[i]) ||
        !moments.second[i].same_shape(g[i])) {
      throw DimensionError("adam_step: shape mismatch at layer " + std::to_string(i));
    }
    if (!all_finite(g[i]) || !all_finite(moments.first[i]) || !all_finite(moments.second[i])) {
      throw NumericalError("adam_step: non-finite state at layer " + std::to_string(i));
    }
  }
  moments.steps += 1;
  const double t = static_cast<double>(moments.steps);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const double decay = 1.0 - hyper.lr * hyper.weight_decay;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto w = weights[i].data();
    auto m = moments.first[i].data();
    auto v = moments.second[i].data();
    auto gi = g[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * gi[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * gi[k] * gi[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = w[k] * decay - hyper.lr * mhat / (std::sqrt(vhat) + hyper.epsilon);
    }
  }
}

}  // namespace swe
