#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "swe/core_math.hpp"

namespace swe {

/// One gradient (or weight) matrix per repeated layer, all the same shape.
using GradientSet = std::vector<Matrix>;
using LayerWeights = std::vector<Matrix>;

enum class SweMode {
  Swe,               // share while t < τ, then untie
  NoSharing,         // plain per-layer descent
  AlwaysShared,      // share for the whole run
  Repara,            // (mean + own)/2 at every step
  SymmetricStemSwe,  // symmetrized shared gradient while t < τ
};

std::string_view to_string(SweMode mode);
SweMode parse_mode(std::string_view text);

/// A consecutive layers form a unit; the unit is repeated B times. Position j
/// of every unit belongs to the same tie class.
struct UnitShape {
  std::size_t size = 1;     // A
  std::size_t repeats = 1;  // B

  std::size_t depth() const { return size * repeats; }
  bool operator==(const UnitShape&) const = default;
};

/// Constant step size, or one entry per step t = 1..T.
class LearningRate {
 public:
  LearningRate() = default;
  explicit LearningRate(double constant) : constant_(constant) {}
  explicit LearningRate(std::vector<double> per_step) : per_step_(std::move(per_step)) {}

  double at(std::size_t t) const;
  bool is_constant() const { return per_step_.empty(); }
  double constant() const { return constant_; }
  const std::vector<double>& per_step() const { return per_step_; }

 private:
  double constant_ = 0.0;
  std::vector<double> per_step_;
};

struct SweSchedule {
  std::size_t total_steps = 0;  // T
  std::size_t untie_step = 0;   // τ
  UnitShape unit;
  SweMode mode = SweMode::Swe;
  LearningRate eta;

  /// Fully shared (A = 1, B = depth) schedule.
  static SweSchedule make(SweMode mode, std::size_t depth, std::size_t total_steps,
                          std::size_t untie_step, double eta);

  /// Throws DimensionError unless 0 ≤ τ ≤ T, A·B == depth and the per-step
  /// learning-rate table (if any) covers T steps.
  void validate(std::size_t depth) const;

  /// True when step t (1-based) applies a sharing transform: t < τ, or every
  /// step when τ = T.
  bool sharing_active(std::size_t t) const;
  /// True when at least one step in [1, T] shares.
  bool shares_at_all() const;
};

// --- gradient transforms ---------------------------------------------------

using InitSampler = std::function<Matrix(Rng&)>;

/// Samples A matrices (one per unit position) and replicates them across the
/// B units.
LayerWeights equal_group_init(std::size_t depth, UnitShape unit, const InitSampler& sampler,
                              Rng& rng);

/// Each layer receives the mean gradient of its tie class.
GradientSet shared_mean_transform(const GradientSet& g, UnitShape unit);

/// Each layer receives (mean(g) + g_i)/2.
GradientSet repara_transform(const GradientSet& g);

/// Each layer receives ½(Ḡ + Ḡᵀ) with Ḡ the mean over all layers.
GradientSet symmetric_stem_transform(const GradientSet& g);

/// Dispatches on the schedule mode for step t ∈ [1, T].
GradientSet apply_schedule(const GradientSet& g, const SweSchedule& s, std::size_t t);

/// w_i ← w_i − η·g_i. Throws NumericalError naming `step` on non-finite input.
void sgd_step(LayerWeights& weights, const GradientSet& g, double eta, std::size_t step = 0);

// --- AdamW (optional extension) ---------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct AdamMoments {
  GradientSet first;
  GradientSet second;
  std::size_t steps = 0;

  static AdamMoments zeros_like(const LayerWeights& weights);
};

/// Decoupled weight decay followed by the bias-corrected adaptive step.
void adam_step(LayerWeights& weights, const GradientSet& g, AdamMoments& moments,
               const AdamHyper& hyper);

/// Throws DimensionError if the set is empty or shapes differ.
void check_homogeneous(const GradientSet& g, const char* where);

}  // namespace swe
