#pragma once

#include <memory>
#include <optional>
#include <utility>

#include "swe/deep_linear.hpp"

namespace swe::dln::detail {

/// Iteration engine behind train_dln. Implementations keep the current loss
/// up to date after every step.
class Engine {
 public:
  virtual ~Engine() = default;

  virtual double loss() const = 0;
  /// Gradient, schedule transform for step t, SGD update, loss refresh.
  virtual void step(const SweSchedule& schedule, std::size_t t, double eta) = 0;
  /// Mean over layers of ‖∇_l R‖_F at the current iterate.
  virtual double grad_norm_mean() const = 0;
  /// Extreme eigenvalues of the stem when every layer is identical and
  /// symmetric; nullopt otherwise.
  virtual std::optional<std::pair<double, double>> stem_extremes() const = 0;
  /// ‖P_L − reference‖_F.
  virtual double distance_to(const Matrix& reference) const = 0;
  virtual LayerWeights layers() const = 0;
};

std::unique_ptr<Engine> make_dense_engine(LayerWeights layers, Matrix target);

/// Requires a symmetric target. Layers are represented by their eigenvalues
/// in Φ's eigenbasis; identical eigenvalues of Φ share one lane.
std::unique_ptr<Engine> make_spectral_engine(InitKind init, std::size_t depth,
                                             const Matrix& target);

}  // namespace swe::dln::detail
