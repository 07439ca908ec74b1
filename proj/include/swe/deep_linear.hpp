#pragma once

// Deep linear network W_L…W₁ fit to a square target Φ under
// R = ½‖W_L…W₁ − Φ‖²_F, with the step-size bounds and loss monitors used to
// check shared-weight training against its convergence guarantees.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "swe/core_math.hpp"
#include "swe/swe_optim.hpp"
#include "swe/trace.hpp"

namespace swe::dln {

// --- targets -----------------------------------------------------------------

struct AlphaIdentity {
  double alpha = 1.0;
};

/// Q·diag(eigenvalues)·Qᵀ with Q a seeded random rotation.
struct SpdSpectrum {
  std::vector<double> eigenvalues;
  std::uint64_t rotation_seed = 0;
};

/// Φ₀ + E where Φ₀ is an SpdSpectrum and E is a seeded Gaussian direction
/// scaled to ‖E‖_F = ρ·σ_min(Φ₀). ρ ≤ 1/3.
struct NearSpd {
  SpdSpectrum base;
  double rho = 0.3;
  std::uint64_t perturbation_seed = 0;
};

struct TargetSpec {
  std::variant<AlphaIdentity, SpdSpectrum, NearSpd> kind;
  std::size_t dim = 1;

  /// Throws std::invalid_argument on non-positive eigenvalues, a dimension
  /// mismatch or ρ outside [0, 1/3].
  void validate() const;
  Matrix build() const;
};

// --- state -------------------------------------------------------------------

/// Layers plus cached prefix products P_l = W_l…W₁ and suffix products
/// S_l = W_L…W_l. Every mutation refreshes the caches in full.
class DlnState {
 public:
  DlnState(LayerWeights layers, Matrix target);

  std::size_t depth() const { return layers_.size(); }
  std::size_t dim() const { return target_.rows(); }
  const LayerWeights& layers() const { return layers_; }
  const Matrix& target() const { return target_; }

  /// P_l for l ∈ [0, L]; P_0 = I.
  const Matrix& prefix(std::size_t l) const { return prefix_[l]; }
  /// S_l for l ∈ [1, L+1]; S_{L+1} = I.
  const Matrix& suffix(std::size_t l) const { return suffix_[l - 1]; }
  const Matrix& product() const { return prefix_.back(); }

  double loss() const;
  /// ∇_l R = S_{l+1}ᵀ (P_L − Φ) P_{l−1}ᵀ for every layer; O(L) products.
  GradientSet grads() const;

  void set_layers(LayerWeights layers);
  /// sgd_step followed by a cache refresh.
  void apply(const GradientSet& g, double eta, std::size_t step);

 private:
  void refresh();

  LayerWeights layers_;
  Matrix target_;
  std::vector<Matrix> prefix_;  // L+1 entries, prefix_[0] = I
  std::vector<Matrix> suffix_;  // L+1 entries, suffix_[L] = I
};

double dln_loss(const DlnState& s);
GradientSet dln_grads(const DlnState& s);

LayerWeights init_identity(std::size_t depth, std::size_t dim);
/// Zero-asymmetric: W_l = I for l < L, W_L = 0.
LayerWeights init_zas(std::size_t depth, std::size_t dim);

// --- step-size bounds --------------------------------------------------------

/// 1 / (L·max(λ²_max(Φ), 1)). Φ must be SPD.
double eta_sharing_lemma(const Matrix& phi, std::size_t depth);
/// min(λ²_min, 1) / (4√d·L²·max(λ⁴_max, 1)). Φ must be SPD.
double eta_sharing_discrete(const Matrix& phi, std::size_t depth);
/// min{(4L³ξ⁶)⁻¹, (144L²ξ⁴)⁻¹} with ξ = max{2‖Φ‖_F, 3/√L, 1}.
double eta_zas(const Matrix& phi, std::size_t depth);

/// (2L−2)·min(λ²_min(Φ), 1)·η, the per-step contraction guaranteed for
/// shared training from identity.
double shared_contraction_rate(const Matrix& phi, std::size_t depth, double eta);

/// Throws std::invalid_argument unless Φ is symmetric with λ_min > 0.
void require_spd(const Matrix& phi, const char* where);

// --- training ----------------------------------------------------------------

enum class InitKind { Identity, Zas };

enum class Backend {
  Auto,      // spectral when Φ is symmetric and init is identity or ZAS
  Dense,     // full d×d matrix arithmetic
  Spectral,  // exact reduction to Φ's eigenbasis (all iterates commute with Φ)
};

struct StopRule {
  std::size_t max_steps = 1'000'000;
  /// Stop once R ≤ loss_threshold_rel·R(0).
  double loss_threshold_rel = 1e-10;
  /// When set, stop instead once ‖P_L − reference‖_F ≤ reference_tolerance.
  std::optional<Matrix> reference;
  double reference_tolerance = 0.0;
};

struct TrainOptions {
  Backend backend = Backend::Auto;
  /// Record every k-th step (plus the first and last).
  std::size_t record_every = 1;
  bool check_contraction = false;
  bool check_envelope = false;
  bool check_bound = false;
  /// Overrides the contraction rate derived from Φ and η.
  std::optional<double> contraction_rate;
  /// R(0) used for stopping and the bound column; defaults to the initial loss.
  std::optional<double> reference_loss;
};

struct CheckResult {
  bool requested = false;
  std::size_t steps_checked = 0;
  std::optional<std::size_t> first_violation;

  bool passed() const { return !first_violation.has_value(); }
};

struct DlnRun {
  Trace trace;
  LayerWeights final_layers;
  std::size_t steps = 0;
  double eta = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool converged = false;
  CheckResult contraction;
  CheckResult envelope;
  CheckResult bound;

  bool checks_passed() const {
    return contraction.passed() && envelope.passed() && bound.passed();
  }
};

/// Raised when the loss exceeds 1e12 or turns non-finite. Carries the trace
/// up to the failing step.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, Trace trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const Trace& trace() const { return trace_; }

 private:
  Trace trace_;
};

/// CSV schema of a deep-linear run trace.
const std::vector<std::string>& dln_trace_columns();

/// Theorem-prescribed η: eta_zas for ZAS init, otherwise eta_sharing_discrete
/// on the symmetric part of Φ.
double auto_eta(const Matrix& phi, std::size_t depth, InitKind init);

/// Trains from identity or ZAS init. `eta` of nullopt selects auto_eta and
/// overrides the schedule's learning rate.
DlnRun train_dln(const Matrix& target, InitKind init, SweSchedule schedule,
                 std::optional<double> eta, const StopRule& stop, const TrainOptions& options = {});

/// Trains from explicit initial layers on the dense backend.
DlnRun train_dln_from(const Matrix& target, LayerWeights initial, const SweSchedule& schedule,
                      const StopRule& stop, const TrainOptions& options = {});

/// [R(after one step of size η_probe) − R(0)] / (η_probe·R(0)); `shared`
/// applies the shared mean transform before the step.
double initial_decay_rate(const DlnState& s, double eta_probe, bool shared);

struct ContractionReport {
  bool ok = true;
  std::optional<std::size_t> first_violation_step;
  std::size_t pairs_checked = 0;
};

/// Verifies R(t_{k+1}) ≤ (1 − rate)^{t_{k+1} − t_k}·R(t_k) over consecutive
/// trace rows.
ContractionReport check_contraction(const Trace& trace, double rate);

// --- two-phase symmetric-stem pipeline ----------------------------------------

struct TwoPhaseOptions {
  std::size_t phase1_max_steps = 1'000'000;
  std::size_t phase2_max_steps = 20'000'000;
  /// Phase 1 ends once ‖P_L − ½(Φ+Φᵀ)‖_F falls below this.
  double phase1_tolerance = 1e-10;
  /// Phase 2 ends once R ≤ final_threshold_rel·R(0).
  double final_threshold_rel = 1e-8;
  /// Phase-2 step size as a fraction of the phase-1 step size.
  double phase2_eta_fraction = 0.1;
  std::size_t record_every = 100;
};

struct TwoPhaseResult {
  DlnRun phase1;
  DlnRun phase2;
  double initial_loss = 0.0;
  double phase1_eta = 0.0;
  double phase2_eta = 0.0;
  /// ‖P_L − ½(Φ+Φᵀ)‖_F at the end of phase 1.
  double phase1_symmetric_gap = 0.0;
  /// ‖Φ − ½(Φ+Φᵀ)‖_F.
  double antisymmetric_norm = 0.0;

  bool phase1_ok() const { return phase1_symmetric_gap <= 1e-6 + antisymmetric_norm; }
  bool converged() const { return phase2.converged; }
};

/// Shared training with a symmetrized stem from identity, then untied descent.
TwoPhaseResult train_symmetric_two_phase(const Matrix& target, std::size_t depth,
                                         const TwoPhaseOptions& options = {});

}  // namespace swe::dln
