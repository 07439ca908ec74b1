// Exact reduction of deep-linear training for symmetric targets.
//
// With Φ = Q·diag(λ)·Qᵀ and every layer starting as a polynomial in Φ
// (identity or ZAS init), each layer stays Q·diag(c_l)·Qᵀ under all schedule
// transforms, and ∇_l R = Q·diag(Π_{j≠l} c_j · (Π_j c_j − λ))·Qᵀ. The run then
// decouples into one scalar recursion per distinct eigenvalue of Φ.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dln_backend.hpp"

namespace swe::dln::detail {

namespace {

class SpectralEngine final : public Engine {
 public:
  SpectralEngine(InitKind init, std::size_t depth, const Matrix& target) : depth_(depth) {
    if (depth == 0) throw DimensionError("spectral engine: depth must be positive");
    if (!target.is_square() || !is_symmetric(target, 1e-12)) {
      throw DimensionError("spectral engine: target must be square and symmetric");
    }
    EigenResult eig = sym_eig(target);
    dim_ = target.rows();
    basis_ = eig.eigenvectors;
    for (std::size_t i = 0; i < eig.eigenvalues.size(); ++i) {
      const double v = eig.eigenvalues[i];
      if (!lambda_.empty() && lambda_.back() == v) {
        multiplicity_.back() += 1.0;
      } else {
        lambda_.push_back(v);
        multiplicity_.push_back(1.0);
      }
      lane_of_column_.push_back(lambda_.size() - 1);
    }
    lanes_ = lambda_.size();
    coeff_.assign(depth_ * lanes_, 1.0);
    if (init == InitKind::Zas) {
      for (std::size_t k = 0; k < lanes_; ++k) coeff_[(depth_ - 1) * lanes_ + k] = 0.0;
    }
    prefix_.resize(depth_ * lanes_);
    suffix_.resize(depth_ * lanes_);
    grad_.resize(depth_ * lanes_);
    resid_.resize(lanes_);
    mean_.resize(lanes_);
    refresh();
  }

  double loss() const override { return loss_; }

  void step(const SweSchedule& schedule, std::size_t t, double eta) override {
    compute_grads(grad_);
    if (schedule.sharing_active(t)) {
      switch (schedule.mode) {
        case SweMode::Swe:
        case SweMode::AlwaysShared: shared_mean(schedule.unit); break;
        case SweMode::Repara: repara(); break;
        // Lane-diagonal gradients are already symmetric.
        case SweMode::SymmetricStemSwe: shared_mean(UnitShape{1, depth_}); break;
        case SweMode::NoSharing: break;
      }
    }
    for (std::size_t i = 0; i < coeff_.size(); ++i) coeff_[i] -= eta * grad_[i];
    refresh();
  }

  double grad_norm_mean() const override {
    std::vector<double> g(grad_.size());
    compute_grads(g);
    double total = 0.0;
    for (std::size_t l = 0; l < depth_; ++l) {
      double s = 0.0;
      for (std::size_t k = 0; k < lanes_; ++k) {
        const double v = g[l * lanes_ + k];
        s += multiplicity_[k] * v * v;
      }
      total += std::sqrt(s);
    }
    return total / static_cast<double>(depth_);
  }

  std::optional<std::pair<double, double>> stem_extremes() const override {
    for (std::size_t l = 1; l < depth_; ++l)
      for (std::size_t k = 0; k < lanes_; ++k)
        if (coeff_[l * lanes_ + k] != coeff_[k]) return std::nullopt;
    const auto [lo, hi] = std::minmax_element(coeff_.begin(), coeff_.begin() + lanes_);
    return std::make_pair(*lo, *hi);
  }

  double distance_to(const Matrix& reference) const override {
    std::vector<double> p(lanes_);
    for (std::size_t k = 0; k < lanes_; ++k) p[k] = prefix_[(depth_ - 1) * lanes_ + k];
    return frob_norm(reconstruct(p) - reference);
  }

  LayerWeights layers() const override {
    LayerWeights out;
    out.reserve(depth_);
    std::vector<double> c(lanes_);
    for (std::size_t l = 0; l < depth_; ++l) {
      std::copy_n(coeff_.begin() + static_cast<std::ptrdiff_t>(l * lanes_), lanes_, c.begin());
      out.push_back(reconstruct(c));
    }
    return out;
  }

 private:
  Matrix reconstruct(const std::vector<double>& lane_values) const {
    Matrix m(dim_, dim_);
    for (std::size_t col = 0; col < dim_; ++col) {
      const double v = lane_values[lane_of_column_[col]];
      for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < dim_; ++j) m(i, j) += v * basis_(i, col) * basis_(j, col);
    }
    return m;
  }

  void refresh() {
    const std::size_t K = lanes_;
    for (std::size_t k = 0; k < K; ++k) prefix_[k] = coeff_[k];
    for (std::size_t l = 1; l < depth_; ++l)
      for (std::size_t k = 0; k < K; ++k)
        prefix_[l * K + k] = coeff_[l * K + k] * prefix_[(l - 1) * K + k];
    for (std::size_t k = 0; k < K; ++k) suffix_[(depth_ - 1) * K + k] = coeff_[(depth_ - 1) * K + k];
    for (std::size_t l = depth_ - 1; l-- > 0;)
      for (std::size_t k = 0; k < K; ++k)
        suffix_[l * K + k] = suffix_[(l + 1) * K + k] * coeff_[l * K + k];
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      resid_[k] = prefix_[(depth_ - 1) * K + k] - lambda_[k];
      s += multiplicity_[k] * resid_[k] * resid_[k];
    }
    loss_ = 0.5 * s;
  }

  void compute_grads(std::vector<double>& out) const {
    const std::size_t K = lanes_;
    for (std::size_t l = 0; l < depth_; ++l) {
      for (std::size_t k = 0; k < K; ++k) {
        const double left = l > 0 ? prefix_[(l - 1) * K + k] : 1.0;
        const double right = l + 1 < depth_ ? suffix_[(l + 1) * K + k] : 1.0;
        out[l * K + k] = right * resid_[k] * left;
      }
    }
  }

  void shared_mean(UnitShape unit) {
    const std::size_t K = lanes_;
    const double inv = 1.0 / static_cast<double>(unit.repeats);
    for (std::size_t j = 0; j < unit.size; ++j) {
      for (std::size_t k = 0; k < K; ++k) {
        double acc = grad_[j * K + k];
        for (std::size_t u = 1; u < unit.repeats; ++u) acc += grad_[(u * unit.size + j) * K + k];
        mean_[k] = acc * inv;
      }
      for (std::size_t u = 0; u < unit.repeats; ++u)
        std::copy(mean_.begin(), mean_.end(),
                  grad_.begin() + static_cast<std::ptrdiff_t>((u * unit.size + j) * K));
    }
  }

  void repara() {
    const std::size_t K = lanes_;
    const double inv = 1.0 / static_cast<double>(depth_);
    for (std::size_t k = 0; k < K; ++k) {
      double acc = grad_[k];
      for (std::size_t l = 1; l < depth_; ++l) acc += grad_[l * K + k];
      mean_[k] = acc * inv;
    }
    for (std::size_t l = 0; l < depth_; ++l)
      for (std::size_t k = 0; k < K; ++k) grad_[l * K + k] = (mean_[k] + grad_[l * K + k]) * 0.5;
  }

  std::size_t depth_;
  std::size_t dim_ = 0;
  std::size_t lanes_ = 0;
  Matrix basis_;
  std::vector<std::size_t> lane_of_column_;
  std::vector<double> lambda_;
  std::vector<double> multiplicity_;
  std::vector<double> coeff_;  // layer-major: coeff_[l * lanes + k]
  std::vector<double> prefix_;
  std::vector<double> suffix_;
  std::vector<double> grad_;
  std::vector<double> resid_;
  std::vector<double> mean_;
  double loss_ = 0.0;
};

}  // namespace

std::unique_ptr<Engine> make_spectral_engine(InitKind init, std::size_t depth,
                                             const Matrix& target) {
  return std::make_unique<SpectralEngine>(init, depth, target);
}

}  // namespace swe::dln::detail
