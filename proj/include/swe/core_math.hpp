#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swe {

/// Raised for shape mismatches, out-of-range indices and other contract
/// violations on the numeric primitives.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives non-finite values, or an
/// iterative method fails to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major double matrix. Vectors are n×1 matrices where a matrix
/// is needed; plain std::vector<double> elsewhere.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool is_square() const { return rows_ == cols_; }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::string shape_string() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  /// Adds s·o in place.
  Matrix& add_scaled(const Matrix& o, double s);

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
/// Aᵀ·B without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// A·Bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

double frob_norm(const Matrix& a);
double frob_inner(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);
bool is_symmetric(const Matrix& a, double rel_tol = 1e-10);
/// ½(A + Aᵀ)
Matrix symmetric_part(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// ---------------------------------------------------------------------------

/// splitmix64 generator. Normals come from Box–Muller with the second value
/// of each pair cached.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();
  double normal(double mean, double std) { return mean + std * normal(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  std::optional<double> cached_normal_;
};

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double mean, double std, Rng& rng);
std::vector<double> gaussian_vector(std::size_t n, double mean, double std, Rng& rng);

/// Haar-ish random orthogonal matrix from Gram–Schmidt on a Gaussian matrix.
Matrix random_orthogonal(std::size_t n, Rng& rng);

// ---------------------------------------------------------------------------

struct EigenResult {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // column i pairs with eigenvalues[i]
};

inline constexpr std::size_t kMaxEigenDim = 64;
inline constexpr int kMaxJacobiSweeps = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (n ≤ 64).
EigenResult sym_eig(const Matrix& a);

/// Smallest singular value, via √λ_min(AᵀA).
double sigma_min(const Matrix& a);

/// Solves A·x = B for symmetric positive definite A (Cholesky).
Matrix solve_spd(const Matrix& a, const Matrix& b);

/// W_hi·W_{hi−1}·…·W_lo with 1-based indices; lo == hi+1 gives the identity.
Matrix chain_product(std::span<const Matrix> ws, std::size_t lo, std::size_t hi);

}  // namespace swe
