#ifndef PULSE_CSC_CSC_HPP
#define PULSE_CSC_CSC_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "pulse_csc/conv.hpp"
#include "pulse_csc/error.hpp"
#include "pulse_csc/signal.hpp"

namespace pulse_csc {

/// M kernels of length L, stored kernel-major.
class Dictionary {
public:
  Dictionary() = default;

  /// Takes kernels as given; call normalize() to project onto unit norm.
  Dictionary(std::size_t m, std::size_t l, std::vector<double> kernels) : m_(m), l_(l), data_(std::move(kernels)) {
    require(m_ >= 1 && l_ >= 1, ErrorCode::shape, "dictionary needs M >= 1 and L >= 1");
    require(data_.size() == m_ * l_, ErrorCode::shape, "dictionary data size != M*L");
  }

  static Dictionary unit_norm(std::size_t m, std::size_t l, std::vector<double> kernels) {
    Dictionary d(m, l, std::move(kernels));
    d.normalize();
    return d;
  }

  [[nodiscard]] std::size_t kernels() const noexcept { return m_; }
  [[nodiscard]] std::size_t length() const noexcept { return l_; }

  [[nodiscard]] std::span<const double> kernel(std::size_t i) const { return {data_.data() + i * l_, l_}; }
  [[nodiscard]] std::span<double> kernel(std::size_t i) { return {data_.data() + i * l_, l_}; }
  [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }
  [[nodiscard]] std::vector<double>& data() noexcept { return data_; }

  /// Rescales every kernel to unit l2 norm. A zero kernel is an error.
  void normalize() {
    for (std::size_t i = 0; i < m_; ++i) {
      auto k = kernel(i);
      const double n = std::sqrt(std::inner_product(k.begin(), k.end(), k.begin(), 0.0));
      require(n > 0.0 && std::isfinite(n), ErrorCode::domain, "cannot normalize a zero or non-finite kernel");
      for (double& v : k) v /= n;
    }
  }

  [[nodiscard]] double max_norm_deviation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      auto k = kernel(i);
      worst = std::max(worst, std::abs(std::sqrt(std::inner_product(k.begin(), k.end(), k.begin(), 0.0)) - 1.0));
    }
    return worst;
  }

  friend bool operator==(const Dictionary&, const Dictionary&) = default;

private:
  std::size_t m_ = 0;
  std::size_t l_ = 0;
  std::vector<double> data_;
};

/// N x M activations, stored channel-major so each column x_i is contiguous.
class SparseCode {
public:
  SparseCode() = default;
  SparseCode(std::size_t n, std::size_t m) : n_(n), m_(m), data_(n * m, 0.0) {}

  [[nodiscard]] std::size_t length() const noexcept { return n_; }
  [[nodiscard]] std::size_t channels() const noexcept { return m_; }

  [[nodiscard]] std::span<const double> column(std::size_t c) const { return {data_.data() + c * n_, n_}; }
  [[nodiscard]] std::span<double> column(std::size_t c) { return {data_.data() + c * n_, n_}; }

  [[nodiscard]] double& at(std::size_t n, std::size_t c) { return data_[c * n_ + n]; }
  [[nodiscard]] double at(std::size_t n, std::size_t c) const { return data_[c * n_ + n]; }

  [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }
  [[nodiscard]] std::vector<double>& data() noexcept { return data_; }

  [[nodiscard]] double l1() const {
    double s = 0.0;
    for (double v : data_) s += std::abs(v);
    return s;
  }

  /// Fraction of entries with magnitude above zero_tol (diagnostic for the l0 sparsity assumption).
  [[nodiscard]] double density(double zero_tol = 1e-8) const {
    if (data_.empty()) return 0.0;
    std::size_t nz = 0;
    for (double v : data_) nz += std::abs(v) > zero_tol ? 1 : 0;
    return static_cast<double>(nz) / static_cast<double>(data_.size());
  }

  friend bool operator==(const SparseCode&, const SparseCode&) = default;

private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// ---------------------------------------------------------------------------
// Model operators

/// sum_i d_i * x_i with "same" zero padding, anchored at floor(L/2).
inline std::vector<double> reconstruct_samples(const Dictionary& d, const SparseCode& x) {
  require(x.channels() == d.kernels(), ErrorCode::shape, "sparse code channels != dictionary kernels");
  std::vector<double> out(x.length(), 0.0);
  for (std::size_t i = 0; i < d.kernels(); ++i) conv_same_accumulate(d.kernel(i), x.column(i), out);
  return out;
}

inline Signal reconstruct(const Dictionary& d, const SparseCode& x, double fs = 1.0) {
  return Signal(reconstruct_samples(d, x), fs);
}

/// Exact adjoint of reconstruct: column i is the cross-correlation of r with d_i.
inline SparseCode correlate_adjoint(const Dictionary& d, std::span<const double> r) {
  SparseCode out(r.size(), d.kernels());
  for (std::size_t i = 0; i < d.kernels(); ++i) corr_same_accumulate(d.kernel(i), r, out.column(i));
  return out;
}

// ---------------------------------------------------------------------------
// Thresholding

/// ln(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus on (0, inf).
inline double softplus_inverse(double y) {
  require(y > 0.0, ErrorCode::domain, "softplus inverse needs a positive argument");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

enum class ThresholdKind { exact, smooth };

struct Thresholding {
  ThresholdKind kind = ThresholdKind::exact;
  double beta = 50.0;  // sharpness of the smooth form

  friend bool operator==(const Thresholding&, const Thresholding&) = default;
};

/// Value and partial derivatives of the shrinkage T_theta(z).
struct ShrinkResult {
  double value;
  double d_input;
  double d_threshold;
};

inline ShrinkResult shrink(double z, double theta, const Thresholding& mode) {
  if (mode.kind == ThresholdKind::exact) {
    if (z > theta) return {z - theta, 1.0, -1.0};
    if (z < -theta) return {z + theta, 1.0, 1.0};
    return {0.0, 0.0, 0.0};
  }
  // (1/beta)[softplus(beta(z - theta)) - softplus(-beta(z + theta))]
  const double b = mode.beta;
  const double up = b * (z - theta);
  const double down = -b * (z + theta);
  const double s_up = sigmoid(up);
  const double s_down = sigmoid(down);
  return {(softplus(up) - softplus(down)) / b, s_up + s_down, s_down - s_up};
}

inline double soft_threshold(double x, double theta) {
  require(theta > 0.0, ErrorCode::domain, "threshold must be positive");
  return shrink(x, theta, {}).value;
}

inline double smooth_soft_threshold(double x, double theta, double beta) {
  require(theta > 0.0, ErrorCode::domain, "threshold must be positive");
  require(beta > 0.0, ErrorCode::domain, "sharpness must be positive");
  return shrink(x, theta, {ThresholdKind::smooth, beta}).value;
}

/// Elementwise shrinkage with one threshold per column.
inline SparseCode soft_threshold(const SparseCode& x, std::span<const double> theta,
                                 const Thresholding& mode = {}) {
  require(theta.size() == x.channels(), ErrorCode::shape, "one threshold per channel required");
  SparseCode out(x.length(), x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    require(theta[c] > 0.0, ErrorCode::domain, "threshold must be positive");
    auto src = x.column(c);
    auto dst = out.column(c);
    for (std::size_t n = 0; n < src.size(); ++n) dst[n] = shrink(src[n], theta[c], mode).value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ISTA reference solver

struct LipschitzOptions {
  double rel_tol = 1e-6;
  int max_iter = 1000;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

/// Number of eigenvalues of the symmetric tridiagonal (a, b) that are >= x (Sturm count).
inline std::size_t tridiag_count_above(const std::vector<double>& a, const std::vector<double>& b, double x) {
  std::size_t below = 0;
  double q = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    q = a[i] - x - (i > 0 ? b[i - 1] * b[i - 1] / q : 0.0);
    if (q == 0.0) q = -std::numeric_limits<double>::min();
    if (q < 0.0) ++below;
  }
  return a.size() - below;
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by bisection.
inline double tridiag_max_eigenvalue(const std::vector<double>& a, const std::vector<double>& b) {
  double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = (i > 0 ? std::abs(b[i - 1]) : 0.0) + (i < b.size() ? std::abs(b[i]) : 0.0);
    lo = std::min(lo, a[i] - r);
    hi = std::max(hi, a[i] + r);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(std::abs(hi), std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (tridiag_count_above(a, b, mid) > 0)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

}  // namespace detail

/// Largest eigenvalue of X -> D^T (D X) on length-n codes.
///
/// Lanczos iteration from a seeded random start; the top Ritz value increases
/// monotonically towards the answer. Iteration stops once a step raises it by less than
/// rel_tol/1000 relative, which keeps the result within rel_tol of the true value.
inline double estimate_lipschitz(const Dictionary& d, std::size_t n, const LipschitzOptions& opt = {}) {
  require(n >= d.length(), ErrorCode::shape, "signal length must be >= kernel length");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SparseCode v(n, d.kernels());
  for (double& e : v.data()) e = gauss(rng);
  const double nv = std::sqrt(dot(v.data(), v.data()));
  for (double& e : v.data()) e /= nv;

  SparseCode prev(n, d.kernels());
  std::vector<double> alpha, beta;
  double theta = 0.0;
  double b = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    SparseCode w = correlate_adjoint(d, reconstruct_samples(d, v));
    const double a = dot(v.data(), w.data());
    require(std::isfinite(a), ErrorCode::convergence, "Lanczos iteration produced a non-finite value");
    alpha.push_back(a);
    auto& wd = w.data();
    for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= a * v.data()[i] + b * prev.data()[i];
    b = std::sqrt(dot(wd, wd));
    const double next = detail::tridiag_max_eigenvalue(alpha, beta);
    if (next <= 0.0) throw Error(ErrorCode::convergence, "gram operator annihilated the iterate");
    const bool done = (it > 0 && next - theta <= 1e-3 * opt.rel_tol * next) || b <= 1e-13 * next;
    theta = std::max(theta, next);
    if (done) return theta;
    beta.push_back(b);
    prev = std::move(v);
    v = std::move(w);
    for (double& e : v.data()) e /= b;
  }
  throw Error(ErrorCode::convergence, "Lanczos iteration did not converge");
}

/// 1/2 ||y - D*X||^2 + lambda ||X||_1
inline double lasso_objective(std::span<const double> y, const Dictionary& d, const SparseCode& x, double lambda) {
  const auto rec = reconstruct_samples(d, x);
  double err = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) err += (y[n] - rec[n]) * (y[n] - rec[n]);
  return 0.5 * err + lambda * x.l1();
}

struct IstaResult {
  SparseCode code;
  double lipschitz = 0.0;
  std::vector<double> objective;  // after each iteration
};

/// X_{k+1} = S_{lambda/c}(X_k + (1/c) D^T (y - D X_k)), X_0 = 0.
/// A positive `lipschitz` skips the power iteration.
inline IstaResult ista_solve(std::span<const double> y, const Dictionary& d, double lambda, int iters,
                             double lipschitz = 0.0, bool track_objective = false) {
  require(lambda > 0.0, ErrorCode::domain, "lambda must be positive");
  require(iters >= 1, ErrorCode::domain, "iteration count must be >= 1");
  IstaResult res;
  res.lipschitz = lipschitz > 0.0 ? lipschitz : estimate_lipschitz(d, y.size());
  const double step = 1.0 / res.lipschitz;
  const double theta = lambda * step;
  res.code = SparseCode(y.size(), d.kernels());
  std::vector<double> residual(y.size());
  for (int it = 0; it < iters; ++it) {
    const auto rec = reconstruct_samples(d, res.code);
    for (std::size_t n = 0; n < y.size(); ++n) residual[n] = y[n] - rec[n];
    const SparseCode grad = correlate_adjoint(d, residual);
    auto& x = res.code.data();
    const auto& g = grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = shrink(x[i] + step * g[i], theta, {}).value;
    if (track_objective) res.objective.push_back(lasso_objective(y, d, res.code, lambda));
  }
  return res;
}

inline SparseCode ista_encode(const Signal& y, const Dictionary& d, double lambda, int iters) {
  return ista_solve(y.samples, d, lambda, iters).code;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_CSC_HPP
