#ifndef PULSE_CSC_CONV_HPP
#define PULSE_CSC_CONV_HPP

#include <algorithm>
#include <cstddef>
#include <span>

namespace pulse_csc {

/// Anchor of a length-`len` kernel under the "same" padding convention.
constexpr std::ptrdiff_t kernel_anchor(std::size_t len) noexcept { return static_cast<std::ptrdiff_t>(len / 2); }

/// out[n] += sum_j k[j] * x[n + a - j], zero outside [0, N). Output and input share length.
inline void conv_same_accumulate(std::span<const double> kernel, std::span<const double> x, std::span<double> out,
                                 double scale = 1.0) {
  const auto n_len = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t a = kernel_anchor(kernel.size());
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    const double w = scale * kernel[j];
    if (w == 0.0) continue;
    const std::ptrdiff_t shift = a - static_cast<std::ptrdiff_t>(j);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n_len, n_len - shift);
    if (hi <= lo) continue;
    const double* src = x.data() + (lo + shift);
    double* dst = out.data() + lo;
    for (std::ptrdiff_t i = 0; i < hi - lo; ++i) dst[i] += w * src[i];
  }
}

/// Adjoint of conv_same_accumulate: out[m] += sum_j k[j] * r[m + j - a].
inline void corr_same_accumulate(std::span<const double> kernel, std::span<const double> r, std::span<double> out,
                                 double scale = 1.0) {
  const auto n_len = static_cast<std::ptrdiff_t>(r.size());
  const std::ptrdiff_t a = kernel_anchor(kernel.size());
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    const double w = scale * kernel[j];
    if (w == 0.0) continue;
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - a;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n_len, n_len - shift);
    if (hi <= lo) continue;
    const double* src = r.data() + (lo + shift);
    double* dst = out.data() + lo;
    for (std::ptrdiff_t i = 0; i < hi - lo; ++i) dst[i] += w * src[i];
  }
}

/// Kernel gradient of conv_same_accumulate: gk[j] += sum_n g[n] * x[n + a - j].
inline void conv_kernel_grad_accumulate(std::span<const double> g, std::span<const double> x, std::span<double> gk) {
  const auto n_len = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t a = kernel_anchor(gk.size());
  for (std::size_t j = 0; j < gk.size(); ++j) {
    const std::ptrdiff_t shift = a - static_cast<std::ptrdiff_t>(j);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n_len, n_len - shift);
    double acc = 0.0;
    for (std::ptrdiff_t n = lo; n < hi; ++n) acc += g[static_cast<std::size_t>(n)] * x[static_cast<std::size_t>(n + shift)];
    gk[j] += acc;
  }
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_CONV_HPP
