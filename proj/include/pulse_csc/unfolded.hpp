#ifndef PULSE_CSC_UNFOLDED_HPP
#define PULSE_CSC_UNFOLDED_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pulse_csc/conv.hpp"
#include "pulse_csc/csc.hpp"
#include "pulse_csc/error.hpp"
#include "pulse_csc/signal.hpp"

namespace pulse_csc {

/// Multichannel convolution layer: out[o] = sum_i kernel(o, i) * in[i], "same" padding.
/// Kernels are true convolutions anchored at floor(len/2), like the decoder.
struct ConvBank {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t length = 0;
  std::vector<double> weights;  // [out][in][tap]

  ConvBank() = default;
  ConvBank(std::size_t out, std::size_t in, std::size_t len)
      : out_channels(out), in_channels(in), length(len), weights(out * in * len, 0.0) {}

  [[nodiscard]] std::span<const double> kernel(std::size_t o, std::size_t i) const {
    return {weights.data() + (o * in_channels + i) * length, length};
  }
  [[nodiscard]] std::span<double> kernel(std::size_t o, std::size_t i) {
    return {weights.data() + (o * in_channels + i) * length, length};
  }

  friend bool operator==(const ConvBank&, const ConvBank&) = default;
};

/// Parameters of the unfolded shrinkage encoder and the convolutional decoder.
///
/// Fold 0 computes X_1 = T(W1[0] * y); fold k >= 1 computes
/// X_{k+1} = T(W1[k] * y + W2[k-1] * X_k). The encoder therefore holds K banks in w1
/// and K-1 in w2. Thresholds are stored raw and pass through softplus before use.
///
/// Code that edits parameters in place must call touch() so that traces taken
/// before the edit are rejected by backward().
struct UnfoldedModel {
  std::size_t M = 0;
  std::size_t L = 0;
  std::size_t K = 0;
  std::vector<ConvBank> w1;
  std::vector<ConvBank> w2;
  std::vector<std::vector<double>> theta;
  Dictionary decoder;
  Thresholding thresholding;
  std::uint32_t n_train = 0;  // training segment length, recorded in checkpoints
  std::uint64_t revision = 0;

  void touch() noexcept { ++revision; }

  [[nodiscard]] std::vector<double> effective_thresholds(std::size_t fold) const {
    std::vector<double> out(M);
    for (std::size_t c = 0; c < M; ++c) out[c] = softplus(theta[fold][c]);
    return out;
  }

  /// Parameter arrays in checkpoint order: decoder, W1[0..K), W2[0..K-1), theta[0..K).
  [[nodiscard]] std::vector<std::span<double>> parameter_groups() {
    std::vector<std::span<double>> groups;
    groups.emplace_back(decoder.data());
    for (auto& b : w1) groups.emplace_back(b.weights);
    for (auto& b : w2) groups.emplace_back(b.weights);
    for (auto& t : theta) groups.emplace_back(t);
    return groups;
  }
  [[nodiscard]] std::vector<std::span<const double>> parameter_groups() const {
    std::vector<std::span<const double>> groups;
    groups.emplace_back(decoder.data());
    for (const auto& b : w1) groups.emplace_back(b.weights);
    for (const auto& b : w2) groups.emplace_back(b.weights);
    for (const auto& t : theta) groups.emplace_back(t);
    return groups;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto g : parameter_groups()) n += g.size();
    return n;
  }

  /// Shape contract: K W1 banks, K-1 W2 banks, unit-norm decoder, finite parameters.
  void validate() const {
    require(K >= 1 && M >= 1 && L >= 1, ErrorCode::shape, "model needs K, M, L >= 1");
    require(w1.size() == K && w2.size() == K - 1 && theta.size() == K, ErrorCode::shape,
            "encoder must hold K W1 banks, K-1 W2 banks and K threshold vectors");
    require(decoder.kernels() == M && decoder.length() == L, ErrorCode::shape, "decoder shape mismatch");
    for (const auto& b : w1)
      require(b.out_channels == M && b.in_channels == 1 && b.length >= 1, ErrorCode::shape, "W1 bank shape");
    for (const auto& b : w2)
      require(b.out_channels == M && b.in_channels == M && b.length >= 1, ErrorCode::shape, "W2 bank shape");
    for (const auto& t : theta) require(t.size() == M, ErrorCode::shape, "threshold vector shape");
    for (auto g : parameter_groups())
      for (double v : g) require(std::isfinite(v), ErrorCode::domain, "non-finite model parameter");
  }

  friend bool operator==(const UnfoldedModel& a, const UnfoldedModel& b) {
    return a.M == b.M && a.L == b.L && a.K == b.K && a.w1 == b.w1 && a.w2 == b.w2 && a.theta == b.theta &&
           a.decoder == b.decoder && a.thresholding == b.thresholding;
  }
};

/// Intermediates of one forward pass, kept for reverse-mode gradients.
struct ForwardTrace {
  std::vector<double> input;
  std::vector<SparseCode> pre;    // pre-activation of fold k
  std::vector<SparseCode> codes;  // codes[k] = output of fold k, i.e. X_{k+1}
  std::vector<double> output;     // decoder reconstruction
  std::uint64_t revision = 0;

  [[nodiscard]] const SparseCode& final_code() const { return codes.back(); }
};

inline ForwardTrace forward(const UnfoldedModel& model, std::span<const double> y_noisy) {
  const std::size_t n = y_noisy.size();
  require(n >= model.L, ErrorCode::input_too_short, "input shorter than kernel length");
  require(model.w1.size() == model.K && model.w2.size() + 1 == model.K, ErrorCode::shape, "model fold count");

  ForwardTrace trace;
  trace.input.assign(y_noisy.begin(), y_noisy.end());
  trace.revision = model.revision;
  trace.pre.reserve(model.K);
  trace.codes.reserve(model.K);
  for (std::size_t k = 0; k < model.K; ++k) {
    SparseCode z(n, model.M);
    const auto& b1 = model.w1[k];
    for (std::size_t c = 0; c < model.M; ++c) conv_same_accumulate(b1.kernel(c, 0), y_noisy, z.column(c));
    if (k > 0) {
      const auto& b2 = model.w2[k - 1];
      const SparseCode& prev = trace.codes[k - 1];
      for (std::size_t c = 0; c < model.M; ++c)
        for (std::size_t ci = 0; ci < model.M; ++ci) conv_same_accumulate(b2.kernel(c, ci), prev.column(ci), z.column(c));
    }
    SparseCode x(n, model.M);
    for (std::size_t c = 0; c < model.M; ++c) {
      const double th = softplus(model.theta[k][c]);
      auto src = z.column(c);
      auto dst = x.column(c);
      for (std::size_t i = 0; i < n; ++i) dst[i] = shrink(src[i], th, model.thresholding).value;
    }
    trace.pre.push_back(std::move(z));
    trace.codes.push_back(std::move(x));
  }
  trace.output = reconstruct_samples(model.decoder, trace.codes.back());
  return trace;
}

inline ForwardTrace forward(const UnfoldedModel& model, const Signal& y_noisy) { return forward(model, y_noisy.samples); }

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

/// Re-anchors a kernel to a new length, keeping taps by their offset from the anchor.
/// Returns the energy of the taps that fell outside.
inline double recenter(std::span<const double> src, std::span<double> dst) {
  const std::ptrdiff_t a_src = kernel_anchor(src.size());
  const std::ptrdiff_t a_dst = kernel_anchor(dst.size());
  std::fill(dst.begin(), dst.end(), 0.0);
  double dropped = 0.0;
  for (std::size_t t = 0; t < src.size(); ++t) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t) - a_src + a_dst;
    if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(dst.size()))
      dst[static_cast<std::size_t>(idx)] = src[t];
    else
      dropped += src[t] * src[t];
  }
  return dropped;
}

}  // namespace detail

struct IstaInitReport {
  double lipschitz = 0.0;
  double w1_truncated_energy = 0.0;  // fraction of W1 energy dropped to fit length L
  double w2_truncated_energy = 0.0;
};

/// Encoder weights that make each fold one ISTA iteration on dictionary d0 with step 1/c:
/// W1 = (1/c) reversed(d0), W2 = delta - (1/c) d0^T d0, thresholds lambda/c.
///
/// With `exact_support` the banks keep the full support ISTA needs (2*floor(L/2)+1 taps for
/// W1 and 2L-1 for W2). Otherwise they are cut to L taps around the anchor.
inline UnfoldedModel init_ista(const Dictionary& d0, double lambda, std::size_t n, std::size_t k_folds,
                               bool exact_support = false, IstaInitReport* report = nullptr,
                               double lipschitz = 0.0) {
  require(lambda > 0.0, ErrorCode::domain, "lambda must be positive");
  require(k_folds >= 1, ErrorCode::domain, "fold count must be >= 1");
  require(d0.max_norm_deviation() < 1e-9, ErrorCode::domain, "initial dictionary must have unit-norm kernels");
  const std::size_t m = d0.kernels();
  const std::size_t l = d0.length();
  const double c = lipschitz > 0.0 ? lipschitz : estimate_lipschitz(d0, n);

  const auto a = static_cast<std::size_t>(kernel_anchor(l));
  const std::size_t w1_full = 2 * a + 1;
  ConvBank w1_exact(m, 1, w1_full);
  for (std::size_t ch = 0; ch < m; ++ch) {
    auto dk = d0.kernel(ch);
    auto wk = w1_exact.kernel(ch, 0);
    for (std::size_t t = 0; t < w1_full; ++t) {
      const auto j = static_cast<std::ptrdiff_t>(2 * a) - static_cast<std::ptrdiff_t>(t);
      if (j >= 0 && j < static_cast<std::ptrdiff_t>(l)) wk[t] = dk[static_cast<std::size_t>(j)] / c;
    }
  }

  const std::size_t w2_full = 2 * l - 1;
  ConvBank w2_exact(m, m, w2_full);
  for (std::size_t co = 0; co < m; ++co) {
    for (std::size_t ci = 0; ci < m; ++ci) {
      auto dc = d0.kernel(co);
      auto dp = d0.kernel(ci);
      auto wk = w2_exact.kernel(co, ci);
      for (std::size_t t = 0; t < w2_full; ++t) {
        // gram lag s = L-1-t: sum_j dc[j] dp[j-s]
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(l) - 1 - static_cast<std::ptrdiff_t>(t);
        double g = 0.0;
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(l); ++j) {
          const std::ptrdiff_t jp = j - s;
          if (jp >= 0 && jp < static_cast<std::ptrdiff_t>(l)) g += dc[static_cast<std::size_t>(j)] * dp[static_cast<std::size_t>(jp)];
        }
        wk[t] = -g / c;
      }
      if (co == ci) wk[l - 1] += 1.0;
    }
  }

  UnfoldedModel model;
  model.M = m;
  model.L = l;
  model.K = k_folds;
  model.decoder = d0;
  model.n_train = static_cast<std::uint32_t>(n);
  IstaInitReport rep;
  rep.lipschitz = c;

  ConvBank w1 = w1_exact, w2 = w2_exact;
  if (!exact_support) {
    const auto cut = [](const ConvBank& src, std::size_t len, double& frac) {
      ConvBank dst(src.out_channels, src.in_channels, len);
      double dropped = 0.0, total = 0.0;
      for (double v : src.weights) total += v * v;
      for (std::size_t o = 0; o < src.out_channels; ++o)
        for (std::size_t i = 0; i < src.in_channels; ++i) dropped += detail::recenter(src.kernel(o, i), dst.kernel(o, i));
      frac = total > 0.0 ? dropped / total : 0.0;
      return dst;
    };
    w1 = cut(w1_exact, l, rep.w1_truncated_energy);
    w2 = cut(w2_exact, l, rep.w2_truncated_energy);
  }
  model.w1.assign(k_folds, w1);
  model.w2.assign(k_folds - 1, w2);
  model.theta.assign(k_folds, std::vector<double>(m, softplus_inverse(lambda / c)));
  if (report) *report = rep;
  return model;
}

/// White-noise decoder (unit-normed), Gaussian encoder banks with std 1/sqrt(fan_in * L),
/// raw thresholds softplus^-1(0.05). Fully determined by the seed.
inline UnfoldedModel init_random(std::size_t m, std::size_t l, std::size_t k_folds, std::uint64_t seed,
                                 double initial_threshold = 0.05) {
  require(m >= 1 && l >= 1 && k_folds >= 1, ErrorCode::domain, "M, L, K must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  UnfoldedModel model;
  model.M = m;
  model.L = l;
  model.K = k_folds;
  std::vector<double> dec(m * l);
  for (double& v : dec) v = gauss(rng);
  model.decoder = Dictionary::unit_norm(m, l, std::move(dec));

  const double s1 = 1.0 / std::sqrt(static_cast<double>(l));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(m * l));
  for (std::size_t k = 0; k < k_folds; ++k) {
    ConvBank b(m, 1, l);
    for (double& v : b.weights) v = s1 * gauss(rng);
    model.w1.push_back(std::move(b));
  }
  for (std::size_t k = 0; k + 1 < k_folds; ++k) {
    ConvBank b(m, m, l);
    for (double& v : b.weights) v = s2 * gauss(rng);
    model.w2.push_back(std::move(b));
  }
  model.theta.assign(k_folds, std::vector<double>(m, softplus_inverse(initial_threshold)));
  return model;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_UNFOLDED_HPP
