#ifndef PULSE_CSC_SIGNAL_HPP
#define PULSE_CSC_SIGNAL_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pulse_csc/error.hpp"

namespace pulse_csc {

/// Uniformly sampled real signal. Samples are finite; fs is in Hz.
struct Signal {
  std::vector<double> samples;
  double fs = 1.0;

  Signal() = default;
  Signal(std::vector<double> s, double rate) : samples(std::move(s)), fs(rate) {}

  [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }
  [[nodiscard]] double duration_s() const noexcept { return static_cast<double>(samples.size()) / fs; }
  [[nodiscard]] std::span<const double> view() const noexcept { return samples; }

  friend bool operator==(const Signal&, const Signal&) = default;
};

inline void validate(const Signal& x) {
  require(x.fs > 0.0 && std::isfinite(x.fs), ErrorCode::domain, "sampling rate must be positive");
  for (double v : x.samples)
    require(std::isfinite(v), ErrorCode::domain, "signal contains non-finite samples");
}

// ---------------------------------------------------------------------------
// Band-pass design

struct BandPassSpec {
  int order = 4;  // analog prototype order; the band-pass has 2*order poles
  double low_hz = 0.5;
  double high_hz = 18.0;
  double stop_atten_db = 40.0;
};

/// y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  [[nodiscard]] std::complex<double> response(double omega) const {
    const std::complex<double> z1 = std::polar(1.0, -omega);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  // Poles of z^2 + a1 z + a2 lie inside the unit circle iff |a2| < 1 and |a1| < 1 + a2.
  [[nodiscard]] bool stable() const { return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2; }
};

struct BiquadCascade {
  std::vector<Biquad> sections;

  /// Complex response at normalized angular frequency omega (rad/sample).
  [[nodiscard]] std::complex<double> response(double omega) const {
    std::complex<double> h{1.0, 0.0};
    for (const auto& s : sections) h *= s.response(omega);
    return h;
  }

  [[nodiscard]] double magnitude_db(double f_hz, double fs) const {
    return 20.0 * std::log10(std::abs(response(2.0 * std::numbers::pi * f_hz / fs)));
  }

  [[nodiscard]] bool stable() const {
    return std::all_of(sections.begin(), sections.end(), [](const Biquad& s) { return s.stable(); });
  }
};

namespace detail {

using cplx = std::complex<double>;

struct Zpk {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain = 1.0;
};

// Analog Chebyshev type-II lowpass prototype with the stopband edge at 1 rad/s.
inline Zpk cheby2_prototype(int order, double stop_atten_db) {
  const double pi = std::numbers::pi;
  const double de = 1.0 / std::sqrt(std::pow(10.0, 0.1 * stop_atten_db) - 1.0);
  const double mu = std::asinh(1.0 / de) / order;

  Zpk out;
  for (int m = -order + 1; m < order; m += 2) {
    if (m != 0) out.zeros.push_back(cplx(0.0, 1.0 / std::sin(m * pi / (2.0 * order))));
    const cplx p0 = -std::exp(cplx(0.0, pi * m / (2.0 * order)));
    out.poles.push_back(1.0 / cplx(std::sinh(mu) * p0.real(), std::cosh(mu) * p0.imag()));
  }
  cplx num{1.0, 0.0}, den{1.0, 0.0};
  for (const auto& p : out.poles) num *= -p;
  for (const auto& z : out.zeros) den *= -z;
  out.gain = (num / den).real();
  return out;
}

inline Zpk lowpass_to_bandpass(const Zpk& lp, double center, double bandwidth) {
  Zpk bp;
  const auto split = [&](cplx r, std::vector<cplx>& dst) {
    const cplx scaled = r * bandwidth / 2.0;
    const cplx disc = std::sqrt(scaled * scaled - center * center);
    dst.push_back(scaled + disc);
    dst.push_back(scaled - disc);
  };
  for (const auto& z : lp.zeros) split(z, bp.zeros);
  for (const auto& p : lp.poles) split(p, bp.poles);
  const std::size_t degree = lp.poles.size() - lp.zeros.size();
  bp.zeros.insert(bp.zeros.end(), degree, cplx(0.0, 0.0));
  bp.gain = lp.gain * std::pow(bandwidth, static_cast<double>(degree));
  return bp;
}

inline Zpk bilinear(const Zpk& analog, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk digital;
  cplx num{1.0, 0.0}, den{1.0, 0.0};
  for (const auto& z : analog.zeros) {
    digital.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const auto& p : analog.poles) {
    digital.poles.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  digital.zeros.insert(digital.zeros.end(), analog.poles.size() - analog.zeros.size(), cplx(-1.0, 0.0));
  digital.gain = analog.gain * (num / den).real();
  return digital;
}

// Roots with positive imaginary part stand for their conjugate pair; real roots are
// kept as-is. Each quadratic factor is returned as (c1, c2) of z^2 + c1 z + c2.
inline std::vector<std::pair<double, double>> pair_roots(std::vector<cplx> roots) {
  constexpr double imag_tol = 1e-9;
  std::vector<cplx> upper;
  std::vector<double> reals;
  for (const auto& r : roots) {
    if (std::abs(r.imag()) <= imag_tol * std::max(1.0, std::abs(r)))
      reals.push_back(r.real());
    else if (r.imag() > 0.0)
      upper.push_back(r);
  }
  std::vector<std::pair<double, double>> factors;
  for (const auto& r : upper) factors.emplace_back(-2.0 * r.real(), std::norm(r));
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
    factors.emplace_back(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  if (reals.size() % 2 == 1) factors.emplace_back(-reals.back(), 0.0);
  return factors;
}

}  // namespace detail

/// Chebyshev type-II band-pass: analog prototype of spec.order, lowpass-to-bandpass
/// transform, bilinear discretization with prewarped band edges. The band edges are
/// the stopband edges, where the response first reaches -stop_atten_db.
inline BiquadCascade design_cheby2_bandpass(const BandPassSpec& spec, double fs) {
  using detail::cplx;
  const double nyquist = fs / 2.0;
  require(fs > 0.0, ErrorCode::invalid_spec, "sampling rate must be positive");
  require(spec.order > 0 && spec.order % 2 == 0, ErrorCode::invalid_spec, "order must be even and positive");
  require(spec.stop_atten_db > 0.0, ErrorCode::invalid_spec, "stopband attenuation must be positive");
  require(spec.low_hz > 0.0 && spec.low_hz < spec.high_hz, ErrorCode::invalid_spec, "band edges must satisfy 0 < low < high");
  require(spec.high_hz < nyquist && spec.low_hz < nyquist, ErrorCode::invalid_spec,
          "band edges must lie below Nyquist (" + std::to_string(nyquist) + " Hz)");

  const double pi = std::numbers::pi;
  const double w_low = 2.0 * fs * std::tan(pi * spec.low_hz / fs);
  const double w_high = 2.0 * fs * std::tan(pi * spec.high_hz / fs);

  const auto proto = detail::cheby2_prototype(spec.order, spec.stop_atten_db);
  const auto analog = detail::lowpass_to_bandpass(proto, std::sqrt(w_low * w_high), w_high - w_low);
  const auto digital = detail::bilinear(analog, fs);

  for (const auto& p : digital.poles)
    require(std::abs(p) < 1.0 && std::isfinite(p.real()) && std::isfinite(p.imag()), ErrorCode::design_failure,
            "pole on or outside the unit circle");

  auto pole_pairs = detail::pair_roots(digital.poles);
  auto zero_pairs = detail::pair_roots(digital.zeros);
  require(pole_pairs.size() == zero_pairs.size(), ErrorCode::design_failure, "unbalanced pole/zero pairing");

  // Poles closest to the unit circle get the nearest zeros, which keeps each
  // section's peak gain moderate.
  std::sort(pole_pairs.begin(), pole_pairs.end(), [](auto a, auto b) { return a.second < b.second; });
  BiquadCascade cascade;
  for (const auto& [a1, a2] : pole_pairs) {
    const double pole_angle = std::acos(std::clamp(-a1 / (2.0 * std::sqrt(std::max(a2, 1e-300))), -1.0, 1.0));
    auto best = zero_pairs.begin();
    double best_dist = std::numeric_limits<double>::infinity();
    for (auto it = zero_pairs.begin(); it != zero_pairs.end(); ++it) {
      const double r = std::sqrt(std::max(it->second, 0.0));
      const double angle = r > 0.0 ? std::acos(std::clamp(-it->first / (2.0 * r), -1.0, 1.0)) : 0.0;
      const double dist = std::abs(angle - pole_angle);
      if (dist < best_dist) {
        best_dist = dist;
        best = it;
      }
    }
    cascade.sections.push_back(Biquad{1.0, best->first, best->second, a1, a2});
    zero_pairs.erase(best);
  }

  // Distribute the overall gain so every section has unit magnitude at band center,
  // then restore the exact zpk gain there.
  const double center = 2.0 * pi * std::sqrt(spec.low_hz * spec.high_hz) / fs;
  for (auto& s : cascade.sections) {
    const double g = std::abs(s.response(center));
    require(g > 0.0 && std::isfinite(g), ErrorCode::design_failure, "degenerate section gain");
    s.b0 /= g;
    s.b1 /= g;
    s.b2 /= g;
  }
  const cplx zc = std::polar(1.0, center);
  cplx target = digital.gain;
  for (const auto& z : digital.zeros) target *= zc - z;
  for (const auto& p : digital.poles) target /= zc - p;
  const double scale = (target / cascade.response(center)).real();
  require(std::isfinite(scale) && scale != 0.0, ErrorCode::design_failure, "invalid overall gain");
  auto& first = cascade.sections.front();
  first.b0 *= scale;
  first.b1 *= scale;
  first.b2 *= scale;

  require(cascade.stable(), ErrorCode::design_failure, "designed cascade is unstable");
  return cascade;
}

/// Causal single pass, direct-form II transposed per section.
inline Signal filter_signal(const Signal& x, const BiquadCascade& cascade) {
  Signal y = x;
  for (const auto& s : cascade.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y.samples) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

/// Forward-backward application (zero phase, squared magnitude).
inline Signal filter_zero_phase(const Signal& x, const BiquadCascade& cascade) {
  Signal y = filter_signal(x, cascade);
  std::reverse(y.samples.begin(), y.samples.end());
  y = filter_signal(y, cascade);
  std::reverse(y.samples.begin(), y.samples.end());
  return y;
}

// ---------------------------------------------------------------------------
// Rational resampling

struct Ratio {
  std::int64_t up = 1;
  std::int64_t down = 1;
};

/// Smallest-denominator fraction within 1e-12 relative of target/source.
inline Ratio rational_ratio(double source_fs, double target_fs, std::int64_t max_term = 1'000'000) {
  require(source_fs > 0.0 && target_fs > 0.0, ErrorCode::domain, "sampling rates must be positive");
  const double ratio = target_fs / source_fs;
  // Continued-fraction convergents.
  std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double rest = ratio;
  for (int iter = 0; iter < 64; ++iter) {
    const double a = std::floor(rest);
    if (a > static_cast<double>(max_term)) break;
    const auto ai = static_cast<std::int64_t>(a);
    const std::int64_t h2 = ai * h1 + h0;
    const std::int64_t k2 = ai * k1 + k0;
    if (h2 > max_term || k2 > max_term) break;
    h0 = h1, h1 = h2, k0 = k1, k1 = k2;
    if (std::abs(static_cast<double>(h1) / static_cast<double>(k1) - ratio) <= 1e-12 * ratio) {
      const std::int64_t g = std::gcd(h1, k1);
      return {h1 / g, k1 / g};
    }
    const double frac = rest - a;
    if (frac <= 0.0) break;
    rest = 1.0 / frac;
  }
  throw Error(ErrorCode::unsupported_ratio, "resampling ratio has no rational form with terms <= 10^6");
}

namespace detail {

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  const std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

}  // namespace detail

/// Polyphase rational resampling with a Kaiser-windowed sinc at min(fs, target_fs)/2.
/// Each output sample is normalized by the sum of the filter taps that land on
/// valid input samples, which makes DC gain exactly one including at the edges.
inline Signal resample(const Signal& x, double target_fs) {
  require(target_fs > 0.0, ErrorCode::domain, "target rate must be positive");
  if (target_fs == x.fs) return x;
  const Ratio r = rational_ratio(x.fs, target_fs);
  const std::int64_t up = r.up, down = r.down;
  const std::int64_t max_rate = std::max(up, down);
  const std::int64_t half = 16 * max_rate;  // taps either side, in the upsampled domain
  constexpr double beta = 8.6;

  const double cutoff = 0.5 / static_cast<double>(max_rate);  // cycles per upsampled sample
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  const double norm = detail::bessel_i0(beta);
  for (std::int64_t j = -half; j <= half; ++j) {
    const double t = static_cast<double>(j);
    const double sinc = j == 0 ? 1.0 : std::sin(2.0 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t) / (2.0 * cutoff);
    const double ratio = t / static_cast<double>(half);
    const double window = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - ratio * ratio))) / norm;
    taps[static_cast<std::size_t>(j + half)] = sinc * window;
  }

  const auto n_in = static_cast<std::int64_t>(x.size());
  const auto n_out = static_cast<std::int64_t>(std::llround(static_cast<double>(n_in) * static_cast<double>(up) / static_cast<double>(down)));
  Signal y;
  y.fs = target_fs;
  y.samples.assign(static_cast<std::size_t>(std::max<std::int64_t>(n_out, 0)), 0.0);
  for (std::int64_t m = 0; m < n_out; ++m) {
    const std::int64_t pos = m * down;  // position in upsampled domain
    // input n contributes when |pos - n*up| <= half
    const std::int64_t n_lo = -detail::floor_div(half - pos, up);  // ceil((pos - half) / up)
    const std::int64_t n_hi = detail::floor_div(pos + half, up);
    double acc = 0.0, wsum = 0.0;
    for (std::int64_t n = std::max<std::int64_t>(n_lo, 0); n <= std::min(n_hi, n_in - 1); ++n) {
      const double w = taps[static_cast<std::size_t>(pos - n * up + half)];
      acc += w * x.samples[static_cast<std::size_t>(n)];
      wsum += w;
    }
    y.samples[static_cast<std::size_t>(m)] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Amplitude normalization

struct Normalized {
  Signal signal;
  double offset = 0.0;  // original min
  double range = 0.0;   // original max - min
  bool degenerate = false;

  /// Maps a value from [0,1] back to the original amplitude scale.
  [[nodiscard]] double invert(double v) const { return degenerate ? offset : v * range + offset; }
};

/// (x - min) / (max - min). A constant input maps to 0.5 with the degenerate flag set.
inline Normalized normalize_01(const Signal& x) {
  Normalized out;
  out.signal.fs = x.fs;
  if (x.samples.empty()) {
    out.degenerate = true;
    return out;
  }
  const auto [lo, hi] = std::minmax_element(x.samples.begin(), x.samples.end());
  out.offset = *lo;
  out.range = *hi - *lo;
  out.signal.samples.resize(x.size());
  if (!(out.range > 0.0)) {
    out.degenerate = true;
    std::fill(out.signal.samples.begin(), out.signal.samples.end(), 0.5);
    return out;
  }
  std::transform(x.samples.begin(), x.samples.end(), out.signal.samples.begin(),
                 [&](double v) { return (v - out.offset) / out.range; });
  return out;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_SIGNAL_HPP
