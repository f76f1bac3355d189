#ifndef PULSE_CSC_ARTIFACT_HPP
#define PULSE_CSC_ARTIFACT_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pulse_csc/error.hpp"
#include "pulse_csc/parallel.hpp"
#include "pulse_csc/records.hpp"
#include "pulse_csc/signal.hpp"

namespace pulse_csc {

/// splitmix64 finalizer over a master seed and two stream indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

// ---------------------------------------------------------------------------
// Clean pulse synthesis

struct CleanPpg {
  Signal signal;
  std::vector<double> beat_times;  // systolic peak times in seconds, within [0, duration)
};

/// Gaussian systolic bump plus a 0.35-amplitude diastolic bump delayed by 0.35 of the
/// beat period. Inter-beat intervals take a +/-2% random step per beat and stay within
/// 3% of the nominal period.
inline CleanPpg synth_clean_ppg(double duration_s, double fs, double hr_bpm, std::uint64_t seed) {
  require(hr_bpm >= 30.0 && hr_bpm <= 200.0, ErrorCode::domain, "heart rate must lie in [30, 200] bpm");
  require(duration_s > 0.0 && fs > 0.0, ErrorCode::domain, "duration and fs must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double nominal = 60.0 / hr_bpm;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  CleanPpg out;
  out.signal = Signal(std::vector<double>(n, 0.0), fs);

  double ibi = nominal;
  double beat = -2.0 * nominal + unit(rng) * nominal;
  while (beat < duration_s + nominal) {
    const double s_sys = 0.12 * ibi;
    const double s_dia = 0.16 * ibi;
    const double t_dia = beat + 0.35 * ibi;
    // Only samples within 5 sigma contribute measurably.
    const auto lo = static_cast<std::ptrdiff_t>(std::floor((beat - 5.0 * s_sys) * fs));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil((t_dia + 5.0 * s_dia) * fs));
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i <= hi && i < static_cast<std::ptrdiff_t>(n); ++i) {
      const double t = static_cast<double>(i) / fs;
      const double a = (t - beat) / s_sys;
      const double b = (t - t_dia) / s_dia;
      out.signal.samples[static_cast<std::size_t>(i)] += std::exp(-0.5 * a * a) + 0.35 * std::exp(-0.5 * b * b);
    }
    if (beat >= 0.0 && beat < duration_s) out.beat_times.push_back(beat);
    ibi = std::clamp(ibi * (1.0 + 0.04 * (unit(rng) - 0.5)), 0.97 * nominal, 1.03 * nominal);
    beat += ibi;
  }
  return out;
}

/// 60 / mean inter-beat interval of a sorted list of beat times.
inline double hr_from_beat_times(const std::vector<double>& beats) {
  if (beats.size() < 2) return 0.0;
  return 60.0 * static_cast<double>(beats.size() - 1) / (beats.back() - beats.front());
}

// ---------------------------------------------------------------------------
// Motion artifacts

struct ArtifactDistribution {
  double amp_mu = 0.0;  // log-normal parameters of the relative amplitude
  double amp_sigma = 0.5;
  double slope_mu = -1.5;  // normal parameters of the spectral slope, dB/Hz
  double slope_sigma = 0.5;
};

struct ArtifactParamTable {
  std::array<ArtifactDistribution, 4> by_kind{{
      {0.8, 0.5, -1.5, 0.5},  // device displacement
      {0.3, 0.5, -1.5, 0.5},  // forearm motion
      {0.0, 0.5, -1.5, 0.5},  // hand motion
      {0.5, 0.6, -1.5, 0.5},  // poor contact
  }};
  double min_duration_s = 1.0;
  double max_duration_s = 10.0;
  double segment_s = 10.0;

  [[nodiscard]] const ArtifactDistribution& operator[](ArtifactKind k) const {
    return by_kind[static_cast<std::size_t>(k)];
  }
  [[nodiscard]] ArtifactDistribution& operator[](ArtifactKind k) { return by_kind[static_cast<std::size_t>(k)]; }

  void validate() const {
    for (const auto& d : by_kind)
      require(d.amp_sigma > 0.0 && d.slope_sigma > 0.0, ErrorCode::configuration, "distribution sigmas must be positive");
    require(min_duration_s > 0.0 && min_duration_s <= max_duration_s && max_duration_s <= segment_s,
            ErrorCode::configuration, "artifact durations must satisfy 0 < min <= max <= segment");
  }
};

/// Duration ~ U[1, 10] s, onset ~ U[0, 10 - duration], amplitude and slope from the kind's
/// distributions.
inline ArtifactSpec sample_artifact(ArtifactKind kind, const ArtifactParamTable& table, std::uint64_t seed) {
  table.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& dist = table[kind];
  ArtifactSpec spec;
  spec.kind = kind;
  spec.duration_s = table.min_duration_s + (table.max_duration_s - table.min_duration_s) * unit(rng);
  spec.start_s = (table.segment_s - spec.duration_s) * unit(rng);
  spec.amplitude = std::exp(dist.amp_mu + dist.amp_sigma * gauss(rng));
  spec.spectral_slope = dist.slope_mu + dist.slope_sigma * gauss(rng);
  return spec;
}

/// Linear-phase FIR by frequency sampling: the log-magnitude falls at `slope_db_per_hz`
/// from low_hz up to high_hz and is zero outside that band. Hamming-windowed.
inline std::vector<double> artifact_fir(double slope_db_per_hz, double fs, std::size_t taps = 129, double low_hz = 0.5,
                                        double high_hz = 18.0) {
  require(taps % 2 == 1, ErrorCode::domain, "frequency-sampling FIR needs an odd tap count");
  const std::size_t half = taps / 2;
  const double nt = static_cast<double>(taps);
  std::vector<double> mag(half + 1);
  for (std::size_t k = 0; k <= half; ++k) {
    const double f = static_cast<double>(k) * fs / nt;
    mag[k] = (f >= low_hz && f <= high_hz) ? std::pow(10.0, slope_db_per_hz * (f - low_hz) / 20.0) : 0.0;
  }
  std::vector<double> h(taps);
  for (std::size_t i = 0; i < taps; ++i) {
    const double n = static_cast<double>(i) - static_cast<double>(half);
    double acc = mag[0];
    for (std::size_t k = 1; k <= half; ++k)
      acc += 2.0 * mag[k] * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) * n / nt);
    const double window = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / (nt - 1.0));
    h[i] = acc / nt * window;
  }
  return h;
}

inline constexpr double artifact_taper_s = 0.1;

/// FIR-shaped white noise confined to [start, start + duration) with raised-cosine
/// on/off tapers, zero elsewhere. Its RMS over the support (before tapering) equals
/// amplitude * reference_rms. `offset_s` shifts the time origin, for callers that
/// render into a buffer with leading pre-roll.
inline Signal render_artifact(const ArtifactSpec& spec, double fs, std::size_t n, std::uint64_t seed,
                              double reference_rms = 1.0, double offset_s = 0.0) {
  require(spec.duration_s > 0.0 && spec.start_s >= 0.0, ErrorCode::domain, "invalid artifact timing");
  const auto h = artifact_fir(spec.spectral_slope, fs);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(n + h.size() - 1);
  for (double& v : noise) v = gauss(rng);

  Signal out(std::vector<double>(n, 0.0), fs);
  const auto i0 = static_cast<std::size_t>(std::clamp<long long>(std::llround((offset_s + spec.start_s) * fs), 0, static_cast<long long>(n)));
  const auto i1 = static_cast<std::size_t>(std::clamp<long long>(std::llround((offset_s + spec.start_s + spec.duration_s) * fs), 0, static_cast<long long>(n)));
  if (i1 <= i0 || spec.amplitude == 0.0) return out;

  double energy = 0.0;
  for (std::size_t i = i0; i < i1; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) acc += h[j] * noise[i + h.size() - 1 - j];
    out.samples[i] = acc;
    energy += acc * acc;
  }
  const double rms = std::sqrt(energy / static_cast<double>(i1 - i0));
  const double scale = rms > 0.0 ? spec.amplitude * reference_rms / rms : 0.0;
  const std::size_t support = i1 - i0;
  const std::size_t taper = std::min<std::size_t>(static_cast<std::size_t>(std::llround(artifact_taper_s * fs)), support / 2);
  for (std::size_t i = i0; i < i1; ++i) {
    const std::size_t from_edge = std::min(i - i0, i1 - 1 - i);
    double w = 1.0;
    if (from_edge < taper)
      w = 0.5 * (1.0 - std::cos(std::numbers::pi * (static_cast<double>(from_edge) + 0.5) / static_cast<double>(taper)));
    out.samples[i] *= scale * w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing and dataset assembly

struct Preprocessing {
  BandPassSpec band{};
  bool zero_phase = false;
};

/// Band-pass (causal unless zero_phase), then min-max normalization.
inline Normalized preprocess(const Signal& x, const Preprocessing& pre) {
  const auto cascade = design_cheby2_bandpass(pre.band, x.fs);
  const Signal filtered = pre.zero_phase ? filter_zero_phase(x, cascade) : filter_signal(x, cascade);
  return normalize_01(filtered);
}

struct DatasetOptions {
  double fs = 125.0;
  double segment_s = 10.0;
  double preroll_s = 3.0;  // filtered and discarded so segments start past the filter transient
  double hr_min = 55.0;
  double hr_max = 110.0;
  double hr_jitter = 0.08;  // per-segment relative spread around the subject's base rate
  Preprocessing preprocessing{};
  std::size_t threads = 1;
};

inline std::string subject_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%04zu", index);
  return buf;
}

/// One artifact kind per subject, kinds balanced across subjects, one artifact per segment.
/// clean = preprocess(pulse), noisy = preprocess(pulse + artifact).
inline std::vector<SegmentRecord> make_dataset(std::size_t n_subjects, std::size_t segs_per_subject,
                                               const ArtifactParamTable& table, std::uint64_t seed,
                                               const DatasetOptions& opt = {}) {
  require(n_subjects > 0 && n_subjects % 4 == 0, ErrorCode::configuration, "subject count must be a positive multiple of 4");
  require(segs_per_subject > 0, ErrorCode::configuration, "segments per subject must be positive");
  table.validate();
  const auto seg_n = static_cast<std::size_t>(std::llround(opt.segment_s * opt.fs));
  const auto pre_n = static_cast<std::size_t>(std::llround(opt.preroll_s * opt.fs));

  std::vector<SegmentRecord> records(n_subjects * segs_per_subject);
  parallel_for(records.size(), opt.threads, [&](std::size_t idx) {
    const std::size_t subject = idx / segs_per_subject;
    const std::size_t segment = idx % segs_per_subject;
    const ArtifactKind kind = all_artifact_kinds[subject % 4];
    std::mt19937_64 subject_rng(derive_seed(seed, subject, 0xffffffffULL));
    const double base_hr = std::uniform_real_distribution<double>(opt.hr_min, opt.hr_max)(subject_rng);

    const std::uint64_t s = derive_seed(seed, subject, segment);
    std::mt19937_64 rng(s);
    const double hr = base_hr * (1.0 + opt.hr_jitter * (2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng) - 1.0));
    const auto pulse = synth_clean_ppg(opt.preroll_s + opt.segment_s, opt.fs, std::clamp(hr, 30.0, 200.0), derive_seed(s, 1));
    const auto spec = sample_artifact(kind, table, derive_seed(s, 2));

    double mean = 0.0;
    for (std::size_t i = pre_n; i < pulse.signal.size(); ++i) mean += pulse.signal.samples[i];
    mean /= static_cast<double>(seg_n);
    double var = 0.0;
    for (std::size_t i = pre_n; i < pulse.signal.size(); ++i) var += (pulse.signal.samples[i] - mean) * (pulse.signal.samples[i] - mean);
    const double ac_rms = std::sqrt(var / static_cast<double>(seg_n));

    const Signal art = render_artifact(spec, opt.fs, pulse.signal.size(), derive_seed(s, 3), ac_rms, opt.preroll_s);
    Signal corrupted = pulse.signal;
    for (std::size_t i = 0; i < corrupted.size(); ++i) corrupted.samples[i] += art.samples[i];

    const auto crop = [&](const Signal& x) {
      const auto cascade = design_cheby2_bandpass(opt.preprocessing.band, x.fs);
      Signal f = opt.preprocessing.zero_phase ? filter_zero_phase(x, cascade) : filter_signal(x, cascade);
      f.samples.erase(f.samples.begin(), f.samples.begin() + static_cast<std::ptrdiff_t>(pre_n));
      return normalize_01(f).signal;
    };

    SegmentRecord rec;
    rec.subject_id = subject_name(subject);
    rec.clean = crop(pulse.signal);
    rec.noisy = crop(corrupted);
    rec.artifact = spec;
    std::vector<double> beats;
    for (double b : pulse.beat_times)
      if (b >= opt.preroll_s) beats.push_back(b - opt.preroll_s);
    rec.ground_truth_hr = hr_from_beat_times(beats);
    records[idx] = std::move(rec);
  });
  return records;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_ARTIFACT_HPP
