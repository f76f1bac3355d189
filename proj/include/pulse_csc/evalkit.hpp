#ifndef PULSE_CSC_EVALKIT_HPP
#define PULSE_CSC_EVALKIT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pulse_csc/error.hpp"
#include "pulse_csc/records.hpp"
#include "pulse_csc/signal.hpp"

namespace pulse_csc {

// ---------------------------------------------------------------------------
// SNR

inline constexpr double snr_cap_db = 120.0;

struct SnrResult {
  double db = 0.0;
  bool capped = false;
};

/// 10 log10(sum y^2 / sum (y_hat - y)^2), capped at +120 dB.
inline SnrResult snr(std::span<const double> clean, std::span<const double> estimate) {
  require(clean.size() == estimate.size(), ErrorCode::shape, "SNR inputs differ in length");
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    sig += clean[i] * clean[i];
    const double e = estimate[i] - clean[i];
    err += e * e;
  }
  require(sig > 0.0, ErrorCode::undefined_reference, "reference signal is all zero");
  if (err == 0.0) return {snr_cap_db, true};
  const double db = 10.0 * std::log10(sig / err);
  if (db >= snr_cap_db) return {snr_cap_db, true};
  return {db, false};
}

inline double snr_db(const Signal& clean, const Signal& estimate) { return snr(clean.samples, estimate.samples).db; }

// ---------------------------------------------------------------------------
// Percentiles and summaries

/// Linear interpolation between closest ranks (numpy's default).
inline double percentile(std::vector<double> v, double q) {
  require(!v.empty(), ErrorCode::empty_evaluation, "percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct BoxStats {
  std::size_t n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  double whisker_low = 0.0, whisker_high = 0.0;  // most extreme points within 1.5 IQR
};

inline BoxStats box_stats(const std::vector<double>& v) {
  BoxStats b;
  b.n = v.size();
  if (v.empty()) return b;
  b.min = *std::min_element(v.begin(), v.end());
  b.max = *std::max_element(v.begin(), v.end());
  b.q1 = percentile(v, 25.0);
  b.median = percentile(v, 50.0);
  b.q3 = percentile(v, 75.0);
  const double iqr = b.q3 - b.q1;
  b.whisker_low = b.max;
  b.whisker_high = b.min;
  for (double x : v) {
    if (x >= b.q1 - 1.5 * iqr) b.whisker_low = std::min(b.whisker_low, x);
    if (x <= b.q3 + 1.5 * iqr) b.whisker_high = std::max(b.whisker_high, x);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Peaks and heart rate

struct PeakOptions {
  double prominence_fraction = 0.3;  // of the p90 - p10 spread
  double min_separation_s = 0.3;
};

/// Topographic prominence of a local maximum, as in scipy.signal.peak_prominences.
inline double peak_prominence(std::span<const double> x, std::size_t peak) {
  const double h = x[peak];
  double left_min = h;
  for (std::size_t i = peak; i-- > 0;) {
    if (x[i] > h) break;
    left_min = std::min(left_min, x[i]);
  }
  double right_min = h;
  for (std::size_t i = peak + 1; i < x.size(); ++i) {
    if (x[i] > h) break;
    right_min = std::min(right_min, x[i]);
  }
  return h - std::max(left_min, right_min);
}

/// Strict local maxima with enough prominence; of two maxima closer than the minimum
/// separation the higher one survives (ties keep the earlier index).
inline std::vector<std::size_t> detect_peaks(const Signal& x, const PeakOptions& opt = {}) {
  const auto& s = x.samples;
  if (s.size() < 3) return {};
  const double spread = percentile(s, 90.0) - percentile(s, 10.0);
  const double min_prom = opt.prominence_fraction * spread;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < s.size(); ++i)
    if (s[i] > s[i - 1] && s[i] > s[i + 1] && peak_prominence(s, i) >= min_prom && peak_prominence(s, i) > 0.0)
      candidates.push_back(i);

  std::vector<std::size_t> by_height = candidates;
  std::stable_sort(by_height.begin(), by_height.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  const double min_gap = opt.min_separation_s * x.fs;
  std::vector<std::size_t> kept;
  for (std::size_t c : by_height) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return std::abs(static_cast<double>(c) - static_cast<double>(k)) < min_gap;
    });
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

struct HrWindow {
  double start_s = 0.0;
  double hr_bpm = 0.0;
  bool reliable = false;
};

struct HrSeries {
  double window_s = 0.0;
  double step_s = 0.0;
  std::vector<HrWindow> windows;
};

inline bool plausible_hr(double hr) { return hr > 20.0 && hr < 250.0; }

/// HR over peaks inside [t, t + window) for t = 0, step, 2*step, ... while the window fits.
/// HR = 60 / mean inter-peak interval; windows with fewer than two peaks, or an implausible
/// rate, are flagged unreliable.
inline HrSeries hr_from_peaks(const std::vector<std::size_t>& peaks, double fs, std::size_t n_samples, double window_s,
                              double step_s) {
  require(fs > 0.0 && window_s > 0.0 && step_s > 0.0, ErrorCode::domain, "fs, window and step must be positive");
  HrSeries out;
  out.window_s = window_s;
  out.step_s = step_s;
  const double total = static_cast<double>(n_samples) / fs;
  for (std::size_t w = 0;; ++w) {
    const double start = static_cast<double>(w) * step_s;
    if (start + window_s > total + 1e-9) break;
    std::vector<double> t;
    for (std::size_t p : peaks) {
      const double tp = static_cast<double>(p) / fs;
      if (tp >= start && tp < start + window_s) t.push_back(tp);
    }
    HrWindow hw;
    hw.start_s = start;
    if (t.size() >= 2) {
      hw.hr_bpm = 60.0 * static_cast<double>(t.size() - 1) / (t.back() - t.front());
      hw.reliable = plausible_hr(hw.hr_bpm);
    }
    out.windows.push_back(hw);
  }
  return out;
}

/// Whole-segment mode: one window spanning the full signal.
inline HrSeries hr_single_window(const std::vector<std::size_t>& peaks, double fs, std::size_t n_samples) {
  const double total = static_cast<double>(n_samples) / fs;
  return hr_from_peaks(peaks, fs, n_samples, total, total);
}

inline HrSeries segment_hr(const Signal& x, const PeakOptions& opt = {}) {
  return hr_single_window(detect_peaks(x, opt), x.fs, x.size());
}

struct MaeResult {
  double mae = 0.0;
  std::size_t windows = 0;   // aligned reliable pairs used
  std::size_t excluded = 0;  // aligned pairs dropped because either side was unreliable
};

/// Mean |est - ref| over windows present in both series and reliable on both sides.
inline MaeResult mae_hr(const HrSeries& est, const HrSeries& ref) {
  MaeResult r;
  double sum = 0.0;
  for (const auto& e : est.windows) {
    for (const auto& f : ref.windows) {
      if (std::abs(e.start_s - f.start_s) > 1e-9) continue;
      if (e.reliable && f.reliable) {
        sum += std::abs(e.hr_bpm - f.hr_bpm);
        ++r.windows;
      } else {
        ++r.excluded;
      }
    }
  }
  require(r.windows > 0, ErrorCode::empty_evaluation, "no aligned reliable windows");
  r.mae = sum / static_cast<double>(r.windows);
  return r;
}

// ---------------------------------------------------------------------------
// Grouping

enum class Grouping { artifact_kind, duration_bin, activity };

inline std::string to_string(Grouping g) {
  switch (g) {
    case Grouping::artifact_kind: return "artifact_kind";
    case Grouping::duration_bin: return "duration_bin";
    case Grouping::activity: return "activity";
  }
  return "unknown";
}

/// Two-second bins (0,2], (2,4], ..., (8,10]; returns -1 when out of range.
inline int duration_bin(double duration_s) {
  if (!(duration_s > 0.0) || duration_s > 10.0 + 1e-12) return -1;
  return std::min(4, static_cast<int>(std::ceil(duration_s / 2.0)) - 1);
}

inline std::string duration_bin_label(int bin) {
  return "(" + std::to_string(2 * bin) + "," + std::to_string(2 * bin + 2) + "]";
}

/// Per-segment evaluation row used for grouped statistics.
struct SegmentEval {
  std::string subject_id;
  std::optional<ArtifactKind> kind;
  std::optional<double> duration_s;
  std::optional<std::string> activity;
  HrWindow hr_ref;
  HrWindow hr_est;
  double snr_db = 0.0;
};

inline std::optional<std::string> group_key(const SegmentEval& s, Grouping g) {
  switch (g) {
    case Grouping::artifact_kind:
      if (s.kind) return std::string(to_string(*s.kind));
      return std::nullopt;
    case Grouping::duration_bin:
      if (s.duration_s && duration_bin(*s.duration_s) >= 0) return duration_bin_label(duration_bin(*s.duration_s));
      return std::nullopt;
    case Grouping::activity: return s.activity;
  }
  return std::nullopt;
}

struct SubjectValue {
  std::string subject_id;
  double value = 0.0;
};

/// Group label -> one value per subject (subjects in sorted order).
struct GroupedValues {
  Grouping grouping = Grouping::artifact_kind;
  std::map<std::string, std::vector<SubjectValue>> groups;
  std::vector<std::string> warnings;
};

/// Per subject and group, the MAE over that subject's segments in the group with
/// reliable HR on both sides. Subjects without any usable segment in a group are omitted.
inline GroupedValues group_mae(const std::vector<SegmentEval>& rows, Grouping grouping) {
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  GroupedValues out;
  out.grouping = grouping;
  for (const auto& r : rows) {
    const auto key = group_key(r, grouping);
    if (!key) continue;
    auto& cell = acc[*key][r.subject_id];
    if (r.hr_ref.reliable && r.hr_est.reliable) {
      cell.first += std::abs(r.hr_est.hr_bpm - r.hr_ref.hr_bpm);
      ++cell.second;
    }
  }
  for (const auto& [key, subjects] : acc) {
    std::vector<SubjectValue> vals;
    for (const auto& [sid, sum_n] : subjects)
      if (sum_n.second > 0) vals.push_back({sid, sum_n.first / static_cast<double>(sum_n.second)});
    if (vals.empty())
      out.warnings.push_back("group " + key + " has no evaluable segments; omitted");
    else
      out.groups[key] = std::move(vals);
  }
  return out;
}

/// Per subject and group, the mean segment SNR.
inline GroupedValues group_snr(const std::vector<SegmentEval>& rows, Grouping grouping) {
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  for (const auto& r : rows) {
    const auto key = group_key(r, grouping);
    if (!key) continue;
    auto& cell = acc[*key][r.subject_id];
    cell.first += r.snr_db;
    ++cell.second;
  }
  GroupedValues out;
  out.grouping = grouping;
  for (const auto& [key, subjects] : acc)
    for (const auto& [sid, sum_n] : subjects) out.groups[key].push_back({sid, sum_n.first / static_cast<double>(sum_n.second)});
  return out;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

enum class Alternative { a_less, b_less };

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;      // rank sum of positive differences a - b
  std::size_t n = 0;        // pairs after dropping zero differences
  bool exact = false;
  std::string stars;
};

inline std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "ns";
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline constexpr std::size_t wilcoxon_exact_max_n = 20;

/// Matched-pairs signed-rank test on d = a - b. a_less tests H1: a tends to be smaller
/// than b; b_less tests the reverse. Exact null distribution for n <= 20 (counting all
/// 2^n sign assignments over the mid-ranks); otherwise normal approximation with tie and
/// continuity corrections.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, Alternative alt) {
  require(a.size() == b.size(), ErrorCode::shape, "paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  require(!d.empty(), ErrorCode::undefined_test, "all pairs tie");
  const std::size_t n = d.size();

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Doubled mid-ranks keep tied ranks integral.
  std::vector<std::int64_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const auto r2 = static_cast<std::int64_t>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  std::int64_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0.0) w2 += rank2[i];

  WilcoxonResult res;
  res.n = n;
  res.w_plus = static_cast<double>(w2) / 2.0;
  if (n <= wilcoxon_exact_max_n) {
    // counts[s] = number of sign assignments with doubled positive rank sum s
    const std::int64_t total2 = std::accumulate(rank2.begin(), rank2.end(), std::int64_t{0});
    std::vector<double> counts(static_cast<std::size_t>(total2 + 1), 0.0);
    counts[0] = 1.0;
    std::int64_t reach = 0;
    for (std::int64_t r : rank2) {
      for (std::int64_t s = reach; s >= 0; --s)
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double tail = 0.0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      const bool in_tail = alt == Alternative::a_less ? s <= w2 : s >= w2;
      if (in_tail) tail += counts[static_cast<std::size_t>(s)];
    }
    res.p_value = tail / all;
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    require(var > 0.0, ErrorCode::undefined_test, "degenerate rank variance");
    const double sd = std::sqrt(var);
    res.p_value = alt == Alternative::a_less ? normal_cdf((res.w_plus - mu + 0.5) / sd)
                                             : 1.0 - normal_cdf((res.w_plus - mu - 0.5) / sd);
    res.p_value = std::clamp(res.p_value, 0.0, 1.0);
  }
  res.stars = significance_stars(res.p_value);
  return res;
}

// ---------------------------------------------------------------------------
// Bland-Altman

struct BlandAltman {
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> means;  // (ref + est) / 2 per pair
  std::vector<double> diffs;  // ref - est per pair
};

/// diff = ref - est, mean = (ref + est)/2, limits = mean diff -/+ 1.96 sample sd, and an
/// ordinary least-squares line of diff on mean.
inline BlandAltman bland_altman(std::span<const double> ref, std::span<const double> est) {
  require(ref.size() == est.size(), ErrorCode::shape, "paired series differ in length");
  require(ref.size() >= 3, ErrorCode::insufficient_data, "Bland-Altman needs at least 3 pairs");
  BlandAltman ba;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ba.means.push_back(0.5 * (ref[i] + est[i]));
    ba.diffs.push_back(ref[i] - est[i]);
  }
  const auto ds = mean_std(ba.diffs);
  ba.mean_diff = ds.mean;
  ba.sd_diff = ds.std;
  ba.loa_low = ds.mean - 1.96 * ds.std;
  ba.loa_high = ds.mean + 1.96 * ds.std;
  const auto ms = mean_std(ba.means);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ba.means.size(); ++i) {
    sxy += (ba.means[i] - ms.mean) * (ba.diffs[i] - ds.mean);
    sxx += (ba.means[i] - ms.mean) * (ba.means[i] - ms.mean);
  }
  ba.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  ba.intercept = ds.mean - ba.slope * ms.mean;
  return ba;
}

/// Pairs windows reliable on both sides, then applies bland_altman.
inline BlandAltman bland_altman(const HrSeries& ref, const HrSeries& est) {
  std::vector<double> r, e;
  for (const auto& a : ref.windows)
    for (const auto& b : est.windows)
      if (std::abs(a.start_s - b.start_s) <= 1e-9 && a.reliable && b.reliable) {
        r.push_back(a.hr_bpm);
        e.push_back(b.hr_bpm);
      }
  return bland_altman(r, e);
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_EVALKIT_HPP
