#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pulse_csc/artifact.hpp"
#include "pulse_csc/evalkit.hpp"

using namespace pulse_csc;

namespace {

// One-sided p by listing every sign assignment over the mid-ranks.
double enumerate_wilcoxon(const std::vector<double>& a, const std::vector<double>& b, Alternative alt) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) less += 1.0;
      if (std::abs(d[j]) == std::abs(d[i])) equal += 1.0;
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w += rank[i];
  std::size_t hits = 0;
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1ULL) s += rank[i];
    if (alt == Alternative::a_less ? s <= w + 1e-9 : s >= w - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n));
}

HrSeries series(std::initializer_list<double> hrs) {
  HrSeries s;
  s.window_s = 8;
  s.step_s = 2;
  double t = 0.0;
  for (double h : hrs) {
    s.windows.push_back({t, h, plausible_hr(h)});
    t += 2.0;
  }
  return s;
}

}  // namespace

TEST(Snr, Examples) {
  const std::vector<double> y{1.0, -2.0, 3.0, 0.5};
  std::vector<double> twice(y), noisy(y);
  for (double& v : twice) v *= 2.0;
  EXPECT_NEAR(snr(y, twice).db, 0.0, 1e-12);
  double energy = 0.0;
  for (double v : y) energy += v * v;
  noisy[0] += std::sqrt(energy / 100.0);
  EXPECT_NEAR(snr(y, noisy).db, 20.0, 1e-12);
  const auto same = snr(y, y);
  EXPECT_EQ(same.db, snr_cap_db);
  EXPECT_TRUE(same.capped);
  try {
    snr(std::vector<double>(4, 0.0), y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::undefined_reference);
  }
  EXPECT_THROW(snr(y, std::vector<double>(3, 0.0)), Error);
}

TEST(Snr, MatchesDirectFormulaAndScaleInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> y(100), yh(100);
    double s = 0.0, e = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      y[i] = g(rng);
      yh[i] = y[i] + 0.3 * g(rng);
      s += y[i] * y[i];
      e += (yh[i] - y[i]) * (yh[i] - y[i]);
    }
    EXPECT_NEAR(snr(y, yh).db, 10.0 * std::log10(s / e), 1e-12);
    std::vector<double> ys(y), yhs(yh);
    for (std::size_t i = 0; i < 100; ++i) {
      ys[i] *= 3.7;
      yhs[i] *= 3.7;
    }
    EXPECT_NEAR(snr(ys, yhs).db, snr(y, yh).db, 1e-12);
  }
}

TEST(Percentile, NumpyLinear) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 25), 1.75);
  EXPECT_DOUBLE_EQ(percentile({5}, 90), 5.0);
  const auto b = box_stats({1, 2, 3, 4, 100});
  EXPECT_DOUBLE_EQ(b.median, 3.0);
  EXPECT_DOUBLE_EQ(b.whisker_high, 4.0);
  EXPECT_DOUBLE_EQ(b.max, 100.0);
}

TEST(Peaks, CleanSyntheticPulseAtSixtyBpm) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto ppg = synth_clean_ppg(10.0, 125.0, 60.0, seed);
    const auto x = normalize_01(ppg.signal).signal;
    const auto peaks = detect_peaks(x);
    EXPECT_GE(peaks.size(), 9u);
    EXPECT_LE(peaks.size(), 11u);
    for (std::size_t p : peaks) {
      double nearest = 1e9;
      for (double b : ppg.beat_times) nearest = std::min(nearest, std::abs(static_cast<double>(p) / 125.0 - b));
      EXPECT_LE(nearest, 0.040);
    }
    double mean_ibi = 0.0;
    for (std::size_t i = 1; i < peaks.size(); ++i) mean_ibi += static_cast<double>(peaks[i] - peaks[i - 1]) / 125.0;
    mean_ibi /= static_cast<double>(peaks.size() - 1);
    EXPECT_NEAR(mean_ibi, 1.0, 0.03);
  }
}

TEST(Peaks, ConstantAndSeparationRule) {
  EXPECT_TRUE(detect_peaks(Signal(std::vector<double>(200, 0.4), 125.0)).empty());

  Signal two(std::vector<double>(250, 0.0), 125.0);
  for (std::size_t i = 0; i < 250; ++i) {
    const double t = static_cast<double>(i) / 125.0;
    two.samples[i] = std::exp(-0.5 * std::pow((t - 0.9) / 0.03, 2)) + 0.9 * std::exp(-0.5 * std::pow((t - 1.1) / 0.03, 2));
  }
  const auto p = detect_peaks(two);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_NEAR(static_cast<double>(p[0]) / 125.0, 0.9, 0.01);
}

TEST(Peaks, IndicesIncreaseWithMinimumSpacing) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Signal x(std::vector<double>(1250), 125.0);
    for (double& v : x.samples) v = g(rng);
    const auto p = detect_peaks(x);
    for (std::size_t i = 1; i < p.size(); ++i) EXPECT_GE(static_cast<double>(p[i] - p[i - 1]), 0.3 * 125.0);
  }
}

TEST(HeartRate, FromPeaks) {
  const auto s = hr_from_peaks({0, 125, 250, 375, 500, 625, 750, 875, 1000, 1125}, 125.0, 1250, 8.0, 2.0);
  ASSERT_EQ(s.windows.size(), 2u);
  for (const auto& w : s.windows) {
    EXPECT_TRUE(w.reliable);
    EXPECT_NEAR(w.hr_bpm, 60.0, 1e-12);
  }
  const auto half = hr_single_window({0, 50, 100, 150, 200}, 100.0, 1000);
  EXPECT_NEAR(half.windows.at(0).hr_bpm, 120.0, 1e-12);
  // intervals 0.9, 1.0, 1.1 s
  const auto mixed = hr_single_window({0, 90, 190, 300}, 100.0, 1000);
  EXPECT_NEAR(mixed.windows.at(0).hr_bpm, 60.0, 1e-12);
  const auto sparse = hr_single_window({10}, 100.0, 1000);
  EXPECT_FALSE(sparse.windows.at(0).reliable);
}

TEST(MaeHr, Examples) {
  EXPECT_DOUBLE_EQ(mae_hr(series({60, 62}), series({60, 62})).mae, 0.0);
  EXPECT_DOUBLE_EQ(mae_hr(series({60, 62}), series({58, 64})).mae, 2.0);
  const auto r = mae_hr(series({60, 0, 70}), series({58, 64, 71}));
  EXPECT_DOUBLE_EQ(r.mae, 1.5);
  EXPECT_EQ(r.excluded, 1u);
  try {
    mae_hr(series({0}), series({60}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_evaluation);
  }
}

TEST(MaeHr, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(40, 180);
  for (int trial = 0; trial < 20; ++trial) {
    HrSeries a, b;
    double sum = 0.0;
    for (int w = 0; w < 7; ++w) {
      const double x = u(rng), y = u(rng);
      a.windows.push_back({2.0 * w, x, true});
      b.windows.push_back({2.0 * w, y, true});
      sum += std::abs(x - y);
    }
    EXPECT_NEAR(mae_hr(a, b).mae, sum / 7.0, 1e-12);
    EXPECT_NEAR(mae_hr(a, b).mae, mae_hr(b, a).mae, 1e-12);
  }
}

TEST(Grouping, DurationBins) {
  EXPECT_EQ(duration_bin(1.5), 0);
  EXPECT_EQ(duration_bin(2.0), 0);
  EXPECT_EQ(duration_bin(3.0), 1);
  EXPECT_EQ(duration_bin(10.0), 4);
  EXPECT_EQ(duration_bin(0.0), -1);
  EXPECT_EQ(duration_bin_label(1), "(2,4]");

  std::vector<SegmentEval> rows;
  for (double d : {1.5, 3.0}) {
    SegmentEval r;
    r.subject_id = "S1";
    r.kind = ArtifactKind::hand_motion;
    r.duration_s = d;
    r.hr_ref = {0, 60, true};
    r.hr_est = {0, 63, true};
    rows.push_back(r);
  }
  const auto by_bin = group_mae(rows, Grouping::duration_bin);
  EXPECT_EQ(by_bin.groups.size(), 2u);
  EXPECT_TRUE(by_bin.groups.count("(0,2]"));
  EXPECT_TRUE(by_bin.groups.count("(2,4]"));
  const auto by_kind = group_mae(rows, Grouping::artifact_kind);
  ASSERT_EQ(by_kind.groups.size(), 1u);
  EXPECT_DOUBLE_EQ(by_kind.groups.at("hand_motion").at(0).value, 3.0);

  rows[0].hr_est.reliable = false;
  rows[1].hr_est.reliable = false;
  const auto empty = group_mae(rows, Grouping::artifact_kind);
  EXPECT_TRUE(empty.groups.empty());
  EXPECT_EQ(empty.warnings.size(), 1u);
  EXPECT_TRUE(group_mae(rows, Grouping::activity).groups.empty());
}

TEST(Wilcoxon, AllPositiveDifferences) {
  const std::vector<double> b{1, 2, 3, 4, 5, 6};
  std::vector<double> a(b);
  for (double& v : a) v += 1.0;
  const auto r = wilcoxon_signed_rank(a, b, Alternative::b_less);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.p_value, 1.0 / 64.0, 1e-15);
  EXPECT_EQ(r.stars, "*");
  EXPECT_NEAR(wilcoxon_signed_rank(b, a, Alternative::a_less).p_value, 1.0 / 64.0, 1e-15);
  EXPECT_NEAR(wilcoxon_signed_rank(a, b, Alternative::a_less).p_value, 1.0, 1e-15);
}

TEST(Wilcoxon, ExactMatchesEnumeration) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> coarse(-3, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 12);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = g(rng);
      // every third case uses coarse values so ties and zero differences occur
      a[i] = trial % 3 == 0 ? b[i] + coarse(rng) : g(rng);
    }
    bool all_tie = true;
    for (std::size_t i = 0; i < n; ++i) all_tie = all_tie && a[i] == b[i];
    if (all_tie) {
      EXPECT_THROW(wilcoxon_signed_rank(a, b, Alternative::a_less), Error);
      continue;
    }
    for (auto alt : {Alternative::a_less, Alternative::b_less}) {
      const auto r = wilcoxon_signed_rank(a, b, alt);
      EXPECT_NEAR(r.p_value, enumerate_wilcoxon(a, b, alt), 1e-12);
      EXPECT_GT(r.p_value, 0.0);
      EXPECT_LE(r.p_value, 1.0);
    }
  }
}

TEST(Wilcoxon, ApproximationCloseToExactAtFifteen) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(15), b(15);
    for (std::size_t i = 0; i < 15; ++i) {
      a[i] = g(rng) + 0.3;
      b[i] = g(rng);
    }
    const double exact = wilcoxon_signed_rank(a, b, Alternative::b_less).p_value;
    // normal approximation by hand (continuous data, so no ties)
    std::vector<double> d;
    for (std::size_t i = 0; i < 15; ++i) d.push_back(a[i] - b[i]);
    std::vector<double> ranks(15);
    for (std::size_t i = 0; i < 15; ++i) {
      double less = 0;
      for (std::size_t j = 0; j < 15; ++j) less += std::abs(d[j]) < std::abs(d[i]) ? 1 : 0;
      ranks[i] = less + 1;
    }
    double w = 0;
    for (std::size_t i = 0; i < 15; ++i)
      if (d[i] > 0) w += ranks[i];
    const double mu = 15.0 * 16.0 / 4.0, sd = std::sqrt(15.0 * 16.0 * 31.0 / 24.0);
    const double approx = 1.0 - normal_cdf((w - mu - 0.5) / sd);
    EXPECT_NEAR(exact, approx, 0.02);
  }
}

TEST(Wilcoxon, LargeSampleUsesApproximation) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::vector<double> a(40), b(40);
  for (std::size_t i = 0; i < 40; ++i) {
    a[i] = g(rng);
    b[i] = a[i] + 1.0 + 0.1 * g(rng);
  }
  const auto r = wilcoxon_signed_rank(a, b, Alternative::a_less);
  EXPECT_FALSE(r.exact);
  EXPECT_LT(r.p_value, 0.001);
  EXPECT_EQ(r.stars, "***");
  EXPECT_EQ(significance_stars(0.2), "ns");
  EXPECT_EQ(significance_stars(0.005), "**");
}

TEST(BlandAltman, WorkedExample) {
  const auto ba = bland_altman(std::vector<double>{60, 70, 80}, std::vector<double>{62, 69, 84});
  EXPECT_NEAR(ba.mean_diff, -1.667, 1e-3);
  EXPECT_NEAR(ba.sd_diff, 2.517, 1e-3);
  EXPECT_NEAR(ba.loa_low, -6.599, 1e-3);
  EXPECT_NEAR(ba.loa_high, 3.266, 1e-3);
  EXPECT_EQ(ba.diffs, (std::vector<double>{-2, 1, -4}));
}

TEST(BlandAltman, IdentityAndOffset) {
  const std::vector<double> ref{60, 75, 90, 110};
  const auto same = bland_altman(ref, ref);
  EXPECT_EQ(same.mean_diff, 0.0);
  EXPECT_EQ(same.loa_low, 0.0);
  EXPECT_EQ(same.loa_high, 0.0);
  EXPECT_EQ(same.slope, 0.0);
  std::vector<double> est(ref);
  for (double& v : est) v += 5.0;
  const auto off = bland_altman(ref, est);
  EXPECT_NEAR(off.mean_diff, -5.0, 1e-12);
  EXPECT_NEAR(off.slope, 0.0, 1e-12);
  try {
    bland_altman(std::vector<double>{1, 2}, std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
}

TEST(BlandAltman, LimitsBracketMean) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(10), e(10);
    for (std::size_t i = 0; i < 10; ++i) {
      r[i] = 80 + 10 * g(rng);
      e[i] = r[i] + 3 * g(rng);
    }
    const auto ba = bland_altman(r, e);
    EXPECT_LE(ba.loa_low, ba.mean_diff);
    EXPECT_LE(ba.mean_diff, ba.loa_high);
  }
  const auto s = bland_altman(series({60, 70, 0, 80}), series({62, 69, 90, 84}));
  EXPECT_NEAR(s.mean_diff, -1.667, 1e-3);
}
