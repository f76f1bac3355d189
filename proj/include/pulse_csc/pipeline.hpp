#ifndef PULSE_CSC_PIPELINE_HPP
#define PULSE_CSC_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pulse_csc/error.hpp"
#include "pulse_csc/evalkit.hpp"
#include "pulse_csc/parallel.hpp"
#include "pulse_csc/records.hpp"
#include "pulse_csc/signal.hpp"
#include "pulse_csc/training.hpp"
#include "pulse_csc/unfolded.hpp"

namespace pulse_csc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line.
//
//   subject_id        string, required
//   fs                number, required, identical across the file
//   samples           array, required; the clean (or only) signal
//   samples_noisy     array, optional; corrupted input paired with `samples`
//   samples_denoised  array, optional; written by `denoise`
//   artifact          object {kind, amplitude, spectral_slope, duration_s, start_s}, optional
//   activity          string, optional
//   ground_truth_hr   number, optional

struct DatasetRow {
  SegmentRecord record;  // record.noisy is empty when the file has no samples_noisy
  std::optional<std::vector<double>> denoised;

  [[nodiscard]] bool has_noisy() const { return !record.noisy.samples.empty(); }
};

inline json artifact_to_json(const ArtifactSpec& a) {
  return json{{"kind", std::string(to_string(a.kind))},
              {"amplitude", a.amplitude},
              {"spectral_slope", a.spectral_slope},
              {"duration_s", a.duration_s},
              {"start_s", a.start_s}};
}

inline json row_to_json(const DatasetRow& row) {
  const auto& r = row.record;
  json j;
  j["subject_id"] = r.subject_id;
  j["fs"] = r.clean.fs;
  j["samples"] = r.clean.samples;
  if (row.has_noisy()) j["samples_noisy"] = r.noisy.samples;
  if (row.denoised) j["samples_denoised"] = *row.denoised;
  if (r.artifact) j["artifact"] = artifact_to_json(*r.artifact);
  if (r.activity) j["activity"] = *r.activity;
  if (r.ground_truth_hr) j["ground_truth_hr"] = *r.ground_truth_hr;
  return j;
}

namespace detail {

inline std::vector<double> number_array(const json& j, const char* key) {
  require(j.is_array(), ErrorCode::schema, std::string(key) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    require(v.is_number(), ErrorCode::schema, std::string(key) + " must hold numbers");
    const double d = v.get<double>();
    require(std::isfinite(d), ErrorCode::schema, std::string(key) + " holds a non-finite value");
    out.push_back(d);
  }
  return out;
}

}  // namespace detail

inline DatasetRow row_from_json(const json& j) {
  require(j.is_object(), ErrorCode::schema, "record is not an object");
  require(j.contains("subject_id") && j["subject_id"].is_string(), ErrorCode::schema, "record needs string subject_id");
  require(j.contains("fs") && j["fs"].is_number() && j["fs"].get<double>() > 0.0, ErrorCode::schema,
          "record needs positive fs");
  require(j.contains("samples"), ErrorCode::schema, "record needs samples");
  DatasetRow row;
  auto& r = row.record;
  r.subject_id = j["subject_id"].get<std::string>();
  const double fs = j["fs"].get<double>();
  r.clean = Signal(detail::number_array(j["samples"], "samples"), fs);
  r.noisy.fs = fs;
  if (j.contains("samples_noisy")) {
    r.noisy.samples = detail::number_array(j["samples_noisy"], "samples_noisy");
    require(r.noisy.size() == r.clean.size(), ErrorCode::schema, "samples_noisy length differs from samples");
  }
  if (j.contains("samples_denoised")) {
    row.denoised = detail::number_array(j["samples_denoised"], "samples_denoised");
    require(row.denoised->size() == r.clean.size(), ErrorCode::schema, "samples_denoised length differs from samples");
  }
  if (j.contains("artifact")) {
    const auto& a = j["artifact"];
    require(a.is_object(), ErrorCode::schema, "artifact must be an object");
    ArtifactSpec spec;
    try {
      spec.kind = artifact_kind_from_string(a.at("kind").get<std::string>());
      spec.amplitude = a.at("amplitude").get<double>();
      spec.spectral_slope = a.at("spectral_slope").get<double>();
      spec.duration_s = a.at("duration_s").get<double>();
      spec.start_s = a.at("start_s").get<double>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::schema, std::string("artifact: ") + e.what());
    }
    r.artifact = spec;
  }
  if (j.contains("activity")) {
    require(j["activity"].is_string(), ErrorCode::schema, "activity must be a string");
    r.activity = j["activity"].get<std::string>();
  }
  if (j.contains("ground_truth_hr")) {
    require(j["ground_truth_hr"].is_number(), ErrorCode::schema, "ground_truth_hr must be a number");
    r.ground_truth_hr = j["ground_truth_hr"].get<double>();
  }
  return row;
}

inline std::vector<DatasetRow> parse_dataset(std::istream& in) {
  std::vector<DatasetRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::schema, "line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      rows.push_back(row_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
    require(rows.front().record.clean.fs == rows.back().record.clean.fs, ErrorCode::schema,
            "line " + std::to_string(line_no) + ": fs differs from the first record");
  }
  return rows;
}

inline std::vector<DatasetRow> read_dataset(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open dataset " + path);
  return parse_dataset(f);
}

inline void write_dataset(const std::vector<DatasetRow>& rows, std::ostream& out) {
  for (const auto& r : rows) out << row_to_json(r).dump() << '\n';
}

inline void write_dataset(const std::vector<DatasetRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), ErrorCode::io, "cannot open " + path + " for writing");
  write_dataset(rows, f);
  require(f.good(), ErrorCode::io, "write failed for " + path);
}

inline std::vector<DatasetRow> rows_from_records(const std::vector<SegmentRecord>& recs) {
  std::vector<DatasetRow> rows;
  rows.reserve(recs.size());
  for (const auto& r : recs) rows.push_back(DatasetRow{r, std::nullopt});
  return rows;
}

/// FNV-1a 64 over a file's bytes, for manifests.
inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(f), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Sliding-window inference

struct StreamOptions {
  double window_s = 10.0;
  double step_s = 2.5;
  std::size_t threads = 1;
};

struct StreamResult {
  Signal signal;
  bool padded = false;
  std::size_t windows = 0;
};

/// Window start indices: multiples of the step while the window fits, plus one window
/// aligned to the end when the last regular window stops short of it.
inline std::vector<std::size_t> window_starts(std::size_t n, std::size_t window, std::size_t step) {
  std::vector<std::size_t> starts;
  if (n < window) return starts;
  for (std::size_t s = 0; s + window <= n; s += step) starts.push_back(s);
  if (starts.back() + window < n) starts.push_back(n - window);
  return starts;
}

/// Each window is normalized to [0,1], denoised, mapped back through the inverse of its
/// normalization, and the overlapping reconstructions are averaged per sample. Inputs
/// shorter than one window are reflect-padded and the result cropped.
inline StreamResult denoise_stream(const UnfoldedModel& model, const Signal& x, const StreamOptions& opt = {}) {
  validate(x);
  require(opt.window_s > 0.0 && opt.step_s > 0.0, ErrorCode::domain, "window and step must be positive");
  const auto window = static_cast<std::size_t>(std::llround(opt.window_s * x.fs));
  const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.step_s * x.fs)));
  require(window >= model.L, ErrorCode::input_too_short, "window shorter than the kernel length");
  require(!x.samples.empty(), ErrorCode::input_too_short, "empty signal");

  StreamResult result;
  std::vector<double> work = x.samples;
  if (work.size() < window) {
    result.padded = true;
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    work.resize(window);
    for (std::size_t i = x.size(); i < window; ++i) {
      // reflect about the last sample: ..., x[n-2], x[n-1], x[n-2], ...
      std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i);
      const std::ptrdiff_t period = n > 1 ? 2 * (n - 1) : 1;
      k %= period;
      if (k >= n) k = period - k;
      work[i] = x.samples[static_cast<std::size_t>(k)];
    }
  }

  const auto starts = window_starts(work.size(), window, step);
  std::vector<std::vector<double>> recon(starts.size());
  parallel_for(starts.size(), opt.threads, [&](std::size_t w) {
    Signal seg(std::vector<double>(work.begin() + static_cast<std::ptrdiff_t>(starts[w]),
                                   work.begin() + static_cast<std::ptrdiff_t>(starts[w] + window)),
               x.fs);
    const auto norm = normalize_01(seg);
    auto out = forward(model, norm.signal.samples).output;
    for (double& v : out) v = norm.invert(v);
    recon[w] = std::move(out);
  });

  std::vector<double> sum(work.size(), 0.0);
  std::vector<std::size_t> count(work.size(), 0);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    for (std::size_t i = 0; i < window; ++i) {
      sum[starts[w] + i] += recon[w][i];
      ++count[starts[w] + i];
    }
  }
  result.signal.fs = x.fs;
  result.signal.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) result.signal.samples[i] = sum[i] / static_cast<double>(count[i]);
  result.windows = starts.size();
  return result;
}

/// Coverage count per sample for the sliding-window layout.
inline std::vector<std::size_t> window_coverage(std::size_t n, std::size_t window, std::size_t step) {
  std::vector<std::size_t> count(n, 0);
  for (std::size_t s : window_starts(n, window, step))
    for (std::size_t i = s; i < s + window; ++i) ++count[i];
  return count;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

struct StageMetrics {
  MeanStd snr_db;      // over segments
  MeanStd mae_hr_bpm;  // over subjects (per-subject mean over segments)
  std::size_t hr_excluded = 0;
};

struct GroupComparison {
  std::string metric;    // "snr_db" | "mae_hr"
  Grouping grouping;
  std::string group;
  std::vector<double> before;  // one value per subject, subjects aligned
  std::vector<double> after;
  std::optional<WilcoxonResult> improvement;  // after better than before
};

struct EvalSummary {
  std::size_t segments = 0;
  std::size_t subjects = 0;
  StageMetrics before;
  StageMetrics after;
  std::vector<SegmentEval> rows_before;
  std::vector<SegmentEval> rows_after;
  std::vector<GroupComparison> groups;
  std::optional<BlandAltman> bland_altman_after;
  std::optional<WilcoxonResult> snr_test;
  std::optional<WilcoxonResult> mae_test;
};

namespace detail {

inline StageMetrics stage_metrics(const std::vector<SegmentEval>& rows, bool with_snr) {
  StageMetrics m;
  std::vector<double> snrs;
  std::map<std::string, std::pair<double, std::size_t>> per_subject;
  for (const auto& r : rows) {
    if (with_snr) snrs.push_back(r.snr_db);
    auto& cell = per_subject[r.subject_id];
    if (r.hr_ref.reliable && r.hr_est.reliable) {
      cell.first += std::abs(r.hr_est.hr_bpm - r.hr_ref.hr_bpm);
      ++cell.second;
    } else {
      ++m.hr_excluded;
    }
  }
  m.snr_db = mean_std(snrs);
  std::vector<double> maes;
  for (const auto& [sid, c] : per_subject)
    if (c.second > 0) maes.push_back(c.first / static_cast<double>(c.second));
  m.mae_hr_bpm = mean_std(maes);
  return m;
}

inline std::map<std::string, double> per_subject_mae(const std::vector<SegmentEval>& rows) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows)
    if (r.hr_ref.reliable && r.hr_est.reliable) {
      acc[r.subject_id].first += std::abs(r.hr_est.hr_bpm - r.hr_ref.hr_bpm);
      ++acc[r.subject_id].second;
    }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

inline std::optional<WilcoxonResult> try_wilcoxon(const std::vector<double>& a, const std::vector<double>& b,
                                                  Alternative alt) {
  try {
    return wilcoxon_signed_rank(a, b, alt);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Evaluates rows carrying clean, noisy and denoised signals: SNR and single-segment HR
/// error before and after denoising, grouped comparisons and Bland-Altman statistics.
inline EvalSummary evaluate_rows(const std::vector<DatasetRow>& rows, const PeakOptions& peaks = {},
                                 std::size_t threads = 1) {
  require(!rows.empty(), ErrorCode::empty_evaluation, "no records to evaluate");
  EvalSummary s;
  s.segments = rows.size();
  s.rows_before.resize(rows.size());
  s.rows_after.resize(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    const auto& row = rows[i];
    require(row.has_noisy(), ErrorCode::schema, "evaluation needs samples_noisy in every record");
    require(row.denoised.has_value(), ErrorCode::schema, "evaluation needs samples_denoised in every record");
    const auto& rec = row.record;
    const Signal denoised(*row.denoised, rec.clean.fs);
    SegmentEval base;
    base.subject_id = rec.subject_id;
    if (rec.artifact) {
      base.kind = rec.artifact->kind;
      base.duration_s = rec.artifact->duration_s;
    }
    base.activity = rec.activity;
    const auto ref = segment_hr(rec.clean, peaks);
    base.hr_ref = ref.windows.front();

    SegmentEval before = base, after = base;
    before.hr_est = segment_hr(rec.noisy, peaks).windows.front();
    before.snr_db = snr(rec.clean.samples, rec.noisy.samples).db;
    after.hr_est = segment_hr(denoised, peaks).windows.front();
    after.snr_db = snr(rec.clean.samples, denoised.samples).db;
    s.rows_before[i] = before;
    s.rows_after[i] = after;
  });

  s.before = detail::stage_metrics(s.rows_before, true);
  s.after = detail::stage_metrics(s.rows_after, true);
  {
    std::map<std::string, int> ids;
    for (const auto& r : rows) ids[r.record.subject_id] = 0;
    s.subjects = ids.size();
  }

  // Overall paired tests over subjects.
  {
    std::map<std::string, std::pair<double, std::size_t>> sb, sa;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sb[s.rows_before[i].subject_id].first += s.rows_before[i].snr_db;
      ++sb[s.rows_before[i].subject_id].second;
      sa[s.rows_after[i].subject_id].first += s.rows_after[i].snr_db;
      ++sa[s.rows_after[i].subject_id].second;
    }
    std::vector<double> b, a;
    for (const auto& [k, v] : sb) {
      b.push_back(v.first / static_cast<double>(v.second));
      a.push_back(sa[k].first / static_cast<double>(sa[k].second));
    }
    s.snr_test = detail::try_wilcoxon(b, a, Alternative::a_less);
    const auto mb = detail::per_subject_mae(s.rows_before);
    const auto ma = detail::per_subject_mae(s.rows_after);
    std::vector<double> xb, xa;
    for (const auto& [k, v] : mb)
      if (ma.count(k)) {
        xb.push_back(v);
        xa.push_back(ma.at(k));
      }
    if (!xb.empty()) s.mae_test = detail::try_wilcoxon(xa, xb, Alternative::a_less);
  }

  for (Grouping g : {Grouping::artifact_kind, Grouping::duration_bin, Grouping::activity}) {
    const auto snr_b = group_snr(s.rows_before, g);
    const auto snr_a = group_snr(s.rows_after, g);
    for (const auto& [key, vals] : snr_b.groups) {
      GroupComparison c{"snr_db", g, key, {}, {}, std::nullopt};
      const auto& after_vals = snr_a.groups.at(key);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        c.before.push_back(vals[i].value);
        c.after.push_back(after_vals[i].value);
      }
      c.improvement = detail::try_wilcoxon(c.before, c.after, Alternative::a_less);
      s.groups.push_back(std::move(c));
    }
    const auto mae_b = group_mae(s.rows_before, g);
    const auto mae_a = group_mae(s.rows_after, g);
    for (const auto& [key, vals] : mae_b.groups) {
      if (!mae_a.groups.count(key)) continue;
      std::map<std::string, double> after_by_subject;
      for (const auto& v : mae_a.groups.at(key)) after_by_subject[v.subject_id] = v.value;
      GroupComparison c{"mae_hr", g, key, {}, {}, std::nullopt};
      for (const auto& v : vals) {
        if (!after_by_subject.count(v.subject_id)) continue;
        c.before.push_back(v.value);
        c.after.push_back(after_by_subject[v.subject_id]);
      }
      c.improvement = detail::try_wilcoxon(c.after, c.before, Alternative::a_less);
      s.groups.push_back(std::move(c));
    }
  }

  std::vector<double> ref_hr, est_hr;
  for (const auto& r : s.rows_after)
    if (r.hr_ref.reliable && r.hr_est.reliable) {
      ref_hr.push_back(r.hr_ref.hr_bpm);
      est_hr.push_back(r.hr_est.hr_bpm);
    }
  if (ref_hr.size() >= 3) s.bland_altman_after = bland_altman(ref_hr, est_hr);
  return s;
}

inline json wilcoxon_json(const std::optional<WilcoxonResult>& w) {
  if (!w) return nullptr;
  return json{{"p_value", w->p_value}, {"w_plus", w->w_plus}, {"n", w->n}, {"exact", w->exact}, {"stars", w->stars}};
}

inline json summary_to_json(const EvalSummary& s) {
  const auto stage = [](const StageMetrics& m) {
    return json{{"snr_db", {{"mean", m.snr_db.mean}, {"std", m.snr_db.std}, {"n", m.snr_db.n}}},
                {"mae_hr_bpm", {{"mean", m.mae_hr_bpm.mean}, {"std", m.mae_hr_bpm.std}, {"n", m.mae_hr_bpm.n}}},
                {"hr_excluded_segments", m.hr_excluded}};
  };
  json j;
  j["segments"] = s.segments;
  j["subjects"] = s.subjects;
  j["before"] = stage(s.before);
  j["after"] = stage(s.after);
  j["tests"] = {{"snr_improved", wilcoxon_json(s.snr_test)}, {"mae_reduced", wilcoxon_json(s.mae_test)}};
  json groups = json::array();
  for (const auto& g : s.groups) {
    groups.push_back({{"metric", g.metric},
                      {"grouping", to_string(g.grouping)},
                      {"group", g.group},
                      {"subjects", g.before.size()},
                      {"before_median", g.before.empty() ? 0.0 : percentile(g.before, 50.0)},
                      {"after_median", g.after.empty() ? 0.0 : percentile(g.after, 50.0)},
                      {"improvement", wilcoxon_json(g.improvement)}});
  }
  j["groups"] = groups;
  if (s.bland_altman_after) {
    const auto& b = *s.bland_altman_after;
    j["bland_altman"] = {{"mean_diff", b.mean_diff}, {"loa_low", b.loa_low},   {"loa_high", b.loa_high},
                         {"slope", b.slope},         {"intercept", b.intercept}, {"pairs", b.diffs.size()}};
  } else {
    j["bland_altman"] = nullptr;
  }
  return j;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_PIPELINE_HPP
