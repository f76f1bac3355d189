#ifndef PULSE_CSC_CLI_HPP
#define PULSE_CSC_CLI_HPP

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pulse_csc/artifact.hpp"
#include "pulse_csc/checkpoint.hpp"
#include "pulse_csc/error.hpp"
#include "pulse_csc/evalkit.hpp"
#include "pulse_csc/parallel.hpp"
#include "pulse_csc/pipeline.hpp"
#include "pulse_csc/training.hpp"

namespace pulse_csc::cli {

using json = nlohmann::json;

inline constexpr const char* tool_version = "0.1.0";
inline constexpr int manifest_version = 1;

enum ExitCode : int {
  exit_ok = 0,
  exit_other = 1,
  exit_usage = 2,
  exit_schema = 3,
  exit_checkpoint = 4,
  exit_fs_mismatch = 5,
  exit_io = 6,
  exit_diverged = 7,
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::configuration:
    case ErrorCode::invalid_spec:
    case ErrorCode::unsupported_ratio:
    case ErrorCode::design_failure: return exit_usage;
    case ErrorCode::schema: return exit_schema;
    case ErrorCode::checkpoint: return exit_checkpoint;
    case ErrorCode::fs_mismatch: return exit_fs_mismatch;
    case ErrorCode::io: return exit_io;
    case ErrorCode::diverged_training: return exit_diverged;
    default: return exit_other;
  }
}

// ---------------------------------------------------------------------------
// Configuration

inline json artifact_defaults() {
  const ArtifactParamTable t;
  json j;
  for (auto k : all_artifact_kinds) {
    const auto& d = t[k];
    j[std::string(to_string(k))] = {
        {"amp_mu", d.amp_mu}, {"amp_sigma", d.amp_sigma}, {"slope_mu", d.slope_mu}, {"slope_sigma", d.slope_sigma}};
  }
  return j;
}

/// Every accepted key with its built-in value. Model sizes follow the full-scale setup.
inline json default_config() {
  const TrainConfig tc;
  const DatasetOptions dopt;
  const BandPassSpec band;
  const StreamOptions so;
  const PeakOptions po;
  const SplitSpec split;
  return json{
      {"seed", 0},
      {"threads", 0},  // 0: PULSE_CSC_THREADS or 1
      {"zero_phase", false},
      {"data", ""},
      {"checkpoint", ""},
      {"out", ""},
      {"band", {{"order", band.order}, {"low_hz", band.low_hz}, {"high_hz", band.high_hz}, {"stop_atten_db", band.stop_atten_db}}},
      {"synth",
       {{"subjects", 160},
        {"segments_per_subject", 10},
        {"fs", dopt.fs},
        {"segment_s", dopt.segment_s},
        {"preroll_s", dopt.preroll_s},
        {"hr_min", dopt.hr_min},
        {"hr_max", dopt.hr_max},
        {"hr_jitter", dopt.hr_jitter},
        {"artifacts", artifact_defaults()}}},
      {"model",
       {{"M", tc.M},
        {"L", tc.L},
        {"K", tc.K},
        {"lambda", tc.lambda},
        {"threshold", "exact"},
        {"beta", tc.thresholding.beta},
        {"init", "random"}}},
      {"train",
       {{"lr", tc.lr},
        {"batch_size", tc.batch_size},
        {"patience", tc.patience},
        {"max_epochs", tc.max_epochs},
        {"l2_w", tc.l2_w},
        {"beta1", tc.beta1},
        {"beta2", tc.beta2},
        {"eps", tc.eps},
        {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}}},
      {"denoise", {{"window_s", so.window_s}, {"step_s", so.step_s}}},
      {"eval", {{"prominence_fraction", po.prominence_fraction}, {"min_separation_s", po.min_separation_s}}},
  };
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

inline void check_keys(const json& given, const json& defaults, const std::string& where) {
  require(given.is_object(), ErrorCode::configuration, where + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    require(defaults.contains(it.key()), ErrorCode::configuration, "unknown config key '" + path + "'");
    const auto& d = defaults[it.key()];
    require(same_kind(it.value(), d), ErrorCode::configuration, "config key '" + path + "' has the wrong type");
    if (d.is_object()) check_keys(it.value(), d, path);
  }
}

template <typename T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

inline std::size_t get_count(const json& j, const char* key) {
  const auto& v = j.at(key);
  require(v.is_number_integer() || (v.is_number() && v.get<double>() == std::floor(v.get<double>())),
          ErrorCode::configuration, std::string(key) + " must be an integer");
  const double d = v.get<double>();
  require(d >= 0.0, ErrorCode::configuration, std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(d);
}

}  // namespace detail

/// Reads a JSON config file. A run manifest is accepted too; its recorded config is used.
inline json load_config_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::configuration, "cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::configuration, "config " + path + ": " + e.what());
  }
  if (j.is_object() && j.contains("manifest_version") && j.contains("config")) j = j["config"];
  return j;
}

/// defaults <- config file <- explicit overrides
inline json resolve_config(const json& file_config, const json& overrides) {
  json cfg = default_config();
  if (!file_config.is_null()) {
    detail::check_keys(file_config, cfg, "");
    cfg.merge_patch(file_config);
  }
  if (!overrides.is_null()) {
    detail::check_keys(overrides, cfg, "");
    cfg.merge_patch(overrides);
  }
  return cfg;
}

inline std::size_t resolve_threads(const json& cfg) {
  const auto t = detail::get_count(cfg, "threads");
  return t > 0 ? t : threads_from_env();
}

inline Thresholding thresholding_from(const json& model) {
  Thresholding th;
  const auto kind = detail::get<std::string>(model, "threshold");
  require(kind == "exact" || kind == "smooth", ErrorCode::configuration, "model.threshold must be exact or smooth");
  th.kind = kind == "exact" ? ThresholdKind::exact : ThresholdKind::smooth;
  th.beta = detail::get<double>(model, "beta");
  require(th.beta > 0.0, ErrorCode::configuration, "model.beta must be positive");
  return th;
}

inline TrainConfig train_config_from(const json& cfg) {
  const auto& m = cfg["model"];
  const auto& t = cfg["train"];
  TrainConfig tc;
  tc.M = detail::get_count(m, "M");
  tc.L = detail::get_count(m, "L");
  tc.K = detail::get_count(m, "K");
  tc.lambda = detail::get<double>(m, "lambda");
  tc.thresholding = thresholding_from(m);
  const auto init = detail::get<std::string>(m, "init");
  require(init == "random" || init == "ista", ErrorCode::configuration, "model.init must be random or ista");
  tc.init = init == "ista" ? InitKind::ista : InitKind::random;
  tc.lr = detail::get<double>(t, "lr");
  tc.batch_size = detail::get_count(t, "batch_size");
  tc.patience = detail::get_count(t, "patience");
  tc.max_epochs = detail::get_count(t, "max_epochs");
  tc.l2_w = detail::get<double>(t, "l2_w");
  tc.beta1 = detail::get<double>(t, "beta1");
  tc.beta2 = detail::get<double>(t, "beta2");
  tc.eps = detail::get<double>(t, "eps");
  tc.seed = detail::get<std::uint64_t>(cfg, "seed");
  tc.threads = resolve_threads(cfg);
  tc.validate();
  return tc;
}

inline BandPassSpec band_from(const json& cfg) {
  const auto& b = cfg["band"];
  BandPassSpec spec;
  spec.order = static_cast<int>(detail::get_count(b, "order"));
  spec.low_hz = detail::get<double>(b, "low_hz");
  spec.high_hz = detail::get<double>(b, "high_hz");
  spec.stop_atten_db = detail::get<double>(b, "stop_atten_db");
  return spec;
}

inline ArtifactParamTable artifact_table_from(const json& synth) {
  ArtifactParamTable t;
  t.segment_s = detail::get<double>(synth, "segment_s");
  t.max_duration_s = std::min(t.max_duration_s, t.segment_s);
  t.min_duration_s = std::min(t.min_duration_s, t.max_duration_s);
  for (auto k : all_artifact_kinds) {
    const auto& j = synth["artifacts"][std::string(to_string(k))];
    auto& d = t[k];
    d.amp_mu = detail::get<double>(j, "amp_mu");
    d.amp_sigma = detail::get<double>(j, "amp_sigma");
    d.slope_mu = detail::get<double>(j, "slope_mu");
    d.slope_sigma = detail::get<double>(j, "slope_sigma");
  }
  t.validate();
  return t;
}

inline DatasetOptions dataset_options_from(const json& cfg) {
  const auto& s = cfg["synth"];
  DatasetOptions o;
  o.fs = detail::get<double>(s, "fs");
  o.segment_s = detail::get<double>(s, "segment_s");
  o.preroll_s = detail::get<double>(s, "preroll_s");
  o.hr_min = detail::get<double>(s, "hr_min");
  o.hr_max = detail::get<double>(s, "hr_max");
  o.hr_jitter = detail::get<double>(s, "hr_jitter");
  require(o.fs > 0.0 && o.segment_s > 0.0 && o.preroll_s >= 0.0, ErrorCode::configuration,
          "synth fs and segment_s must be positive, preroll_s non-negative");
  require(o.hr_min >= 30.0 && o.hr_max <= 200.0 && o.hr_min <= o.hr_max && o.hr_jitter >= 0.0, ErrorCode::configuration,
          "synth heart-rate range must lie within [30, 200]");
  o.preprocessing.band = band_from(cfg);
  o.preprocessing.zero_phase = detail::get<bool>(cfg, "zero_phase");
  o.threads = resolve_threads(cfg);
  return o;
}

inline StreamOptions stream_options_from(const json& cfg) {
  StreamOptions o;
  o.window_s = detail::get<double>(cfg["denoise"], "window_s");
  o.step_s = detail::get<double>(cfg["denoise"], "step_s");
  require(o.window_s > 0.0 && o.step_s > 0.0, ErrorCode::configuration, "denoise window and step must be positive");
  o.threads = resolve_threads(cfg);
  return o;
}

inline PeakOptions peak_options_from(const json& cfg) {
  PeakOptions p;
  p.prominence_fraction = detail::get<double>(cfg["eval"], "prominence_fraction");
  p.min_separation_s = detail::get<double>(cfg["eval"], "min_separation_s");
  require(p.prominence_fraction >= 0.0 && p.min_separation_s >= 0.0, ErrorCode::configuration,
          "peak options must be non-negative");
  return p;
}

inline SplitSpec split_from(const json& cfg) {
  const auto& s = cfg["train"]["split"];
  SplitSpec spec;
  spec.train = detail::get<double>(s, "train");
  spec.val = detail::get<double>(s, "val");
  spec.test = detail::get<double>(s, "test");
  spec.seed = detail::get<std::uint64_t>(cfg, "seed");
  return spec;
}

// ---------------------------------------------------------------------------
// Outputs

inline std::string path_or_fail(const json& cfg, const char* key, const char* what) {
  auto p = detail::get<std::string>(cfg, key);
  require(!p.empty(), ErrorCode::configuration, std::string(what) + " path missing (--" + key + ")");
  return p;
}

inline std::string strip_slashes(std::string p) {
  while (p.size() > 1 && p.back() == '/') p.pop_back();
  return p;
}

inline std::string manifest_path(const std::string& out) { return strip_slashes(out) + ".manifest.json"; }
inline std::string history_path(const std::string& out) { return out + ".history.csv"; }
inline std::string test_split_path(const std::string& out) { return out + ".test.jsonl"; }

struct Manifest {
  std::string command;
  json config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json metrics = json::object();
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open " + path + " for writing");
  f << text;
  f.flush();
  require(f.good(), ErrorCode::io, "write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline json read_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
}

inline void write_manifest(const Manifest& m, const std::string& out) {
  json j;
  j["manifest_version"] = manifest_version;
  j["tool_version"] = tool_version;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.config["seed"];
  j["threads"] = resolve_threads(m.config);
  json in = json::object(), outs = json::object();
  for (const auto& p : m.inputs) in[p] = hex64(file_hash(p));
  for (const auto& p : m.outputs)
    if (std::filesystem::is_regular_file(p)) outs[p] = hex64(file_hash(p));
  j["inputs"] = in;
  j["outputs"] = outs;
  j["metrics"] = m.metrics;
  const auto path = manifest_path(out);
  write_text(path, j.dump(2) + "\n");
  require(read_json_file(path)["command"] == m.command, ErrorCode::io, "manifest did not parse back");
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,sparsity,wall_ms\n";
  for (const auto& e : history)
    os << e.epoch << ',' << csv_number(e.train_loss) << ',' << csv_number(e.val_loss) << ',' << csv_number(e.sparsity)
       << ',' << csv_number(e.wall_ms) << '\n';
  return os.str();
}

inline std::size_t count_lines(const std::string& path) {
  const auto text = read_text(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

inline std::vector<DatasetRow> read_back(const std::string& path, std::size_t expected) {
  auto rows = read_dataset(path);
  require(rows.size() == expected, ErrorCode::io, path + " did not parse back with the expected record count");
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

inline json cmd_synth(const json& cfg, std::ostream& log) {
  const auto out = path_or_fail(cfg, "out", "output");
  const auto opt = dataset_options_from(cfg);
  const auto table = artifact_table_from(cfg["synth"]);
  const auto subjects = detail::get_count(cfg["synth"], "subjects");
  const auto segs = detail::get_count(cfg["synth"], "segments_per_subject");
  const auto records = make_dataset(subjects, segs, table, detail::get<std::uint64_t>(cfg, "seed"), opt);
  write_dataset(rows_from_records(records), out);
  read_back(out, records.size());

  std::vector<double> snrs;
  for (const auto& r : records) snrs.push_back(snr(r.clean.samples, r.noisy.samples).db);
  const auto s = mean_std(snrs);
  json metrics{{"segments", records.size()}, {"subjects", subjects}, {"snr_before_db_mean", s.mean}, {"snr_before_db_std", s.std}};
  write_manifest({"synth", cfg, {}, {out}, metrics}, out);
  log << "synth: " << records.size() << " segments from " << subjects << " subjects -> " << out << '\n';
  return metrics;
}

inline std::vector<SegmentRecord> paired_records(const std::vector<DatasetRow>& rows) {
  std::vector<SegmentRecord> recs;
  recs.reserve(rows.size());
  for (const auto& r : rows) {
    require(r.has_noisy(), ErrorCode::schema, "training needs samples_noisy in every record");
    recs.push_back(r.record);
  }
  return recs;
}

inline json cmd_train(const json& cfg, std::ostream& log) {
  const auto data = path_or_fail(cfg, "data", "dataset");
  const auto out = path_or_fail(cfg, "out", "output");
  const auto tc = train_config_from(cfg);
  const auto rows = read_dataset(data);
  require(!rows.empty(), ErrorCode::schema, "dataset " + data + " has no records");
  const auto split = split_by_subject(paired_records(rows), split_from(cfg));

  const auto result = train(split.train, split.val, tc, [&](const EpochStats& e) {
    log << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " sparsity " << e.sparsity << '\n';
  });

  save_checkpoint(result.model, out);
  auto back = load_checkpoint(out);
  back.thresholding = result.model.thresholding;
  require(back == result.model, ErrorCode::io, "checkpoint did not read back identically");
  write_text(history_path(out), history_csv(result.history));
  require(count_lines(history_path(out)) == result.history.size() + 1, ErrorCode::io, "history CSV incomplete");
  write_dataset(rows_from_records(split.test), test_split_path(out));
  read_back(test_split_path(out), split.test.size());

  const auto& best = result.history[result.best_epoch - 1];
  json metrics{{"epochs", result.history.size()},
               {"best_epoch", result.best_epoch},
               {"best_val_loss", best.val_loss},
               {"best_train_loss", best.train_loss},
               {"best_sparsity", best.sparsity},
               {"train_segments", split.train.size()},
               {"val_segments", split.val.size()},
               {"test_segments", split.test.size()}};
  write_manifest({"train", cfg, {data}, {out, history_path(out), test_split_path(out)}, metrics}, out);
  log << "train: best epoch " << result.best_epoch << " of " << result.history.size() << " -> " << out << '\n';
  return metrics;
}

inline json cmd_denoise(const json& cfg, std::ostream& log) {
  const auto data = path_or_fail(cfg, "data", "dataset");
  const auto ckpt = path_or_fail(cfg, "checkpoint", "checkpoint");
  const auto out = path_or_fail(cfg, "out", "output");
  auto model = load_checkpoint(ckpt);
  model.thresholding = thresholding_from(cfg["model"]);
  const auto so = stream_options_from(cfg);
  auto rows = read_dataset(data);
  require(!rows.empty(), ErrorCode::schema, "dataset " + data + " has no records");

  // The checkpoint records the training segment length; at the configured window
  // length that fixes the sampling rate the model was trained for.
  const double fs = rows.front().record.clean.fs;
  const auto window_n = static_cast<std::size_t>(std::llround(so.window_s * fs));
  require(model.n_train == 0 || window_n == model.n_train, ErrorCode::fs_mismatch,
          "data at " + csv_number(fs) + " Hz gives " + std::to_string(window_n) + "-sample windows, model trained on " +
              std::to_string(model.n_train));

  std::size_t windows = 0, padded = 0;
  for (auto& row : rows) {
    const Signal& input = row.has_noisy() ? row.record.noisy : row.record.clean;
    auto res = denoise_stream(model, input, so);
    windows += res.windows;
    padded += res.padded;
    row.denoised = std::move(res.signal.samples);
  }
  write_dataset(rows, out);
  read_back(out, rows.size());
  json metrics{{"segments", rows.size()}, {"windows", windows}, {"padded", padded}};
  write_manifest({"denoise", cfg, {data, ckpt}, {out}, metrics}, out);
  log << "denoise: " << rows.size() << " records, " << windows << " windows -> " << out << '\n';
  return metrics;
}

inline json stage_json(const StageMetrics& m) {
  return json{{"snr_db_mean", m.snr_db.mean},
              {"snr_db_std", m.snr_db.std},
              {"mae_hr_bpm_mean", m.mae_hr_bpm.mean},
              {"mae_hr_bpm_std", m.mae_hr_bpm.std},
              {"hr_excluded_segments", m.hr_excluded}};
}

inline EvalSummary evaluate_file(const json& cfg, const std::string& data) {
  const auto rows = read_dataset(data);
  return evaluate_rows(rows, peak_options_from(cfg), resolve_threads(cfg));
}

inline json cmd_eval(const json& cfg, std::ostream& log) {
  const auto data = path_or_fail(cfg, "data", "dataset");
  const auto out = path_or_fail(cfg, "out", "output");
  const auto summary = evaluate_file(cfg, data);
  const auto j = summary_to_json(summary);
  write_text(out, j.dump(2) + "\n");
  require(read_json_file(out) == j, ErrorCode::io, "summary did not parse back");
  json metrics{{"segments", summary.segments},
               {"subjects", summary.subjects},
               {"before", stage_json(summary.before)},
               {"after", stage_json(summary.after)}};
  write_manifest({"eval", cfg, {data}, {out}, metrics}, out);
  log << "eval: SNR " << summary.before.snr_db.mean << " -> " << summary.after.snr_db.mean << " dB, MAE "
      << summary.before.mae_hr_bpm.mean << " -> " << summary.after.mae_hr_bpm.mean << " bpm\n";
  return metrics;
}

inline std::string boxplots_csv(const EvalSummary& s) {
  std::ostringstream os;
  os << "metric,grouping,group,stage,n,min,q1,median,q3,max,whisker_low,whisker_high,p_value,stars\n";
  for (const auto& g : s.groups) {
    const std::string p = g.improvement ? csv_number(g.improvement->p_value) : "";
    const std::string stars = g.improvement ? g.improvement->stars : "";
    for (const auto& [stage, values] : {std::pair{"before", &g.before}, std::pair{"after", &g.after}}) {
      const auto b = box_stats(*values);
      os << g.metric << ',' << to_string(g.grouping) << ',' << g.group << ',' << stage << ',' << b.n << ','
         << csv_number(b.min) << ',' << csv_number(b.q1) << ',' << csv_number(b.median) << ',' << csv_number(b.q3) << ','
         << csv_number(b.max) << ',' << csv_number(b.whisker_low) << ',' << csv_number(b.whisker_high) << ',' << p << ','
         << stars << '\n';
    }
  }
  return os.str();
}

inline std::string bland_altman_points_csv(const EvalSummary& s) {
  std::ostringstream os;
  os << "subject_id,hr_ref_bpm,hr_est_bpm,mean_bpm,diff_bpm\n";
  for (const auto& r : s.rows_after) {
    if (!r.hr_ref.reliable || !r.hr_est.reliable) continue;
    os << r.subject_id << ',' << csv_number(r.hr_ref.hr_bpm) << ',' << csv_number(r.hr_est.hr_bpm) << ','
       << csv_number(0.5 * (r.hr_ref.hr_bpm + r.hr_est.hr_bpm)) << ',' << csv_number(r.hr_ref.hr_bpm - r.hr_est.hr_bpm)
       << '\n';
  }
  return os.str();
}

// Every line is diff = slope * mean + intercept.
inline std::string bland_altman_lines_csv(const EvalSummary& s) {
  std::ostringstream os;
  os << "line,slope,intercept\n";
  if (s.bland_altman_after) {
    const auto& b = *s.bland_altman_after;
    os << "bias,0," << csv_number(b.mean_diff) << '\n';
    os << "loa_low,0," << csv_number(b.loa_low) << '\n';
    os << "loa_high,0," << csv_number(b.loa_high) << '\n';
    os << "regression," << csv_number(b.slope) << ',' << csv_number(b.intercept) << '\n';
  }
  return os.str();
}

inline json cmd_report(const json& cfg, std::ostream& log) {
  const auto data = path_or_fail(cfg, "data", "dataset");
  const auto dir = strip_slashes(path_or_fail(cfg, "out", "output"));
  const auto summary = evaluate_file(cfg, data);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorCode::io, "cannot create directory " + dir);
  const std::vector<std::pair<std::string, std::string>> files{
      {dir + "/boxplots.csv", boxplots_csv(summary)},
      {dir + "/bland_altman_points.csv", bland_altman_points_csv(summary)},
      {dir + "/bland_altman_lines.csv", bland_altman_lines_csv(summary)},
  };
  std::vector<std::string> outputs;
  for (const auto& [path, text] : files) {
    write_text(path, text);
    require(read_text(path) == text, ErrorCode::io, path + " did not read back");
    outputs.push_back(path);
  }
  json metrics{{"groups", summary.groups.size()},
               {"bland_altman_pairs", summary.bland_altman_after ? summary.bland_altman_after->diffs.size() : 0}};
  write_manifest({"report", cfg, {data}, outputs, metrics}, dir);
  log << "report: " << summary.groups.size() << " group comparisons -> " << dir << '\n';
  return metrics;
}

// ---------------------------------------------------------------------------
// Entry point

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  bool zero_phase = false;
};

inline void add_common_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file or a run manifest");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--out", f.out, "output path");
  sub->add_flag("--zero-phase", f.zero_phase, "forward-backward band-pass");
  sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

/// Parses argv, runs one command and returns the process exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unfolded convolutional sparse coding for PPG motion-artifact removal", "pulse-csc"};
  app.require_subcommand(1);
  Flags f;
  struct Sub {
    const char* name;
    const char* help;
    bool data, checkpoint;
  };
  const Sub subs[] = {
      {"synth", "generate a paired synthetic dataset", false, false},
      {"train", "train an unfolded model on a dataset", true, false},
      {"denoise", "add denoised signals to a dataset", true, true},
      {"eval", "summarize SNR and HR error before and after denoising", true, false},
      {"report", "write plot-ready CSV tables", true, false},
  };
  std::map<std::string, CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common_flags(sub, f);
    if (s.data) sub->add_option("--data", f.data, "input dataset file");
    if (s.checkpoint) sub->add_option("--checkpoint", f.checkpoint, "model checkpoint");
    apps[s.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? exit_ok : exit_usage;
  }

  std::string command;
  for (const auto& [name, sub] : apps)
    if (sub->parsed()) command = name;
  const CLI::App* sub = apps.at(command);

  try {
    json file_config = nullptr;
    if (!f.config.empty()) file_config = load_config_file(f.config);
    json over = json::object();
    if (sub->count("--seed")) over["seed"] = f.seed;
    if (sub->count("--threads")) over["threads"] = f.threads;
    if (sub->count("--zero-phase")) over["zero_phase"] = true;
    if (sub->count("--out")) over["out"] = f.out;
    if (sub->get_option_no_throw("--data") && sub->count("--data")) over["data"] = f.data;
    if (sub->get_option_no_throw("--checkpoint") && sub->count("--checkpoint")) over["checkpoint"] = f.checkpoint;
    const json cfg = resolve_config(file_config, over);

    if (command == "synth") cmd_synth(cfg, out);
    else if (command == "train") cmd_train(cfg, out);
    else if (command == "denoise") cmd_denoise(cfg, out);
    else if (command == "eval") cmd_eval(cfg, out);
    else cmd_report(cfg, out);
    return exit_ok;
  } catch (const Error& e) {
    err << "pulse-csc " << command << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    err << "pulse-csc " << command << ": configuration: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "pulse-csc " << command << ": " << e.what() << '\n';
    return exit_other;
  }
}

}  // namespace pulse_csc::cli

#endif  // PULSE_CSC_CLI_HPP
