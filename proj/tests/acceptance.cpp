// Acceptance checks, one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "gradcheck.hpp"
#include "pulse_csc/artifact.hpp"
#include "pulse_csc/evalkit.hpp"
#include "pulse_csc/pipeline.hpp"
#include "pulse_csc/training.hpp"

using namespace pulse_csc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  for (std::uint64_t i = 0; i < 25; ++i) {
    auto inst = gradcheck::random_grad_instance(4, 8, 3, 64, 9000 + i, 50.0);
    const auto r = gradcheck::check_gradients(inst, 0.05, 1e-5);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    kinks += r.kinks;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0 && checked > 0,
          fmt("max rel error %.3g over %.0f parameters (%.0f kink stencils skipped), %.1f s", worst, double(checked),
              double(kinks), secs)};
}

Outcome ista_equivalence() {
  const std::size_t m = 4, l = 8, k = 10, guard = 2 * k * l;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> kernels(m * l);
  for (double& v : kernels) v = g(rng);
  const auto d = Dictionary::unit_norm(m, l, std::move(kernels));
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    std::vector<double> y(64 + 2 * guard, 0.0);
    for (std::size_t i = guard; i < guard + 64; ++i) y[i] = g(rng);
    IstaInitReport rep;
    const auto model = init_ista(d, 0.05, y.size(), k, true, &rep);
    const auto ista = ista_solve(y, d, 0.05, static_cast<int>(k), rep.lipschitz);
    const auto code = forward(model, y).final_code();
    for (std::size_t i = 0; i < code.data().size(); ++i)
      worst = std::max(worst, std::abs(code.data()[i] - ista.code.data()[i]));
  }
  return {worst < 1e-10, fmt("max |X_K - ISTA_K| = %.3g on 10 signals", worst)};
}

Outcome unit_norm_invariant() {
  auto model = init_random(4, 8, 3, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<SegmentRecord> data(6);
  for (auto& r : data) {
    std::vector<double> c(96), n(96);
    for (std::size_t i = 0; i < 96; ++i) {
      c[i] = std::sin(0.3 * double(i)) + 0.1 * g(rng);
      n[i] = c[i] + 0.4 * g(rng);
    }
    r.clean = Signal(c, 32.0);
    r.noisy = Signal(n, 32.0);
  }
  std::vector<const SegmentRecord*> batch;
  for (const auto& r : data) batch.push_back(&r);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  auto state = AdamState::for_model(model);
  double worst = 0.0;
  for (int step = 0; step < 1000; ++step) {
    const auto out = detail::batch_gradient(model, batch, cfg.lambda, 1);
    adam_step(model, out.grad, cfg, state);
    worst = std::max(worst, model.decoder.max_norm_deviation());
  }
  return {worst < 1e-9, fmt("max | ||d_i|| - 1 | = %.3g over 1000 steps", worst)};
}

// Toy-scale run; hyperparameters chosen to fit the time budget on one core.
Outcome desk_scale_denoising() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = make_dataset(160, 10, ArtifactParamTable{}, 2024);
  const auto split = split_by_subject(records, {0.70, 0.15, 0.15, 7});
  TrainConfig cfg;
  cfg.M = 8;
  cfg.L = 25;
  cfg.K = 5;
  cfg.lambda = 0.05;
  cfg.init = InitKind::ista;
  cfg.lr = 5e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 25;
  cfg.patience = 5;
  cfg.seed = 1;
  cfg.threads = threads_from_env();
  const auto result = train(split.train, split.val, cfg);

  auto rows = rows_from_records(split.test);
  for (auto& r : rows) r.denoised = denoise_stream(result.model, r.record.noisy).signal.samples;
  const auto s = evaluate_rows(rows);
  const double gain = s.after.snr_db.mean - s.before.snr_db.mean;
  const double ratio = s.after.mae_hr_bpm.mean / s.before.mae_hr_bpm.mean;
  const double secs = seconds_since(t0);
  const bool a = gain >= 5.0, b = ratio <= 0.70, t = secs <= 900.0;
  std::ostringstream os;
  os << fmt("(a) SNR %.2f -> %.2f dB, gain %.2f dB [", s.before.snr_db.mean, s.after.snr_db.mean, gain)
     << (a ? "ok" : "short of 5 dB") << fmt("]; (b) MAE %.2f -> %.2f bpm, ratio %.3f [", s.before.mae_hr_bpm.mean,
                                         s.after.mae_hr_bpm.mean, ratio)
     << (b ? "ok" : "above 0.70") << fmt("]; %.0f test segments, %.0f s", double(rows.size()), secs);
  return {a && b && t, os.str()};
}

Outcome duration_ordering() {
  const auto records = make_dataset(160, 10, ArtifactParamTable{}, 12345);
  std::vector<double> sum(5, 0.0), count(5, 0.0);
  for (const auto& r : records) {
    const int bin = duration_bin(r.artifact->duration_s);
    sum[bin] += snr(r.clean.samples, r.noisy.samples).db;
    count[bin] += 1.0;
  }
  bool ok = true;
  std::ostringstream os;
  os << "mean pre-SNR by bin:";
  for (int b = 0; b < 5; ++b) {
    const double v = sum[b] / count[b];
    os << ' ' << duration_bin_label(b) << ' ' << fmt("%.3f", v);
    if (b > 0) ok = ok && v <= sum[b - 1] / count[b - 1];
  }
  return {ok, os.str()};
}

Outcome filter_spec() {
  const double fs = 125.0;
  const auto c = design_cheby2_bandpass(BandPassSpec{}, fs);
  const std::size_t grid = 4096;
  const auto at = [&](double f) {
    const auto i = static_cast<std::size_t>(std::llround(f / (fs / 2.0) * double(grid - 1)));
    return c.magnitude_db(double(i) * (fs / 2.0) / double(grid - 1), fs);
  };
  const double center = std::sqrt(0.5 * 18.0);
  const double low = at(0.05), high = at(40.0), mid = at(center);
  return {c.stable() && low <= -40.0 && high <= -40.0 && std::abs(mid) <= 3.0,
          fmt("|H| at 0.05 Hz %.2f dB, 40 Hz %.2f dB, center %.2f Hz %.3f dB", low, high, center, mid)};
}

double enumerate_wilcoxon(const std::vector<double>& a, const std::vector<double>& b, Alternative alt) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
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
  return double(hits) / std::ldexp(1.0, int(n));
}

Outcome statistics_oracles() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> coarse(-2, 2);
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 240; ++trial) {
    const std::size_t n = 1 + std::size_t(trial % 12);
    std::vector<double> a(n), b(n);
    bool differs = false;
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = g(rng);
      a[i] = trial % 2 ? b[i] + coarse(rng) : g(rng);
      differs = differs || a[i] != b[i];
    }
    if (!differs) continue;
    for (auto alt : {Alternative::a_less, Alternative::b_less}) {
      worst = std::max(worst, std::abs(wilcoxon_signed_rank(a, b, alt).p_value - enumerate_wilcoxon(a, b, alt)));
      ++cases;
    }
  }
  const auto ba = bland_altman(std::vector<double>{60, 70, 80}, std::vector<double>{62, 69, 84});
  const bool ba_ok = std::abs(ba.mean_diff + 1.667) <= 1e-3 && std::abs(ba.loa_low + 6.599) <= 1e-3 &&
                     std::abs(ba.loa_high - 3.266) <= 1e-3;
  return {worst < 1e-12 && ba_ok,
          fmt("Wilcoxon max |exact - enumeration| %.2g over %.0f cases; Bland-Altman mean %.4f LoA [%.4f, ", worst,
              double(cases), ba.mean_diff, ba.loa_low) +
              fmt("%.4f]", ba.loa_high)};
}

Outcome peak_hr() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> hr(40.0, 180.0);
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto p = synth_clean_ppg(10.0, 125.0, hr(rng), derive_seed(808, t));
    const auto est = segment_hr(normalize_01(p.signal).signal).windows.front();
    const double err = est.reliable ? std::abs(est.hr_bpm - hr_from_beat_times(p.beat_times)) : 1e9;
    worst = std::max(worst, err);
  }
  return {worst < 2.0, fmt("max |HR error| %.3f bpm over 100 segments at 40-180 bpm", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// synth -> train -> denoise -> eval through the CLI, twice, single-threaded.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "pulse_csc_acceptance_det";
  fs::remove_all(root);
  const std::string bin = PULSE_CSC_CLI_PATH;
  std::string metrics[2], files[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    fs::create_directories(dir);
    const std::string cfg = (dir / "cfg.json").string();
    std::ofstream(cfg) << R"({"seed": 31, "threads": 1,
      "synth": {"subjects": 8, "segments_per_subject": 4},
      "model": {"M": 4, "L": 15, "K": 3},
      "train": {"max_epochs": 3, "batch_size": 8, "lr": 0.002}})";
    const std::string d = (dir / "data.jsonl").string(), m = (dir / "model.cscd").string(),
                      den = (dir / "den.jsonl").string(), sum = (dir / "summary.json").string();
    const std::string quiet = " > " + (dir / "log.txt").string() + " 2>&1";
    const std::string cmds[] = {
        bin + " synth --config " + cfg + " --out " + d,
        bin + " train --config " + cfg + " --data " + d + " --out " + m,
        bin + " denoise --config " + cfg + " --data " + m + ".test.jsonl --checkpoint " + m + " --out " + den,
        bin + " eval --config " + cfg + " --data " + den + " --out " + sum,
    };
    for (const auto& c : cmds) {
      const int st = std::system((c + quiet).c_str());
      if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) return {false, "command failed: " + c};
    }
    const auto man_train = json::parse(slurp(m + ".manifest.json"));
    const auto man_eval = json::parse(slurp(sum + ".manifest.json"));
    metrics[run] = man_train["metrics"].dump() + man_eval["metrics"].dump() + slurp(sum);
    files[run] = slurp(d) + slurp(m) + slurp(den);
  }
  fs::remove_all(root);
  const bool same_metrics = metrics[0] == metrics[1], same_files = files[0] == files[1];
  return {same_metrics && same_files, std::string("metrics ") + (same_metrics ? "identical" : "DIFFER") +
                                          ", dataset/checkpoint/denoised bytes " + (same_files ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"ISTA equivalence", ista_equivalence},
      {"unit-norm invariant", unit_norm_invariant},
      {"desk-scale denoising", desk_scale_denoising},
      {"duration ordering", duration_ordering},
      {"filter spec", filter_spec},
      {"statistics oracles", statistics_oracles},
      {"peak/HR", peak_hr},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
