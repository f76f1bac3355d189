#ifndef PULSE_CSC_TRAINING_HPP
#define PULSE_CSC_TRAINING_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pulse_csc/conv.hpp"
#include "pulse_csc/csc.hpp"
#include "pulse_csc/error.hpp"
#include "pulse_csc/parallel.hpp"
#include "pulse_csc/records.hpp"
#include "pulse_csc/unfolded.hpp"

namespace pulse_csc {

enum class InitKind { random, ista };

struct TrainConfig {
  std::size_t M = 32;
  std::size_t L = 50;
  std::size_t K = 10;
  double lambda = 0.05;
  double l2_w = 1e-3;
  double lr = 1e-4;
  std::size_t batch_size = 256;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Thresholding thresholding{};
  InitKind init = InitKind::random;
  std::size_t threads = 1;

  void validate() const {
    require(M >= 1 && L >= 1 && K >= 1, ErrorCode::configuration, "M, L, K must be >= 1");
    require(lambda > 0.0 && l2_w >= 0.0 && lr > 0.0, ErrorCode::configuration, "lambda, lr must be positive");
    require(batch_size >= 1 && patience >= 1 && max_epochs >= 1, ErrorCode::configuration,
            "batch size, patience and max epochs must be >= 1");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && eps > 0.0, ErrorCode::configuration,
            "Adam moments must lie in (0,1) and eps > 0");
  }
};

/// Gradient arrays congruent with UnfoldedModel::parameter_groups().
struct GradientSet {
  std::vector<std::vector<double>> groups;

  static GradientSet zeros_like(const UnfoldedModel& model) {
    GradientSet g;
    for (auto p : model.parameter_groups()) g.groups.emplace_back(p.size(), 0.0);
    return g;
  }

  void add(const GradientSet& other, double scale = 1.0) {
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = 0; j < groups[i].size(); ++j) groups[i][j] += scale * other.groups[i][j];
  }

  void scale(double s) {
    for (auto& g : groups)
      for (double& v : g) v *= s;
  }

  [[nodiscard]] bool finite() const {
    for (const auto& g : groups)
      for (double v : g)
        if (!std::isfinite(v)) return false;
    return true;
  }

  // Views in model order.
  [[nodiscard]] std::span<double> decoder() { return groups[0]; }
  [[nodiscard]] std::span<double> w1(std::size_t k) { return groups[1 + k]; }
  [[nodiscard]] std::span<double> w2(std::size_t k, std::size_t K) { return groups[1 + K + k]; }
  [[nodiscard]] std::span<double> theta(std::size_t k, std::size_t K) { return groups[1 + K + (K - 1) + k]; }
};

struct LossResult {
  double value = 0.0;
  ForwardTrace trace;
};

/// 1/2 ||y - y_hat||^2 + lambda ||X_K||_1 for one segment.
inline LossResult loss(const UnfoldedModel& model, std::span<const double> y_noisy, std::span<const double> y_clean,
                       double lambda) {
  require(y_noisy.size() == y_clean.size(), ErrorCode::shape, "noisy and clean lengths differ");
  LossResult r;
  r.trace = forward(model, y_noisy);
  double err = 0.0;
  for (std::size_t n = 0; n < y_clean.size(); ++n) {
    const double d = y_clean[n] - r.trace.output[n];
    err += d * d;
  }
  r.value = 0.5 * err + lambda * r.trace.final_code().l1();
  return r;
}

inline LossResult loss(const UnfoldedModel& model, const Signal& y_noisy, const Signal& y_clean, double lambda) {
  return loss(model, y_noisy.samples, y_clean.samples, lambda);
}

/// (l2_w / 2)(||W1||^2 + ||W2||^2)
inline double weight_penalty(const UnfoldedModel& model, double l2_w) {
  double s = 0.0;
  for (const auto& b : model.w1)
    for (double v : b.weights) s += v * v;
  for (const auto& b : model.w2)
    for (double v : b.weights) s += v * v;
  return 0.5 * l2_w * s;
}

/// Reverse-mode gradients of loss() with respect to every parameter. The exact
/// threshold uses subgradient 0 at its kinks, and |x| uses sign(0) = 0.
inline GradientSet backward(const UnfoldedModel& model, const ForwardTrace& trace, std::span<const double> y_clean,
                            double lambda) {
  require(trace.revision == model.revision && trace.codes.size() == model.K, ErrorCode::stale_trace,
          "trace was produced by a different model revision");
  const std::size_t n = trace.input.size();
  require(y_clean.size() == n, ErrorCode::shape, "clean length differs from traced input");
  const std::size_t M = model.M;
  const std::size_t K = model.K;

  GradientSet grads = GradientSet::zeros_like(model);

  std::vector<double> g_out(n);
  for (std::size_t i = 0; i < n; ++i) g_out[i] = trace.output[i] - y_clean[i];

  const SparseCode& xk = trace.final_code();
  auto g_dec = grads.decoder();
  for (std::size_t c = 0; c < M; ++c)
    conv_kernel_grad_accumulate(g_out, xk.column(c), g_dec.subspan(c * model.L, model.L));

  SparseCode g_x = correlate_adjoint(model.decoder, g_out);
  for (std::size_t i = 0; i < g_x.data().size(); ++i) {
    const double v = xk.data()[i];
    g_x.data()[i] += lambda * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
  }

  SparseCode g_z(n, M);
  for (std::size_t kk = K; kk-- > 0;) {
    const SparseCode& z = trace.pre[kk];
    auto g_theta = grads.theta(kk, K);
    for (std::size_t c = 0; c < M; ++c) {
      const double raw = model.theta[kk][c];
      const double th = softplus(raw);
      auto zc = z.column(c);
      auto gx = g_x.column(c);
      auto gz = g_z.column(c);
      double g_th = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto s = shrink(zc[i], th, model.thresholding);
        gz[i] = gx[i] * s.d_input;
        g_th += gx[i] * s.d_threshold;
      }
      g_theta[c] = g_th * sigmoid(raw);
    }

    const auto& b1 = model.w1[kk];
    auto g_w1 = grads.w1(kk);
    for (std::size_t c = 0; c < M; ++c)
      conv_kernel_grad_accumulate(g_z.column(c), trace.input, g_w1.subspan(c * b1.length, b1.length));

    if (kk > 0) {
      const auto& b2 = model.w2[kk - 1];
      const SparseCode& prev = trace.codes[kk - 1];
      auto g_w2 = grads.w2(kk - 1, K);
      SparseCode g_prev(n, M);
      for (std::size_t co = 0; co < M; ++co) {
        for (std::size_t ci = 0; ci < M; ++ci) {
          conv_kernel_grad_accumulate(g_z.column(co), prev.column(ci),
                                      g_w2.subspan((co * M + ci) * b2.length, b2.length));
          corr_same_accumulate(b2.kernel(co, ci), g_z.column(co), g_prev.column(ci));
        }
      }
      g_x = std::move(g_prev);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState for_model(const UnfoldedModel& model) {
    AdamState s;
    for (auto p : model.parameter_groups()) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

/// One bias-corrected Adam update. The l2 penalty gradient l2_w * W is added for the
/// W1/W2 groups only; afterwards every decoder kernel is projected back to unit norm.
inline void adam_step(UnfoldedModel& model, const GradientSet& grads, const TrainConfig& cfg, AdamState& state) {
  auto params = model.parameter_groups();
  require(grads.groups.size() == params.size() && state.m.size() == params.size(), ErrorCode::shape,
          "gradient/optimizer state does not match model");
  for (std::size_t gi = 0; gi < params.size(); ++gi)
    require(grads.groups[gi].size() == params[gi].size(), ErrorCode::shape, "gradient group size mismatch");
  if (!grads.finite()) throw Error(ErrorCode::diverged_training, "non-finite gradient");

  const std::size_t first_w = 1;
  const std::size_t end_w = 1 + model.K + (model.K - 1);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    const bool decays = gi >= first_w && gi < end_w;
    auto p = params[gi];
    const auto& g = grads.groups[gi];
    auto& m = state.m[gi];
    auto& v = state.v[gi];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = decays ? g[j] + cfg.l2_w * p[j] : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      p[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
    for (double x : p)
      if (!std::isfinite(x)) throw Error(ErrorCode::diverged_training, "parameter became non-finite");
  }
  try {
    model.decoder.normalize();
  } catch (const Error& e) {
    // a kernel that overflowed or collapsed to zero under the update
    throw Error(ErrorCode::diverged_training, e.what());
  }
  model.touch();
}

// ---------------------------------------------------------------------------
// Early stopping and the training loop

/// Tracks the best validation loss; signals a stop after `patience` epochs without improvement.
class EarlyStopping {
public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double val_loss) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      stale_ = 0;
      improved_ = true;
    } else {
      ++stale_;
      improved_ = false;
    }
    return stale_ >= patience_;
  }

  [[nodiscard]] bool improved() const noexcept { return improved_; }
  [[nodiscard]] std::size_t best_epoch() const noexcept { return best_epoch_; }
  [[nodiscard]] double best_loss() const noexcept { return best_loss_; }

private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean segment loss over the epoch plus the weight penalty
  double val_loss = 0.0;    // mean segment loss on the validation set
  double sparsity = 0.0;    // mean density of X_K on the validation set
  double wall_ms = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainResult {
  UnfoldedModel model;  // best-validation snapshot
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

namespace detail {

// Segments are grouped into fixed-size chunks whose gradients are summed in index
// order; chunk sums are then added in chunk order. The partition does not depend on
// the thread count.
inline constexpr std::size_t gradient_chunk = 8;

struct BatchOutcome {
  GradientSet grad;
  double loss_sum = 0.0;
};

inline BatchOutcome batch_gradient(const UnfoldedModel& model, const std::vector<const SegmentRecord*>& batch,
                                   double lambda, std::size_t threads) {
  const std::size_t chunks = (batch.size() + gradient_chunk - 1) / gradient_chunk;
  std::vector<BatchOutcome> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t ci) {
    BatchOutcome out{GradientSet::zeros_like(model), 0.0};
    const std::size_t lo = ci * gradient_chunk;
    const std::size_t hi = std::min(batch.size(), lo + gradient_chunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& rec = *batch[i];
      auto r = loss(model, rec.noisy.samples, rec.clean.samples, lambda);
      out.grad.add(backward(model, r.trace, rec.clean.samples, lambda));
      out.loss_sum += r.value;
    }
    partial[ci] = std::move(out);
  });
  BatchOutcome total{GradientSet::zeros_like(model), 0.0};
  for (const auto& p : partial) {
    total.grad.add(p.grad);
    total.loss_sum += p.loss_sum;
  }
  total.grad.scale(1.0 / static_cast<double>(batch.size()));
  return total;
}

}  // namespace detail

struct Evaluation {
  double mean_loss = 0.0;
  double mean_density = 0.0;
};

inline Evaluation evaluate_loss(const UnfoldedModel& model, const std::vector<SegmentRecord>& data, double lambda,
                                std::size_t threads = 1) {
  require(!data.empty(), ErrorCode::configuration, "cannot evaluate an empty set");
  std::vector<Evaluation> per(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    auto r = loss(model, data[i].noisy.samples, data[i].clean.samples, lambda);
    per[i] = {r.value, r.trace.final_code().density()};
  });
  Evaluation e;
  for (const auto& p : per) {
    e.mean_loss += p.mean_loss;
    e.mean_density += p.mean_density;
  }
  e.mean_loss /= static_cast<double>(data.size());
  e.mean_density /= static_cast<double>(data.size());
  return e;
}

inline UnfoldedModel initial_model(const TrainConfig& cfg, std::size_t n) {
  UnfoldedModel model;
  if (cfg.init == InitKind::ista) {
    auto seed_model = init_random(cfg.M, cfg.L, 1, cfg.seed);
    model = init_ista(seed_model.decoder, cfg.lambda, n, cfg.K);
  } else {
    model = init_random(cfg.M, cfg.L, cfg.K, cfg.seed);
  }
  model.thresholding = cfg.thresholding;
  model.n_train = static_cast<std::uint32_t>(n);
  return model;
}

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam over shuffled training pairs with validation-based early stopping.
/// Returns the snapshot with the lowest validation loss.
inline TrainResult train(const std::vector<SegmentRecord>& train_set, const std::vector<SegmentRecord>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         std::optional<UnfoldedModel> start = std::nullopt) {
  cfg.validate();
  require(!train_set.empty(), ErrorCode::configuration, "training set is empty");
  require(!val_set.empty(), ErrorCode::configuration, "validation set is empty");
  const std::size_t n = train_set.front().clean.size();
  for (const auto* set : {&train_set, &val_set})
    for (const auto& r : *set)
      require(r.clean.size() == n && r.noisy.size() == n, ErrorCode::shape, "all segments must share one length");

  UnfoldedModel model = start ? std::move(*start) : initial_model(cfg, n);
  model.validate();
  AdamState adam = AdamState::for_model(model);
  EarlyStopping stopper(cfg.patience);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  result.model = model;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start_i = 0; start_i < order.size(); start_i += cfg.batch_size) {
      std::vector<const SegmentRecord*> batch;
      for (std::size_t i = start_i; i < std::min(order.size(), start_i + cfg.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      auto outcome = detail::batch_gradient(model, batch, cfg.lambda, cfg.threads);
      loss_sum += outcome.loss_sum;
      adam_step(model, outcome.grad, cfg, adam);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size()) + weight_penalty(model, cfg.l2_w);
    const auto val = evaluate_loss(model, val_set, cfg.lambda, cfg.threads);
    stats.val_loss = val.mean_loss;
    stats.sparsity = val.mean_density;
    stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    require(std::isfinite(stats.train_loss) && std::isfinite(stats.val_loss), ErrorCode::diverged_training,
            "loss became non-finite");
    result.history.push_back(stats);
    const bool stop = stopper.update(epoch, stats.val_loss);
    if (stopper.improved()) result.model = model;
    if (on_epoch) on_epoch(stats);
    if (stop) break;
  }
  result.best_epoch = stopper.best_epoch();
  return result;
}

// ---------------------------------------------------------------------------
// Subject-level split

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;
};

struct DataSplit {
  std::vector<SegmentRecord> train;
  std::vector<SegmentRecord> val;
  std::vector<SegmentRecord> test;
};

/// Subject counts per split by the largest-remainder rule (ties go to the earlier split),
/// with at least one subject per split.
inline std::array<std::size_t, 3> split_counts(std::size_t subjects, const SplitSpec& spec) {
  const std::array<double, 3> frac{spec.train, spec.val, spec.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = frac[i] * static_cast<double>(subjects);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < subjects) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[i];
    }
  }
  return counts;
}

inline DataSplit split_by_subject(const std::vector<SegmentRecord>& records, const SplitSpec& spec) {
  require(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0 &&
              std::abs(spec.train + spec.val + spec.test - 1.0) <= 1e-9,
          ErrorCode::configuration, "split fractions must be positive and sum to 1");
  std::vector<std::string> subjects;
  for (const auto& r : records) {
    require(!r.subject_id.empty(), ErrorCode::configuration, "record without subject id");
    subjects.push_back(r.subject_id);
  }
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  require(subjects.size() >= 3, ErrorCode::configuration, "need at least 3 subjects to split");

  std::mt19937_64 rng(spec.seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto counts = split_counts(subjects.size(), spec);
  std::map<std::string, int> where;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    where[subjects[i]] = i < counts[0] ? 0 : (i < counts[0] + counts[1] ? 1 : 2);

  DataSplit out;
  for (const auto& r : records) {
    switch (where[r.subject_id]) {
      case 0: out.train.push_back(r); break;
      case 1: out.val.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_TRAINING_HPP
