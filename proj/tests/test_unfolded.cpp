#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "pulse_csc/checkpoint.hpp"
#include "pulse_csc/unfolded.hpp"

using namespace pulse_csc;

namespace {

Dictionary random_dictionary(std::size_t m, std::size_t l, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> k(m * l);
  for (double& v : k) v = g(rng);
  return Dictionary::unit_norm(m, l, std::move(k));
}

// Random samples in the middle, zeros in guard bands wide enough that no code
// activity reaches the ends within K folds.
std::vector<double> guarded_signal(std::size_t n, std::size_t guard, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = guard; i + guard < n; ++i) y[i] = g(rng);
  return y;
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Forward, ZeroW1GivesZeroCodeAndOutput) {
  auto model = init_random(3, 5, 4, 1);
  for (auto& b : model.w1) std::fill(b.weights.begin(), b.weights.end(), 0.0);
  std::mt19937_64 rng(1);
  const auto y = guarded_signal(40, 0, rng);
  const auto tr = forward(model, y);
  for (double v : tr.final_code().data()) EXPECT_EQ(v, 0.0);
  for (double v : tr.output) EXPECT_EQ(v, 0.0);
}

TEST(Forward, SingleFoldIsThresholdedW1) {
  const auto model = init_random(3, 5, 1, 2);
  ASSERT_TRUE(model.w2.empty());
  std::mt19937_64 rng(2);
  const auto y = guarded_signal(30, 0, rng);
  const auto tr = forward(model, y);
  const auto th = model.effective_thresholds(0);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> z(30, 0.0);
    conv_same_accumulate(model.w1[0].kernel(c, 0), y, z);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(tr.final_code().at(i, c), soft_threshold(z[i], th[c]));
  }
  EXPECT_EQ(tr.output, reconstruct_samples(model.decoder, tr.final_code()));
}

TEST(Forward, DeterministicAndTooShortInput) {
  const auto model = init_random(2, 8, 3, 3);
  std::mt19937_64 rng(3);
  const auto y = guarded_signal(20, 0, rng);
  const auto a = forward(model, y), b = forward(model, y);
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.codes, b.codes);
  try {
    forward(model, std::vector<double>(7, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::input_too_short);
  }
}

TEST(Forward, FoldCountContract) {
  for (std::size_t k : {1u, 2u, 5u}) {
    const auto model = init_random(2, 4, k, 4);
    EXPECT_EQ(model.w1.size(), k);
    EXPECT_EQ(model.w2.size(), k - 1);
    EXPECT_EQ(model.w1.size() + model.w2.size(), 2 * k - 1);
    EXPECT_NO_THROW(model.validate());
    const auto tr = forward(model, std::vector<double>(16, 0.3));
    EXPECT_EQ(tr.codes.size(), k);
    for (std::size_t f = 0; f < k; ++f)
      for (double th : model.effective_thresholds(f)) EXPECT_GT(th, 0.0);
  }
}

TEST(InitIsta, ImpulseKernel) {
  const Dictionary id(1, 3, {0, 1, 0});
  IstaInitReport rep;
  const auto model = init_ista(id, 0.05, 16, 3, false, &rep);
  EXPECT_NEAR(rep.lipschitz, 1.0, 1e-6);
  for (double v : model.w2[0].weights) EXPECT_NEAR(v, 0.0, 1e-6);
  const auto w1 = model.w1[0].kernel(0, 0);
  EXPECT_NEAR(w1[1], 1.0, 1e-6);
  EXPECT_EQ(w1[0], 0.0);
  EXPECT_EQ(w1[2], 0.0);
  EXPECT_DOUBLE_EQ(rep.w2_truncated_energy, 0.0);
}

TEST(InitIsta, ThresholdsAreLambdaOverC) {
  const auto d = random_dictionary(4, 8, 5);
  IstaInitReport rep;
  const auto model = init_ista(d, 0.05, 64, 4, false, &rep);
  for (std::size_t k = 0; k < 4; ++k)
    for (double th : model.effective_thresholds(k)) EXPECT_NEAR(th, 0.05 / rep.lipschitz, 1e-12);
  EXPECT_EQ(model.decoder, d);
  EXPECT_EQ(model.w1[0].length, 8u);
  EXPECT_EQ(model.w2[0].length, 8u);
  EXPECT_GT(rep.w2_truncated_energy, 0.0);
  EXPECT_LT(rep.w2_truncated_energy, 1.0);
}

TEST(InitIsta, ExactSupportMatchesIstaEncode) {
  std::mt19937_64 rng(99);
  for (std::size_t l : {5u, 8u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t k = 5;
      const auto d = random_dictionary(4, l, 10 * l + trial);
      const std::size_t guard = 2 * k * l;
      const auto y = guarded_signal(64 + 2 * guard, guard, rng);
      IstaInitReport rep;
      const auto model = init_ista(d, 0.05, y.size(), k, true, &rep);
      EXPECT_EQ(model.w2[0].length, 2 * l - 1);
      const auto ista = ista_solve(y, d, 0.05, static_cast<int>(k), rep.lipschitz);
      const auto tr = forward(model, y);
      double worst = 0.0;
      for (std::size_t i = 0; i < ista.code.data().size(); ++i)
        worst = std::max(worst, std::abs(ista.code.data()[i] - tr.final_code().data()[i]));
      EXPECT_LT(worst, 1e-10) << "L=" << l << " trial " << trial;
    }
  }
}

TEST(InitRandom, DeterministicUnitNormAndSeedSensitive) {
  const auto a = init_random(4, 9, 3, 42), b = init_random(4, 9, 3, 42), c = init_random(4, 9, 3, 43);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_LT(a.decoder.max_norm_deviation(), 1e-9);
  for (const auto& t : a.theta)
    for (double v : t) EXPECT_NEAR(softplus(v), 0.05, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto model = init_random(3, 6, 4, 7);
  model.n_train = 1250;
  const auto bytes = encode_checkpoint(model);
  ASSERT_GE(bytes.size(), 4u + 20u + 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CSCD");
  const std::size_t floats = model.parameter_count();
  EXPECT_EQ(bytes.size(), 4u + 5u * 4u + floats * 8u + 4u);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back, model);
  EXPECT_EQ(back.n_train, 1250u);

  const auto path = temp_file("pulse_csc_roundtrip.cscd");
  save_checkpoint(model, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), model);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LittleEndianHeader) {
  const auto model = init_random(2, 3, 2, 1);
  const auto b = encode_checkpoint(model);
  const auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
           static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
  };
  EXPECT_EQ(u32(4), checkpoint_version);
  EXPECT_EQ(u32(8), 2u);
  EXPECT_EQ(u32(12), 3u);
  EXPECT_EQ(u32(16), 2u);
  double first = 0.0;
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = bits << 8 | b[24 + static_cast<std::size_t>(i)];
  std::memcpy(&first, &bits, 8);
  EXPECT_EQ(first, model.decoder.data()[0]);
}

TEST(Checkpoint, DetectsCorruption) {
  const auto model = init_random(2, 4, 2, 3);
  auto bytes = encode_checkpoint(model);
  for (std::size_t pos : {std::size_t{0}, std::size_t{6}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    try {
      decode_checkpoint(bad);
      FAIL() << "flip at " << pos;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::checkpoint);
    }
  }
  auto cut = bytes;
  cut.resize(bytes.size() - 9);
  EXPECT_THROW(decode_checkpoint(cut), Error);
  EXPECT_THROW(load_checkpoint(temp_file("pulse_csc_missing.cscd").string()), Error);
}

TEST(Checkpoint, RejectsExtendedSupportBanks) {
  const auto d = random_dictionary(2, 4, 1);
  const auto model = init_ista(d, 0.05, 32, 3, true);
  EXPECT_THROW(encode_checkpoint(model), Error);
}
