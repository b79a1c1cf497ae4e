#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "pln/dataset.hpp"

using namespace pln;

static GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.n_samples = 20;
  cfg.l_v = 16;
  cfg.d_raw = 4;
  cfg.n_activities = 4;
  cfg.seed = 0;
  return cfg;
}

TEST(Generator, ValidatesConfig) {
  GeneratorConfig cfg = small_config();
  cfg.n_activities = 1;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.l_v = 4;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.query_len = 2;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.n_samples = 0;
  EXPECT_THROW(generate_dataset(cfg), ConfigError);
}

TEST(Generator, DeterministicPerSeed) {
  auto a = generate_dataset(small_config());
  auto b = generate_dataset(small_config());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a[s].tokens, b[s].tokens);
    EXPECT_EQ(a[s].gt_start, b[s].gt_start);
    EXPECT_EQ(a[s].gt_end, b[s].gt_end);
    EXPECT_EQ(a[s].activity, b[s].activity);
    for (std::size_t k = 0; k < a[s].units.size(); ++k)
      EXPECT_EQ(a[s].units.at(k), b[s].units.at(k));
  }
  GeneratorConfig other = small_config();
  other.seed = 1;
  auto c = generate_dataset(other);
  bool differs = false;
  for (std::size_t s = 0; s < a.size() && !differs; ++s)
    if (a[s].gt_start != c[s].gt_start || a[s].activity != c[s].activity) differs = true;
  EXPECT_TRUE(differs);
}

TEST(Generator, SampleInvariants) {
  GeneratorConfig cfg = small_config();
  cfg.n_samples = 200;
  for (const auto& s : generate_dataset(cfg)) {
    EXPECT_EQ(s.units.dim(0), cfg.l_v);
    EXPECT_EQ(s.units.dim(1), cfg.d_raw);
    EXPECT_EQ(s.duration, real_t(cfg.l_v));
    EXPECT_GE(s.gt_start, 0.0);
    EXPECT_LT(s.gt_start, s.gt_end);
    EXPECT_LE(s.gt_end, s.duration);
    ASSERT_EQ(s.tokens.size(), cfg.query_len);
    EXPECT_EQ(s.tokens.front(), 0);
    EXPECT_EQ(s.tokens.back(), 1);
    EXPECT_EQ(s.tokens[1], 2 + s.activity);
    EXPECT_TRUE(s.units.all_finite());
  }
}

TEST(Generator, ShortMomentsDominate) {
  GeneratorConfig cfg;
  cfg.n_samples = 1000;
  cfg.seed = 0;
  std::size_t short_count = 0;
  for (const auto& s : generate_dataset(cfg)) {
    if ((s.gt_end - s.gt_start) / s.duration < real_t(0.2)) ++short_count;
  }
  EXPECT_GE(short_count, 500u);
}

TEST(Generator, NoiselessSpanIsConstant) {
  GeneratorConfig cfg = small_config();
  cfg.noise_sigma = 0;
  for (const auto& s : generate_dataset(cfg)) {
    const auto first = static_cast<std::size_t>(s.gt_start);
    const auto last = static_cast<std::size_t>(s.gt_end);  // exclusive
    for (std::size_t u = first + 1; u < last; ++u)
      for (std::size_t e = 0; e < cfg.d_raw; ++e)
        EXPECT_EQ(s.units.at(u, e), s.units.at(first, e));
  }
}

TEST(Generator, DistractorsDifferFromTarget) {
  GeneratorConfig cfg = small_config();
  cfg.noise_sigma = 0;
  cfg.n_samples = 50;
  for (const auto& s : generate_dataset(cfg)) {
    const auto first = static_cast<std::size_t>(s.gt_start);
    for (std::size_t u = 0; u < first; ++u) {
      real_t diff = 0;
      for (std::size_t e = 0; e < cfg.d_raw; ++e)
        diff += std::abs(s.units.at(u, e) - s.units.at(first, e));
      EXPECT_GT(diff, 0.0) << "unit " << u << " matches the target signature";
    }
  }
}

TEST(DatasetIo, RoundTripsExactly) {
  GeneratorConfig cfg = small_config();
  auto samples = generate_dataset(cfg);
  const std::string path = "roundtrip_test.jsonl";
  save_dataset(path, samples, cfg);
  auto loaded = load_dataset(path);
  std::remove(path.c_str());
  std::remove((path + ".meta.json").c_str());

  ASSERT_EQ(loaded.samples.size(), samples.size());
  EXPECT_EQ(loaded.meta.n_activities, cfg.n_activities);
  EXPECT_EQ(loaded.meta.vocab_size(), cfg.vocab_size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    EXPECT_EQ(loaded.samples[s].tokens, samples[s].tokens);
    EXPECT_EQ(loaded.samples[s].gt_start, samples[s].gt_start);
    EXPECT_EQ(loaded.samples[s].gt_end, samples[s].gt_end);
    EXPECT_EQ(loaded.samples[s].duration, samples[s].duration);
    EXPECT_EQ(loaded.samples[s].activity, samples[s].activity);
    ASSERT_TRUE(loaded.samples[s].units.same_shape(samples[s].units));
    for (std::size_t k = 0; k < samples[s].units.size(); ++k)
      EXPECT_EQ(loaded.samples[s].units.at(k), samples[s].units.at(k));
  }
}

TEST(DatasetIo, RejectsMalformedLines) {
  const std::string path = "bad_dataset_test.jsonl";
  {
    std::ofstream out(path);
    out << "{not json\n";
  }
  EXPECT_THROW(load_dataset(path), InputError);
  {
    std::ofstream out(path);
    out << R"({"units": [[1.0]], "tokens": [0,2,1], "gt": [3.0, 1.0], "duration": 4.0, "activity": 0})"
        << '\n';
  }
  EXPECT_THROW(load_dataset(path), InputError);  // gt interval reversed
  std::remove(path.c_str());
  EXPECT_THROW(load_dataset("no_such_file.jsonl"), InputError);
}

TEST(DatasetIo, MetaSurvivesConfigFields) {
  GeneratorConfig cfg = small_config();
  cfg.noise_sigma = real_t(0.125);
  cfg.seed = 99;
  auto j = generator_config_json(cfg);
  GeneratorConfig back = generator_config_from_json(j);
  EXPECT_EQ(back.n_samples, cfg.n_samples);
  EXPECT_EQ(back.l_v, cfg.l_v);
  EXPECT_EQ(back.d_raw, cfg.d_raw);
  EXPECT_EQ(back.n_activities, cfg.n_activities);
  EXPECT_EQ(back.noise_sigma, cfg.noise_sigma);
  EXPECT_EQ(back.seed, cfg.seed);
}
