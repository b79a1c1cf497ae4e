#ifndef PLN_DATASET_HPP
#define PLN_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pln/tensor.hpp"

namespace pln {

/// One planted-moment video: units inside the ground-truth span carry the
/// query activity's signature vector (plus noise), the rest carry distractor
/// signatures.
struct SyntheticSample {
  Tensor units;  // [l_v, d_raw]
  std::vector<int> tokens;
  real_t gt_start = 0;
  real_t gt_end = 0;
  real_t duration = 0;
  int activity = 0;
};

struct GeneratorConfig {
  std::size_t n_samples = 2500;
  std::size_t l_v = 64;
  std::size_t d_raw = 16;
  std::size_t n_activities = 10;
  std::size_t query_len = 3;
  real_t noise_sigma = real_t(0.3);
  std::uint64_t seed = 0;

  // token layout: 0=BOS, 1=EOS, 2..2+n_activities-1 = activity words, then fillers
  static constexpr std::size_t kFillerTokens = 8;
  std::size_t vocab_size() const { return 2 + n_activities + kFillerTokens; }

  void validate() const {
    if (n_activities < 2) throw ConfigError("generator needs at least 2 activities");
    if (l_v < 8) throw ConfigError("generator needs l_v >= 8");
    if (query_len < 3) throw ConfigError("query_len must be >= 3 (BOS, word, EOS)");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be non-negative");
    if (n_samples == 0) throw ConfigError("n_samples must be positive");
  }
};

/// Deterministic given the seed. Target length fractions are log-uniform over
/// [2/l_v, 0.8], so short moments dominate the corpus.
inline std::vector<SyntheticSample> generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<real_t>> signatures(cfg.n_activities,
                                              std::vector<real_t>(cfg.d_raw));
  for (auto& sig : signatures)
    for (auto& v : sig) v = static_cast<real_t>(gauss(rng));

  const double lo = std::log(2.0 / static_cast<double>(cfg.l_v));
  const double hi = std::log(0.8);
  std::uniform_real_distribution<double> logfrac(lo, hi);
  std::uniform_int_distribution<std::size_t> pick_activity(0, cfg.n_activities - 1);
  std::uniform_int_distribution<std::size_t> pick_run(1, 8);
  std::uniform_int_distribution<int> pick_filler(0, static_cast<int>(GeneratorConfig::kFillerTokens) - 1);

  std::vector<SyntheticSample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    SyntheticSample sample;
    const std::size_t a = pick_activity(rng);
    sample.activity = static_cast<int>(a);

    const double frac = std::exp(logfrac(rng));
    const auto max_len = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(cfg.l_v)));
    std::size_t len = static_cast<std::size_t>(
        std::lround(frac * static_cast<double>(cfg.l_v)));
    len = std::clamp<std::size_t>(len, 1, std::max<std::size_t>(1, max_len));
    std::uniform_int_distribution<std::size_t> pick_start(0, cfg.l_v - len);
    const std::size_t start = pick_start(rng);

    sample.units = Tensor::zeros({cfg.l_v, cfg.d_raw});
    auto fill_unit = [&](std::size_t u, std::size_t act) {
      for (std::size_t e = 0; e < cfg.d_raw; ++e)
        sample.units.at(u * cfg.d_raw + e) =
            signatures[act][e] + cfg.noise_sigma * static_cast<real_t>(gauss(rng));
    };
    for (std::size_t u = start; u < start + len; ++u) fill_unit(u, a);

    // Distractor runs on each side of the span, each a different activity.
    auto fill_outside = [&](std::size_t lo_u, std::size_t hi_u) {
      std::size_t u = lo_u;
      while (u < hi_u) {
        std::size_t b = pick_activity(rng);
        if (b == a) b = (b + 1) % cfg.n_activities;
        const std::size_t run = std::min(pick_run(rng), hi_u - u);
        for (std::size_t r = 0; r < run; ++r) fill_unit(u + r, b);
        u += run;
      }
    };
    fill_outside(0, start);
    fill_outside(start + len, cfg.l_v);

    sample.duration = static_cast<real_t>(cfg.l_v);  // one unit per second
    sample.gt_start = static_cast<real_t>(start);
    sample.gt_end = static_cast<real_t>(start + len);

    sample.tokens.push_back(0);                        // BOS
    sample.tokens.push_back(2 + static_cast<int>(a));  // activity word
    for (std::size_t f = 3; f < cfg.query_len; ++f)
      sample.tokens.push_back(2 + static_cast<int>(cfg.n_activities) + pick_filler(rng));
    sample.tokens.push_back(1);  // EOS

    out.push_back(std::move(sample));
  }
  return out;
}

inline nlohmann::json generator_config_json(const GeneratorConfig& cfg) {
  return nlohmann::json{{"n_samples", cfg.n_samples}, {"l_v", cfg.l_v},
                        {"d_raw", cfg.d_raw},         {"n_activities", cfg.n_activities},
                        {"query_len", cfg.query_len}, {"noise_sigma", cfg.noise_sigma},
                        {"seed", cfg.seed},           {"vocab_size", cfg.vocab_size()}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  cfg.n_samples = j.value("n_samples", cfg.n_samples);
  cfg.l_v = j.value("l_v", cfg.l_v);
  cfg.d_raw = j.value("d_raw", cfg.d_raw);
  cfg.n_activities = j.value("n_activities", cfg.n_activities);
  cfg.query_len = j.value("query_len", cfg.query_len);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

/// One JSON record per line; a sidecar <path>.meta.json holds the generator
/// config so loaders know the vocab without scanning.
inline void save_dataset(const std::string& path, const std::vector<SyntheticSample>& samples,
                         const GeneratorConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write dataset: " + path);
  for (const auto& s : samples) {
    nlohmann::json rec;
    auto& units = rec["units"] = nlohmann::json::array();
    const std::size_t l = s.units.dim(0), d = s.units.dim(1);
    for (std::size_t u = 0; u < l; ++u) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t e = 0; e < d; ++e) row.push_back(s.units.at(u * d + e));
      units.push_back(std::move(row));
    }
    rec["tokens"] = s.tokens;
    rec["gt"] = {s.gt_start, s.gt_end};
    rec["duration"] = s.duration;
    rec["activity"] = s.activity;
    out << rec.dump() << '\n';
  }
  if (!out) throw RuntimeFailure("short write: " + path);
  std::ofstream meta(path + ".meta.json");
  meta << generator_config_json(cfg).dump(2) << '\n';
}

struct LoadedDataset {
  std::vector<SyntheticSample> samples;
  GeneratorConfig meta;
};

inline LoadedDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset: " + path);
  LoadedDataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    SyntheticSample s;
    const auto& units = rec.at("units");
    const std::size_t l = units.size();
    const std::size_t d = l == 0 ? 0 : units.at(0).size();
    if (l == 0 || d == 0) throw InputError("dataset line " + std::to_string(line_no) + ": empty units");
    s.units = Tensor::zeros({l, d});
    for (std::size_t u = 0; u < l; ++u)
      for (std::size_t e = 0; e < d; ++e)
        s.units.at(u * d + e) = units.at(u).at(e).get<real_t>();
    s.tokens = rec.at("tokens").get<std::vector<int>>();
    s.gt_start = rec.at("gt").at(0).get<real_t>();
    s.gt_end = rec.at("gt").at(1).get<real_t>();
    s.duration = rec.at("duration").get<real_t>();
    s.activity = rec.at("activity").get<int>();
    if (!(s.gt_start >= 0 && s.gt_start < s.gt_end && s.gt_end <= s.duration))
      throw InputError("dataset line " + std::to_string(line_no) + ": malformed ground truth");
    ds.samples.push_back(std::move(s));
  }
  std::ifstream meta(path + ".meta.json");
  if (meta) {
    nlohmann::json j;
    meta >> j;
    ds.meta = generator_config_from_json(j);
  } else {
    // No sidecar: recover what loaders need from the records themselves.
    ds.meta.n_samples = ds.samples.size();
    if (!ds.samples.empty()) {
      ds.meta.l_v = ds.samples.front().units.dim(0);
      ds.meta.d_raw = ds.samples.front().units.dim(1);
      int max_tok = 1;
      for (const auto& s : ds.samples)
        for (int t : s.tokens) max_tok = std::max(max_tok, t);
      ds.meta.n_activities = static_cast<std::size_t>(
          std::max(2, max_tok - 1));  // conservative upper bound
    }
  }
  return ds;
}

}  // namespace pln

#endif  // PLN_DATASET_HPP
