#ifndef PLN_EVALUATE_HPP
#define PLN_EVALUATE_HPP

#include <random>
#include <vector>

#include "pln/branch.hpp"
#include "pln/dataset.hpp"
#include "pln/inference.hpp"

namespace pln {

struct EvalSettings {
  int strategy = 1;
  int t_select = 0;  // 0 = last stage (strategy 1 only)
  real_t nms_threshold = real_t(0.5);
  std::size_t n_buckets = 5;
  std::size_t topk = 5;
};

struct EvalOutput {
  EvalReport report;
  std::vector<QueryResult> results;  // main-strategy predictions per query
};

inline EvalOutput run_eval(const PLNModel& model, const std::vector<SyntheticSample>& samples,
                           const EvalSettings& es) {
  if (es.strategy != 1 && es.strategy != 2)
    throw ConfigError("eval: strategy must be 1 or 2");
  std::vector<QueryResult> results;
  std::vector<std::vector<std::vector<Prediction>>> per_query_per_stage;
  results.reserve(samples.size());
  for (const auto& s : samples) {
    auto states = model.forward(nullptr, s.units, s.tokens);
    const std::size_t T = states.size();
    QueryResult q;
    if (es.strategy == 2) {
      q.predictions = strategy2(states, s.duration, es.nms_threshold);
    } else {
      const int t = es.t_select == 0 ? static_cast<int>(T) : es.t_select;
      q.predictions = strategy1(states, t, s.duration, es.nms_threshold);
    }
    q.gt_start = s.gt_start;
    q.gt_end = s.gt_end;
    q.duration = s.duration;
    results.push_back(std::move(q));

    std::vector<std::vector<Prediction>> stage_preds;
    for (std::size_t t = 1; t <= T; ++t)
      stage_preds.push_back(strategy1(states, static_cast<int>(t), s.duration, es.nms_threshold));
    per_query_per_stage.push_back(std::move(stage_preds));
  }
  EvalOutput out;
  out.report = build_eval_report(results, length_bucket_report(results, es.n_buckets),
                                 topk_length_stats(per_query_per_stage, es.topk));
  out.results = std::move(results);
  return out;
}

/// Same harness with the model's scores replaced by seeded uniform noise over
/// the identical candidate geometry.
inline EvalOutput run_random_baseline(const ModelConfig& cfg,
                                      const std::vector<SyntheticSample>& samples,
                                      const EvalSettings& es, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<QueryResult> results;
  std::vector<std::vector<std::vector<Prediction>>> per_query_per_stage;
  const auto stage_cfgs = cfg.stage_configs();

  for (const auto& s : samples) {
    std::vector<BranchState> states;
    for (std::size_t t = 0; t < stage_cfgs.size(); ++t) {
      const std::size_t N = stage_cfgs[t].N;
      BranchState st;
      st.stage = stage_cfgs[t];
      st.P.N = N;
      st.P.stage = static_cast<int>(t + 1);
      st.P.scores = Tensor::zeros({N, N});
      st.P.sample_mask = sparse_sample_mask(N, cfg.dense_len_for(N));
      st.P.valid_mask.assign(N * N, 0);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i; j < N; ++j) st.P.valid_mask[i * N + j] = 1;
      for (std::size_t c = 0; c < N * N; ++c)
        if (st.P.sample_mask[c]) st.P.scores.at(c) = static_cast<real_t>(uni(rng));
      states.push_back(std::move(st));
    }
    QueryResult q;
    if (es.strategy == 2) {
      q.predictions = strategy2(states, s.duration, es.nms_threshold);
    } else {
      const int t = es.t_select == 0 ? static_cast<int>(states.size()) : es.t_select;
      q.predictions = strategy1(states, t, s.duration, es.nms_threshold);
    }
    q.gt_start = s.gt_start;
    q.gt_end = s.gt_end;
    q.duration = s.duration;
    results.push_back(std::move(q));

    std::vector<std::vector<Prediction>> stage_preds;
    for (std::size_t t = 1; t <= states.size(); ++t)
      stage_preds.push_back(strategy1(states, static_cast<int>(t), s.duration, es.nms_threshold));
    per_query_per_stage.push_back(std::move(stage_preds));
  }
  EvalOutput out;
  out.report = build_eval_report(results, length_bucket_report(results, es.n_buckets),
                                 topk_length_stats(per_query_per_stage, es.topk));
  out.results = std::move(results);
  return out;
}

}  // namespace pln

#endif  // PLN_EVALUATE_HPP
