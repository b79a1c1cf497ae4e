#ifndef PLN_INFERENCE_HPP
#define PLN_INFERENCE_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pln/branch.hpp"
#include "pln/temporal_map.hpp"

namespace pln {

struct Prediction {
  real_t start = 0;
  real_t end = 0;
  real_t score = 0;
  int stage = 1;
};

/// Score descending; ties by earlier start, then shorter moment.
inline bool prediction_order(const Prediction& a, const Prediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return (a.end - a.start) < (b.end - b.start);
}

/// Greedy suppression over a ranked list: keep a moment iff its IoU with every
/// kept moment is <= threshold. Subset of the input, order preserved.
inline std::vector<Prediction> nms(const std::vector<Prediction>& ranked, real_t threshold) {
  std::vector<Prediction> kept;
  for (const auto& p : ranked) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (temporal_iou(p.start, p.end, k.start, k.end) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

/// All sampled cells of one score map as ranked second-space predictions.
inline std::vector<Prediction> ranked_candidates(const ScoreMap& sm, real_t duration) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < sm.N; ++i)
    for (std::size_t j = i; j < sm.N; ++j) {
      if (!sm.sampled(i, j)) continue;
      auto [s, e] = moment_to_seconds(static_cast<int>(i), static_cast<int>(j), sm.N, duration);
      out.push_back({s, e, sm.scores.at(i * sm.N + j), sm.stage});
    }
  std::sort(out.begin(), out.end(), prediction_order);
  return out;
}

/// Rank one selected stage's sampled cells and suppress overlaps.
inline std::vector<Prediction> strategy1(const std::vector<BranchState>& states, int t_select,
                                         real_t duration, real_t nms_threshold) {
  if (t_select < 1 || static_cast<std::size_t>(t_select) > states.size())
    throw InputError("strategy1: stage " + std::to_string(t_select) + " out of range");
  return nms(ranked_candidates(states[static_cast<std::size_t>(t_select) - 1].P, duration),
             nms_threshold);
}

/// Candidates are the finest stage's sampled cells; each score is the mean
/// over every stage holding an exactly time-aligned sampled cell.
inline std::vector<Prediction> strategy2(const std::vector<BranchState>& states, real_t duration,
                                         real_t nms_threshold) {
  const auto& fine = states.back().P;
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < fine.N; ++i)
    for (std::size_t j = i; j < fine.N; ++j) {
      if (!fine.sampled(i, j)) continue;
      real_t acc = 0;
      int contributors = 0;
      for (const auto& st : states) {
        const auto cell = cross_stage_align(static_cast<int>(i), static_cast<int>(j), fine.N,
                                            st.P.N);
        if (!cell) continue;
        const auto [ci, cj] = *cell;
        if (!st.P.sampled(static_cast<std::size_t>(ci), static_cast<std::size_t>(cj))) continue;
        acc += st.P.scores.at(static_cast<std::size_t>(ci) * st.P.N +
                              static_cast<std::size_t>(cj));
        ++contributors;
      }
      auto [s, e] = moment_to_seconds(static_cast<int>(i), static_cast<int>(j), fine.N, duration);
      out.push_back({s, e, acc / static_cast<real_t>(contributors),
                     static_cast<int>(states.size())});
    }
  std::sort(out.begin(), out.end(), prediction_order);
  return nms(out, nms_threshold);
}

struct QueryResult {
  std::vector<Prediction> predictions;  // post-NMS, ranked
  real_t gt_start = 0;
  real_t gt_end = 0;
  real_t duration = 0;
};

/// Percentage of queries whose top-n predictions contain one with IoU >= m.
inline real_t rank_at(const std::vector<QueryResult>& results, std::size_t n, real_t m) {
  if (n < 1) throw InputError("rank_at: n must be >= 1");
  if (results.empty()) return 0;
  std::size_t hits = 0;
  for (const auto& q : results) {
    const std::size_t top = std::min(n, q.predictions.size());
    for (std::size_t k = 0; k < top; ++k) {
      if (temporal_iou(q.predictions[k].start, q.predictions[k].end, q.gt_start, q.gt_end) >= m) {
        ++hits;
        break;
      }
    }
  }
  return real_t(100) * static_cast<real_t>(hits) / static_cast<real_t>(results.size());
}

/// Mean top-1 IoU over queries, in [0,1]; a query without predictions adds 0.
inline real_t mean_iou(const std::vector<QueryResult>& results) {
  if (results.empty()) return 0;
  real_t acc = 0;
  for (const auto& q : results)
    if (!q.predictions.empty())
      acc += temporal_iou(q.predictions[0].start, q.predictions[0].end, q.gt_start, q.gt_end);
  return acc / static_cast<real_t>(results.size());
}

struct LengthBucket {
  std::size_t count = 0;
  real_t rank1_iou05 = 0;  // percentage
};

/// Buckets queries by gt-length fraction of the video into equal-width bins
/// over (0,1]; empty buckets are absent from the map.
inline std::map<std::size_t, LengthBucket> length_bucket_report(
    const std::vector<QueryResult>& results, std::size_t n_buckets) {
  if (n_buckets < 2) throw InputError("length_bucket_report: need at least 2 buckets");
  std::map<std::size_t, std::vector<const QueryResult*>> grouped;
  for (const auto& q : results) {
    const real_t frac = (q.gt_end - q.gt_start) / q.duration;
    auto idx = static_cast<std::size_t>(frac * static_cast<real_t>(n_buckets));
    if (idx >= n_buckets) idx = n_buckets - 1;
    grouped[idx].push_back(&q);
  }
  std::map<std::size_t, LengthBucket> out;
  for (const auto& [idx, members] : grouped) {
    LengthBucket b;
    b.count = members.size();
    std::size_t hits = 0;
    for (const QueryResult* q : members) {
      if (q->predictions.empty()) continue;
      if (temporal_iou(q->predictions[0].start, q->predictions[0].end, q->gt_start, q->gt_end) >=
          real_t(0.5))
        ++hits;
    }
    b.rank1_iou05 = real_t(100) * static_cast<real_t>(hits) / static_cast<real_t>(b.count);
    out[idx] = b;
  }
  return out;
}

/// Per-bucket relative improvement of `model` over `baseline`, in percent.
/// A bucket the baseline scores 0 in maps to +inf when the model scores > 0.
inline std::map<std::size_t, real_t> bucket_relative_improvement(
    const std::map<std::size_t, LengthBucket>& model,
    const std::map<std::size_t, LengthBucket>& baseline) {
  std::map<std::size_t, real_t> out;
  for (const auto& [idx, mb] : model) {
    auto it = baseline.find(idx);
    if (it == baseline.end()) continue;
    const real_t base = it->second.rank1_iou05;
    if (base == 0) {
      out[idx] = mb.rank1_iou05 == 0 ? real_t(0) : std::numeric_limits<real_t>::infinity();
    } else {
      out[idx] = real_t(100) * (mb.rank1_iou05 - base) / base;
    }
  }
  return out;
}

/// Mean length in seconds of each stage's own top-k post-NMS predictions,
/// pooled over queries.
inline std::vector<real_t> topk_length_stats(
    const std::vector<std::vector<std::vector<Prediction>>>& per_query_per_stage, std::size_t k) {
  if (k < 1) throw InputError("topk_length_stats: k must be >= 1");
  if (per_query_per_stage.empty()) return {};
  const std::size_t T = per_query_per_stage.front().size();
  std::vector<real_t> sums(T, 0);
  std::vector<std::size_t> counts(T, 0);
  for (const auto& stages : per_query_per_stage) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto& preds = stages[t];
      const std::size_t top = std::min(k, preds.size());
      for (std::size_t i = 0; i < top; ++i) {
        sums[t] += preds[i].end - preds[i].start;
        ++counts[t];
      }
    }
  }
  std::vector<real_t> means(T, 0);
  for (std::size_t t = 0; t < T; ++t)
    if (counts[t] > 0) means[t] = sums[t] / static_cast<real_t>(counts[t]);
  return means;
}

struct EvalReport {
  // rank[n][m] with n in {1,5} and m in {0.1,0.3,0.5,0.7}, percentages
  std::map<std::string, real_t> rank_grid;
  real_t miou_x100 = 0;
  std::map<std::size_t, LengthBucket> buckets;
  std::vector<real_t> stage_top5_mean_len;
  std::size_t query_count = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rank_grid"] = rank_grid;
    j["miou"] = miou_x100;
    j["query_count"] = query_count;
    auto& jb = j["length_buckets"] = nlohmann::json::object();
    for (const auto& [idx, b] : buckets)
      jb[std::to_string(idx)] = {{"count", b.count}, {"rank1_iou05", b.rank1_iou05}};
    j["stage_top5_mean_len"] = stage_top5_mean_len;
    return j;
  }

  std::string to_text() const {
    std::string s;
    s += "queries: " + std::to_string(query_count) + "\n";
    for (const auto& [key, val] : rank_grid)
      s += key + ": " + std::to_string(val) + "\n";
    s += "mIoU(x100): " + std::to_string(miou_x100) + "\n";
    for (const auto& [idx, b] : buckets)
      s += "bucket " + std::to_string(idx) + ": n=" + std::to_string(b.count) +
           " R@1,IoU=0.5 " + std::to_string(b.rank1_iou05) + "\n";
    for (std::size_t t = 0; t < stage_top5_mean_len.size(); ++t)
      s += "stage " + std::to_string(t + 1) +
           " top-5 mean length: " + std::to_string(stage_top5_mean_len[t]) + "\n";
    return s;
  }
};

inline const std::vector<real_t>& metric_iou_thresholds() {
  static const std::vector<real_t> kThresholds{real_t(0.1), real_t(0.3), real_t(0.5),
                                               real_t(0.7)};
  return kThresholds;
}

inline EvalReport build_eval_report(const std::vector<QueryResult>& results,
                                    const std::map<std::size_t, LengthBucket>& buckets,
                                    const std::vector<real_t>& stage_top5) {
  EvalReport rep;
  rep.query_count = results.size();
  for (std::size_t n : {std::size_t(1), std::size_t(5)})
    for (real_t m : metric_iou_thresholds()) {
      char key[32];
      std::snprintf(key, sizeof key, "R@%zu,IoU=%.1f", n, static_cast<double>(m));
      rep.rank_grid[key] = rank_at(results, n, m);
    }
  rep.miou_x100 = real_t(100) * mean_iou(results);
  rep.buckets = buckets;
  rep.stage_top5_mean_len = stage_top5;
  return rep;
}

}  // namespace pln

#endif  // PLN_INFERENCE_HPP
