#ifndef PLN_TRAINING_HPP
#define PLN_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "pln/adam.hpp"
#include "pln/branch.hpp"
#include "pln/checkpoint.hpp"
#include "pln/dataset.hpp"
#include "pln/inference.hpp"
#include "pln/temporal_map.hpp"

namespace pln {

/// Soft supervision grid for one stage: zero up to the IoU threshold, then a
/// linear ramp to 1 at perfect overlap.
struct LabelMap {
  std::size_t N = 0;
  Tensor y;                        // [N,N], constant
  std::vector<std::uint8_t> mask;  // sampled cells (always a subset of valid)
  real_t tau = real_t(0.5);
};

inline LabelMap soft_labels(real_t gt_start, real_t gt_end, std::size_t N, real_t duration,
                            real_t tau, const std::vector<std::uint8_t>& sample_mask) {
  if (tau >= 1 || tau < 0) throw ConfigError("soft_labels: tau must lie in [0,1)");
  LabelMap lm;
  lm.N = N;
  lm.tau = tau;
  lm.y = Tensor::zeros({N, N});
  lm.mask = sample_mask;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i; j < N; ++j) {
      if (!sample_mask[i * N + j]) continue;
      auto [s, e] = moment_to_seconds(static_cast<int>(i), static_cast<int>(j), N, duration);
      const real_t o = temporal_iou(s, e, gt_start, gt_end);
      lm.y.at(i * N + j) = o <= tau ? real_t(0) : (o - tau) / (real_t(1) - tau);
    }
  return lm;
}

/// Masked BCE between a stage's score map and its label map, normalized by the
/// number of supervised cells.
inline Tensor stage_loss(Tape* tape, const ScoreMap& P, const LabelMap& labels,
                         bool* empty_mask_warning = nullptr) {
  if (P.N != labels.N) throw ShapeError("stage_loss: score and label grids differ");
  Tensor mask = Tensor::zeros({P.N, P.N});
  for (std::size_t c = 0; c < labels.mask.size(); ++c)
    mask.at(c) = labels.mask[c] ? real_t(1) : real_t(0);
  return ops::bce_masked(tape, P.scores, labels.y, mask, empty_mask_warning);
}

/// Weighted sum of per-stage losses.
inline Tensor joint_loss(Tape* tape, const std::vector<Tensor>& losses,
                         const std::vector<real_t>& lambdas) {
  if (losses.size() != lambdas.size())
    throw ConfigError("joint_loss: " + std::to_string(losses.size()) + " losses vs " +
                      std::to_string(lambdas.size()) + " weights");
  if (losses.empty()) throw ConfigError("joint_loss: no stages");
  Tensor acc = ops::scale(tape, losses[0], lambdas[0]);
  for (std::size_t t = 1; t < losses.size(); ++t)
    acc = ops::add(tape, acc, ops::scale(tape, losses[t], lambdas[t]));
  return acc;
}

struct TrainSettings {
  real_t lr = real_t(1e-4);
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  real_t tau = real_t(0.5);
  std::uint64_t seed = 0;
  real_t nms_threshold = real_t(0.5);  // for the per-epoch validation mIoU
  int eval_stage = 0;                  // 0 = last stage
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::vector<real_t> stage_losses;
  real_t val_miou = 0;  // in [0,1]
};

inline std::string train_log_header(std::size_t T) {
  std::string h = "epoch";
  for (std::size_t t = 1; t <= T; ++t) h += ",stage_" + std::to_string(t) + "_loss";
  h += ",val_miou";
  return h;
}

inline std::string train_log_row(const EpochRecord& r) {
  char buf[64];
  std::string row = std::to_string(r.epoch);
  for (real_t l : r.stage_losses) {
    std::snprintf(buf, sizeof buf, ",%.10g", static_cast<double>(l));
    row += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.10g", static_cast<double>(r.val_miou));
  row += buf;
  return row;
}

/// Validation mIoU of a model over a sample list, ranking the chosen stage.
inline real_t validation_miou(const PLNModel& model, const std::vector<SyntheticSample>& val,
                              real_t nms_threshold, int eval_stage) {
  if (val.empty()) return 0;
  std::vector<QueryResult> results;
  results.reserve(val.size());
  for (const auto& s : val) {
    auto states = model.forward(nullptr, s.units, s.tokens);
    const int t = eval_stage == 0 ? static_cast<int>(states.size()) : eval_stage;
    QueryResult q;
    q.predictions = strategy1(states, t, s.duration, nms_threshold);
    q.gt_start = s.gt_start;
    q.gt_end = s.gt_end;
    q.duration = s.duration;
    results.push_back(std::move(q));
  }
  return mean_iou(results);
}

/// Mini-batch Adam over the joint loss. Shuffling reseeds per epoch from the
/// run seed, so a resumed run replays the identical sample order. A non-finite
/// loss aborts with the offending epoch/batch/sample in the message.
inline std::vector<EpochRecord> train_model(PLNModel& model,
                                            const std::vector<SyntheticSample>& train,
                                            const std::vector<SyntheticSample>& val,
                                            const TrainSettings& s, AdamState& adam,
                                            std::size_t start_epoch = 0,
                                            std::ostream* csv = nullptr) {
  if (train.empty()) throw InputError("train_model: empty training set");
  if (s.batch_size < 1) throw ConfigError("train_model: batch_size must be >= 1");
  const auto stage_cfgs = model.config().stage_configs();
  const std::size_t T = stage_cfgs.size();
  std::vector<real_t> lambdas;
  for (const auto& sc : stage_cfgs) lambdas.push_back(sc.lambda);

  AdamConfig adam_cfg;
  adam_cfg.lr = s.lr;

  if (csv && start_epoch == 0) *csv << train_log_header(T) << '\n';

  std::vector<EpochRecord> records;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = start_epoch; epoch < s.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(s.seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<real_t> loss_sums(T, 0);
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += s.batch_size) {
      const std::size_t bsz = std::min(s.batch_size, order.size() - b0);
      model.params().zero_grads();
      for (std::size_t k = 0; k < bsz; ++k) {
        const auto& sample = train[order[b0 + k]];
        Tape tape;
        auto states = model.forward(&tape, sample.units, sample.tokens);
        std::vector<Tensor> losses;
        for (std::size_t t = 0; t < T; ++t) {
          LabelMap lm = soft_labels(sample.gt_start, sample.gt_end, states[t].P.N,
                                    sample.duration, s.tau, states[t].P.sample_mask);
          losses.push_back(stage_loss(&tape, states[t].P, lm));
          loss_sums[t] += losses.back().at(0);
        }
        Tensor joint = joint_loss(&tape, losses, lambdas);
        if (!std::isfinite(joint.at(0)))
          throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch + 1) +
                               ", batch " + std::to_string(b0 / s.batch_size) + ", sample index " +
                               std::to_string(order[b0 + k]));
        tape.backward(joint, real_t(1) / static_cast<real_t>(bsz));
        ++seen;
      }
      adam_step(model.params(), adam, adam_cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t t = 0; t < T; ++t)
      rec.stage_losses.push_back(loss_sums[t] / static_cast<real_t>(seen));
    rec.val_miou = validation_miou(model, val, s.nms_threshold, s.eval_stage);
    if (csv) *csv << train_log_row(rec) << '\n';
    records.push_back(std::move(rec));
  }
  return records;
}

/// Model weights plus optional optimizer state and epoch counter, all in one
/// archive keyed by parameter name.
inline void save_model_checkpoint(const std::string& path, const PLNModel& model,
                                  std::uint64_t config_hash, const AdamState* adam = nullptr,
                                  std::size_t epochs_done = 0) {
  std::vector<std::pair<std::string, Tensor>> entries;
  const ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i)
    entries.emplace_back(store.names()[i], store.at(i));
  if (adam && !adam->m.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      entries.emplace_back("adam.m." + store.names()[i],
                           Tensor::from(store.at(i).shape(), adam->m[i]));
      entries.emplace_back("adam.v." + store.names()[i],
                           Tensor::from(store.at(i).shape(), adam->v[i]));
    }
    entries.emplace_back("adam.t", Tensor::full({1}, static_cast<real_t>(adam->t)));
  }
  entries.emplace_back("trainer.epoch", Tensor::full({1}, static_cast<real_t>(epochs_done)));
  checkpoint::save(path, config_hash, entries);
}

struct LoadedCheckpoint {
  std::uint64_t config_hash = 0;
  std::size_t epochs_done = 0;
  bool has_adam = false;
};

/// Restores weights (and optimizer state when present) into a freshly built
/// model. Refuses archives whose config hash differs, unless expected_hash=0.
inline LoadedCheckpoint load_model_checkpoint(const std::string& path, PLNModel& model,
                                              std::uint64_t expected_hash, AdamState* adam = nullptr) {
  std::uint64_t stored_hash = 0;
  auto archive = checkpoint::load(path, &stored_hash);
  if (expected_hash != 0 && stored_hash != expected_hash)
    throw InputError("checkpoint config hash mismatch: expected " +
                     std::to_string(expected_hash) + ", archive has " +
                     std::to_string(stored_hash));
  ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    auto it = archive.find(name);
    if (it == archive.end()) throw InputError("checkpoint missing parameter: " + name);
    Tensor p = store.at(i);
    if (it->second.shape != p.shape())
      throw InputError("checkpoint shape mismatch for " + name);
    for (std::size_t k = 0; k < p.size(); ++k)
      p.value()[k] = static_cast<real_t>(it->second.data[k]);
  }
  LoadedCheckpoint out;
  out.config_hash = stored_hash;
  if (auto it = archive.find("trainer.epoch"); it != archive.end())
    out.epochs_done = static_cast<std::size_t>(it->second.data.at(0));
  if (adam && archive.count("adam.t")) {
    adam->m.assign(store.size(), {});
    adam->v.assign(store.size(), {});
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& me = archive.at("adam.m." + store.names()[i]);
      const auto& ve = archive.at("adam.v." + store.names()[i]);
      adam->m[i].assign(me.data.begin(), me.data.end());
      adam->v[i].assign(ve.data.begin(), ve.data.end());
    }
    adam->t = static_cast<long long>(archive.at("adam.t").data.at(0));
    out.has_adam = true;
  }
  return out;
}

}  // namespace pln

#endif  // PLN_TRAINING_HPP
