#ifndef PLN_CONFIG_HPP
#define PLN_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pln/branch.hpp"
#include "pln/dataset.hpp"
#include "pln/evaluate.hpp"
#include "pln/training.hpp"

namespace pln {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return nlohmann::json{{"stages", m.stages},
                        {"d", m.d},
                        {"d_raw", m.d_raw},
                        {"vocab", m.vocab},
                        {"lstm_layers", m.lstm_layers},
                        {"head", m.head == HeadKind::ConvNet ? "convnet" : "dot"},
                        {"cfm", m.use_cfm},
                        {"uc", m.use_uc},
                        {"pe", m.use_pe},
                        {"share_fuse", m.share_fuse},
                        {"share_cfm", m.share_cfm},
                        {"dense_len", m.dense_len},
                        {"lambdas", m.lambdas}};
}

/// Everything that shapes the parameter set feeds the hash; it guards a
/// checkpoint against evaluation under a drifted configuration.
inline std::uint64_t config_hash(const ModelConfig& m) {
  return fnv1a64(model_config_json(m).dump());
}

/// One file drives every subcommand; sections it omits fall back to defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
  ModelConfig model;
  GeneratorConfig gen;

  // train section
  TrainSettings train;
  std::string train_dataset;
  std::string val_dataset;  // empty: split val_count samples off the tail
  std::size_t val_count = 500;

  // eval section
  EvalSettings eval;
  std::string eval_checkpoint;
  std::string eval_dataset;
};

inline void apply_preset(RunConfig& rc, const std::string& name) {
  if (name.empty()) return;
  if (name == "tacos-like") {
    rc.model.stages = {32, 128};
    rc.model.use_pe = false;
    rc.eval.nms_threshold = real_t(0.4);
    rc.train.nms_threshold = real_t(0.4);
  } else if (name == "activitynet-like") {
    rc.model.stages = {16, 64};
    rc.model.use_pe = true;
    rc.eval.nms_threshold = real_t(0.5);
    rc.train.nms_threshold = real_t(0.5);
  } else if (name == "charades-like") {
    rc.model.stages = {16, 64};
    rc.model.use_pe = false;
    rc.eval.nms_threshold = real_t(0.45);
    rc.train.nms_threshold = real_t(0.45);
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  if (j.contains("preset")) apply_preset(rc, j.at("preset").get<std::string>());
  rc.seed = j.value("seed", rc.seed);
  rc.out_dir = j.value("out", rc.out_dir);

  if (j.contains("model")) {
    const auto& m = j.at("model");
    rc.model.stages = m.value("stages", rc.model.stages);
    rc.model.d = m.value("d", rc.model.d);
    rc.model.d_raw = m.value("d_raw", rc.model.d_raw);
    rc.model.lstm_layers = m.value("lstm_layers", rc.model.lstm_layers);
    if (m.contains("head")) rc.model.head = parse_head(m.at("head").get<std::string>());
    rc.model.use_cfm = m.value("cfm", rc.model.use_cfm);
    rc.model.use_uc = m.value("uc", rc.model.use_uc);
    rc.model.use_pe = m.value("pe", rc.model.use_pe);
    rc.model.share_fuse = m.value("share_fuse", rc.model.share_fuse);
    rc.model.share_cfm = m.value("share_cfm", rc.model.share_cfm);
    rc.model.dense_len = m.value("dense_len", rc.model.dense_len);
    rc.model.lambdas = m.value("lambdas", rc.model.lambdas);
  }

  if (j.contains("data")) rc.gen = generator_config_from_json(j.at("data"));
  rc.gen.d_raw = rc.model.d_raw;  // single source of truth for the raw width

  if (j.contains("train")) {
    const auto& t = j.at("train");
    rc.train.lr = t.value("lr", rc.train.lr);
    rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
    rc.train.epochs = t.value("epochs", rc.train.epochs);
    rc.train.tau = t.value("tau", rc.train.tau);
    rc.train_dataset = t.value("dataset", rc.train_dataset);
    rc.val_dataset = t.value("val_dataset", rc.val_dataset);
    rc.val_count = t.value("val_count", rc.val_count);
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    rc.eval.strategy = e.value("strategy", rc.eval.strategy);
    rc.eval.t_select = e.value("t", rc.eval.t_select);
    rc.eval.nms_threshold = e.value("nms", rc.eval.nms_threshold);
    rc.eval.n_buckets = e.value("n_buckets", rc.eval.n_buckets);
    rc.eval.topk = e.value("topk", rc.eval.topk);
    rc.eval_checkpoint = e.value("checkpoint", rc.eval_checkpoint);
    rc.eval_dataset = e.value("dataset", rc.eval_dataset);
  }

  rc.train.seed = rc.seed;
  rc.train.eval_stage = rc.eval.t_select;
  rc.train.nms_threshold = rc.eval.nms_threshold;
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace pln

#endif  // PLN_CONFIG_HPP
