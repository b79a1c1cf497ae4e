#ifndef PLN_BRANCH_HPP
#define PLN_BRANCH_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pln/encoders.hpp"
#include "pln/lstm.hpp"
#include "pln/ops.hpp"
#include "pln/params.hpp"
#include "pln/temporal_map.hpp"
#include "pln/tensor.hpp"

namespace pln {

enum class HeadKind { ConvNet, Dot };

inline HeadKind parse_head(const std::string& s) {
  if (s == "convnet") return HeadKind::ConvNet;
  if (s == "dot") return HeadKind::Dot;
  throw ConfigError("unknown prediction head: " + s + " (expected convnet or dot)");
}

/// Loss weights per stage count, following the reference schedule.
inline std::vector<real_t> default_stage_lambdas(std::size_t T) {
  switch (T) {
    case 1: return {real_t(1.0)};
    case 2: return {real_t(1.0), real_t(1.5)};
    case 3: return {real_t(1.0), real_t(1.3), real_t(1.5)};
    case 4: return {real_t(1.0), real_t(1.2), real_t(1.5), real_t(2.0)};
    default: throw ConfigError("no default loss weights for " + std::to_string(T) + " stages");
  }
}

struct StageConfig {
  std::size_t N = 0;
  bool is_first = false;
  real_t lambda = 1;
  int uc_blocks = 0;  // 0 for the first stage and for equal-granularity stages
};

struct ModelConfig {
  std::vector<std::size_t> stages{8, 32};  // clip counts, coarse to fine
  std::size_t d = 32;
  std::size_t d_raw = 16;
  std::size_t vocab = 0;
  std::size_t lstm_layers = 1;
  HeadKind head = HeadKind::ConvNet;
  bool use_cfm = true;
  bool use_uc = true;
  bool use_pe = false;
  bool share_fuse = false;  // one fuse projection pair for all stages
  bool share_cfm = false;   // one gate for all later stages
  std::size_t dense_len = 0;  // 0: per-stage max(2, N/8)
  std::vector<real_t> lambdas;  // empty: defaults for the stage count

  std::size_t stage_count() const { return stages.size(); }

  std::size_t dense_len_for(std::size_t N) const {
    return dense_len == 0 ? default_dense_len(N) : dense_len;
  }

  void validate() const {
    if (stages.empty()) throw ConfigError("model needs at least one stage");
    if (d == 0 || d_raw == 0) throw ConfigError("feature dims must be positive");
    if (vocab < 2) throw ConfigError("vocab too small: " + std::to_string(vocab));
    if (lstm_layers < 1) throw ConfigError("query encoder needs at least one layer");
    if (use_pe && d % 2 != 0) throw ConfigError("positional encoding needs an even feature dim");
    for (std::size_t t = 1; t < stages.size(); ++t) {
      if (stages[t] < stages[t - 1])
        throw ConfigError("stage clip counts must be non-decreasing (coarse to fine)");
      const std::size_t ratio = stages[t] / stages[t - 1];
      if (stages[t] % stages[t - 1] != 0 || (ratio & (ratio - 1)) != 0)
        throw ConfigError("stage ratio " + std::to_string(stages[t - 1]) + "->" +
                          std::to_string(stages[t]) + " is not a power of two");
    }
    if (!lambdas.empty() && lambdas.size() != stages.size())
      throw ConfigError("lambdas length does not match stage count");
    if (lambdas.empty()) default_stage_lambdas(stages.size());  // throws for unsupported T
  }

  std::vector<StageConfig> stage_configs() const {
    validate();
    const std::vector<real_t> ls = lambdas.empty() ? default_stage_lambdas(stages.size()) : lambdas;
    std::vector<StageConfig> out;
    for (std::size_t t = 0; t < stages.size(); ++t) {
      StageConfig sc;
      sc.N = stages[t];
      sc.is_first = (t == 0);
      sc.lambda = ls[t];
      sc.uc_blocks =
          t == 0 ? 0
                 : static_cast<int>(std::lround(std::log2(static_cast<double>(stages[t]) /
                                                          static_cast<double>(stages[t - 1]))));
      out.push_back(sc);
    }
    return out;
  }
};

/// Sigmoid score grid for one stage. All N*N cells hold a computed value; only
/// sampled cells are meaningful, and ranking_score() returns -inf elsewhere.
struct ScoreMap {
  std::size_t N = 0;
  int stage = 1;
  Tensor scores;  // [N, N]
  std::vector<std::uint8_t> valid_mask;
  std::vector<std::uint8_t> sample_mask;

  bool sampled(std::size_t i, std::size_t j) const { return sample_mask[i * N + j] != 0; }

  real_t ranking_score(std::size_t i, std::size_t j) const {
    return sampled(i, j) ? scores.at(i * N + j) : -std::numeric_limits<real_t>::infinity();
  }
};

struct BranchState {
  StageConfig stage;
  TemporalMap2D map;
  Tensor F;  // fused map [d,N,N]
  Tensor G;  // after previous-stage injection
  Tensor H;  // ConvNet output
  ScoreMap P;
  bool cfm_applied = false;
  bool uc_applied = false;
};

struct FuseParams {
  Tensor Wv, bv, Ws, bs;
};
struct CfmParams {
  Tensor Wr, br;
};
struct UcBlockParams {
  Tensor k1, b1, k2, b2;
};
struct HeadParams {
  Tensor k, b;    // convnet head: 1x1 conv
  Tensor Wq, bq;  // dot head: query projection
};

/// Project moment features and the query into the shared width, Hadamard them
/// per cell, zero everything outside the sampled set, emit channels-first.
inline Tensor fuse_map(Tape* tape, const TemporalMap2D& map, const Tensor& f_s,
                       const FuseParams& p) {
  const std::size_t N = map.N, d = map.d;
  if (f_s.size() != p.Ws.dim(0))
    throw ShapeError("fuse_map: query dim " + std::to_string(f_s.size()) +
                     " does not match projection");
  Tensor flat = ops::reshape(tape, map.features, {N * N, d});
  Tensor vproj = ops::affine(tape, flat, p.Wv, p.bv);
  Tensor sproj = ops::affine(tape, f_s, p.Ws, p.bs);
  Tensor srows = ops::tile_rows(tape, sproj, N * N);
  Tensor had = ops::elementwise(tape, vproj, srows, ops::Elem::Mul);

  const std::size_t dd = p.Wv.dim(1);
  Tensor mask = Tensor::zeros({N * N, dd});
  for (std::size_t c = 0; c < N * N; ++c)
    if (map.sample_mask[c])
      for (std::size_t e = 0; e < dd; ++e) mask.at(c * dd + e) = 1;
  Tensor masked = ops::elementwise(tape, had, mask, ops::Elem::Mul);
  return ops::hwc_to_chw(tape, ops::reshape(tape, masked, {N, N, dd}));
}

/// n stacked (upsample x2, conv3x3+ReLU, conv3x3+ReLU) blocks.
inline Tensor upsampling_connection(Tape* tape, const Tensor& H_prev,
                                    const std::vector<UcBlockParams>& blocks) {
  if (blocks.empty()) throw ContractError("upsampling_connection: needs at least one block");
  Tensor h = H_prev;
  for (const auto& blk : blocks) {
    h = ops::upsample2x(tape, h);
    h = ops::activation(tape, ops::conv2d(tape, h, blk.k1, blk.b1, 1), ops::Act::Relu);
    h = ops::activation(tape, ops::conv2d(tape, h, blk.k2, blk.b2, 1), ops::Act::Relu);
  }
  return h;
}

/// Elementwise max with the upsampled previous-stage map (t > 1 path).
inline Tensor inject_previous(Tape* tape, const Tensor& F_t, const Tensor& up_prev) {
  if (!F_t.same_shape(up_prev))
    throw ConfigError("inject_previous: shape mismatch " + shape_str(F_t.shape()) + " vs " +
                      shape_str(up_prev.shape()));
  return ops::elementwise(tape, F_t, up_prev, ops::Elem::Max);
}

/// Two 5x5 conv + ReLU layers with same padding; one parameter set serves
/// every stage.
inline Tensor conv_stack(Tape* tape, const Tensor& G, const Tensor& k1, const Tensor& b1,
                         const Tensor& k2, const Tensor& b2) {
  const int pad1 = static_cast<int>((k1.dim(2) - 1) / 2);
  const int pad2 = static_cast<int>((k2.dim(2) - 1) / 2);
  Tensor h = ops::activation(tape, ops::conv2d(tape, G, k1, b1, pad1), ops::Act::Relu);
  return ops::activation(tape, ops::conv2d(tape, h, k2, b2, pad2), ops::Act::Relu);
}

/// Map H_t to sigmoid scores with either the 1x1-conv head or the
/// query-dot-product head.
inline ScoreMap predict_scores(Tape* tape, const Tensor& H, const TemporalMap2D& map,
                               HeadKind head, const HeadParams& p, const Tensor& f_s, int stage) {
  const std::size_t N = map.N;
  Tensor probs;
  if (head == HeadKind::ConvNet) {
    Tensor logits = ops::conv2d(tape, H, p.k, p.b, 0);  // [1,N,N]
    probs = ops::reshape(tape, ops::activation(tape, logits, ops::Act::Sigmoid), {N, N});
  } else {
    const std::size_t d = H.dim(0);
    Tensor hmat = ops::reshape(tape, ops::chw_to_hwc(tape, H), {N * N, d});
    Tensor qp = ops::affine(tape, f_s, p.Wq, p.bq);            // [1,d]
    Tensor logits = ops::matmul(tape, hmat, ops::reshape(tape, qp, {d, 1}));
    probs = ops::reshape(tape, ops::activation(tape, logits, ops::Act::Sigmoid), {N, N});
  }
  ScoreMap sm;
  sm.N = N;
  sm.stage = stage;
  sm.scores = probs;
  sm.valid_mask = map.valid_mask;
  sm.sample_mask = map.sample_mask;
  return sm;
}

/// The full progressive localizer: clip encoders, per-stage branches with CFM
/// modulation and upsampling-connection injection, a ConvNet shared by every
/// stage, and per-stage prediction heads.
class PLNModel {
 public:
  PLNModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d;
    const std::size_t T = cfg_.stage_count();
    const auto stage_cfgs = cfg_.stage_configs();

    unit_W_ = store_.create("encoder.unit_proj.W", {cfg_.d_raw, d}, cfg_.d_raw, rng);
    unit_b_ = store_.create_zeros("encoder.unit_proj.b", {d});
    embed_ = store_.create("query.embed", {cfg_.vocab, d}, d, rng);
    for (std::size_t l = 0; l < cfg_.lstm_layers; ++l)
      lstm_.push_back(
          LstmLayerParams::create(store_, "query.lstm" + std::to_string(l), d, d, rng));

    for (std::size_t t = 0; t < T; ++t) {
      if (cfg_.share_fuse && t > 0) {
        fuse_.push_back(fuse_.front());
        continue;
      }
      const std::string pre = "stage" + std::to_string(t + 1) + ".fuse.";
      FuseParams fp;
      fp.Wv = store_.create(pre + "Wv", {d, d}, d, rng);
      fp.bv = store_.create_zeros(pre + "bv", {d});
      fp.Ws = store_.create(pre + "Ws", {d, d}, d, rng);
      fp.bs = store_.create_zeros(pre + "bs", {d});
      fuse_.push_back(fp);
    }

    if (cfg_.use_cfm) {
      for (std::size_t t = 1; t < T; ++t) {
        if (cfg_.share_cfm && t > 1) {
          cfm_.push_back(cfm_.front());
          continue;
        }
        const std::string pre = "stage" + std::to_string(t + 1) + ".cfm.";
        CfmParams cp;
        cp.Wr = store_.create(pre + "Wr", {d, d}, d, rng);
        cp.br = store_.create_zeros(pre + "br", {d});
        cfm_.push_back(cp);
      }
    }

    if (cfg_.use_uc) {
      for (std::size_t t = 1; t < T; ++t) {
        std::vector<UcBlockParams> blocks;
        for (int n = 0; n < stage_cfgs[t].uc_blocks; ++n) {
          const std::string pre = "stage" + std::to_string(t + 1) + ".uc.block" +
                                  std::to_string(n) + ".";
          UcBlockParams blk;
          blk.k1 = store_.create(pre + "k1", {d, d, 3, 3}, d * 9, rng);
          blk.b1 = store_.create_zeros(pre + "b1", {d});
          blk.k2 = store_.create(pre + "k2", {d, d, 3, 3}, d * 9, rng);
          blk.b2 = store_.create_zeros(pre + "b2", {d});
          // The closing kernel starts at zero so the injection is silent at
          // init and the new stage trains from the first epoch; without this
          // the max chases upsampled noise until the earlier stage matures.
          // The kernel itself still gets gradient through its healthy inputs.
          if (n + 1 == stage_cfgs[t].uc_blocks)
            std::fill(blk.k2.data(), blk.k2.data() + blk.k2.size(), real_t(0));
          blocks.push_back(blk);
        }
        uc_.push_back(std::move(blocks));
      }
    }

    conv_k1_ = store_.create("convnet.k1", {d, d, 5, 5}, d * 25, rng);
    conv_b1_ = store_.create_zeros("convnet.b1", {d});
    conv_k2_ = store_.create("convnet.k2", {d, d, 5, 5}, d * 25, rng);
    conv_b2_ = store_.create_zeros("convnet.b2", {d});

    for (std::size_t t = 0; t < T; ++t) {
      const std::string pre = "stage" + std::to_string(t + 1) + ".head.";
      HeadParams hp;
      if (cfg_.head == HeadKind::ConvNet) {
        hp.k = store_.create(pre + "k", {1, d, 1, 1}, d, rng);
        hp.b = store_.create_zeros(pre + "b", {1});
      } else {
        hp.Wq = store_.create(pre + "Wq", {d, d}, d, rng);
        hp.bq = store_.create_zeros(pre + "bq", {d});
      }
      head_.push_back(hp);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  Tensor encode_query_vector(Tape* tape, const std::vector<int>& tokens) const {
    return encode_query(tape, tokens, embed_, lstm_, cfg_.d);
  }

  std::vector<BranchState> forward(Tape* tape, const Tensor& units_raw,
                                   const std::vector<int>& tokens) const {
    const auto stage_cfgs = cfg_.stage_configs();
    if (units_raw.ndim() != 2 || units_raw.dim(1) != cfg_.d_raw)
      throw ShapeError("forward: units must be [l_v, " + std::to_string(cfg_.d_raw) + "]");
    if (units_raw.dim(0) < stage_cfgs.back().N)
      throw InputError("forward: video has fewer units than the finest clip count");

    Tensor units = pad_units(units_raw, stage_cfgs.back().N);
    Tensor proj = encode_units(tape, units, unit_W_, unit_b_);
    Tensor f_s = encode_query_vector(tape, tokens);

    std::vector<BranchState> states;
    for (std::size_t t = 0; t < stage_cfgs.size(); ++t) {
      BranchState st;
      st.stage = stage_cfgs[t];
      ClipSet clips = make_clips(tape, proj, st.stage.N, static_cast<int>(t + 1));
      if (cfg_.use_pe) clips = positional_encode(tape, clips);
      if (t > 0 && cfg_.use_cfm) {
        clips = cfm_modulate(tape, clips, states[t - 1].H, cfm_[t - 1].Wr, cfm_[t - 1].br);
        st.cfm_applied = true;
      }
      st.map = build_moment_map(tape, clips.clips, cfg_.dense_len_for(st.stage.N));
      st.F = fuse_map(tape, st.map, f_s, fuse_[t]);
      if (t > 0 && cfg_.use_uc) {
        if (st.stage.uc_blocks > 0) {
          Tensor up = upsampling_connection(tape, states[t - 1].H, uc_[t - 1]);
          st.G = inject_previous(tape, st.F, up);
        } else {
          st.G = inject_previous(tape, st.F, states[t - 1].H);  // equal granularity
        }
        st.uc_applied = true;
      } else {
        st.G = st.F;
      }
      st.H = conv_stack(tape, st.G, conv_k1_, conv_b1_, conv_k2_, conv_b2_);
      st.P = predict_scores(tape, st.H, st.map, cfg_.head, head_[t], f_s,
                            static_cast<int>(t + 1));
      states.push_back(std::move(st));
    }
    return states;
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Tensor unit_W_, unit_b_, embed_;
  std::vector<LstmLayerParams> lstm_;
  std::vector<FuseParams> fuse_;
  std::vector<CfmParams> cfm_;
  std::vector<std::vector<UcBlockParams>> uc_;
  Tensor conv_k1_, conv_b1_, conv_k2_, conv_b2_;
  std::vector<HeadParams> head_;
};

}  // namespace pln

#endif  // PLN_BRANCH_HPP
