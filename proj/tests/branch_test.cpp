#include <gtest/gtest.h>

#include <random>

#include "pln/branch.hpp"

using namespace pln;

TEST(HeadKind, ParsesKnownNames) {
  EXPECT_EQ(parse_head("convnet"), HeadKind::ConvNet);
  EXPECT_EQ(parse_head("dot"), HeadKind::Dot);
  EXPECT_THROW(parse_head("mlp"), ConfigError);
}

TEST(StageLambdas, DefaultsPerStageCount) {
  EXPECT_EQ(default_stage_lambdas(1), (std::vector<real_t>{1.0}));
  EXPECT_EQ(default_stage_lambdas(2), (std::vector<real_t>{1.0, 1.5}));
  EXPECT_EQ(default_stage_lambdas(3), (std::vector<real_t>{1.0, 1.3, 1.5}));
  EXPECT_EQ(default_stage_lambdas(4), (std::vector<real_t>{1.0, 1.2, 1.5, 2.0}));
  EXPECT_THROW(default_stage_lambdas(5), ConfigError);
}

static ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.stages = {4, 8};
  cfg.d = 8;
  cfg.d_raw = 4;
  cfg.vocab = 12;
  return cfg;
}

TEST(ModelConfig, ValidatesStageGeometry) {
  ModelConfig cfg = tiny_config();
  cfg.stages = {8, 12};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.stages = {8, 4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.stages = {8, 8};  // equal granularity is allowed
  EXPECT_NO_THROW(cfg.validate());
  cfg.stages = {4, 8};
  cfg.vocab = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelConfig, UcBlockCountIsLogOfRatio) {
  ModelConfig cfg = tiny_config();
  cfg.stages = {32, 128};
  auto sc = cfg.stage_configs();
  EXPECT_EQ(sc[0].uc_blocks, 0);
  EXPECT_EQ(sc[1].uc_blocks, 2);
  cfg.stages = {16, 32};
  EXPECT_EQ(cfg.stage_configs()[1].uc_blocks, 1);
  cfg.stages = {32, 32};
  EXPECT_EQ(cfg.stage_configs()[1].uc_blocks, 0);
}

TEST(FuseMap, IdentityProjectionOracle) {
  Tensor clips = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto map = build_moment_map(nullptr, clips, 2);
  FuseParams p;
  p.Wv = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.bv = Tensor::zeros({2});
  p.Ws = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.bs = Tensor::zeros({2});
  Tensor f_s = Tensor::from({1, 2}, {2, 10});
  Tensor F = fuse_map(nullptr, map, f_s, p);
  ASSERT_EQ(F.ndim(), 3u);
  EXPECT_EQ(F.dim(0), 2u);  // channels first
  // F[c,i,j] = features[i,j,c] * f_s[c] on sampled cells
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = i; j < 2; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_DOUBLE_EQ(F.at(c, i, j), map.features.at(i, j, c) * f_s.at(c));
  // below-diagonal cell is zeroed
  EXPECT_DOUBLE_EQ(F.at(0, 1, 0), 0.0);
  EXPECT_DOUBLE_EQ(F.at(1, 1, 0), 0.0);
}

TEST(FuseMap, ZeroQueryZeroesEverything) {
  std::mt19937_64 rng(0);
  Tensor clips = Tensor::uniform({4, 3}, -1, 1, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  FuseParams p;
  p.Wv = Tensor::uniform({3, 3}, -1, 1, rng);
  p.bv = Tensor::uniform({3}, -1, 1, rng);
  p.Ws = Tensor::uniform({3, 3}, -1, 1, rng);
  p.bs = Tensor::zeros({3});
  Tensor f_s = Tensor::zeros({1, 3});
  Tensor F = fuse_map(nullptr, map, f_s, p);
  for (std::size_t k = 0; k < F.size(); ++k) EXPECT_DOUBLE_EQ(F.at(k), 0.0);
}

TEST(FuseMap, UnsampledCellsAreZero) {
  std::mt19937_64 rng(1);
  Tensor clips = Tensor::uniform({8, 2}, 0.5, 1.5, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  FuseParams p;
  p.Wv = Tensor::uniform({2, 2}, -1, 1, rng);
  p.bv = Tensor::uniform({2}, -1, 1, rng);
  p.Ws = Tensor::uniform({2, 2}, -1, 1, rng);
  p.bs = Tensor::uniform({2}, -1, 1, rng);
  std::mt19937_64 qrng(2);
  Tensor f_s = Tensor::uniform({1, 2}, -1, 1, qrng);
  Tensor F = fuse_map(nullptr, map, f_s, p);
  // (1,4) has length 4 > dense 2 and misaligned boundaries: dropped by sampling
  ASSERT_EQ(map.sample_mask[1 * 8 + 4], 0);
  EXPECT_DOUBLE_EQ(F.at(0, 1, 4), 0.0);
  EXPECT_DOUBLE_EQ(F.at(1, 1, 4), 0.0);
}

TEST(UpsamplingConnection, DoublesPerBlock) {
  std::mt19937_64 rng(3);
  const std::size_t d = 4;
  Tensor H = Tensor::uniform({d, 8, 8}, -1, 1, rng);
  auto mk_block = [&] {
    UcBlockParams b;
    b.k1 = Tensor::uniform({d, d, 3, 3}, -0.2, 0.2, rng);
    b.b1 = Tensor::zeros({d});
    b.k2 = Tensor::uniform({d, d, 3, 3}, -0.2, 0.2, rng);
    b.b2 = Tensor::zeros({d});
    return b;
  };
  Tensor one = upsampling_connection(nullptr, H, {mk_block()});
  EXPECT_EQ(one.dim(1), 16u);
  EXPECT_EQ(one.dim(2), 16u);
  Tensor two = upsampling_connection(nullptr, H, {mk_block(), mk_block()});
  EXPECT_EQ(two.dim(0), d);
  EXPECT_EQ(two.dim(1), 32u);
  EXPECT_EQ(two.dim(2), 32u);
  EXPECT_THROW(upsampling_connection(nullptr, H, {}), ContractError);
}

TEST(UpsamplingConnection, ZeroKernelsGiveZeroMap) {
  Tensor H = Tensor::full({2, 4, 4}, 3.0);
  UcBlockParams b;
  b.k1 = Tensor::zeros({2, 2, 3, 3});
  b.b1 = Tensor::zeros({2});
  b.k2 = Tensor::zeros({2, 2, 3, 3});
  b.b2 = Tensor::zeros({2});
  Tensor up = upsampling_connection(nullptr, H, {b});
  for (std::size_t k = 0; k < up.size(); ++k) EXPECT_DOUBLE_EQ(up.at(k), 0.0);
}

TEST(InjectPrevious, ElementwiseMax) {
  Tensor F = Tensor::from({1, 2, 2}, {1, 5, 3, 2});
  Tensor U = Tensor::from({1, 2, 2}, {4, 2, 3, 9});
  Tensor G = inject_previous(nullptr, F, U);
  EXPECT_DOUBLE_EQ(G.at(0), 4.0);
  EXPECT_DOUBLE_EQ(G.at(1), 5.0);
  EXPECT_DOUBLE_EQ(G.at(2), 3.0);
  EXPECT_DOUBLE_EQ(G.at(3), 9.0);
  Tensor bad = Tensor::zeros({1, 3, 3});
  EXPECT_THROW(inject_previous(nullptr, F, bad), ConfigError);
}

TEST(ConvStack, PreservesShapeAndKillsZeros) {
  std::mt19937_64 rng(4);
  const std::size_t d = 3;
  Tensor G = Tensor::uniform({d, 8, 8}, -1, 1, rng);
  Tensor k1 = Tensor::uniform({d, d, 5, 5}, -0.1, 0.1, rng), b1 = Tensor::zeros({d});
  Tensor k2 = Tensor::uniform({d, d, 5, 5}, -0.1, 0.1, rng), b2 = Tensor::zeros({d});
  Tensor H = conv_stack(nullptr, G, k1, b1, k2, b2);
  EXPECT_TRUE(H.same_shape(G));
  for (std::size_t k = 0; k < H.size(); ++k) EXPECT_GE(H.at(k), 0.0);  // ReLU output
  Tensor Hz = conv_stack(nullptr, Tensor::zeros({d, 8, 8}), k1, b1, k2, b2);
  for (std::size_t k = 0; k < Hz.size(); ++k) EXPECT_DOUBLE_EQ(Hz.at(k), 0.0);
}

TEST(PredictScores, ZeroHeadGivesHalfEverywhere) {
  std::mt19937_64 rng(5);
  Tensor clips = Tensor::uniform({4, 2}, -1, 1, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  Tensor H = Tensor::uniform({2, 4, 4}, -1, 1, rng);
  HeadParams hp;
  hp.k = Tensor::zeros({1, 2, 1, 1});
  hp.b = Tensor::zeros({1});
  Tensor f_s = Tensor::zeros({1, 2});
  ScoreMap sm = predict_scores(nullptr, H, map, HeadKind::ConvNet, hp, f_s, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(sm.scores.at(i, j), 0.5);
  // unsampled cells rank at -inf, sampled ones at their sigmoid score
  EXPECT_TRUE(std::isinf(sm.ranking_score(1, 0)));
  EXPECT_DOUBLE_EQ(sm.ranking_score(0, 0), 0.5);
}

TEST(PredictScores, DotHeadUsesQueryDirection) {
  Tensor clips = Tensor::from({2, 2}, {1, 1, 1, 1});
  auto map = build_moment_map(nullptr, clips, 2);
  Tensor H = Tensor::from({2, 2, 2}, {
                                         2, 0,  // channel 0
                                         0, 0,
                                         0, 0,  // channel 1
                                         0, 3,
                                     });
  HeadParams hp;
  hp.Wq = Tensor::from({2, 2}, {1, 0, 0, 1});
  hp.bq = Tensor::zeros({2});
  Tensor f_s = Tensor::from({1, 2}, {1, 0});  // aligned with channel 0 only
  ScoreMap sm = predict_scores(nullptr, H, map, HeadKind::Dot, hp, f_s, 1);
  EXPECT_NEAR(sm.scores.at(0, 0), 1.0 / (1.0 + std::exp(-2.0)), 1e-12);
  EXPECT_DOUBLE_EQ(sm.scores.at(1, 1), 0.5);  // H[.,1,1] orthogonal to the query
}

TEST(Model, ForwardShapesAndFlags) {
  PLNModel model(tiny_config(), 0);
  std::mt19937_64 rng(6);
  Tensor units = Tensor::uniform({16, 4}, -1, 1, rng);
  auto states = model.forward(nullptr, units, {0, 3, 1});
  ASSERT_EQ(states.size(), 2u);
  EXPECT_EQ(states[0].P.N, 4u);
  EXPECT_EQ(states[1].P.N, 8u);
  EXPECT_EQ(states[0].H.dim(0), 8u);
  EXPECT_EQ(states[0].H.dim(1), 4u);
  EXPECT_EQ(states[1].H.dim(2), 8u);
  EXPECT_FALSE(states[0].cfm_applied);
  EXPECT_FALSE(states[0].uc_applied);
  EXPECT_TRUE(states[1].cfm_applied);
  EXPECT_TRUE(states[1].uc_applied);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_GT(states[1].P.scores.at(i, j), 0.0);
      EXPECT_LT(states[1].P.scores.at(i, j), 1.0);
    }
}

TEST(Model, SingleStageHasNoProgressiveParts) {
  ModelConfig cfg = tiny_config();
  cfg.stages = {8};
  PLNModel model(cfg, 0);
  std::mt19937_64 rng(7);
  Tensor units = Tensor::uniform({16, 4}, -1, 1, rng);
  auto states = model.forward(nullptr, units, {0, 2, 1});
  ASSERT_EQ(states.size(), 1u);
  EXPECT_FALSE(states[0].cfm_applied);
  EXPECT_FALSE(states[0].uc_applied);
  EXPECT_EQ(states[0].G.data(), states[0].F.data());  // no injection happened
  for (const auto& name : model.params().names()) {
    EXPECT_EQ(name.find(".cfm."), std::string::npos) << name;
    EXPECT_EQ(name.find(".uc."), std::string::npos) << name;
  }
}

TEST(Model, AblationsSkipTheirParams) {
  ModelConfig cfg = tiny_config();
  cfg.use_cfm = false;
  PLNModel no_cfm(cfg, 0);
  for (const auto& name : no_cfm.params().names())
    EXPECT_EQ(name.find(".cfm."), std::string::npos) << name;

  cfg = tiny_config();
  cfg.use_uc = false;
  PLNModel no_uc(cfg, 0);
  for (const auto& name : no_uc.params().names())
    EXPECT_EQ(name.find(".uc."), std::string::npos) << name;
  std::mt19937_64 rng(8);
  Tensor units = Tensor::uniform({16, 4}, -1, 1, rng);
  auto states = no_uc.forward(nullptr, units, {0, 1});
  EXPECT_TRUE(states[1].cfm_applied);
  EXPECT_FALSE(states[1].uc_applied);
  EXPECT_EQ(states[1].G.data(), states[1].F.data());
}

TEST(Model, EqualGranularityStagesInjectDirectly) {
  ModelConfig cfg = tiny_config();
  cfg.stages = {8, 8};
  PLNModel model(cfg, 0);
  std::mt19937_64 rng(9);
  Tensor units = Tensor::uniform({16, 4}, -1, 1, rng);
  auto states = model.forward(nullptr, units, {0, 1});
  EXPECT_TRUE(states[1].uc_applied);
  EXPECT_EQ(states[1].map.N, states[0].map.N);
}

TEST(Model, ConstructionIsSeedDeterministic) {
  PLNModel a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool any_diff_c = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    Tensor ta = a.params().at(i), tb = b.params().at(i), tc = c.params().at(i);
    for (std::size_t k = 0; k < ta.size(); ++k) {
      EXPECT_EQ(ta.at(k), tb.at(k));
      if (ta.at(k) != tc.at(k)) any_diff_c = true;
    }
  }
  EXPECT_TRUE(any_diff_c);
}

TEST(Model, RejectsBadInputs) {
  PLNModel model(tiny_config(), 0);
  EXPECT_THROW(model.forward(nullptr, Tensor::zeros({16, 5}), {0, 1}), ShapeError);
  EXPECT_THROW(model.forward(nullptr, Tensor::zeros({4, 4}), {0, 1}), InputError);
}

TEST(Model, SharedConvNetAcrossStages) {
  // zeroing the shared conv kernels flattens every stage's map at once
  ModelConfig cfg = tiny_config();
  PLNModel model(cfg, 0);
  for (const std::string name : {"convnet.k1", "convnet.b1", "convnet.k2", "convnet.b2"}) {
    Tensor t = model.params().get(name);
    std::fill(t.data(), t.data() + t.size(), real_t(0));
  }
  std::mt19937_64 rng(10);
  Tensor units = Tensor::uniform({16, 4}, -1, 1, rng);
  auto states = model.forward(nullptr, units, {0, 1});
  for (const auto& st : states)
    for (std::size_t k = 0; k < st.H.size(); ++k) EXPECT_DOUBLE_EQ(st.H.at(k), 0.0);
}
