#include <gtest/gtest.h>

#include <random>

#include "pln/temporal_map.hpp"

using namespace pln;

// Independent reimplementation of the sampling rule, used as the oracle below.
static bool oracle_keep(std::size_t i, std::size_t j, std::size_t dense_len) {
  const std::size_t len = j - i + 1;
  if (len <= dense_len) return true;
  std::size_t stride = 1;
  while (dense_len * stride < len) stride *= 2;
  return (i % stride == 0) && ((j + 1) % stride == 0);
}

TEST(SparseSample, RejectsZeroDenseLen) {
  EXPECT_THROW(sparse_sample_mask(4, 0), InputError);
}

TEST(SparseSample, SpotChecksAtNEight) {
  auto mask = sparse_sample_mask(8, 2);
  // length-4 moment starting at an aligned cell is kept, the shifted one is not
  EXPECT_EQ(mask[0 * 8 + 3], 1);
  EXPECT_EQ(mask[1 * 8 + 4], 0);
  // short moments are always kept
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(mask[i * 8 + i], 1);
}

TEST(SparseSample, MatchesOracleAcrossManyShapes) {
  int fixtures = 0;
  for (std::size_t N : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 12u, 16u, 31u, 32u}) {
    for (std::size_t dense : {1u, 2u, 3u, 4u, 8u, 33u}) {
      auto mask = sparse_sample_mask(N, dense);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const bool expected = j >= i && oracle_keep(i, j, dense);
          ASSERT_EQ(mask[i * N + j] != 0, expected)
              << "N=" << N << " dense=" << dense << " cell (" << i << "," << j << ")";
        }
      ++fixtures;
    }
  }
  EXPECT_GE(fixtures, 60);
}

TEST(SparseSample, KeepsAtLeastTheDiagonal) {
  for (std::size_t N : {2u, 8u, 32u, 128u}) {
    auto mask = sparse_sample_mask(N, default_dense_len(N));
    std::size_t kept = 0;
    for (auto v : mask) kept += v;
    EXPECT_GE(kept, N);
  }
}

TEST(DefaultDenseLen, FloorsAtTwo) {
  EXPECT_EQ(default_dense_len(4), 2u);
  EXPECT_EQ(default_dense_len(8), 2u);
  EXPECT_EQ(default_dense_len(32), 4u);
  EXPECT_EQ(default_dense_len(128), 16u);
}

TEST(MomentMap, ScalarSpotChecks) {
  Tensor clips = Tensor::from({3, 1}, {1, 3, 2});
  auto map = build_moment_map(nullptr, clips, 3);
  EXPECT_DOUBLE_EQ(map.features.at(0, 2, 0), 3.0);
  EXPECT_DOUBLE_EQ(map.features.at(1, 2, 0), 3.0);
  EXPECT_DOUBLE_EQ(map.features.at(0, 1, 0), 3.0);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(map.features.at(i, i, 0), clips.at(i, 0));
  // cells below the diagonal are invalid and hard-zeroed
  EXPECT_DOUBLE_EQ(map.features.at(2, 0, 0), 0.0);
  EXPECT_EQ(map.valid_mask[2 * 3 + 0], 0);
  EXPECT_EQ(map.valid_mask[0 * 3 + 2], 1);
}

TEST(MomentMap, ValidCellCountAtNEight) {
  std::mt19937_64 rng(0);
  Tensor clips = Tensor::uniform({8, 4}, -1, 1, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  std::size_t valid = 0;
  for (auto v : map.valid_mask) valid += v;
  EXPECT_EQ(valid, 36u);  // N*(N+1)/2
}

TEST(MomentMap, MatchesBruteForceOracle) {
  int fixtures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (std::size_t N : {1u, 2u, 5u, 8u, 13u}) {
      std::mt19937_64 rng(seed * 1000 + N);
      const std::size_t d = 3;
      Tensor clips = Tensor::uniform({N, d}, -5, 5, rng);
      auto map = build_moment_map(nullptr, clips, default_dense_len(N));
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
          for (std::size_t c = 0; c < d; ++c) {
            real_t expected = 0;
            if (j >= i) {
              expected = clips.at(i, c);
              for (std::size_t r = i + 1; r <= j; ++r)
                expected = std::max(expected, clips.at(r, c));
            }
            ASSERT_DOUBLE_EQ(map.features.at(i, j, c), expected)
                << "seed=" << seed << " N=" << N << " (" << i << "," << j << "," << c << ")";
          }
      ++fixtures;
    }
  }
  EXPECT_EQ(fixtures, 100);
}

TEST(MomentMap, RowExtensionIsMonotone) {
  std::mt19937_64 rng(3);
  Tensor clips = Tensor::uniform({8, 4}, -1, 1, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i; j + 1 < 8; ++j)
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_LE(map.features.at(i, j, c), map.features.at(i, j + 1, c));
}

TEST(MomentSeconds, QuarterMapping) {
  auto [s, e] = moment_to_seconds(1, 2, 4, 8.0);
  EXPECT_DOUBLE_EQ(s, 2.0);
  EXPECT_DOUBLE_EQ(e, 6.0);
}

TEST(MomentSeconds, FullSpanCoversDuration) {
  auto [s, e] = moment_to_seconds(0, 7, 8, 120.0);
  EXPECT_DOUBLE_EQ(s, 0.0);
  EXPECT_DOUBLE_EQ(e, 120.0);
}

TEST(MomentSeconds, RejectsBadInputs) {
  EXPECT_THROW(moment_to_seconds(-1, 2, 4, 8.0), InputError);
  EXPECT_THROW(moment_to_seconds(2, 1, 4, 8.0), InputError);
  EXPECT_THROW(moment_to_seconds(0, 4, 4, 8.0), InputError);
  EXPECT_THROW(moment_to_seconds(0, 1, 4, 0.0), InputError);
}

TEST(TemporalIou, SpotChecks) {
  EXPECT_NEAR(temporal_iou(2, 6, 4, 8), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(temporal_iou(0, 1, 2, 3), 0.0);
  EXPECT_DOUBLE_EQ(temporal_iou(1, 4, 1, 4), 1.0);
  EXPECT_DOUBLE_EQ(temporal_iou(0, 0, 0, 0), 0.0);  // degenerate
}

TEST(TemporalIou, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 10);
  for (int k = 0; k < 500; ++k) {
    double a0 = u(rng), a1 = a0 + u(rng), b0 = u(rng), b1 = b0 + u(rng);
    double ab = temporal_iou(a0, a1, b0, b1), ba = temporal_iou(b0, b1, a0, a1);
    EXPECT_DOUBLE_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(CrossStageAlign, RefinementSpotCheck) {
  auto cell = cross_stage_align(1, 2, 8, 32);
  ASSERT_TRUE(cell.has_value());
  EXPECT_EQ(cell->first, 4);
  EXPECT_EQ(cell->second, 11);
}

TEST(CrossStageAlign, CoarseningRequiresBoundaryAlignment) {
  auto hit = cross_stage_align(4, 11, 32, 8);
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->first, 1);
  EXPECT_EQ(hit->second, 2);
  EXPECT_FALSE(cross_stage_align(5, 11, 32, 8).has_value());
  EXPECT_FALSE(cross_stage_align(4, 10, 32, 8).has_value());
}

TEST(CrossStageAlign, RoundTripsThroughRefinement) {
  for (int i = 0; i < 8; ++i)
    for (int j = i; j < 8; ++j) {
      auto fine = cross_stage_align(i, j, 8, 32);
      ASSERT_TRUE(fine.has_value());
      auto back = cross_stage_align(fine->first, fine->second, 32, 8);
      ASSERT_TRUE(back.has_value());
      EXPECT_EQ(back->first, i);
      EXPECT_EQ(back->second, j);
    }
}

TEST(CrossStageAlign, SameGranularityIsIdentity) {
  auto cell = cross_stage_align(2, 5, 8, 8);
  ASSERT_TRUE(cell.has_value());
  EXPECT_EQ(cell->first, 2);
  EXPECT_EQ(cell->second, 5);
}

TEST(CrossStageAlign, RejectsIncompatibleCounts) {
  EXPECT_THROW(cross_stage_align(0, 0, 8, 12), ConfigError);
  EXPECT_THROW(cross_stage_align(0, 0, 0, 8), ConfigError);
}

TEST(MomentMap, SampleMaskIsSubsetOfValid) {
  std::mt19937_64 rng(5);
  Tensor clips = Tensor::uniform({16, 2}, -1, 1, rng);
  auto map = build_moment_map(nullptr, clips, 2);
  for (std::size_t k = 0; k < map.sample_mask.size(); ++k)
    if (map.sample_mask[k]) EXPECT_TRUE(map.valid_mask[k]);
}
