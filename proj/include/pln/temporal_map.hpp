#ifndef PLN_TEMPORAL_MAP_HPP
#define PLN_TEMPORAL_MAP_HPP

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "pln/ops.hpp"
#include "pln/tensor.hpp"

namespace pln {

/// Candidate-moment grid at one stage. Cell (i,j) is the moment spanning clips
/// i..j inclusive; cells with i > j are invalid and their features are exactly
/// zero. sample_mask is always a subset of valid_mask.
struct TemporalMap2D {
  std::size_t N = 0;
  std::size_t d = 0;
  Tensor features;                        // [N, N, d]
  std::vector<std::uint8_t> valid_mask;   // N*N, row-major (i*N+j)
  std::vector<std::uint8_t> sample_mask;  // N*N
};

struct Moment {
  int start_clip = 0;
  int end_clip = 0;  // inclusive
  real_t start_sec = 0;
  real_t end_sec = 0;
  int stage = 1;
};

/// Short moments are kept densely; longer ones on a power-of-two grid whose
/// stride doubles each octave above dense_len. Keeps every diagonal cell.
inline std::vector<std::uint8_t> sparse_sample_mask(std::size_t N, std::size_t dense_len) {
  if (dense_len < 1) throw InputError("sparse_sample_mask: dense_len must be >= 1");
  std::vector<std::uint8_t> mask(N * N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i; j < N; ++j) {
      const std::size_t len = j - i + 1;
      if (len <= dense_len) {
        mask[i * N + j] = 1;
        continue;
      }
      std::size_t stride = 2;  // smallest power of two with dense_len*stride >= len
      while (dense_len * stride < len) stride *= 2;
      if (i % stride == 0 && (j + 1) % stride == 0) mask[i * N + j] = 1;
    }
  }
  return mask;
}

inline std::size_t default_dense_len(std::size_t N) { return std::max<std::size_t>(2, N / 8); }

/// Builds the map from [N,d] clip features: upper triangle gets the running
/// elementwise max over the clip range, the rest stays zero.
inline TemporalMap2D build_moment_map(Tape* tape, const Tensor& clips, std::size_t dense_len) {
  if (clips.ndim() != 2 || clips.dim(0) == 0)
    throw ShapeError("build_moment_map: expected nonempty clips[N,d]");
  TemporalMap2D map;
  map.N = clips.dim(0);
  map.d = clips.dim(1);
  map.features = ops::range_max_map(tape, clips);
  map.valid_mask.assign(map.N * map.N, 0);
  for (std::size_t i = 0; i < map.N; ++i)
    for (std::size_t j = i; j < map.N; ++j) map.valid_mask[i * map.N + j] = 1;
  map.sample_mask = sparse_sample_mask(map.N, dense_len);
  return map;
}

/// Clip-grid cell to absolute time. End is exclusive in seconds so adjacent
/// moments tile the video exactly.
inline std::pair<real_t, real_t> moment_to_seconds(int i, int j, std::size_t N, real_t duration) {
  if (i < 0 || j < i || static_cast<std::size_t>(j) >= N)
    throw InputError("moment_to_seconds: cell (" + std::to_string(i) + "," + std::to_string(j) +
                     ") outside grid N=" + std::to_string(N));
  if (duration <= 0) throw InputError("moment_to_seconds: nonpositive duration");
  const real_t unit = duration / static_cast<real_t>(N);
  return {static_cast<real_t>(i) * unit, static_cast<real_t>(j + 1) * unit};
}

/// Intersection over union of two time intervals; union is the total covered
/// length, so disjoint intervals score 0. Degenerate intervals contribute no
/// overlap.
inline real_t temporal_iou(real_t a_start, real_t a_end, real_t b_start, real_t b_end) {
  const real_t inter = std::max(real_t(0), std::min(a_end, b_end) - std::max(a_start, b_start));
  const real_t uni = (a_end - a_start) + (b_end - b_start) - inter;
  if (uni <= 0) return 0;
  return inter / uni;
}

/// Maps a cell at one granularity to the cell covering the identical time span
/// at another; empty when no exact counterpart exists (coarsening an unaligned
/// span). Clip counts must be integer multiples of each other.
inline std::optional<std::pair<int, int>> cross_stage_align(int i, int j, std::size_t N_from,
                                                            std::size_t N_to) {
  if (N_from == 0 || N_to == 0) throw ConfigError("cross_stage_align: zero clip count");
  if (N_to % N_from == 0) {
    const int r = static_cast<int>(N_to / N_from);
    return std::make_pair(i * r, (j + 1) * r - 1);
  }
  if (N_from % N_to == 0) {
    const int r = static_cast<int>(N_from / N_to);
    if (i % r == 0 && (j + 1) % r == 0) return std::make_pair(i / r, (j + 1) / r - 1);
    return std::nullopt;
  }
  throw ConfigError("cross_stage_align: clip counts " + std::to_string(N_from) + " and " +
                    std::to_string(N_to) + " are not multiples");
}

}  // namespace pln

#endif  // PLN_TEMPORAL_MAP_HPP
