#pragma once

#include <cstdint>
#include <vector>

#include "taperkit/tensor.hpp"

namespace taperkit {

// Attenuated-repetition settings for extending a trained position table.
// tau controls how fast the copies fade; r is the number of copies and must
// match the target/source length ratio wherever both lengths are known.
struct TaperConfig {
  double tau = 2.0;
  int64_t r = 1;

  void validate() const;
};

// (tau*r - i) / (tau*r) for copy i. Exactly 1 at i = 0, strictly decreasing
// in i, approaches plain repetition as tau grows.
double attenuation_factor(int64_t i, int64_t r, double tau);

// Stack r copies of p_src along the position axis, copy i scaled by its
// attenuation factor. Copy 0 is written through unchanged.
Tensor extend_positions(const Tensor& p_src, const TaperConfig& config);

// Plain tiling, the no-attenuation baseline.
Tensor repeat_positions(const Tensor& p_src, int64_t r);

// How far apart the copies of each source row ended up in an extended table.
// A collision is a pair of distinct copies whose rows for some position are
// identical even though the row is nonzero; tiled tables are full of them,
// attenuated ones should have none.
struct DistinguishabilityReport {
  int64_t l_src = 0;
  int64_t r = 0;

  struct PairStat {
    int64_t copy_a = 0;
    int64_t copy_b = 0;
    double min_distance = 0.0;  // min over positions of the row L2 distance
    int64_t argmin_position = 0;
  };
  std::vector<PairStat> pairs;  // all copy pairs a < b

  struct Collision {
    int64_t copy_a = 0;
    int64_t copy_b = 0;
    int64_t position = 0;
  };
  std::vector<Collision> collisions;
};

DistinguishabilityReport distinguishability_report(const Tensor& p_tgt, int64_t l_src, int64_t r);

}  // namespace taperkit
