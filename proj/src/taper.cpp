#include "taperkit/taper.hpp"

#include <cmath>
#include <string>

#include "taperkit/errors.hpp"

namespace taperkit {

void TaperConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw ValidationError("TaperConfig: tau must be a positive finite number");
  if (r < 1) throw ValidationError("TaperConfig: repetition count must be at least 1");
  // the last copy's factor (tau*r - (r-1)) / (tau*r) must stay positive
  if (tau * static_cast<double>(r) <= static_cast<double>(r - 1))
    throw ValidationError("TaperConfig: tau is too small for " + std::to_string(r) +
                          " copies; attenuation would reach zero");
}

double attenuation_factor(int64_t i, int64_t r, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw ValidationError("attenuation_factor: tau must be a positive finite number");
  if (r < 1) throw ValidationError("attenuation_factor: repetition count must be at least 1");
  if (i < 0 || i >= r)
    throw ValidationError("attenuation_factor: copy index " + std::to_string(i) +
                          " outside [0, " + std::to_string(r) + ")");
  const double denom = tau * static_cast<double>(r);
  if (denom <= static_cast<double>(i))
    throw ValidationError("attenuation_factor: tau " + std::to_string(tau) +
                          " leaves copy " + std::to_string(i) + " with no weight");
  return (denom - static_cast<double>(i)) / denom;
}

Tensor extend_positions(const Tensor& p_src, const TaperConfig& config) {
  config.validate();
  if (p_src.rank() != 2) throw ValidationError("extend_positions: expected a rank-2 table");
  const int64_t l_src = p_src.dim(0), d = p_src.dim(1);
  const auto& src = p_src.values();
  std::vector<float> out(static_cast<size_t>(config.r * l_src * d));
  for (int64_t i = 0; i < config.r; ++i) {
    const auto factor = static_cast<float>(attenuation_factor(i, config.r, config.tau));
    float* dst = out.data() + i * l_src * d;
    if (i == 0) {
      // factor is exactly 1; copy so the first block is preserved bit for bit
      std::copy(src.begin(), src.end(), dst);
    } else {
      for (int64_t k = 0; k < l_src * d; ++k) dst[k] = src[static_cast<size_t>(k)] * factor;
    }
  }
  return Tensor::from_data({config.r * l_src, d}, std::move(out));
}

Tensor repeat_positions(const Tensor& p_src, int64_t r) {
  if (r < 1) throw ValidationError("repeat_positions: repetition count must be at least 1");
  if (p_src.rank() != 2) throw ValidationError("repeat_positions: expected a rank-2 table");
  const int64_t l_src = p_src.dim(0), d = p_src.dim(1);
  const auto& src = p_src.values();
  std::vector<float> out(static_cast<size_t>(r * l_src * d));
  for (int64_t i = 0; i < r; ++i)
    std::copy(src.begin(), src.end(), out.data() + i * l_src * d);
  return Tensor::from_data({r * l_src, d}, std::move(out));
}

DistinguishabilityReport distinguishability_report(const Tensor& p_tgt, int64_t l_src,
                                                   int64_t r) {
  if (p_tgt.rank() != 2) throw ValidationError("distinguishability_report: expected a rank-2 table");
  if (l_src < 1 || r < 1)
    throw ValidationError("distinguishability_report: lengths must be positive");
  if (p_tgt.dim(0) != r * l_src)
    throw ValidationError("distinguishability_report: table has " + std::to_string(p_tgt.dim(0)) +
                          " rows, expected " + std::to_string(r * l_src));
  const int64_t d = p_tgt.dim(1);
  const auto& v = p_tgt.values();

  DistinguishabilityReport report;
  report.l_src = l_src;
  report.r = r;
  for (int64_t a = 0; a < r; ++a) {
    for (int64_t b = a + 1; b < r; ++b) {
      DistinguishabilityReport::PairStat stat;
      stat.copy_a = a;
      stat.copy_b = b;
      stat.min_distance = -1.0;
      for (int64_t k = 0; k < l_src; ++k) {
        const float* ra = v.data() + (a * l_src + k) * d;
        const float* rb = v.data() + (b * l_src + k) * d;
        double sq = 0.0;
        bool nonzero = false;
        for (int64_t c = 0; c < d; ++c) {
          const double diff = static_cast<double>(ra[c]) - rb[c];
          sq += diff * diff;
          if (ra[c] != 0.0f || rb[c] != 0.0f) nonzero = true;
        }
        const double dist = std::sqrt(sq);
        if (stat.min_distance < 0.0 || dist < stat.min_distance) {
          stat.min_distance = dist;
          stat.argmin_position = k;
        }
        if (dist == 0.0 && nonzero) report.collisions.push_back({a, b, k});
      }
      report.pairs.push_back(stat);
    }
  }
  return report;
}

}  // namespace taperkit
