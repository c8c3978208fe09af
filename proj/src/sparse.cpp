#include "taperkit/sparse.hpp"

#include <algorithm>

#include "taperkit/rng.hpp"

namespace taperkit {

SparseLayout build_layout(int64_t seq_len, const SparseConfig& config, uint64_t seed) {
  if (seq_len <= 0) throw ValidationError("build_layout: sequence length must be positive");
  if (config.block_size <= 0) throw ValidationError("build_layout: block size must be positive");
  if (seq_len % config.block_size != 0)
    throw ValidationError("build_layout: sequence length " + std::to_string(seq_len) +
                          " is not a multiple of block size " + std::to_string(config.block_size));
  if (config.window_blocks <= 0 || config.window_blocks % 2 == 0)
    throw ValidationError("build_layout: window_blocks must be odd and positive");
  if (config.num_global_blocks < 1)
    throw ValidationError("build_layout: num_global_blocks must be at least 1");

  SparseLayout layout;
  layout.seq_len = seq_len;
  layout.block_size = config.block_size;
  layout.num_blocks = seq_len / config.block_size;
  layout.num_global = std::min(config.num_global_blocks, layout.num_blocks);
  layout.attended.resize(static_cast<size_t>(layout.num_blocks));

  const int64_t half_window = config.window_blocks / 2;
  const Rng base(seed);

  for (int64_t qb = 0; qb < layout.num_blocks; ++qb) {
    // tag per key block; -1 marks "not attended"
    std::vector<int> tag(static_cast<size_t>(layout.num_blocks), -1);
    for (int64_t g = 0; g < layout.num_global; ++g) tag[static_cast<size_t>(g)] = static_cast<int>(BlockTag::global);
    const int64_t wlo = std::max<int64_t>(0, qb - half_window);
    const int64_t whi = std::min(layout.num_blocks - 1, qb + half_window);
    for (int64_t w = wlo; w <= whi; ++w)
      if (tag[static_cast<size_t>(w)] < 0) tag[static_cast<size_t>(w)] = static_cast<int>(BlockTag::window);
    if (tag[static_cast<size_t>(qb)] < 0) tag[static_cast<size_t>(qb)] = static_cast<int>(BlockTag::self);

    if (qb < layout.num_global) {
      // bidirectional globality: a global query block sees everything
      for (int64_t b = 0; b < layout.num_blocks; ++b)
        if (tag[static_cast<size_t>(b)] < 0) tag[static_cast<size_t>(b)] = static_cast<int>(BlockTag::global);
    } else if (config.num_random_blocks > 0) {
      std::vector<int64_t> candidates;
      for (int64_t b = 0; b < layout.num_blocks; ++b)
        if (tag[static_cast<size_t>(b)] < 0) candidates.push_back(b);
      const int64_t take =
          std::min<int64_t>(config.num_random_blocks, static_cast<int64_t>(candidates.size()));
      layout.random_shortfall += config.num_random_blocks - take;
      Rng rng = base.fork(static_cast<uint64_t>(qb));
      for (int64_t i = 0; i < take; ++i) {
        const auto j = static_cast<int64_t>(
            rng.uniform_below(static_cast<uint64_t>(candidates.size() - static_cast<size_t>(i))));
        std::swap(candidates[static_cast<size_t>(i)], candidates[static_cast<size_t>(i + j)]);
        tag[static_cast<size_t>(candidates[static_cast<size_t>(i)])] = static_cast<int>(BlockTag::random);
      }
    }

    auto& entries = layout.attended[static_cast<size_t>(qb)];
    for (int64_t b = 0; b < layout.num_blocks; ++b)
      if (tag[static_cast<size_t>(b)] >= 0)
        entries.push_back({b, static_cast<BlockTag>(tag[static_cast<size_t>(b)])});
  }
  return layout;
}

CoverageStats layout_coverage_stats(const SparseLayout& layout) {
  if (layout.num_blocks <= 0) throw ValidationError("layout_coverage_stats: empty layout");
  CoverageStats stats;
  stats.min_keys_per_query = layout.seq_len;
  int64_t pair_blocks = 0;
  for (const auto& entries : layout.attended) {
    const int64_t keys = static_cast<int64_t>(entries.size()) * layout.block_size;
    stats.min_keys_per_query = std::min(stats.min_keys_per_query, keys);
    stats.max_keys_per_query = std::max(stats.max_keys_per_query, keys);
    pair_blocks += static_cast<int64_t>(entries.size());
  }
  stats.attended_pairs = pair_blocks * layout.block_size * layout.block_size;
  stats.total_pairs = layout.seq_len * layout.seq_len;
  stats.fraction =
      static_cast<double>(stats.attended_pairs) / static_cast<double>(stats.total_pairs);
  return stats;
}

}  // namespace taperkit
