#pragma once

#include <cstdint>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/errors.hpp"
#include "taperkit/tensor.hpp"
#include "taperkit/threads.hpp"

namespace taperkit {

enum class BlockTag : uint8_t { self, global, window, random };

// Which key blocks each query block may attend, sorted by block index.
// Global query blocks attend everything; other blocks attend the global
// prefix, a centered window clipped at the edges, their own block, and a few
// random draws distinct from the rest.
struct SparseLayout {
  int64_t seq_len = 0;
  int64_t block_size = 0;
  int64_t num_blocks = 0;
  int64_t num_global = 0;
  int64_t random_shortfall = 0;  // randoms requested but not drawable

  struct Entry {
    int64_t block;
    BlockTag tag;
  };
  std::vector<std::vector<Entry>> attended;  // indexed by query block
};

SparseLayout build_layout(int64_t seq_len, const SparseConfig& config, uint64_t seed);

struct CoverageStats {
  int64_t min_keys_per_query = 0;
  int64_t max_keys_per_query = 0;
  int64_t attended_pairs = 0;
  int64_t total_pairs = 0;
  double fraction = 0.0;
};

CoverageStats layout_coverage_stats(const SparseLayout& layout);

// Attention restricted to the layout's block pairs. Inputs are projected
// heads [batch, heads, seq, head_dim]; validity is [batch, seq]. Query rows
// see exactly the keys inside attended blocks, with invalid keys penalized
// the same way the full path does it, so results match full attention under
// the equivalent dense mask. Forward only: the toy trainer never runs in
// sparse mode, so inputs carrying gradient tape are rejected.
template <typename S>
TensorT<S> block_sparse_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                  const SparseLayout& layout, const std::vector<uint8_t>& validity,
                                  S scale_factor) {
  if (q.requires_grad() || k.requires_grad() || v.requires_grad())
    throw ValidationError("block_sparse_attention: gradients are not supported");
  if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4)
    throw ValidationError("block_sparse_attention: expected [batch, heads, seq, head_dim]");
  const int64_t b = q.dim(0), h = q.dim(1), s = q.dim(2), dh = q.dim(3);
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ValidationError("block_sparse_attention: q/k/v shapes disagree");
  if (s != layout.seq_len)
    throw ValidationError("block_sparse_attention: layout was built for length " +
                          std::to_string(layout.seq_len));
  if (validity.size() != static_cast<size_t>(b * s))
    throw ValidationError("block_sparse_attention: validity mask length mismatch");

  const int64_t bs = layout.block_size;
  const S penalty = S(-1e9f);
  std::vector<S> out(static_cast<size_t>(b * h * s * dh), S(0));
  const S* qd = q.values().data();
  const S* kd = k.values().data();
  const S* vd = v.values().data();

  // One task per (batch, head, query block); each writes only its own rows.
  const int64_t tasks = b * h * layout.num_blocks;
  parallel_for(tasks, [&](int64_t task) {
    const int64_t qb = task % layout.num_blocks;
    const int64_t bh = task / layout.num_blocks;
    const int64_t batch = bh / h;
    const auto& entries = layout.attended[static_cast<size_t>(qb)];
    const int64_t gathered = static_cast<int64_t>(entries.size()) * bs;

    const S* qbase = qd + bh * s * dh + qb * bs * dh;
    S* obase = out.data() + bh * s * dh + qb * bs * dh;
    std::vector<S> scores(static_cast<size_t>(gathered));
    for (int64_t qi = 0; qi < bs; ++qi) {
      const S* qrow = qbase + qi * dh;
      // scores over gathered keys, in ascending block order
      for (int64_t e = 0; e < static_cast<int64_t>(entries.size()); ++e) {
        const int64_t kb = entries[static_cast<size_t>(e)].block;
        const S* kblock = kd + bh * s * dh + kb * bs * dh;
        for (int64_t kj = 0; kj < bs; ++kj) {
          const S* krow = kblock + kj * dh;
          S acc = S(0);
          for (int64_t c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
          const bool valid = validity[static_cast<size_t>(batch * s + kb * bs + kj)] != 0;
          scores[static_cast<size_t>(e * bs + kj)] =
              acc * scale_factor + (valid ? S(0) : penalty);
        }
      }
      // softmax over the gathered scores, stabilized and summed like the
      // dense path so the two agree
      S mx = scores[0];
      for (int64_t j = 1; j < gathered; ++j) mx = std::max(mx, scores[j]);
      double denom = 0.0;
      for (int64_t j = 0; j < gathered; ++j) {
        const S e = std::exp(scores[j] - mx);
        scores[static_cast<size_t>(j)] = e;
        denom += static_cast<double>(e);
      }
      const S inv = static_cast<S>(1.0 / denom);
      S* orow = obase + qi * dh;
      for (int64_t e = 0; e < static_cast<int64_t>(entries.size()); ++e) {
        const int64_t kb = entries[static_cast<size_t>(e)].block;
        const S* vblock = vd + bh * s * dh + kb * bs * dh;
        for (int64_t kj = 0; kj < bs; ++kj) {
          const S p = scores[static_cast<size_t>(e * bs + kj)] * inv;
          const S* vrow = vblock + kj * dh;
          for (int64_t c = 0; c < dh; ++c) orow[c] += p * vrow[c];
        }
      }
    }
  });
  return TensorT<S>::from_data({b, h, s, dh}, std::move(out));
}

// Dense additive mask equivalent to the layout: 0 on attended block pairs,
// the penalty elsewhere. Shape [1, 1, seq, seq]; used by oracle comparisons.
template <typename S>
TensorT<S> layout_dense_mask(const SparseLayout& layout) {
  const int64_t s = layout.seq_len, bs = layout.block_size;
  std::vector<S> mask(static_cast<size_t>(s * s), S(-1e9f));
  for (int64_t qb = 0; qb < layout.num_blocks; ++qb)
    for (const auto& entry : layout.attended[static_cast<size_t>(qb)])
      for (int64_t qi = 0; qi < bs; ++qi)
        for (int64_t kj = 0; kj < bs; ++kj)
          mask[static_cast<size_t>((qb * bs + qi) * s + entry.block * bs + kj)] = S(0);
  return TensorT<S>::from_data({1, 1, s, s}, std::move(mask));
}

}  // namespace taperkit
