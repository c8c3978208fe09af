#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/rng.hpp"
#include "taperkit/tensor.hpp"
#include "taperkit/transform.hpp"

namespace taperkit {

// A batch of fixed-length sequences with a subset of positions masked out.
// labels holds the original ids of the masked positions in row-major scan
// order, so labels.size() always equals the number of set mask flags.
struct PackedBatch {
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<int32_t> token_ids;       // [batch, seq], mask id substituted
  std::vector<uint8_t> mask_positions;  // [batch, seq]
  std::vector<int32_t> labels;
};

// Concatenate documents with a separator after every document, then cut the
// stream into exact seq_len windows. The incomplete tail is dropped.
std::vector<std::vector<int32_t>> pack_corpus(const std::vector<std::vector<int32_t>>& docs,
                                              int64_t seq_len, int32_t sep_id);

// Mask round(ratio * seq) positions per sequence, at least one, drawn
// uniformly without replacement from the non-separator positions.
PackedBatch mask_tokens(const std::vector<std::vector<int32_t>>& sequences, double ratio,
                        int32_t mask_id, int32_t sep_id, Rng& rng);

// Sum of -log softmax(logits)[label] over the masked positions of one batch
// plus the term count. Accumulated in doubles, scan order.
std::pair<double, int64_t> masked_nll_from_logits(const Tensor& logits, const PackedBatch& batch);

struct PplStats {
  int64_t masked_tokens = 0;
  double mean_nll = 0.0;
  double ppl = 1.0;
};

// Inference-mode perplexity over the masked tokens of every batch, batches
// reduced in index order.
PplStats masked_ppl(const ParamStore& params, const ModelConfig& config,
                    const std::vector<PackedBatch>& batches);

struct PplRow {
  std::string variant;
  std::optional<double> tau;
  int64_t seq_len = 0;
  int64_t masked_tokens = 0;
  double mean_nll = 0.0;
  double ppl = 1.0;
};

struct PplReport {
  std::vector<PplRow> rows;
};

struct SweepSettings {
  std::vector<int64_t> lengths;
  std::vector<VariantSpec> variants;
  SparseConfig target_sparse;
  int64_t l_tgt = 0;
  double mask_ratio = 0.15;
  uint64_t mask_seed = 1234;
  int64_t batch_rows = 16;
};

// Build each variant of the source model once, then evaluate every length on
// masked batches that are seeded per length and shared across variants. Rows
// come out variant-major.
PplReport ppl_length_sweep(const ParamStore& src_params, const ModelConfig& src_config,
                           const std::vector<std::vector<int32_t>>& docs,
                           const SweepSettings& settings);

// header variant,tau,seq_len,masked_tokens,mean_nll,ppl; numbers at six
// significant digits, tau blank for variants without one
std::string ppl_report_csv(const PplReport& report);

}  // namespace taperkit
