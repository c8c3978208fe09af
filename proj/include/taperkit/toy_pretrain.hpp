#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/param_store.hpp"

namespace taperkit {

// Token id 3 marks the periodic positions in generated documents. Ids 0..2
// stay reserved for pad/mask/sep, content ids start at 4.
inline constexpr int32_t kSentinelTokenId = 3;

struct SyntheticCorpusSpec {
  int32_t vocab_size = 256;
  int64_t num_docs = 400;
  int64_t min_doc_len = 47;
  int64_t max_doc_len = 127;
  // Sentinel every `sentinel_period` positions; next-token distributions are
  // conditioned on (last `markov_order` tokens, position mod period).
  int64_t sentinel_period = 8;
  int32_t markov_order = 2;
  int32_t content_alphabet = 16;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<std::vector<int32_t>> train_docs;
  std::vector<std::vector<int32_t>> eval_docs;
};

// Deterministic for a given (spec, seed); every tenth document goes to the
// eval split. Document lengths land on period - 1 (mod period) so doc plus
// separator spans whole periods when packed.
SyntheticCorpus gen_synthetic_corpus(const SyntheticCorpusSpec& spec, uint64_t seed);

struct PretrainOptions {
  int64_t steps = 2000;
  double lr = 3e-4;
  int64_t batch_size = 16;
  double mask_ratio = 0.15;
  uint64_t seed = 42;
};

struct PretrainResult {
  ParamStore params;
  std::vector<double> loss_curve;  // one mean masked NLL per step
};

// Masked-LM training from random init: Adam with linear warmup over the
// first tenth of the steps, then a flat rate. The segment table is the one
// parameter left untrained. Throws NumericError if the loss or any
// parameter stops being finite.
PretrainResult pretrain_mlm(const ModelConfig& config,
                            const std::vector<std::vector<int32_t>>& train_docs,
                            const PretrainOptions& options);

std::string loss_curve_csv(const std::vector<double>& curve);

}  // namespace taperkit
