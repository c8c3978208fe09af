#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace taperkit {

// Relative order of dropout and layer norm in the embedding block. Source
// models normalize first; transformed targets drop out first. Inference
// output is identical either way since dropout is then the identity.
enum class LnOrder {
  ln_then_dropout_in_embeddings,
  dropout_then_ln_everywhere,
};

std::string to_string(LnOrder order);
LnOrder ln_order_from_string(const std::string& s);

struct SparseConfig {
  int64_t block_size = 16;
  int64_t num_global_blocks = 1;
  int64_t window_blocks = 3;  // odd, centered on the query block
  int64_t num_random_blocks = 1;
  uint64_t random_seed = 7;
};

struct ModelConfig {
  int64_t vocab_size = 256;
  int64_t hidden_dim = 64;
  int64_t num_layers = 2;
  int64_t num_heads = 4;
  int64_t ffn_dim = 256;
  int64_t l_src = 64;
  int64_t l_tgt = 64;
  int64_t num_segment_types = 1;
  int64_t position_offset = 2;
  LnOrder ln_order = LnOrder::ln_then_dropout_in_embeddings;
  std::optional<SparseConfig> sparse;
  int32_t mask_token_id = 1;
  int32_t sep_token_id = 2;
  int32_t pad_token_id = 0;
  double dropout_p = 0.1;
  double ln_eps = 1e-5;

  int64_t head_dim() const { return hidden_dim / num_heads; }
  // Longest input the model accepts; sparse mode unlocks l_tgt.
  int64_t max_input_len() const { return sparse ? l_tgt : l_src; }
  // Rows in the position table, including any leading offset rows.
  int64_t pos_rows() const { return max_input_len() + position_offset; }
  int64_t repetitions() const { return l_tgt / l_src; }

  void validate() const;  // throws ValidationError

  // Desk-scale source model: full attention only, offset-2 position ids,
  // one segment type, layer norm before dropout in the embedding block.
  static ModelConfig desk_source();
};

std::string serialize_config(const ModelConfig& config);
ModelConfig parse_config(const std::string& text);

}  // namespace taperkit
