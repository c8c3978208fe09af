#pragma once

#include <map>
#include <string>
#include <utility>

#include "taperkit/config.hpp"
#include "taperkit/tensor.hpp"

namespace taperkit {

// Named parameters of one model, ordered by name. Canonical names:
//   word_emb [vocab, hidden]        token embedding, also the tied MLM output
//   pos_emb [pos_rows, hidden]      absolute position table (offset rows included)
//   seg_emb [segment_types, hidden] segment type embedding
//   emb_ln_gamma / emb_ln_beta [hidden]
//   layer<i>.{q_w,k_w,v_w,o_w} [hidden, hidden], .{q_b,k_b,v_b,o_b} [hidden]
//   layer<i>.attn_ln_gamma / attn_ln_beta [hidden]
//   layer<i>.ffn_w1 [hidden, ffn], ffn_b1 [ffn], ffn_w2 [ffn, hidden], ffn_b2 [hidden]
//   layer<i>.ffn_ln_gamma / ffn_ln_beta [hidden]
//   mlm_dense_w [hidden, hidden], mlm_dense_b [hidden]
//   mlm_ln_gamma / mlm_ln_beta [hidden], mlm_out_bias [vocab]
// Linear layers compute y = x W + b, so weights are [in, out].
template <typename S>
using ParamsT = std::map<std::string, TensorT<S>>;

using ParamStore = ParamsT<float>;

// Name -> shape for every tensor the config calls for.
std::map<std::string, Shape> expected_shapes(const ModelConfig& config);

// Throws ValidationError when the store's names or shapes disagree with the
// config's expectations.
void validate_store(const ParamStore& store, const ModelConfig& config);

// Fresh model: truncated-normal(0, 0.02) weights, zero biases, unit-gamma
// layer norms, and all-zero segment embeddings.
ParamStore init_random(const ModelConfig& config, uint64_t seed);

// Bit-exact binary checkpoint holding the config document and every tensor.
void save_checkpoint(const ParamStore& store, const ModelConfig& config, const std::string& path);
std::pair<ParamStore, ModelConfig> load_checkpoint(const std::string& path);

template <typename T>
ParamsT<T> cast_params(const ParamStore& store) {
  ParamsT<T> out;
  for (const auto& [name, tensor] : store) out.emplace(name, cast_tensor<T>(tensor));
  return out;
}

}  // namespace taperkit
