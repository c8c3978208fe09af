#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/rng.hpp"
#include "taperkit/sparse.hpp"
#include "taperkit/tensor.hpp"

namespace taperkit {

// One forward batch: row-major [batch, seq] token ids and segment ids, plus
// a validity flag per position (0 marks padding).
struct EncoderInput {
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<int32_t> token_ids;
  std::vector<int32_t> segment_ids;
  std::vector<uint8_t> validity;

  static EncoderInput full_valid(int64_t batch, int64_t seq, std::vector<int32_t> tokens) {
    EncoderInput in;
    in.batch = batch;
    in.seq = seq;
    in.token_ids = std::move(tokens);
    in.segment_ids.assign(static_cast<size_t>(batch * seq), 0);
    in.validity.assign(static_cast<size_t>(batch * seq), 1);
    return in;
  }

  void check(const ModelConfig& config) const {
    const auto n = static_cast<size_t>(batch * seq);
    if (batch <= 0 || seq <= 0) throw ValidationError("input: empty batch or sequence");
    if (token_ids.size() != n || segment_ids.size() != n || validity.size() != n)
      throw ValidationError("input: field lengths disagree with batch*seq");
    for (int32_t t : token_ids)
      if (t < 0 || t >= config.vocab_size) throw ValidationError("input: token id outside vocabulary");
    for (int32_t s : segment_ids)
      if (s < 0 || s >= config.num_segment_types)
        throw ValidationError("input: segment id outside configured segment types");
  }
};

inline constexpr float kMaskPenalty = -1e9f;  // additive stand-in for -inf

namespace enc_detail {

template <typename S>
TensorT<S> linear(const TensorT<S>& x, const ParamsT<S>& params, const std::string& w,
                  const std::string& b) {
  return add(matmul(x, params.at(w)), params.at(b));
}

// Additive key mask [batch, 1, 1, seq]: 0 where valid, the penalty elsewhere.
template <typename S>
TensorT<S> key_mask(const std::vector<uint8_t>& validity, int64_t batch, int64_t seq) {
  std::vector<S> m(static_cast<size_t>(batch * seq));
  for (size_t i = 0; i < m.size(); ++i) m[i] = validity[i] ? S(0) : S(kMaskPenalty);
  return TensorT<S>::from_data({batch, 1, 1, seq}, std::move(m));
}

}  // namespace enc_detail

// Word + position + segment embeddings, then layer norm and dropout in the
// order the config names. Position ids start at config.position_offset.
template <typename S>
TensorT<S> embed(const EncoderInput& input, const ParamsT<S>& params, const ModelConfig& config,
                 Rng& rng, bool training) {
  input.check(config);
  const int64_t pos_rows = params.at("pos_emb").dim(0);
  if (input.seq > pos_rows - config.position_offset)
    throw ValidationError("embed: sequence of " + std::to_string(input.seq) +
                          " exceeds the position table");
  std::vector<int32_t> pos_ids(static_cast<size_t>(input.batch * input.seq));
  for (int64_t b = 0; b < input.batch; ++b)
    for (int64_t t = 0; t < input.seq; ++t)
      pos_ids[static_cast<size_t>(b * input.seq + t)] =
          static_cast<int32_t>(config.position_offset + t);

  const Shape id_shape{input.batch, input.seq};
  auto words = embedding(params.at("word_emb"), input.token_ids, id_shape);
  auto positions = embedding(params.at("pos_emb"), pos_ids, id_shape);
  auto segments = embedding(params.at("seg_emb"), input.segment_ids, id_shape);
  auto summed = add(add(words, positions), segments);

  const S eps = static_cast<S>(config.ln_eps);
  if (config.ln_order == LnOrder::ln_then_dropout_in_embeddings) {
    auto normed = layer_norm(summed, params.at("emb_ln_gamma"), params.at("emb_ln_beta"), eps);
    return dropout(normed, config.dropout_p, rng, training);
  }
  auto dropped = dropout(summed, config.dropout_p, rng, training);
  return layer_norm(dropped, params.at("emb_ln_gamma"), params.at("emb_ln_beta"), eps);
}

// Scaled dot-product attention over projected heads, shared by the full and
// sparse paths up to the score evaluation. mask_additive broadcasts onto
// [batch, heads, seq, seq].
template <typename S>
TensorT<S> attention_core(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                          const TensorT<S>& mask_additive, S scale_factor) {
  auto scores = add(scale(matmul(q, transpose(k, -1, -2)), scale_factor), mask_additive);
  auto probs = softmax_lastdim(scores);
  return matmul(probs, v);
}

// Split [batch, seq, hidden] into heads: [batch, heads, seq, head_dim].
template <typename S>
TensorT<S> split_heads(const TensorT<S>& x, int64_t num_heads) {
  const int64_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  return transpose(reshape(x, {b, s, num_heads, d / num_heads}), 1, 2);
}

template <typename S>
TensorT<S> merge_heads(const TensorT<S>& x) {
  const int64_t b = x.dim(0), h = x.dim(1), s = x.dim(2), dh = x.dim(3);
  return reshape(transpose(x, 1, 2), {b, s, h * dh});
}

// Full multi-head attention for one layer: project, attend over every valid
// key, merge, project out.
template <typename S>
TensorT<S> attention_full(const TensorT<S>& hidden, const std::vector<uint8_t>& validity,
                          const ParamsT<S>& params, int64_t layer, const ModelConfig& config) {
  const std::string p = "layer" + std::to_string(layer) + ".";
  const int64_t b = hidden.dim(0), s = hidden.dim(1);
  auto q = split_heads(enc_detail::linear(hidden, params, p + "q_w", p + "q_b"), config.num_heads);
  auto k = split_heads(enc_detail::linear(hidden, params, p + "k_w", p + "k_b"), config.num_heads);
  auto v = split_heads(enc_detail::linear(hidden, params, p + "v_w", p + "v_b"), config.num_heads);
  auto mask = enc_detail::key_mask<S>(validity, b, s);
  const S scale_factor = static_cast<S>(1.0 / std::sqrt(static_cast<double>(config.head_dim())));
  auto ctx = merge_heads(attention_core(q, k, v, mask, scale_factor));
  return enc_detail::linear(ctx, params, p + "o_w", p + "o_b");
}

// Sparse counterpart: same projections, block-sparse evaluation.
template <typename S>
TensorT<S> attention_sparse(const TensorT<S>& hidden, const std::vector<uint8_t>& validity,
                            const SparseLayout& layout, const ParamsT<S>& params, int64_t layer,
                            const ModelConfig& config) {
  const std::string p = "layer" + std::to_string(layer) + ".";
  auto q = split_heads(enc_detail::linear(hidden, params, p + "q_w", p + "q_b"), config.num_heads);
  auto k = split_heads(enc_detail::linear(hidden, params, p + "k_w", p + "k_b"), config.num_heads);
  auto v = split_heads(enc_detail::linear(hidden, params, p + "v_w", p + "v_b"), config.num_heads);
  const S scale_factor = static_cast<S>(1.0 / std::sqrt(static_cast<double>(config.head_dim())));
  auto ctx = merge_heads(block_sparse_attention(q, k, v, layout, validity, scale_factor));
  return enc_detail::linear(ctx, params, p + "o_w", p + "o_b");
}

// Residual block in the post-norm arrangement: sublayer, dropout, add, norm.
template <typename S>
TensorT<S> residual_block(const TensorT<S>& x, const TensorT<S>& sub, const ParamsT<S>& params,
                          const std::string& gamma, const std::string& beta,
                          const ModelConfig& config, Rng& rng, bool training) {
  auto dropped = dropout(sub, config.dropout_p, rng, training);
  return layer_norm(add(x, dropped), params.at(gamma), params.at(beta),
                    static_cast<S>(config.ln_eps));
}

template <typename S>
TensorT<S> ffn_sublayer(const TensorT<S>& x, const ParamsT<S>& params, const std::string& p) {
  auto inner = gelu(enc_detail::linear(x, params, p + "ffn_w1", p + "ffn_b1"));
  return enc_detail::linear(inner, params, p + "ffn_w2", p + "ffn_b2");
}

// Embedding plus the full stack of encoder layers. Sequences longer than
// l_src run the block-sparse attention path when the config allows it.
template <typename S>
TensorT<S> encoder_forward(const EncoderInput& input, const ParamsT<S>& params,
                           const ModelConfig& config, Rng& rng, bool training) {
  if (input.seq > config.max_input_len())
    throw ValidationError("forward: sequence of " + std::to_string(input.seq) +
                          " exceeds the maximum length " + std::to_string(config.max_input_len()));
  const bool use_sparse = input.seq > config.l_src;
  SparseLayout layout;
  if (use_sparse)
    layout = build_layout(input.seq, *config.sparse, config.sparse->random_seed);

  auto x = embed(input, params, config, rng, training);
  for (int64_t layer = 0; layer < config.num_layers; ++layer) {
    const std::string p = "layer" + std::to_string(layer) + ".";
    auto attn = use_sparse
                    ? attention_sparse(x, input.validity, layout, params, layer, config)
                    : attention_full(x, input.validity, params, layer, config);
    x = residual_block(x, attn, params, p + "attn_ln_gamma", p + "attn_ln_beta", config, rng,
                       training);
    auto ffn = ffn_sublayer(x, params, p);
    x = residual_block(x, ffn, params, p + "ffn_ln_gamma", p + "ffn_ln_beta", config, rng, training);
  }
  return x;
}

// MLM head: dense, gelu, layer norm, then projection tied to the transposed
// word embedding plus a per-token output bias.
template <typename S>
TensorT<S> mlm_logits(const TensorT<S>& hidden, const ParamsT<S>& params, const ModelConfig& config) {
  auto x = gelu(enc_detail::linear(hidden, params, "mlm_dense_w", "mlm_dense_b"));
  x = layer_norm(x, params.at("mlm_ln_gamma"), params.at("mlm_ln_beta"),
                 static_cast<S>(config.ln_eps));
  auto logits = matmul(x, transpose(params.at("word_emb"), 0, 1));
  return add(logits, params.at("mlm_out_bias"));
}

template <typename S>
TensorT<S> forward(const EncoderInput& input, const ParamsT<S>& params, const ModelConfig& config,
                   Rng& rng, bool training) {
  return mlm_logits(encoder_forward(input, params, config, rng, training), params, config);
}

}  // namespace taperkit
