#include <doctest.h>

#include <cmath>
#include <vector>

#include "taperkit/encoder.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/rng.hpp"

using namespace taperkit;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 32;
  c.hidden_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.l_src = 8;
  c.l_tgt = 8;
  return c;
}

EncoderInput random_input(const ModelConfig& c, int64_t batch, int64_t seq, uint64_t seed) {
  Rng rng(seed);
  std::vector<int32_t> toks(static_cast<size_t>(batch * seq));
  for (auto& t : toks)
    t = static_cast<int32_t>(1 + rng.uniform_below(static_cast<uint64_t>(c.vocab_size - 1)));
  return EncoderInput::full_valid(batch, seq, std::move(toks));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
  return m;
}

Tensor identity_matrix(int64_t d) {
  std::vector<float> m(static_cast<size_t>(d * d), 0.0f);
  for (int64_t i = 0; i < d; ++i) m[static_cast<size_t>(i * d + i)] = 1.0f;
  return Tensor::from_data({d, d}, std::move(m));
}

// Independent slow reference: per head, double-precision score loops.
Tensor attention_oracle(const Tensor& hidden, const std::vector<uint8_t>& validity,
                        const ParamStore& params, int64_t layer, const ModelConfig& cfg) {
  const std::string p = "layer" + std::to_string(layer) + ".";
  const int64_t B = hidden.dim(0), S_ = hidden.dim(1), D = hidden.dim(2);
  const int64_t H = cfg.num_heads, dh = D / H;
  auto proj = [&](const char* w, const char* b) {
    std::vector<double> out(static_cast<size_t>(B * S_ * D), 0.0);
    const auto& wv = params.at(p + w).values();
    const auto& bv = params.at(p + b).values();
    for (int64_t n = 0; n < B * S_; ++n)
      for (int64_t j = 0; j < D; ++j) {
        double acc = bv[static_cast<size_t>(j)];
        for (int64_t i = 0; i < D; ++i)
          acc += static_cast<double>(hidden.values()[static_cast<size_t>(n * D + i)]) *
                 wv[static_cast<size_t>(i * D + j)];
        out[static_cast<size_t>(n * D + j)] = acc;
      }
    return out;
  };
  const auto q = proj("q_w", "q_b"), k = proj("k_w", "k_b"), v = proj("v_w", "v_b");
  std::vector<double> ctx(static_cast<size_t>(B * S_ * D), 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t i = 0; i < S_; ++i) {
        std::vector<double> w(static_cast<size_t>(S_));
        double mx = -1e300;
        for (int64_t j = 0; j < S_; ++j) {
          double dot = 0.0;
          for (int64_t c = 0; c < dh; ++c)
            dot += q[static_cast<size_t>(((b * S_ + i) * D) + h * dh + c)] *
                   k[static_cast<size_t>(((b * S_ + j) * D) + h * dh + c)];
          dot *= scale;
          if (!validity[static_cast<size_t>(b * S_ + j)]) dot -= 1e9;
          w[static_cast<size_t>(j)] = dot;
          mx = std::max(mx, dot);
        }
        double denom = 0.0;
        for (auto& x : w) {
          x = std::exp(x - mx);
          denom += x;
        }
        for (int64_t j = 0; j < S_; ++j)
          for (int64_t c = 0; c < dh; ++c)
            ctx[static_cast<size_t>((b * S_ + i) * D + h * dh + c)] +=
                w[static_cast<size_t>(j)] / denom *
                v[static_cast<size_t>((b * S_ + j) * D + h * dh + c)];
      }
  const auto& ow = params.at(p + "o_w").values();
  const auto& ob = params.at(p + "o_b").values();
  std::vector<float> out(static_cast<size_t>(B * S_ * D));
  for (int64_t n = 0; n < B * S_; ++n)
    for (int64_t j = 0; j < D; ++j) {
      double acc = ob[static_cast<size_t>(j)];
      for (int64_t i = 0; i < D; ++i)
        acc += ctx[static_cast<size_t>(n * D + i)] * ow[static_cast<size_t>(i * D + j)];
      out[static_cast<size_t>(n * D + j)] = static_cast<float>(acc);
    }
  return Tensor::from_data({B, S_, D}, std::move(out));
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("embed reads position rows at the configured offset") {
  auto cfg = tiny_config();  // offset 2
  auto params = init_random(cfg, 3);
  auto input = random_input(cfg, 1, 4, 5);
  Rng rng(0);
  auto base = embed(input, params, cfg, rng, false);
  // perturbing an offset row (skipped by every position id) changes nothing
  auto poked = params;
  {
    auto pos = poked.at("pos_emb");
    auto data = pos.values();
    data[0 * cfg.hidden_dim + 1] += 1.0f;
    data[1 * cfg.hidden_dim + 3] += 1.0f;
    poked.erase("pos_emb");
    poked.emplace("pos_emb", Tensor::from_data(pos.shape(), std::move(data)));
  }
  auto same = embed(input, poked, cfg, rng, false);
  CHECK(max_abs_diff(base, same) == 0.0);
  // perturbing row 2 moves position 0 (and only position 0)
  auto poked2 = params;
  {
    auto pos = poked2.at("pos_emb");
    auto data = pos.values();
    data[2 * cfg.hidden_dim] += 1.0f;
    poked2.erase("pos_emb");
    poked2.emplace("pos_emb", Tensor::from_data(pos.shape(), std::move(data)));
  }
  auto moved = embed(input, poked2, cfg, rng, false);
  bool pos0_changed = false;
  for (int64_t j = 0; j < cfg.hidden_dim; ++j)
    if (moved.at({0, 0, j}) != base.at({0, 0, j})) pos0_changed = true;
  CHECK(pos0_changed);
  for (int64_t t = 1; t < 4; ++t)
    for (int64_t j = 0; j < cfg.hidden_dim; ++j)
      CHECK(moved.at({0, t, j}) == base.at({0, t, j}));
}

TEST_CASE("embed with zero offset starts at row zero") {
  auto cfg = tiny_config();
  cfg.position_offset = 0;
  auto params = init_random(cfg, 3);
  auto input = random_input(cfg, 1, 3, 6);
  Rng rng(0);
  auto base = embed(input, params, cfg, rng, false);
  auto poked = params;
  {
    auto pos = poked.at("pos_emb");
    auto data = pos.values();
    data[0] += 1.0f;  // row 0 now feeds position 0
    poked.erase("pos_emb");
    poked.emplace("pos_emb", Tensor::from_data(pos.shape(), std::move(data)));
  }
  auto moved = embed(input, poked, cfg, rng, false);
  bool changed = false;
  for (int64_t j = 0; j < cfg.hidden_dim; ++j)
    if (moved.at({0, 0, j}) != base.at({0, 0, j})) changed = true;
  CHECK(changed);
}

TEST_CASE("embed rejects overlong sequences and bad segment ids") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 3);
  Rng rng(0);
  auto long_input = random_input(cfg, 1, cfg.l_src + 1, 1);
  CHECK_THROWS_AS(embed(long_input, params, cfg, rng, false), ValidationError);
  auto input = random_input(cfg, 1, 4, 1);
  input.segment_ids[2] = 1;  // only one segment type configured
  CHECK_THROWS_AS(embed(input, params, cfg, rng, false), ValidationError);
}

TEST_CASE("inference logits are invariant under ln_order") {
  auto cfg_src = tiny_config();
  cfg_src.ln_order = LnOrder::ln_then_dropout_in_embeddings;
  auto cfg_tgt = cfg_src;
  cfg_tgt.ln_order = LnOrder::dropout_then_ln_everywhere;
  auto params = init_random(cfg_src, 11);
  auto input = random_input(cfg_src, 2, 6, 21);
  Rng r1(0), r2(0);
  auto a = forward(input, params, cfg_src, r1, false);
  auto b = forward(input, params, cfg_tgt, r2, false);
  CHECK(max_abs_diff(a, b) <= 1e-6);
}

TEST_CASE("training logits differ between ln_order settings") {
  auto cfg_src = tiny_config();
  auto cfg_tgt = cfg_src;
  cfg_tgt.ln_order = LnOrder::dropout_then_ln_everywhere;
  auto params = init_random(cfg_src, 11);
  auto input = random_input(cfg_src, 2, 6, 21);
  Rng r1(9), r2(9);
  auto a = forward(input, params, cfg_src, r1, true);
  auto b = forward(input, params, cfg_tgt, r2, true);
  CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("attention over a single token is the value path") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 17);
  Rng rng(1);
  std::vector<float> h(static_cast<size_t>(cfg.hidden_dim));
  for (auto& x : h) x = static_cast<float>(rng.normal());
  auto hidden = Tensor::from_data({1, 1, cfg.hidden_dim}, h);
  auto out = attention_full(hidden, {1}, params, 0, cfg);
  auto v = add(matmul(hidden, params.at("layer0.v_w")), params.at("layer0.v_b"));
  auto want = add(matmul(v, params.at("layer0.o_w")), params.at("layer0.o_b"));
  CHECK(max_abs_diff(out, want) <= 1e-6);
}

TEST_CASE("constant queries average the valid values uniformly") {
  auto cfg = tiny_config();
  const int64_t d = cfg.hidden_dim, seq = 6;
  auto params = init_random(cfg, 23);
  // zero q/k projections make every score equal; identity o extracts ctx
  for (const char* name : {"layer0.q_w", "layer0.k_w"}) {
    params.erase(name);
    params.emplace(name, Tensor::zeros({d, d}));
  }
  params.erase("layer0.o_w");
  params.emplace("layer0.o_w", identity_matrix(d));
  for (const char* name : {"layer0.o_b"}) {
    params.erase(name);
    params.emplace(name, Tensor::zeros({d}));
  }
  Rng rng(2);
  std::vector<float> h(static_cast<size_t>(seq * d));
  for (auto& x : h) x = static_cast<float>(rng.normal());
  auto hidden = Tensor::from_data({1, seq, d}, h);
  std::vector<uint8_t> validity = {1, 1, 0, 1, 0, 1};
  auto out = attention_full(hidden, validity, params, 0, cfg);
  auto v = add(matmul(hidden, params.at("layer0.v_w")), params.at("layer0.v_b"));
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    int n = 0;
    for (int64_t t = 0; t < seq; ++t)
      if (validity[static_cast<size_t>(t)]) {
        mean += v.at({0, t, j});
        n++;
      }
    mean /= n;
    for (int64_t t = 0; t < seq; ++t)
      CHECK(out.at({0, t, j}) == doctest::Approx(mean).epsilon(1e-5));
  }
}

TEST_CASE("multi-head attention matches the per-head oracle") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 31);
  Rng rng(3);
  const int64_t B = 2, S_ = 7, D = cfg.hidden_dim;
  std::vector<float> h(static_cast<size_t>(B * S_ * D));
  for (auto& x : h) x = static_cast<float>(rng.normal());
  auto hidden = Tensor::from_data({B, S_, D}, h);
  std::vector<uint8_t> validity(static_cast<size_t>(B * S_), 1);
  validity[5] = 0;
  validity[static_cast<size_t>(S_ + 2)] = 0;
  auto fast = attention_full(hidden, validity, params, 0, cfg);
  auto slow = attention_oracle(hidden, validity, params, 0, cfg);
  CHECK(max_abs_diff(fast, slow) <= 1e-5);
}

TEST_CASE("zero layers reduce the encoder to the embedding") {
  auto cfg = tiny_config();
  cfg.num_layers = 0;
  auto params = init_random(cfg, 5);
  auto input = random_input(cfg, 2, 5, 8);
  Rng r1(0), r2(0);
  auto enc = encoder_forward(input, params, cfg, r1, false);
  auto emb = embed(input, params, cfg, r2, false);
  CHECK(max_abs_diff(enc, emb) == 0.0);
}

TEST_CASE("inference forward is deterministic") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  auto input = random_input(cfg, 2, 6, 8);
  Rng r1(1), r2(2);  // rngs unused in inference
  auto a = forward(input, params, cfg, r1, false);
  auto b = forward(input, params, cfg, r2, false);
  CHECK(a.values() == b.values());
}

TEST_CASE("training runs differ across dropout seeds") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  auto input = random_input(cfg, 2, 6, 8);
  Rng r1(1), r2(2);
  auto a = forward(input, params, cfg, r1, true);
  auto b = forward(input, params, cfg, r2, true);
  CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("mlm head with zero hidden state and zero dense emits the bias") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  for (const char* name : {"mlm_dense_w", "mlm_dense_b"}) {
    auto shape = params.at(name).shape();
    params.erase(name);
    params.emplace(name, Tensor::zeros(shape));
  }
  std::vector<float> bias(static_cast<size_t>(cfg.vocab_size));
  for (size_t i = 0; i < bias.size(); ++i) bias[i] = 0.01f * static_cast<float>(i);
  params.erase("mlm_out_bias");
  params.emplace("mlm_out_bias", Tensor::from_data({cfg.vocab_size}, bias));
  auto hidden = Tensor::zeros({1, 3, cfg.hidden_dim});
  auto logits = mlm_logits(hidden, params, cfg);
  REQUIRE(logits.shape() == Shape{1, 3, cfg.vocab_size});
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t v = 0; v < cfg.vocab_size; ++v)
      CHECK(logits.at({0, t, v}) == doctest::Approx(0.01 * static_cast<double>(v)).epsilon(1e-6));
}

TEST_CASE("tied projection: perturbing a word row moves its logit channel") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  Rng rng(4);
  std::vector<float> h(static_cast<size_t>(2 * cfg.hidden_dim));
  for (auto& x : h) x = static_cast<float>(rng.normal());
  auto hidden = Tensor::from_data({1, 2, cfg.hidden_dim}, h);
  auto base = mlm_logits(hidden, params, cfg);
  auto poked = params;
  {
    auto we = poked.at("word_emb");
    auto data = we.values();
    for (int64_t j = 0; j < cfg.hidden_dim; ++j) data[5 * cfg.hidden_dim + j] += 0.5f;
    poked.erase("word_emb");
    poked.emplace("word_emb", Tensor::from_data(we.shape(), std::move(data)));
  }
  auto moved = mlm_logits(hidden, poked, cfg);
  for (int64_t t = 0; t < 2; ++t) {
    CHECK(moved.at({0, t, 5}) != base.at({0, t, 5}));
    for (int64_t v = 0; v < cfg.vocab_size; ++v)
      if (v != 5) CHECK(moved.at({0, t, v}) == base.at({0, t, v}));
  }
}

TEST_CASE("length dispatch honors the sparse config") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  Rng rng(0);
  // at l_src the full path runs
  auto at_limit = random_input(cfg, 1, cfg.l_src, 9);
  CHECK_NOTHROW(forward(at_limit, params, cfg, rng, false));
  // beyond l_src without a sparse config: hard error
  auto beyond = random_input(cfg, 1, cfg.l_src + 1, 9);
  CHECK_THROWS_AS(forward(beyond, params, cfg, rng, false), ValidationError);

  // with a sparse config the same length dispatches to the sparse path
  auto cfg2 = tiny_config();
  cfg2.l_tgt = 2 * cfg2.l_src;
  cfg2.sparse = SparseConfig{1, 1, 3, 1, 7};  // block size 1 accepts any length
  auto params2 = init_random(cfg2, 5);
  auto mid = random_input(cfg2, 1, cfg2.l_src + 1, 9);
  CHECK_NOTHROW(forward(mid, params2, cfg2, rng, false));
  auto too_long = random_input(cfg2, 1, cfg2.l_tgt + 1, 9);
  CHECK_THROWS_AS(forward(too_long, params2, cfg2, rng, false), ValidationError);
}

TEST_CASE("batch order only permutes the outputs") {
  auto cfg = tiny_config();
  auto params = init_random(cfg, 5);
  auto a = random_input(cfg, 1, 6, 31);
  auto b = random_input(cfg, 1, 6, 32);
  EncoderInput ab = EncoderInput::full_valid(2, 6, {});
  ab.token_ids = a.token_ids;
  ab.token_ids.insert(ab.token_ids.end(), b.token_ids.begin(), b.token_ids.end());
  ab.segment_ids.assign(12, 0);
  ab.validity.assign(12, 1);
  EncoderInput ba = ab;
  std::copy(b.token_ids.begin(), b.token_ids.end(), ba.token_ids.begin());
  std::copy(a.token_ids.begin(), a.token_ids.end(), ba.token_ids.begin() + 6);
  Rng rng(0);
  auto out_ab = forward(ab, params, cfg, rng, false);
  auto out_ba = forward(ba, params, cfg, rng, false);
  const auto n = static_cast<size_t>(6 * cfg.vocab_size);
  for (size_t i = 0; i < n; ++i) {
    CHECK(out_ab.values()[i] == out_ba.values()[n + i]);
    CHECK(out_ab.values()[n + i] == out_ba.values()[i]);
  }
}

}  // TEST_SUITE
