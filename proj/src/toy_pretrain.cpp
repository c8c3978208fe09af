#include "taperkit/toy_pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "taperkit/encoder.hpp"
#include "taperkit/errors.hpp"
#include "taperkit/mlm_eval.hpp"
#include "taperkit/rng.hpp"

namespace taperkit {

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Three distinct content ids for one (context, phase) cell, derived
// statelessly so the table never has to be materialized.
void context_candidates(uint64_t table_seed, const int32_t* context, int32_t order,
                        int64_t phase, int32_t alphabet, int32_t out[3]) {
  uint64_t h = table_seed;
  for (int32_t i = 0; i < order; ++i) h = mix64(h ^ static_cast<uint64_t>(context[i] + 1));
  h = mix64(h ^ (static_cast<uint64_t>(phase) << 16));
  const uint64_t h0 = mix64(h ^ 0x11);
  const uint64_t h1 = mix64(h ^ 0x22);
  const uint64_t h2 = mix64(h ^ 0x33);
  const int32_t a = static_cast<int32_t>(h0 % static_cast<uint64_t>(alphabet));
  const int32_t b =
      static_cast<int32_t>((a + 1 + h1 % static_cast<uint64_t>(alphabet - 1)) %
                           static_cast<uint64_t>(alphabet));
  int32_t left = static_cast<int32_t>(h2 % static_cast<uint64_t>(alphabet - 2));
  int32_t c = 0;
  for (int32_t cand = 0;; ++cand) {
    if (cand == a || cand == b) continue;
    if (left == 0) {
      c = cand;
      break;
    }
    --left;
  }
  out[0] = 4 + a;
  out[1] = 4 + b;
  out[2] = 4 + c;
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (content_alphabet < 4) throw ValidationError("corpus spec: content_alphabet must be >= 4");
  if (vocab_size < 4 + content_alphabet)
    throw ValidationError("corpus spec: vocab_size must cover reserved ids plus the alphabet");
  if (sentinel_period < 2) throw ValidationError("corpus spec: sentinel_period must be >= 2");
  if (markov_order < 1 || markov_order > 3)
    throw ValidationError("corpus spec: markov_order must be 1, 2, or 3");
  if (num_docs < 10) throw ValidationError("corpus spec: need at least 10 docs for a split");
  if (min_doc_len < 1 || max_doc_len < min_doc_len)
    throw ValidationError("corpus spec: bad doc length range");
  bool any = false;
  for (int64_t len = min_doc_len; len <= max_doc_len; ++len) {
    if (len % sentinel_period == sentinel_period - 1) any = true;
  }
  if (!any)
    throw ValidationError("corpus spec: no length in range lands on period - 1 (mod period)");
}

SyntheticCorpus gen_synthetic_corpus(const SyntheticCorpusSpec& spec, uint64_t seed) {
  spec.validate();
  std::vector<int64_t> lengths;
  for (int64_t len = spec.min_doc_len; len <= spec.max_doc_len; ++len) {
    if (len % spec.sentinel_period == spec.sentinel_period - 1) lengths.push_back(len);
  }
  const uint64_t table_seed = mix64(seed ^ 0x7AB1E5EEDull);

  SyntheticCorpus corpus;
  Rng base(seed);
  for (int64_t d = 0; d < spec.num_docs; ++d) {
    Rng rng = base.fork(static_cast<uint64_t>(d) + 1);
    const int64_t len = lengths[rng.uniform_below(lengths.size())];
    std::vector<int32_t> doc;
    doc.reserve(static_cast<size_t>(len));
    int32_t context[3] = {kSentinelTokenId, kSentinelTokenId, kSentinelTokenId};
    for (int64_t t = 0; t < len; ++t) {
      int32_t tok;
      if (t % spec.sentinel_period == 0) {
        tok = kSentinelTokenId;
      } else {
        int32_t cands[3];
        context_candidates(table_seed, context, spec.markov_order, t % spec.sentinel_period,
                           spec.content_alphabet, cands);
        const double u = rng.uniform();
        tok = cands[u < 0.80 ? 0 : (u < 0.95 ? 1 : 2)];
      }
      doc.push_back(tok);
      context[2] = context[1];
      context[1] = context[0];
      context[0] = tok;
    }
    if (d % 10 == 9) {
      corpus.eval_docs.push_back(std::move(doc));
    } else {
      corpus.train_docs.push_back(std::move(doc));
    }
  }
  return corpus;
}

PretrainResult pretrain_mlm(const ModelConfig& config,
                            const std::vector<std::vector<int32_t>>& train_docs,
                            const PretrainOptions& options) {
  config.validate();
  if (config.sparse.has_value())
    throw ValidationError("pretrain: source training expects a full-attention config");
  if (config.position_offset != 2)
    throw ValidationError("pretrain: source config must use position_offset 2");
  if (config.num_segment_types != 1)
    throw ValidationError("pretrain: source config must use a single segment type");
  if (options.steps < 1) throw ValidationError("pretrain: steps must be >= 1");
  if (options.batch_size < 1) throw ValidationError("pretrain: batch_size must be >= 1");
  if (!(options.lr > 0.0) || !std::isfinite(options.lr))
    throw ValidationError("pretrain: lr must be positive and finite");

  const auto windows = pack_corpus(train_docs, config.l_src, config.sep_token_id);
  if (windows.empty())
    throw ValidationError("pretrain: corpus too small for a single training window");

  PretrainResult result{init_random(config, options.seed), {}};
  result.loss_curve.reserve(static_cast<size_t>(options.steps));
  std::vector<std::string> trained;
  for (auto& [name, tensor] : result.params) {
    if (name == "seg_emb") continue;  // single row, stays at init
    tensor.set_requires_grad(true);
    trained.push_back(name);
  }
  std::sort(trained.begin(), trained.end());

  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> adam;
  for (const auto& name : trained) {
    const size_t n = result.params.at(name).values().size();
    adam[name] = Moments{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  }

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const int64_t warmup = std::max<int64_t>(1, options.steps / 10);
  const Rng base(options.seed);

  for (int64_t step = 0; step < options.steps; ++step) {
    Rng sample_rng = base.fork(static_cast<uint64_t>(2 * step));
    std::vector<std::vector<int32_t>> rows(static_cast<size_t>(options.batch_size));
    for (auto& row : rows) row = windows[sample_rng.uniform_below(windows.size())];
    PackedBatch batch = mask_tokens(rows, options.mask_ratio, config.mask_token_id,
                                    config.sep_token_id, sample_rng);

    EncoderInput input = EncoderInput::full_valid(batch.batch, batch.seq, batch.token_ids);
    input.check(config);
    Rng dropout_rng = base.fork(static_cast<uint64_t>(2 * step) + 1);
    Tensor logits = forward(input, result.params, config, dropout_rng, /*training=*/true);

    std::vector<int64_t> flat;
    flat.reserve(batch.labels.size());
    for (size_t i = 0; i < batch.mask_positions.size(); ++i) {
      if (batch.mask_positions[i]) flat.push_back(static_cast<int64_t>(i));
    }
    Tensor loss = masked_cross_entropy(logits, flat, batch.labels);
    const double loss_value = static_cast<double>(loss.values()[0]);
    if (!std::isfinite(loss_value)) throw NumericError("pretrain: loss diverged");
    loss.backward();

    const int64_t t = step + 1;
    const double lr_t =
        options.lr * (t <= warmup ? static_cast<double>(t) / static_cast<double>(warmup) : 1.0);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& name : trained) {
      auto& tensor = result.params.at(name);
      auto& vals = tensor.values();
      auto& mom = adam.at(name);
      if (!tensor.has_grad()) continue;  // unreachable for this graph, kept for safety
      const auto& grad = tensor.grad();
      for (size_t i = 0; i < vals.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
        mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
        const double update = lr_t * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + eps);
        const double next = static_cast<double>(vals[i]) - update;
        if (!std::isfinite(next)) throw NumericError("pretrain: parameter diverged");
        vals[i] = static_cast<float>(next);
      }
      tensor.zero_grad();
    }
    result.loss_curve.push_back(loss_value);
  }
  return result;
}

std::string loss_curve_csv(const std::vector<double>& curve) {
  std::string out = "step,loss\n";
  char buf[64];
  for (size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.8g\n", i + 1, curve[i]);
    out += buf;
  }
  return out;
}

}  // namespace taperkit
