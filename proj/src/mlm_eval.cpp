#include "taperkit/mlm_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "taperkit/encoder.hpp"
#include "taperkit/errors.hpp"

namespace taperkit {

std::vector<std::vector<int32_t>> pack_corpus(const std::vector<std::vector<int32_t>>& docs,
                                              int64_t seq_len, int32_t sep_id) {
  if (seq_len < 2) throw ValidationError("pack_corpus: window length must be at least 2");
  if (docs.empty()) throw ValidationError("pack_corpus: corpus is empty");

  std::vector<int32_t> stream;
  for (const auto& doc : docs) {
    stream.insert(stream.end(), doc.begin(), doc.end());
    stream.push_back(sep_id);
  }

  std::vector<std::vector<int32_t>> sequences;
  const auto windows = static_cast<int64_t>(stream.size()) / seq_len;
  sequences.reserve(static_cast<size_t>(windows));
  for (int64_t w = 0; w < windows; ++w)
    sequences.emplace_back(stream.begin() + w * seq_len, stream.begin() + (w + 1) * seq_len);
  return sequences;
}

PackedBatch mask_tokens(const std::vector<std::vector<int32_t>>& sequences, double ratio,
                        int32_t mask_id, int32_t sep_id, Rng& rng) {
  if (!(ratio > 0.0) || !(ratio < 1.0))
    throw ValidationError("mask_tokens: ratio must lie strictly between 0 and 1");
  if (sequences.empty()) throw ValidationError("mask_tokens: nothing to mask");
  const auto seq = static_cast<int64_t>(sequences.front().size());
  for (const auto& s : sequences)
    if (static_cast<int64_t>(s.size()) != seq)
      throw ValidationError("mask_tokens: sequences must share one length");

  PackedBatch batch;
  batch.batch = static_cast<int64_t>(sequences.size());
  batch.seq = seq;
  batch.token_ids.reserve(static_cast<size_t>(batch.batch * seq));
  batch.mask_positions.assign(static_cast<size_t>(batch.batch * seq), 0);

  const auto target = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(ratio * static_cast<double>(seq))));
  for (int64_t row = 0; row < batch.batch; ++row) {
    const auto& tokens = sequences[static_cast<size_t>(row)];
    batch.token_ids.insert(batch.token_ids.end(), tokens.begin(), tokens.end());

    std::vector<int64_t> candidates;
    for (int64_t t = 0; t < seq; ++t)
      if (tokens[static_cast<size_t>(t)] != sep_id) candidates.push_back(t);
    if (static_cast<int64_t>(candidates.size()) < target)
      throw ValidationError("mask_tokens: sequence " + std::to_string(row) + " has only " +
                            std::to_string(candidates.size()) +
                            " maskable positions, needs " + std::to_string(target));

    // partial shuffle, then mark the prefix in position order
    for (int64_t i = 0; i < target; ++i) {
      const auto j = static_cast<int64_t>(
          rng.uniform_below(candidates.size() - static_cast<uint64_t>(i)));
      std::swap(candidates[static_cast<size_t>(i)], candidates[static_cast<size_t>(i + j)]);
    }
    std::sort(candidates.begin(), candidates.begin() + target);
    for (int64_t i = 0; i < target; ++i)
      batch.mask_positions[static_cast<size_t>(row * seq + candidates[static_cast<size_t>(i)])] = 1;
  }

  for (int64_t idx = 0; idx < batch.batch * seq; ++idx) {
    if (!batch.mask_positions[static_cast<size_t>(idx)]) continue;
    batch.labels.push_back(batch.token_ids[static_cast<size_t>(idx)]);
    batch.token_ids[static_cast<size_t>(idx)] = mask_id;
  }
  return batch;
}

std::pair<double, int64_t> masked_nll_from_logits(const Tensor& logits, const PackedBatch& batch) {
  if (logits.rank() != 3 || logits.dim(0) != batch.batch || logits.dim(1) != batch.seq)
    throw ValidationError("masked_nll: logits shape disagrees with the batch");
  const int64_t vocab = logits.dim(2);
  const auto& x = logits.values();

  double sum = 0.0;
  int64_t count = 0;
  size_t label_idx = 0;
  for (int64_t idx = 0; idx < batch.batch * batch.seq; ++idx) {
    if (!batch.mask_positions[static_cast<size_t>(idx)]) continue;
    if (label_idx >= batch.labels.size())
      throw ValidationError("masked_nll: fewer labels than mask flags");
    const int32_t label = batch.labels[label_idx++];
    if (label < 0 || label >= vocab)
      throw ValidationError("masked_nll: label outside the vocabulary");
    const float* row = x.data() + idx * vocab;
    double mx = row[0];
    for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double denom = 0.0;
    for (int64_t v = 0; v < vocab; ++v) denom += std::exp(static_cast<double>(row[v]) - mx);
    sum += mx + std::log(denom) - static_cast<double>(row[label]);
    ++count;
  }
  if (label_idx != batch.labels.size())
    throw ValidationError("masked_nll: more labels than mask flags");
  return {sum, count};
}

PplStats masked_ppl(const ParamStore& params, const ModelConfig& config,
                    const std::vector<PackedBatch>& batches) {
  if (batches.empty()) throw ValidationError("masked_ppl: no batches to evaluate");
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& batch : batches) {
    EncoderInput input;
    input.batch = batch.batch;
    input.seq = batch.seq;
    input.token_ids = batch.token_ids;
    input.segment_ids.assign(static_cast<size_t>(batch.batch * batch.seq), 0);
    input.validity.assign(static_cast<size_t>(batch.batch * batch.seq), 1);
    input.check(config);
    Rng unused(0);
    auto logits = forward(input, params, config, unused, false);
    auto [batch_sum, batch_count] = masked_nll_from_logits(logits, batch);
    sum += batch_sum;
    count += batch_count;
  }
  if (count == 0) throw ValidationError("masked_ppl: no masked positions");
  PplStats stats;
  stats.masked_tokens = count;
  stats.mean_nll = sum / static_cast<double>(count);
  stats.ppl = std::exp(stats.mean_nll);
  return stats;
}

namespace {

std::vector<PackedBatch> split_rows(const PackedBatch& all, int64_t batch_rows) {
  std::vector<PackedBatch> out;
  size_t label_cursor = 0;  // labels are stored in scan order, rows contiguous
  for (int64_t begin = 0; begin < all.batch; begin += batch_rows) {
    const int64_t end = std::min(all.batch, begin + batch_rows);
    PackedBatch part;
    part.batch = end - begin;
    part.seq = all.seq;
    part.token_ids.assign(all.token_ids.begin() + begin * all.seq,
                          all.token_ids.begin() + end * all.seq);
    part.mask_positions.assign(all.mask_positions.begin() + begin * all.seq,
                               all.mask_positions.begin() + end * all.seq);
    for (int64_t idx = begin * all.seq; idx < end * all.seq; ++idx)
      if (all.mask_positions[static_cast<size_t>(idx)])
        part.labels.push_back(all.labels[label_cursor++]);
    out.push_back(std::move(part));
  }
  return out;
}

const char* variant_kind_name(ExtensionVariant kind) {
  switch (kind) {
    case ExtensionVariant::vanilla: return "vanilla";
    case ExtensionVariant::repeated: return "repeated";
    case ExtensionVariant::taper: return "taper";
  }
  return "unknown";
}

std::string format_sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

PplReport ppl_length_sweep(const ParamStore& src_params, const ModelConfig& src_config,
                           const std::vector<std::vector<int32_t>>& docs,
                           const SweepSettings& settings) {
  if (settings.lengths.empty()) throw ValidationError("sweep: no lengths requested");
  if (settings.variants.empty()) throw ValidationError("sweep: no variants requested");
  if (settings.batch_rows < 1) throw ValidationError("sweep: batch_rows must be positive");
  for (int64_t len : settings.lengths)
    if (len < 2 || len > settings.l_tgt)
      throw ValidationError("sweep: length " + std::to_string(len) +
                            " outside [2, " + std::to_string(settings.l_tgt) + "]");

  // one masked batch set per length, shared by every variant
  std::vector<std::vector<PackedBatch>> batches_by_length;
  batches_by_length.reserve(settings.lengths.size());
  const Rng mask_base(settings.mask_seed);
  for (int64_t len : settings.lengths) {
    auto sequences = pack_corpus(docs, len, src_config.sep_token_id);
    if (sequences.empty())
      throw ValidationError("sweep: corpus yields no full windows at length " +
                            std::to_string(len));
    Rng mask_rng = mask_base.fork(static_cast<uint64_t>(len));
    auto all = mask_tokens(sequences, settings.mask_ratio, src_config.mask_token_id,
                           src_config.sep_token_id, mask_rng);
    batches_by_length.push_back(split_rows(all, settings.batch_rows));
  }

  PplReport report;
  for (const auto& spec : settings.variants) {
    auto model = variant_model(src_params, src_config, settings.target_sparse, settings.l_tgt,
                               spec);
    for (size_t li = 0; li < settings.lengths.size(); ++li) {
      auto stats = masked_ppl(model.params, model.config, batches_by_length[li]);
      PplRow row;
      row.variant = variant_kind_name(spec.kind);
      if (spec.kind == ExtensionVariant::taper) row.tau = spec.tau;
      row.seq_len = settings.lengths[li];
      row.masked_tokens = stats.masked_tokens;
      row.mean_nll = stats.mean_nll;
      row.ppl = stats.ppl;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string ppl_report_csv(const PplReport& report) {
  std::ostringstream os;
  os << "variant,tau,seq_len,masked_tokens,mean_nll,ppl\n";
  for (const auto& row : report.rows) {
    os << row.variant << ",";
    if (row.tau) os << format_sig6(*row.tau);
    os << "," << row.seq_len << "," << row.masked_tokens << "," << format_sig6(row.mean_nll)
       << "," << format_sig6(row.ppl) << "\n";
  }
  return os.str();
}

}  // namespace taperkit
