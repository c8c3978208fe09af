#include "taperkit/transform.hpp"

#include <cmath>
#include <sstream>

#include "taperkit/encoder.hpp"
#include "taperkit/errors.hpp"
#include "taperkit/rng.hpp"

namespace taperkit {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::copied: return "copied";
    case Provenance::sliced: return "sliced";
    case Provenance::extended: return "extended";
    case Provenance::duplicated: return "duplicated";
  }
  return "unknown";
}

std::string VariantSpec::label() const {
  switch (kind) {
    case ExtensionVariant::vanilla: return "vanilla";
    case ExtensionVariant::repeated: return "repeated";
    case ExtensionVariant::taper: break;
  }
  std::ostringstream os;
  os << "taper:" << tau;
  return os.str();
}

VariantSpec parse_variant(const std::string& text) {
  VariantSpec spec;
  if (text == "vanilla") {
    spec.kind = ExtensionVariant::vanilla;
    return spec;
  }
  if (text == "repeated") {
    spec.kind = ExtensionVariant::repeated;
    return spec;
  }
  if (text == "taper") {
    spec.kind = ExtensionVariant::taper;
    return spec;
  }
  const std::string prefix = "taper:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    size_t used = 0;
    double tau = 0.0;
    try {
      tau = std::stod(num, &used);
    } catch (const std::exception&) {
      throw ValidationError("variant: cannot parse temperature in '" + text + "'");
    }
    if (used != num.size() || !(tau > 0.0) || !std::isfinite(tau))
      throw ValidationError("variant: temperature in '" + text + "' must be a positive number");
    spec.kind = ExtensionVariant::taper;
    spec.tau = tau;
    return spec;
  }
  throw ValidationError("variant: unknown mode '" + text +
                        "'; expected vanilla, repeated, taper, or taper:T");
}

namespace {

Tensor deep_copy(const Tensor& t) {
  return Tensor::from_data(t.shape(), std::vector<float>(t.values()));
}

Tensor extend_by_variant(const Tensor& sliced, int64_t r, const VariantSpec& variant) {
  switch (variant.kind) {
    case ExtensionVariant::repeated:
      return repeat_positions(sliced, r);
    case ExtensionVariant::taper: {
      TaperConfig tc;
      tc.tau = variant.tau;
      tc.r = r;
      return extend_positions(sliced, tc);
    }
    case ExtensionVariant::vanilla:
      break;
  }
  // fresh rows past the source span, drawn like an untrained table
  const int64_t l_src = sliced.dim(0), d = sliced.dim(1);
  std::vector<float> out(static_cast<size_t>(r * l_src * d));
  std::copy(sliced.values().begin(), sliced.values().end(), out.begin());
  Rng rng(variant.seed);
  for (int64_t k = l_src * d; k < r * l_src * d; ++k)
    out[static_cast<size_t>(k)] = static_cast<float>(rng.truncated_normal(0.02));
  return Tensor::from_data({r * l_src, d}, std::move(out));
}

}  // namespace

TransformResult variant_model(const ParamStore& src_params, const ModelConfig& src_config,
                              const SparseConfig& target_sparse, int64_t l_tgt,
                              const VariantSpec& variant) {
  src_config.validate();
  validate_store(src_params, src_config);
  if (src_config.sparse)
    throw ValidationError("transform: source model must be a plain full-attention model");
  if (src_config.position_offset != 2)
    throw ValidationError("transform: source position table must start at offset 2");
  if (src_config.num_segment_types != 1)
    throw ValidationError("transform: source must have exactly one segment type");
  if (l_tgt <= 0 || l_tgt % src_config.l_src != 0)
    throw ValidationError("transform: target length " + std::to_string(l_tgt) +
                          " is not a positive multiple of the source length " +
                          std::to_string(src_config.l_src));
  const int64_t r = l_tgt / src_config.l_src;
  if (variant.kind == ExtensionVariant::taper) {
    TaperConfig tc;
    tc.tau = variant.tau;
    tc.r = r;
    tc.validate();
  }

  ModelConfig tgt_config = src_config;
  tgt_config.position_offset = 0;
  tgt_config.num_segment_types = 2;
  tgt_config.ln_order = LnOrder::dropout_then_ln_everywhere;
  tgt_config.sparse = target_sparse;
  tgt_config.l_tgt = l_tgt;
  tgt_config.validate();

  TransformResult result;
  result.config = tgt_config;
  auto& report = result.report;
  report.segment_rows_duplicated = true;
  report.position_rows_sliced = true;
  report.position_rows_extended = r > 1;
  report.ln_order_changed = src_config.ln_order != tgt_config.ln_order;
  report.variant = variant.label();
  report.tau = variant.kind == ExtensionVariant::taper ? variant.tau : 0.0;
  report.repetitions = r;

  const int64_t hidden = src_config.hidden_dim;
  for (const auto& [name, tensor] : src_params) {
    if (name == "seg_emb") {
      const auto& v = tensor.values();
      std::vector<float> rows(v.begin(), v.end());
      rows.insert(rows.end(), v.begin(), v.end());
      result.params.emplace(name, Tensor::from_data({2, hidden}, std::move(rows)));
      report.provenance[name] = Provenance::duplicated;
    } else if (name == "pos_emb") {
      const int64_t d = tensor.dim(1);
      const auto& v = tensor.values();
      const auto begin = v.begin() + 2 * d;
      std::vector<float> base(begin, begin + src_config.l_src * d);
      auto sliced = Tensor::from_data({src_config.l_src, d}, std::move(base));
      result.params.emplace(name, extend_by_variant(sliced, r, variant));
      report.provenance[name] = r > 1 ? Provenance::extended : Provenance::sliced;
    } else {
      result.params.emplace(name, deep_copy(tensor));
      report.provenance[name] = Provenance::copied;
    }
  }
  validate_store(result.params, result.config);
  return result;
}

TransformResult transform_model(const ParamStore& src_params, const ModelConfig& src_config,
                                const SparseConfig& target_sparse, int64_t l_tgt,
                                const TaperConfig& taper_config) {
  taper_config.validate();
  if (src_config.l_src > 0 && l_tgt > 0 && l_tgt % src_config.l_src == 0 &&
      taper_config.r != l_tgt / src_config.l_src)
    throw ValidationError("transform: repetition count " + std::to_string(taper_config.r) +
                          " disagrees with the length ratio " +
                          std::to_string(l_tgt / src_config.l_src));
  VariantSpec spec;
  spec.kind = ExtensionVariant::taper;
  spec.tau = taper_config.tau;
  return variant_model(src_params, src_config, target_sparse, l_tgt, spec);
}

namespace {

template <typename S>
ConsistencyReport verify_impl(const ParamsT<S>& src_params, const ModelConfig& src_config,
                              const ParamsT<S>& tgt_params, const ModelConfig& tgt_config,
                              int64_t n_samples, int64_t max_len, double tol, uint64_t seed) {
  if (n_samples < 1) throw ValidationError("verify: need at least one sample");
  if (max_len < 1 || max_len > src_config.l_src || max_len > tgt_config.l_src)
    throw ValidationError("verify: max_len must lie in [1, l_src]");
  if (src_config.vocab_size != tgt_config.vocab_size)
    throw ValidationError("verify: vocabulary sizes differ");
  if (!(tol > 0.0)) throw ValidationError("verify: tolerance must be positive");

  ConsistencyReport report;
  report.num_samples = n_samples;
  report.tol = tol;
  const Rng base(seed);
  for (int64_t s = 0; s < n_samples; ++s) {
    Rng rng = base.fork(static_cast<uint64_t>(s));
    const auto len =
        1 + static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(max_len)));
    std::vector<int32_t> tokens(static_cast<size_t>(len));
    for (auto& t : tokens) {
      // uniform over the vocabulary with the pad id skipped
      auto v = static_cast<int32_t>(
          rng.uniform_below(static_cast<uint64_t>(src_config.vocab_size - 1)));
      if (v >= src_config.pad_token_id) ++v;
      t = v;
    }
    auto input = EncoderInput::full_valid(1, len, tokens);
    Rng unused(0);
    auto src_logits = forward(input, src_params, src_config, unused, false);
    auto tgt_logits = forward(input, tgt_params, tgt_config, unused, false);
    double worst = 0.0;
    const auto& a = src_logits.values();
    const auto& b = tgt_logits.values();
    for (size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    report.max_abs_diff = std::max(report.max_abs_diff, worst);
    if (!(worst <= tol)) {
      ConsistencyReport::Failure failure;
      failure.sample_index = s;
      failure.seq_len = len;
      failure.diff = worst;
      failure.token_ids = std::move(tokens);
      report.failures.push_back(std::move(failure));
    }
  }
  report.passed = report.failures.empty();
  return report;
}

}  // namespace

ConsistencyReport verify_consistency(const ParamStore& src_params, const ModelConfig& src_config,
                                     const ParamStore& tgt_params, const ModelConfig& tgt_config,
                                     int64_t n_samples, int64_t max_len, double tol,
                                     uint64_t seed) {
  return verify_impl<float>(src_params, src_config, tgt_params, tgt_config, n_samples, max_len,
                            tol, seed);
}

ConsistencyReport verify_consistency_f64(const ParamStore& src_params,
                                         const ModelConfig& src_config,
                                         const ParamStore& tgt_params,
                                         const ModelConfig& tgt_config, int64_t n_samples,
                                         int64_t max_len, double tol, uint64_t seed) {
  auto src64 = cast_params<double>(src_params);
  auto tgt64 = cast_params<double>(tgt_params);
  return verify_impl<double>(src64, src_config, tgt64, tgt_config, n_samples, max_len, tol, seed);
}

std::string transform_report_text(const TransformReport& report) {
  std::ostringstream os;
  os << "transformation report\n";
  os << "variant: " << report.variant << "\n";
  if (report.tau > 0.0) os << "tau: " << report.tau << "\n";
  os << "repetitions: " << report.repetitions << "\n";
  os << "steps:\n";
  os << "  segment rows duplicated: " << (report.segment_rows_duplicated ? "yes" : "no") << "\n";
  os << "  position rows sliced: " << (report.position_rows_sliced ? "yes" : "no") << "\n";
  os << "  position rows extended: " << (report.position_rows_extended ? "yes" : "no") << "\n";
  os << "  norm order changed: " << (report.ln_order_changed ? "yes" : "no") << "\n";
  os << "provenance:\n";
  for (const auto& [name, kind] : report.provenance)
    os << "  " << name << ": " << provenance_name(kind) << "\n";
  if (report.consistency) {
    const auto& c = *report.consistency;
    os << "consistency:\n";
    os << "  samples: " << c.num_samples << "\n";
    os << "  tolerance: " << c.tol << "\n";
    os << "  max abs logit diff: " << c.max_abs_diff << "\n";
    os << "  result: " << (c.passed ? "pass" : "fail") << "\n";
    for (const auto& f : c.failures)
      os << "  failed sample " << f.sample_index << " at length " << f.seq_len
         << " with diff " << f.diff << "\n";
  }
  return os.str();
}

}  // namespace taperkit
