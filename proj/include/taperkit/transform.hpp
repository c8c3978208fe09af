#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/taper.hpp"

namespace taperkit {

// How each target tensor came to be.
enum class Provenance { copied, sliced, extended, duplicated };

const char* provenance_name(Provenance p);

// Position-table treatment for the length extension. taper attenuates the
// copies, repeated tiles them, vanilla draws the new rows fresh.
enum class ExtensionVariant { taper, repeated, vanilla };

struct VariantSpec {
  ExtensionVariant kind = ExtensionVariant::taper;
  double tau = 2.0;     // taper only
  uint64_t seed = 42;   // vanilla only: stream for the fresh rows

  std::string label() const;  // "taper:2", "repeated", "vanilla"
};

// "vanilla", "repeated", "taper" or "taper:T" with an inline temperature.
VariantSpec parse_variant(const std::string& text);

struct ConsistencyReport {
  int64_t num_samples = 0;
  double tol = 0.0;
  double max_abs_diff = 0.0;
  bool passed = false;

  struct Failure {
    int64_t sample_index = 0;
    int64_t seq_len = 0;
    double diff = 0.0;
    std::vector<int32_t> token_ids;
  };
  std::vector<Failure> failures;
};

struct TransformReport {
  bool segment_rows_duplicated = false;
  bool position_rows_sliced = false;
  bool position_rows_extended = false;
  bool ln_order_changed = false;
  std::string variant;
  double tau = 0.0;  // 0 when the variant has no temperature
  int64_t repetitions = 1;
  std::map<std::string, Provenance> provenance;  // exactly one entry per target tensor
  std::optional<ConsistencyReport> consistency;
};

std::string transform_report_text(const TransformReport& report);

struct TransformResult {
  ParamStore params;
  ModelConfig config;
  TransformReport report;
};

// Transplant a fixed-length source model into the extended dual-mode target:
// position rows are sliced past the offset and extended with attenuated
// copies, the single segment row is duplicated, the norm/dropout order flips,
// and everything else is copied as is.
TransformResult transform_model(const ParamStore& src_params, const ModelConfig& src_config,
                                const SparseConfig& target_sparse, int64_t l_tgt,
                                const TaperConfig& taper_config);

// Same pipeline with a pluggable position-extension rule.
TransformResult variant_model(const ParamStore& src_params, const ModelConfig& src_config,
                              const SparseConfig& target_sparse, int64_t l_tgt,
                              const VariantSpec& variant);

// Drive both models over random inputs no longer than max_len and report the
// worst logit disagreement. Inference mode only.
ConsistencyReport verify_consistency(const ParamStore& src_params, const ModelConfig& src_config,
                                     const ParamStore& tgt_params, const ModelConfig& tgt_config,
                                     int64_t n_samples, int64_t max_len, double tol,
                                     uint64_t seed);

// Same check with every parameter and activation widened to f64.
ConsistencyReport verify_consistency_f64(const ParamStore& src_params,
                                         const ModelConfig& src_config,
                                         const ParamStore& tgt_params,
                                         const ModelConfig& tgt_config, int64_t n_samples,
                                         int64_t max_len, double tol, uint64_t seed);

}  // namespace taperkit
