#include "taperkit/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "taperkit/config.hpp"
#include "taperkit/errors.hpp"
#include "taperkit/mlm_eval.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/sparse.hpp"
#include "taperkit/taper.hpp"
#include "taperkit/toy_pretrain.hpp"
#include "taperkit/transform.hpp"

namespace fs = std::filesystem;

namespace taperkit {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<int64_t> parse_length_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ValidationError("lengths: empty entry in '" + text + "'");
    size_t pos = 0;
    int64_t v = 0;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
      throw ValidationError("lengths: bad integer '" + item + "'");
    }
    if (pos != item.size()) throw ValidationError("lengths: bad integer '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("lengths: none given");
  return out;
}

std::vector<VariantSpec> parse_variant_list(const std::string& text, uint64_t vanilla_seed) {
  std::vector<VariantSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    VariantSpec spec = parse_variant(item);
    spec.seed = vanilla_seed;
    out.push_back(spec);
  }
  if (out.empty()) throw ValidationError("variants: none given");
  return out;
}

std::string docs_to_text(const std::vector<std::vector<int32_t>>& docs) {
  std::string out;
  for (const auto& doc : docs) {
    for (size_t i = 0; i < doc.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(doc[i]);
    }
    out += '\n';
  }
  return out;
}

std::vector<std::vector<int32_t>> docs_from_text(const std::string& text) {
  std::vector<std::vector<int32_t>> docs;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<int32_t> doc;
    std::string tok;
    while (ls >> tok) {
      size_t pos = 0;
      long v = 0;
      try {
        v = std::stol(tok, &pos);
      } catch (const std::exception&) {
        throw ValidationError("corpus: bad token '" + tok + "'");
      }
      if (pos != tok.size() || v < 0 || v > INT32_MAX)
        throw ValidationError("corpus: bad token '" + tok + "'");
      doc.push_back(static_cast<int32_t>(v));
    }
    if (!doc.empty()) docs.push_back(std::move(doc));
  }
  if (docs.empty()) throw ValidationError("corpus: no documents");
  return docs;
}

ModelConfig load_config_file(const std::string& path) {
  return parse_config(read_text(path));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string consistency_text(const ConsistencyReport& report) {
  std::ostringstream os;
  os << "samples: " << report.num_samples << "\n";
  os << "tolerance: " << format_double(report.tol) << "\n";
  os << "max_abs_diff: " << format_double(report.max_abs_diff) << "\n";
  os << "result: " << (report.passed ? "pass" : "fail") << "\n";
  for (const auto& f : report.failures) {
    os << "failure: sample " << f.sample_index << " len " << f.seq_len << " diff "
       << format_double(f.diff) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 42;
  uint64_t corpus_seed = 1337;
  int64_t steps = 2000;
  double lr = 3e-4;
  int64_t batch = 16;
  double mask_ratio = 0.15;
  int64_t docs = 400;
  int64_t min_doc_len = 47;
  int64_t max_doc_len = 127;
  int64_t period = 8;
  int32_t markov_order = 2;
  int32_t alphabet = 16;
};

int cmd_pretrain(const PretrainArgs& a) {
  ModelConfig config =
      a.config_path.empty() ? ModelConfig::desk_source() : load_config_file(a.config_path);
  config.validate();
  if (a.period >= config.l_src)
    throw ValidationError("pretrain: sentinel period must be smaller than l_src");

  SyntheticCorpusSpec spec;
  spec.vocab_size = static_cast<int32_t>(config.vocab_size);
  spec.num_docs = a.docs;
  spec.min_doc_len = a.min_doc_len;
  spec.max_doc_len = a.max_doc_len;
  spec.sentinel_period = a.period;
  spec.markov_order = a.markov_order;
  spec.content_alphabet = a.alphabet;
  const SyntheticCorpus corpus = gen_synthetic_corpus(spec, a.corpus_seed);

  PretrainOptions opt;
  opt.steps = a.steps;
  opt.lr = a.lr;
  opt.batch_size = a.batch;
  opt.mask_ratio = a.mask_ratio;
  opt.seed = a.seed;
  const PretrainResult result = pretrain_mlm(config, corpus.train_docs, opt);

  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  save_checkpoint(result.params, config, (out / "checkpoint.bin").string());
  write_text(out / "loss.csv", loss_curve_csv(result.loss_curve));
  write_text(out / "eval_corpus.txt", docs_to_text(corpus.eval_docs));

  nlohmann::json manifest;
  manifest["command"] = "pretrain";
  manifest["tool"] = "taperkit";
  manifest["version"] = kToolVersion;
  manifest["flags"] = {{"config", a.config_path},
                       {"seed", a.seed},
                       {"corpus_seed", a.corpus_seed},
                       {"steps", a.steps},
                       {"lr", a.lr},
                       {"batch", a.batch},
                       {"mask_ratio", a.mask_ratio},
                       {"docs", a.docs},
                       {"min_doc_len", a.min_doc_len},
                       {"max_doc_len", a.max_doc_len},
                       {"period", a.period},
                       {"markov_order", a.markov_order},
                       {"alphabet", a.alphabet}};
  manifest["model_config"] = serialize_config(config);
  manifest["outputs"] = {{"checkpoint", "checkpoint.bin"},
                         {"loss_curve", "loss.csv"},
                         {"eval_corpus", "eval_corpus.txt"}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  std::printf("pretrain: %lld steps, loss %.4f -> %.4f, wrote %s\n",
              static_cast<long long>(a.steps), result.loss_curve.front(),
              result.loss_curve.back(), a.out_dir.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// transform

struct TransformArgs {
  std::string src;
  std::string out_dir;
  std::string variant = "taper";
  double tau = 2.0;
  bool tau_given = false;
  uint64_t vanilla_seed = 42;
  int64_t l_tgt = 0;  // 0: four source lengths
  SparseConfig sparse;
};

int cmd_transform(const TransformArgs& a) {
  auto [src_params, src_config] = load_checkpoint(a.src);

  VariantSpec spec = parse_variant(a.variant);
  if (a.tau_given) {
    if (a.variant.find(':') != std::string::npos)
      throw ValidationError("transform: tau given twice (flag and variant suffix)");
    if (spec.kind != ExtensionVariant::taper)
      throw ValidationError("transform: --tau only applies to the taper variant");
    spec.tau = a.tau;
  }
  spec.seed = a.vanilla_seed;

  const int64_t l_tgt = a.l_tgt > 0 ? a.l_tgt : 4 * src_config.l_src;
  const TransformResult result = variant_model(src_params, src_config, a.sparse, l_tgt, spec);

  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  save_checkpoint(result.params, result.config, (out / "checkpoint.bin").string());
  write_text(out / "transform_report.txt", transform_report_text(result.report));

  nlohmann::json manifest;
  manifest["command"] = "transform";
  manifest["tool"] = "taperkit";
  manifest["version"] = kToolVersion;
  manifest["flags"] = {{"src", a.src},
                       {"variant", spec.label()},
                       {"vanilla_seed", a.vanilla_seed},
                       {"l_tgt", l_tgt},
                       {"block_size", a.sparse.block_size},
                       {"global_blocks", a.sparse.num_global_blocks},
                       {"window_blocks", a.sparse.window_blocks},
                       {"random_blocks", a.sparse.num_random_blocks},
                       {"attn_seed", a.sparse.random_seed}};
  manifest["outputs"] = {{"checkpoint", "checkpoint.bin"}, {"report", "transform_report.txt"}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  std::printf("transform: %s -> %s (l_tgt %lld), wrote %s\n", spec.label().c_str(),
              a.src.c_str(), static_cast<long long>(l_tgt), a.out_dir.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::string src;
  std::string tgt;
  int64_t samples = 100;
  double tol = 1e-5;
  int64_t max_len = 0;  // 0: source limit
  uint64_t seed = 999;
  bool f64 = false;
};

int cmd_verify(const VerifyArgs& a) {
  auto [src_params, src_config] = load_checkpoint(a.src);
  auto [tgt_params, tgt_config] = load_checkpoint(a.tgt);
  const int64_t max_len = a.max_len > 0 ? a.max_len : src_config.l_src;
  const ConsistencyReport report =
      a.f64 ? verify_consistency_f64(src_params, src_config, tgt_params, tgt_config, a.samples,
                                     max_len, a.tol, a.seed)
            : verify_consistency(src_params, src_config, tgt_params, tgt_config, a.samples,
                                 max_len, a.tol, a.seed);
  std::fputs(consistency_text(report).c_str(), stdout);
  return report.passed ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// ppl-sweep

struct SweepArgs {
  std::string src;
  std::string corpus;
  std::string out_csv;
  std::string lengths = "64,128,192,256";
  std::string variants = "vanilla,repeated,taper:1.0,taper:2.0,taper:4.0";
  uint64_t mask_seed = 1234;
  uint64_t vanilla_seed = 42;
  double mask_ratio = 0.15;
  int64_t batch_rows = 16;
  int64_t l_tgt = 0;
  SparseConfig sparse;
};

int cmd_ppl_sweep(const SweepArgs& a) {
  auto [src_params, src_config] = load_checkpoint(a.src);
  const fs::path corpus_path =
      a.corpus.empty() ? fs::path(a.src).parent_path() / "eval_corpus.txt" : fs::path(a.corpus);
  const auto docs = docs_from_text(read_text(corpus_path));

  SweepSettings settings;
  settings.lengths = parse_length_list(a.lengths);
  settings.variants = parse_variant_list(a.variants, a.vanilla_seed);
  settings.target_sparse = a.sparse;
  settings.l_tgt = a.l_tgt > 0 ? a.l_tgt : 4 * src_config.l_src;
  settings.mask_ratio = a.mask_ratio;
  settings.mask_seed = a.mask_seed;
  settings.batch_rows = a.batch_rows;

  const PplReport report = ppl_length_sweep(src_params, src_config, docs, settings);
  write_text(a.out_csv, ppl_report_csv(report));

  nlohmann::json manifest;
  manifest["command"] = "ppl-sweep";
  manifest["tool"] = "taperkit";
  manifest["version"] = kToolVersion;
  manifest["flags"] = {{"src", a.src},
                       {"corpus", corpus_path.string()},
                       {"lengths", a.lengths},
                       {"variants", a.variants},
                       {"seed", a.mask_seed},
                       {"vanilla_seed", a.vanilla_seed},
                       {"mask_ratio", a.mask_ratio},
                       {"batch_rows", a.batch_rows},
                       {"l_tgt", settings.l_tgt},
                       {"block_size", a.sparse.block_size},
                       {"global_blocks", a.sparse.num_global_blocks},
                       {"window_blocks", a.sparse.window_blocks},
                       {"random_blocks", a.sparse.num_random_blocks},
                       {"attn_seed", a.sparse.random_seed}};
  manifest["outputs"] = {{"csv", fs::path(a.out_csv).filename().string()}};
  write_text(a.out_csv + ".manifest.json", manifest.dump(2) + "\n");

  std::printf("ppl-sweep: %zu rows, wrote %s\n", report.rows.size(), a.out_csv.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect-taper

struct InspectArgs {
  std::string src;
  double tau = 2.0;
  int64_t repetitions = 4;
};

int cmd_inspect_taper(const InspectArgs& a) {
  auto [src_params, src_config] = load_checkpoint(a.src);
  if (src_config.sparse)
    throw ValidationError("inspect-taper: expected a source (full-attention) checkpoint");
  TaperConfig tc;
  tc.tau = a.tau;
  tc.r = a.repetitions;
  tc.validate();

  std::printf("copy,factor\n");
  for (int64_t i = 0; i < tc.r; ++i)
    std::printf("%lld,%.12g\n", static_cast<long long>(i), attenuation_factor(i, tc.r, tc.tau));

  const Tensor& pos = src_params.at("pos_emb");
  const int64_t hidden = pos.dim(-1);
  std::vector<float> sliced(static_cast<size_t>(src_config.l_src * hidden));
  const auto& pv = pos.values();
  std::copy(pv.begin() + src_config.position_offset * hidden,
            pv.begin() + (src_config.position_offset + src_config.l_src) * hidden,
            sliced.begin());
  const Tensor p_src = Tensor::from_data({src_config.l_src, hidden}, sliced);
  const Tensor extended = extend_positions(p_src, tc);
  const DistinguishabilityReport report =
      distinguishability_report(extended, src_config.l_src, tc.r);

  std::printf("\ncopy_a,copy_b,min_distance,argmin_position\n");
  for (const auto& pair : report.pairs) {
    std::printf("%lld,%lld,%.12g,%lld\n", static_cast<long long>(pair.copy_a),
                static_cast<long long>(pair.copy_b), pair.min_distance,
                static_cast<long long>(pair.argmin_position));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench-attention

struct BenchArgs {
  std::string lengths = "256,512";
  std::string config_path;
};

int cmd_bench_attention(const BenchArgs& a) {
  SparseConfig sparse;
  if (!a.config_path.empty()) {
    const ModelConfig config = load_config_file(a.config_path);
    if (!config.sparse)
      throw ValidationError("bench-attention: config file has no sparse section");
    sparse = *config.sparse;
  }
  std::printf("seq_len,block_size,global_blocks,window_blocks,random_blocks,"
              "attended_pairs,total_pairs,fraction\n");
  for (const int64_t len : parse_length_list(a.lengths)) {
    const SparseLayout layout = build_layout(len, sparse, sparse.random_seed);
    const CoverageStats stats = layout_coverage_stats(layout);
    std::printf("%lld,%lld,%lld,%lld,%lld,%lld,%lld,%.12g\n", static_cast<long long>(len),
                static_cast<long long>(sparse.block_size),
                static_cast<long long>(sparse.num_global_blocks),
                static_cast<long long>(sparse.window_blocks),
                static_cast<long long>(sparse.num_random_blocks),
                static_cast<long long>(stats.attended_pairs),
                static_cast<long long>(stats.total_pairs), stats.fraction);
  }
  return kExitOk;
}

void add_sparse_flags(CLI::App* cmd, SparseConfig& sparse) {
  cmd->add_option("--block-size", sparse.block_size, "Attention block size")
      ->capture_default_str();
  cmd->add_option("--global-blocks", sparse.num_global_blocks, "Leading global blocks")
      ->capture_default_str();
  cmd->add_option("--window-blocks", sparse.window_blocks, "Sliding window width in blocks (odd)")
      ->capture_default_str();
  cmd->add_option("--random-blocks", sparse.num_random_blocks, "Random key blocks per query block")
      ->capture_default_str();
  cmd->add_option("--attn-seed", sparse.random_seed, "Seed for random block placement")
      ->capture_default_str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{
      "taperkit: train a fixed-length source encoder, extend its position table, and\n"
      "measure masked-token perplexity beyond the training length.\n"
      "Exit codes: 0 ok, 1 usage, 2 I/O, 3 invalid data, 4 verification mismatch, 5 numeric.",
      "taperkit"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Train the source model on synthetic text");
  pre_cmd->add_option("--config", pre.config_path, "Model config file (default: desk scale)");
  pre_cmd->add_option("--out", pre.out_dir, "Output directory")->required();
  pre_cmd->add_option("--seed", pre.seed, "Training seed")->capture_default_str();
  pre_cmd->add_option("--corpus-seed", pre.corpus_seed, "Corpus seed")->capture_default_str();
  pre_cmd->add_option("--steps", pre.steps, "Optimizer steps")->capture_default_str();
  pre_cmd->add_option("--lr", pre.lr, "Peak learning rate")->capture_default_str();
  pre_cmd->add_option("--batch", pre.batch, "Sequences per step")->capture_default_str();
  pre_cmd->add_option("--mask-ratio", pre.mask_ratio, "Masked fraction per sequence")
      ->capture_default_str();
  pre_cmd->add_option("--docs", pre.docs, "Documents to generate")->capture_default_str();
  pre_cmd->add_option("--min-doc-len", pre.min_doc_len, "Shortest document")
      ->capture_default_str();
  pre_cmd->add_option("--max-doc-len", pre.max_doc_len, "Longest document")
      ->capture_default_str();
  pre_cmd->add_option("--period", pre.period, "Sentinel period in the corpus")
      ->capture_default_str();
  pre_cmd->add_option("--markov-order", pre.markov_order, "Context length of the generator")
      ->capture_default_str();
  pre_cmd->add_option("--alphabet", pre.alphabet, "Content token alphabet size")
      ->capture_default_str();

  TransformArgs tra;
  auto* tra_cmd =
      app.add_subcommand("transform", "Extend a source checkpoint into a dual-mode target");
  tra_cmd->add_option("--src", tra.src, "Source checkpoint")->required();
  tra_cmd->add_option("--out", tra.out_dir, "Output directory")->required();
  tra_cmd->add_option("--variant", tra.variant, "taper[:T] | repeated | vanilla")
      ->capture_default_str();
  auto* tau_opt =
      tra_cmd->add_option("--tau", tra.tau, "Attenuation temperature")->capture_default_str();
  tra_cmd->add_option("--vanilla-seed", tra.vanilla_seed, "Init seed for the vanilla variant")
      ->capture_default_str();
  tra_cmd->add_option("--l-tgt", tra.l_tgt, "Target length (default: 4x source)")
      ->capture_default_str();
  add_sparse_flags(tra_cmd, tra.sparse);

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand(
      "verify", "Check that source and target logits agree on short inputs");
  ver_cmd->add_option("--src", ver.src, "Source checkpoint")->required();
  ver_cmd->add_option("--tgt", ver.tgt, "Target checkpoint")->required();
  ver_cmd->add_option("--samples", ver.samples, "Random inputs to test")->capture_default_str();
  ver_cmd->add_option("--tol", ver.tol, "Max allowed |logit difference|")
      ->capture_default_str();
  ver_cmd->add_option("--max-len", ver.max_len, "Longest sample (default: source limit)")
      ->capture_default_str();
  ver_cmd->add_option("--seed", ver.seed, "Sample seed")->capture_default_str();
  ver_cmd->add_flag("--f64", ver.f64, "Run both models in double precision");

  SweepArgs swp;
  auto* swp_cmd =
      app.add_subcommand("ppl-sweep", "Masked perplexity by length for each extension variant");
  swp_cmd->add_option("--src", swp.src, "Source checkpoint")->required();
  swp_cmd->add_option("--out", swp.out_csv, "Output CSV file")->required();
  swp_cmd->add_option("--corpus", swp.corpus,
                      "Eval corpus file (default: eval_corpus.txt beside --src)");
  swp_cmd->add_option("--lengths", swp.lengths, "Comma-separated eval lengths")
      ->capture_default_str();
  swp_cmd->add_option("--variants", swp.variants, "Comma-separated variant specs")
      ->capture_default_str();
  swp_cmd->add_option("--seed", swp.mask_seed, "Masking seed")->capture_default_str();
  swp_cmd->add_option("--vanilla-seed", swp.vanilla_seed, "Init seed for the vanilla variant")
      ->capture_default_str();
  swp_cmd->add_option("--mask-ratio", swp.mask_ratio, "Masked fraction per sequence")
      ->capture_default_str();
  swp_cmd->add_option("--batch-rows", swp.batch_rows, "Rows per eval batch")
      ->capture_default_str();
  swp_cmd->add_option("--l-tgt", swp.l_tgt, "Target length (default: 4x source)")
      ->capture_default_str();
  add_sparse_flags(swp_cmd, swp.sparse);

  InspectArgs ins;
  auto* ins_cmd = app.add_subcommand(
      "inspect-taper", "Print attenuation factors and copy-distance stats for a checkpoint");
  ins_cmd->add_option("--src", ins.src, "Source checkpoint")->required();
  ins_cmd->add_option("--tau", ins.tau, "Attenuation temperature")->capture_default_str();
  ins_cmd->add_option("--repetitions", ins.repetitions, "Copies of the position table")
      ->capture_default_str();

  BenchArgs ben;
  auto* ben_cmd =
      app.add_subcommand("bench-attention", "Attended-pair coverage of the sparse layout");
  ben_cmd->add_option("--lengths", ben.lengths, "Comma-separated sequence lengths")
      ->capture_default_str();
  ben_cmd->add_option("--config", ben.config_path, "Model config file with a sparse section");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pre_cmd->parsed()) return cmd_pretrain(pre);
    if (tra_cmd->parsed()) {
      tra.tau_given = tau_opt->count() > 0;
      return cmd_transform(tra);
    }
    if (ver_cmd->parsed()) return cmd_verify(ver);
    if (swp_cmd->parsed()) return cmd_ppl_sweep(swp);
    if (ins_cmd->parsed()) return cmd_inspect_taper(ins);
    if (ben_cmd->parsed()) return cmd_bench_attention(ben);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace taperkit
