// Acceptance harness: runs the full desk-scale pipeline once, then checks
// each shipping criterion and prints one verdict line per criterion.

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "taperkit/cli.hpp"
#include "taperkit/encoder.hpp"
#include "taperkit/grad_check.hpp"
#include "taperkit/mlm_eval.hpp"
#include "taperkit/param_store.hpp"
#include "taperkit/rng.hpp"
#include "taperkit/sparse.hpp"
#include "taperkit/taper.hpp"
#include "taperkit/toy_pretrain.hpp"
#include "taperkit/transform.hpp"

using namespace taperkit;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
  explicit CheckFailure(const std::string& msg) : std::runtime_error(msg) {}
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckFailure("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

// Run a subcommand with stdout redirected so the verdict lines stay clean.
CliResult run_cmd(const std::vector<std::string>& args, const fs::path& scratch) {
  const fs::path cap = scratch / "captured_stdout.txt";
  std::fflush(stdout);
  const int saved = dup(fileno(stdout));
  if (saved < 0 || std::freopen(cap.c_str(), "w", stdout) == nullptr)
    throw CheckFailure("stdout redirection failed");
  CliResult r;
  r.code = run_cli(args);
  std::fflush(stdout);
  dup2(saved, fileno(stdout));
  close(saved);
  r.out = slurp(cap);
  return r;
}

Tensor random_table(int64_t rows, int64_t cols, uint64_t seed, double spread) {
  Rng rng(seed);
  std::vector<float> data(static_cast<size_t>(rows * cols));
  for (auto& v : data) v = static_cast<float>(rng.normal() * spread);
  return Tensor::from_data({rows, cols}, std::move(data));
}

Tensor64 random64(Shape shape, Rng& rng, double spread = 1.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.normal() * spread;
  return Tensor64::from_data(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.values()[i]) -
                                     static_cast<double>(b.values()[i])));
  return worst;
}

struct SweepRow {
  std::string variant;
  std::string tau;
  int64_t seq_len = 0;
  double ppl = 0.0;
};

std::vector<SweepRow> parse_sweep(const std::string& csv) {
  std::vector<SweepRow> rows;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    expect(f.size() == 6, "sweep row with " + std::to_string(f.size()) + " fields");
    rows.push_back({f[0], f[1], std::stoll(f[2]), std::stod(f[5])});
  }
  return rows;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Pipeline artifacts shared by the later criteria.
struct Ctx {
  fs::path scratch;
  fs::path src_ckpt, tgt_ckpt, sweep_csv;
  bool pretrain_ok = false, transform_ok = false, sweep_ok = false;
  std::string note;
};

void run_pipeline(Ctx& ctx) {
  std::fprintf(stderr, "[acceptance] pretraining the source model (2000 steps)...\n");
  const fs::path src_dir = ctx.scratch / "src";
  auto pre = run_cmd({"pretrain", "--out", src_dir.string()}, ctx.scratch);
  if (pre.code != kExitOk) {
    ctx.note = "pretrain exited " + std::to_string(pre.code);
    return;
  }
  ctx.src_ckpt = src_dir / "checkpoint.bin";
  ctx.pretrain_ok = true;

  std::fprintf(stderr, "[acceptance] transforming to the taper:2 target...\n");
  const fs::path tgt_dir = ctx.scratch / "tgt";
  auto tra = run_cmd({"transform", "--src", ctx.src_ckpt.string(), "--out", tgt_dir.string()},
                     ctx.scratch);
  if (tra.code != kExitOk) {
    ctx.note = "transform exited " + std::to_string(tra.code);
    return;
  }
  ctx.tgt_ckpt = tgt_dir / "checkpoint.bin";
  ctx.transform_ok = true;

  std::fprintf(stderr, "[acceptance] sweeping perplexity by length and variant...\n");
  ctx.sweep_csv = ctx.scratch / "sweep.csv";
  auto swp = run_cmd({"ppl-sweep", "--src", ctx.src_ckpt.string(), "--out",
                      ctx.sweep_csv.string()},
                     ctx.scratch);
  if (swp.code != kExitOk) {
    ctx.note = "ppl-sweep exited " + std::to_string(swp.code);
    return;
  }
  ctx.sweep_ok = true;
}

// --------------------------------------------------------------------------
// criteria

std::string c1_taper_algebra(Ctx&) {
  for (int64_t i = 0; i < 8; ++i) {
    const double want = (16.0 - static_cast<double>(i)) / 16.0;
    expect(attenuation_factor(i, 8, 2.0) == want, "factor " + std::to_string(i) + " inexact");
  }
  expect(attenuation_factor(0, 8, 2.0) == 1.0, "first factor not 1");
  expect(attenuation_factor(7, 8, 2.0) == 0.5625, "last factor not 0.5625");

  const Tensor src = random_table(16, 8, 21, 0.02);
  TaperConfig tc;
  tc.tau = 2.0;
  tc.r = 8;
  const Tensor ext = extend_positions(src, tc);
  const Tensor rep = repeat_positions(src, 8);
  double worst = 0.0;
  for (int64_t i = 0; i < 8; ++i) {
    const double f = attenuation_factor(i, 8, 2.0);
    for (int64_t e = 0; e < 16 * 8; ++e) {
      const double got = ext.values()[i * 16 * 8 + e];
      const double want = static_cast<double>(rep.values()[i * 16 * 8 + e]) * f;
      worst = std::max(worst, std::abs(got - want));
    }
  }
  expect(worst <= 1e-7, "extension vs scaled tiling diff " + fmt(worst));
  return "factors exact for r=8 tau=2, extension matches scaled tiling (diff " + fmt(worst) + ")";
}

std::string c2_anti_duplication(Ctx&) {
  for (const uint64_t seed : {31u, 32u, 33u}) {
    const Tensor src = random_table(8, 4, seed, 0.02);
    for (const double tau : {1.0, 2.0, 1000.0}) {
      TaperConfig tc;
      tc.tau = tau;
      tc.r = 3;
      const auto tapered = distinguishability_report(extend_positions(src, tc), 8, 3);
      expect(tapered.collisions.empty(), "tapered copies collide at tau " + fmt(tau));
      for (const auto& pair : tapered.pairs)
        expect(pair.min_distance > 0.0, "tapered copy distance not positive at tau " + fmt(tau));
    }
    const auto tiled = distinguishability_report(repeat_positions(src, 3), 8, 3);
    for (const auto& pair : tiled.pairs)
      expect(pair.min_distance == 0.0, "tiled copies unexpectedly distinct");
    expect(tiled.collisions.size() == 3 * 8, "tiled collision count off");
  }
  return "attenuated copies keep positive distances, tiling collides everywhere";
}

std::string c3_consistency(Ctx& ctx) {
  expect(ctx.transform_ok, "pipeline incomplete: " + ctx.note);
  auto v32 = run_cmd({"verify", "--src", ctx.src_ckpt.string(), "--tgt", ctx.tgt_ckpt.string(),
                      "--samples", "100", "--tol", "1e-5"},
                     ctx.scratch);
  expect(v32.code == kExitOk, "float verify exited " + std::to_string(v32.code));
  expect(v32.out.find("result: pass") != std::string::npos, "float verify did not pass");

  auto v64 = run_cmd({"verify", "--src", ctx.src_ckpt.string(), "--tgt", ctx.tgt_ckpt.string(),
                      "--samples", "100", "--tol", "1e-10", "--f64"},
                     ctx.scratch);
  expect(v64.code == kExitOk, "double verify exited " + std::to_string(v64.code));
  expect(v64.out.find("result: pass") != std::string::npos, "double verify did not pass");
  return "100 samples agree at 1e-5 (float) and 1e-10 (double)";
}

std::string c4_sparse_oracle(Ctx&) {
  Rng rng(4040);
  double worst = 0.0;
  int instances = 0;
  while (instances < 200) {
    const int64_t bs = std::vector<int64_t>{4, 8, 16}[rng.uniform_below(3)];
    const int64_t nb = 2 + static_cast<int64_t>(rng.uniform_below(3));
    const int64_t seq = bs * nb;
    if (seq > 64) continue;
    SparseConfig sc;
    sc.block_size = bs;
    sc.num_global_blocks = 1 + static_cast<int64_t>(rng.uniform_below(nb));
    sc.window_blocks = 1 + 2 * static_cast<int64_t>(rng.uniform_below(2));
    sc.num_random_blocks = static_cast<int64_t>(rng.uniform_below(3));
    const SparseLayout layout = build_layout(seq, sc, rng.next_u64());

    const int64_t b = 1 + static_cast<int64_t>(rng.uniform_below(2));
    const int64_t h = 1 + static_cast<int64_t>(rng.uniform_below(2));
    const int64_t dh = std::vector<int64_t>{4, 8}[rng.uniform_below(2)];
    Rng data = rng.fork(instances);
    auto q = random64({b, h, seq, dh}, data, 0.5);
    auto k = random64({b, h, seq, dh}, data, 0.5);
    auto v = random64({b, h, seq, dh}, data, 0.5);
    const Tensor qf = cast_tensor<float>(q), kf = cast_tensor<float>(k),
                 vf = cast_tensor<float>(v);

    std::vector<uint8_t> validity(static_cast<size_t>(b * seq), 1);
    if (rng.uniform() < 0.5) {
      const int64_t cut = 1 + static_cast<int64_t>(rng.uniform_below(seq - 1));
      for (int64_t row = 0; row < b; ++row)
        for (int64_t p = cut; p < seq; ++p) validity[row * seq + p] = 0;
    }

    const float scale_factor = 1.0f / std::sqrt(static_cast<float>(dh));
    const Tensor sparse_out = block_sparse_attention(qf, kf, vf, layout, validity, scale_factor);
    const Tensor mask = add(layout_dense_mask<float>(layout),
                            enc_detail::key_mask<float>(validity, b, seq));
    const Tensor dense_out = attention_core(qf, kf, vf, mask, scale_factor);
    worst = std::max(worst, max_abs_diff(sparse_out, dense_out));
    ++instances;
  }
  expect(worst <= 1e-5, "sparse vs dense-masked diff " + fmt(worst));

  // Full coverage collapses to ordinary full attention.
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.hidden_dim = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.l_src = 32;
  cfg.l_tgt = 32;
  const ParamStore params = init_random(cfg, 77);
  SparseConfig all_global;
  all_global.block_size = 8;
  all_global.num_global_blocks = 4;
  all_global.window_blocks = 1;
  all_global.num_random_blocks = 0;
  const SparseLayout full_layout = build_layout(32, all_global, 1);
  Rng data(606);
  const Tensor hidden = cast_tensor<float>(random64({2, 32, 16}, data, 0.3));
  const std::vector<uint8_t> validity(2 * 32, 1);
  const Tensor via_sparse = attention_sparse(hidden, validity, full_layout, params, 0, cfg);
  const Tensor via_full = attention_full(hidden, validity, params, 0, cfg);
  const double degen = max_abs_diff(via_sparse, via_full);
  expect(degen <= 1e-6, "full-coverage layout diff " + fmt(degen));
  return "200 random instances match the dense oracle (worst " + fmt(worst) +
         "), full coverage matches full attention";
}

std::string c5_coverage_halves(Ctx& ctx) {
  auto bench = run_cmd({"bench-attention", "--lengths", "256,512"}, ctx.scratch);
  expect(bench.code == kExitOk, "bench-attention exited " + std::to_string(bench.code));
  std::vector<double> fractions;
  std::istringstream is(bench.out);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    fractions.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  }
  expect(fractions.size() == 2, "expected two bench rows");
  const double ratio = fractions[1] / fractions[0];
  expect(ratio >= 0.45 && ratio <= 0.55, "coverage ratio " + fmt(ratio) + " outside [0.45,0.55]");
  return "fraction " + fmt(fractions[0]) + " at 256 vs " + fmt(fractions[1]) +
         " at 512 (ratio " + fmt(ratio) + ")";
}

std::string c6_gradients(Ctx&) {
  double worst = 0.0;
  std::string worst_name;
  auto run_check = [&](const std::string& name, std::vector<GradCheckInput> inputs,
                       const std::function<Tensor64(std::vector<GradCheckInput>&)>& fn) {
    const auto report = grad_check(inputs, fn, 1e-4, 1e-5);
    if (report.max_rel_err > worst) {
      worst = report.max_rel_err;
      worst_name = name;
    }
    expect(report.passed, name + " rel err " + fmt(report.max_rel_err));
  };

  Rng rng(660);
  {
    auto probe = random64({4, 3}, rng);
    run_check("add", {{"a", random64({4, 3}, rng)}, {"b", random64({3}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(add(in[0].tensor, in[1].tensor), probe));
              });
  }
  {
    auto probe = random64({2, 4, 3}, rng);
    run_check("mul", {{"a", random64({2, 4, 3}, rng)}, {"b", random64({4, 1}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(mul(in[0].tensor, in[1].tensor), probe));
              });
  }
  {
    auto probe = random64({3, 2, 4}, rng);
    run_check("matmul", {{"a", random64({3, 2, 5}, rng)}, {"b", random64({3, 5, 4}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(matmul(in[0].tensor, in[1].tensor), probe));
              });
  }
  {
    auto probe = random64({4, 2, 3}, rng);
    run_check("transpose_reshape", {{"x", random64({2, 3, 4}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(
                    mul(reshape(transpose(in[0].tensor, 0, 2), {4, 2, 3}), probe));
              });
  }
  {
    auto probe = random64({3, 6}, rng);
    run_check("softmax", {{"x", random64({3, 6}, rng, 2.0)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(softmax_lastdim(in[0].tensor), probe));
              });
  }
  {
    auto probe = random64({3, 8}, rng);
    run_check("layer_norm",
              {{"x", random64({3, 8}, rng, 2.0)},
               {"gamma", random64({8}, rng)},
               {"beta", random64({8}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(
                    layer_norm(in[0].tensor, in[1].tensor, in[2].tensor, 1e-5), probe));
              });
  }
  {
    auto probe = random64({20}, rng);
    run_check("gelu", {{"x", random64({20}, rng, 1.5)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(gelu(in[0].tensor), probe));
              });
  }
  {
    auto probe = random64({30}, rng);
    run_check("dropout", {{"x", random64({30}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                Rng mask_rng(4242);
                return sum_all(mul(dropout(in[0].tensor, 0.4, mask_rng, true), probe));
              });
  }
  {
    auto probe = random64({4, 3}, rng);
    const std::vector<int32_t> ids = {2, 0, 2, 4};
    run_check("embedding", {{"table", random64({5, 3}, rng)}},
              [&](std::vector<GradCheckInput>& in) {
                return sum_all(mul(embedding(in[0].tensor, ids, {4}), probe));
              });
  }
  {
    const std::vector<int64_t> rows = {0, 2, 3};
    const std::vector<int32_t> labels = {1, 6, 3};
    run_check("cross_entropy", {{"logits", random64({4, 7}, rng, 2.0)}},
              [&](std::vector<GradCheckInput>& in) {
                return masked_cross_entropy(in[0].tensor, rows, labels);
              });
  }

  // End to end: one encoder layer driving the masked LM loss.
  {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.hidden_dim = 4;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.ffn_dim = 8;
    cfg.l_src = 6;
    cfg.l_tgt = 6;
    cfg.position_offset = 2;
    const auto params64 = cast_params<double>(init_random(cfg, 3));
    std::vector<GradCheckInput> inputs;
    ParamsT<double> shared;
    for (const auto& [name, tensor] : params64) {
      inputs.push_back({name, tensor});
      shared.emplace(name, tensor);
    }
    EncoderInput input = EncoderInput::full_valid(1, 6, {3, 4, 5, 6, 7, 4});
    const std::vector<int64_t> rows = {1, 3};
    const std::vector<int32_t> labels = {5, 9};
    run_check("mlm_loss", inputs, [&](std::vector<GradCheckInput>&) {
      Rng drng(123);
      return masked_cross_entropy(forward(input, shared, cfg, drng, true), rows, labels);
    });
  }
  return "primitives and 1-layer MLM loss match finite differences (worst " + fmt(worst) +
         " in " + worst_name + ")";
}

std::string c7_closed_form_ppl(Ctx&) {
  // A real model arranged to emit all-zero logits: the tied output matrix and
  // bias are zeroed, so every vocab entry gets identical mass.
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.hidden_dim = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.l_src = 8;
  cfg.l_tgt = 8;
  ParamStore params = init_random(cfg, 55);
  for (auto& v : params.at("word_emb").values()) v = 0.0f;
  for (auto& v : params.at("mlm_out_bias").values()) v = 0.0f;

  std::vector<std::vector<int32_t>> seqs = {{3, 4, 5, 6, 7, 4, 5, 2},
                                            {4, 4, 6, 6, 3, 3, 5, 2}};
  Rng mrng(9);
  PackedBatch batch = mask_tokens(seqs, 0.25, cfg.mask_token_id, cfg.sep_token_id, mrng);
  const PplStats uniform = masked_ppl(params, cfg, {batch});
  expect(uniform.ppl == 32.0, "uniform-logit ppl " + fmt(uniform.ppl) + " not exactly 32");

  // Certain model: label logit 0, everything else far below.
  const int64_t v = 8;
  PackedBatch sure;
  sure.batch = 1;
  sure.seq = 4;
  sure.token_ids = {1, 5, 1, 6};
  sure.mask_positions = {1, 0, 1, 0};
  sure.labels = {4, 7};
  std::vector<float> logits(static_cast<size_t>(4 * v), -1000.0f);
  logits[0 * v + 4] = 0.0f;
  logits[2 * v + 7] = 0.0f;
  const Tensor logit_t = Tensor::from_data({1, 4, v}, std::move(logits));
  const auto [sum_sure, count_sure] = masked_nll_from_logits(logit_t, sure);
  expect(sum_sure == 0.0 && count_sure == 2, "certain-model NLL not exactly zero");
  expect(std::exp(sum_sure / count_sure) == 1.0, "certain-model ppl not exactly 1");

  // Hand case: masked-token probabilities 1/2 and 1/8.
  PackedBatch hand;
  hand.batch = 1;
  hand.seq = 2;
  hand.token_ids = {1, 1};
  hand.mask_positions = {1, 1};
  hand.labels = {0, 1};
  std::vector<float> hl(static_cast<size_t>(2 * v), -1000.0f);
  hl[0 * v + 0] = 0.0f;
  hl[0 * v + 1] = 0.0f;  // two live entries: prob 1/2
  for (int j = 0; j < 8; ++j) hl[1 * v + j] = 0.0f;  // eight live: prob 1/8
  const Tensor hand_t = Tensor::from_data({1, 2, v}, std::move(hl));
  const auto [sum_hand, count_hand] = masked_nll_from_logits(hand_t, hand);
  const double ppl_hand = std::exp(sum_hand / static_cast<double>(count_hand));
  expect(std::abs(ppl_hand - 4.0) <= 1e-9, "hand-case ppl " + fmt(ppl_hand));
  return "uniform 32 exact, certain 1 exact, hand case " + fmt(ppl_hand);
}

std::string c8_extrapolation_ordering(Ctx& ctx) {
  expect(ctx.sweep_ok, "pipeline incomplete: " + ctx.note);
  const auto rows = parse_sweep(slurp(ctx.sweep_csv));
  expect(rows.size() == 20, "expected 20 sweep rows, got " + std::to_string(rows.size()));

  std::map<std::string, std::map<int64_t, double>> ppl;
  for (const auto& row : rows) {
    const std::string key = row.tau.empty() ? row.variant : row.variant + ":" + row.tau;
    ppl[key][row.seq_len] = row.ppl;
  }
  const std::vector<std::string> keys = {"vanilla", "repeated", "taper:1", "taper:2", "taper:4"};
  for (const auto& key : keys)
    expect(ppl.count(key) == 1, "missing variant " + key + " in sweep");

  const double base = ppl["vanilla"][64];
  for (const auto& key : keys)
    expect(ppl[key][64] == base, "ppl at 64 differs for " + key);

  const double vanilla = ppl["vanilla"][256];
  const double taper2 = ppl["taper:2"][256];
  const double repeated = ppl["repeated"][256];
  expect(vanilla >= 2.0 * taper2, "vanilla " + fmt(vanilla) + " not 2x taper:2 " + fmt(taper2));
  expect(taper2 <= 1.05 * repeated,
         "taper:2 " + fmt(taper2) + " above repeated " + fmt(repeated) + " by more than 5%");
  return "identical at 64 (" + fmt(base) + "); at 256 vanilla " + fmt(vanilla) + ", taper:2 " +
         fmt(taper2) + ", repeated " + fmt(repeated);
}

std::string c9_roundtrip_determinism(Ctx& ctx) {
  expect(ctx.transform_ok, "pipeline incomplete: " + ctx.note);

  // Checkpoint round trip.
  auto [params, config] = load_checkpoint(ctx.src_ckpt.string());
  const fs::path copy = ctx.scratch / "roundtrip.bin";
  save_checkpoint(params, config, copy.string());
  expect(slurp(ctx.src_ckpt) == slurp(copy), "checkpoint bytes changed across load/save");

  // Transform again: byte-identical target.
  const fs::path tgt2 = ctx.scratch / "tgt_again";
  auto tra = run_cmd({"transform", "--src", ctx.src_ckpt.string(), "--out", tgt2.string()},
                     ctx.scratch);
  expect(tra.code == kExitOk, "second transform exited " + std::to_string(tra.code));
  expect(slurp(ctx.tgt_ckpt) == slurp(tgt2 / "checkpoint.bin"), "transform not reproducible");

  // Sweep again: byte-identical CSV.
  expect(ctx.sweep_ok, "pipeline incomplete: " + ctx.note);
  const fs::path csv2 = ctx.scratch / "sweep_again.csv";
  auto swp = run_cmd({"ppl-sweep", "--src", ctx.src_ckpt.string(), "--out", csv2.string()},
                     ctx.scratch);
  expect(swp.code == kExitOk, "second sweep exited " + std::to_string(swp.code));
  expect(slurp(ctx.sweep_csv) == slurp(csv2), "sweep not reproducible");

  // Short pretrain twice: byte-identical checkpoints.
  const fs::path p1 = ctx.scratch / "re1";
  const fs::path p2 = ctx.scratch / "re2";
  for (const auto& dir : {p1, p2}) {
    auto pre = run_cmd({"pretrain", "--out", dir.string(), "--steps", "40"}, ctx.scratch);
    expect(pre.code == kExitOk, "short pretrain exited " + std::to_string(pre.code));
  }
  expect(slurp(p1 / "checkpoint.bin") == slurp(p2 / "checkpoint.bin"),
         "pretrain not reproducible");
  expect(slurp(p1 / "loss.csv") == slurp(p2 / "loss.csv"), "loss curve not reproducible");

  // Stdout commands repeat byte for byte.
  auto b1 = run_cmd({"bench-attention", "--lengths", "256,512"}, ctx.scratch);
  auto b2 = run_cmd({"bench-attention", "--lengths", "256,512"}, ctx.scratch);
  expect(b1.out == b2.out, "bench-attention not reproducible");
  auto i1 = run_cmd({"inspect-taper", "--src", ctx.src_ckpt.string()}, ctx.scratch);
  auto i2 = run_cmd({"inspect-taper", "--src", ctx.src_ckpt.string()}, ctx.scratch);
  expect(i1.code == kExitOk && i1.out == i2.out, "inspect-taper not reproducible");
  return "checkpoints round-trip bit-exact, every command repeats byte-identically";
}

}  // namespace

int main() {
  Ctx ctx;
  ctx.scratch = fs::temp_directory_path() / "taperkit_acceptance";
  std::error_code ec;
  fs::remove_all(ctx.scratch, ec);
  fs::create_directories(ctx.scratch);

  run_pipeline(ctx);

  struct Criterion {
    int id;
    const char* name;
    std::function<std::string(Ctx&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "attenuation algebra", c1_taper_algebra},
      {2, "copy distinguishability", c2_anti_duplication},
      {3, "transformation consistency", c3_consistency},
      {4, "sparse attention oracle", c4_sparse_oracle},
      {5, "coverage halving", c5_coverage_halves},
      {6, "gradient integrity", c6_gradients},
      {7, "closed-form perplexity", c7_closed_form_ppl},
      {8, "extrapolation ordering", c8_extrapolation_ordering},
      {9, "round-trip determinism", c9_roundtrip_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    std::string verdict, detail;
    try {
      detail = c.run(ctx);
      verdict = "pass";
    } catch (const std::exception& e) {
      verdict = "FAIL";
      detail = e.what();
      ++failures;
    }
    std::printf("criterion %d: %s - %s: %s\n", c.id, verdict.c_str(), c.name, detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
