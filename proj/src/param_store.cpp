#include "taperkit/param_store.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "taperkit/errors.hpp"
#include "taperkit/rng.hpp"

namespace taperkit {

std::map<std::string, Shape> expected_shapes(const ModelConfig& config) {
  const int64_t d = config.hidden_dim;
  std::map<std::string, Shape> shapes;
  shapes["word_emb"] = {config.vocab_size, d};
  shapes["pos_emb"] = {config.pos_rows(), d};
  shapes["seg_emb"] = {config.num_segment_types, d};
  shapes["emb_ln_gamma"] = {d};
  shapes["emb_ln_beta"] = {d};
  for (int64_t i = 0; i < config.num_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    for (const char* w : {"q_w", "k_w", "v_w", "o_w"}) shapes[p + w] = {d, d};
    for (const char* b : {"q_b", "k_b", "v_b", "o_b"}) shapes[p + b] = {d};
    shapes[p + "attn_ln_gamma"] = {d};
    shapes[p + "attn_ln_beta"] = {d};
    shapes[p + "ffn_w1"] = {d, config.ffn_dim};
    shapes[p + "ffn_b1"] = {config.ffn_dim};
    shapes[p + "ffn_w2"] = {config.ffn_dim, d};
    shapes[p + "ffn_b2"] = {d};
    shapes[p + "ffn_ln_gamma"] = {d};
    shapes[p + "ffn_ln_beta"] = {d};
  }
  shapes["mlm_dense_w"] = {d, d};
  shapes["mlm_dense_b"] = {d};
  shapes["mlm_ln_gamma"] = {d};
  shapes["mlm_ln_beta"] = {d};
  shapes["mlm_out_bias"] = {config.vocab_size};
  return shapes;
}

void validate_store(const ParamStore& store, const ModelConfig& config) {
  const auto expected = expected_shapes(config);
  for (const auto& [name, shape] : expected) {
    const auto it = store.find(name);
    if (it == store.end()) throw ValidationError("store: missing tensor '" + name + "'");
    if (it->second.shape() != shape)
      throw ValidationError("store: tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                            ", config calls for " + shape_str(shape));
  }
  for (const auto& [name, tensor] : store) {
    (void)tensor;
    if (!expected.count(name)) throw ValidationError("store: unknown tensor '" + name + "'");
  }
}

namespace {

bool is_weight_matrix(const std::string& name, const Shape& shape) {
  if (shape.size() != 2) return false;
  // Layer norm parameters and biases are rank 1; embeddings and projection
  // matrices are rank 2. Segment embeddings are handled separately.
  return name != "seg_emb";
}

}  // namespace

ParamStore init_random(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ParamStore store;
  Rng rng(seed);
  // Map iteration order is name order, so the draw sequence is stable.
  for (const auto& [name, shape] : expected_shapes(config)) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    std::vector<float> data(n, 0.0f);
    if (is_weight_matrix(name, shape)) {
      for (auto& v : data) v = static_cast<float>(rng.truncated_normal(0.02));
    } else if (name.find("ln_gamma") != std::string::npos) {
      for (auto& v : data) v = 1.0f;
    }
    // biases, ln_beta, and seg_emb stay zero
    store.emplace(name, Tensor::from_data(shape, std::move(data)));
  }
  return store;
}

namespace {

constexpr char kMagic[4] = {'T', 'P', 'R', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f32s(std::ostream& os, const std::vector<float>& data) {
  for (float f : data) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
}

uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const ModelConfig& config, const std::string& path) {
  validate_store(store, config);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const std::string doc = serialize_config(config);
  write_u32(os, static_cast<uint32_t>(doc.size()));
  os.write(doc.data(), static_cast<std::streamsize>(doc.size()));
  for (const auto& [name, tensor] : store) {  // map order == sorted by name
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(tensor.rank()));
    for (int64_t e : tensor.shape()) write_u64(os, static_cast<uint64_t>(e));
    write_f32s(os, tensor.values());
  }
  os.flush();
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

std::pair<ParamStore, ModelConfig> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("checkpoint: truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("checkpoint: '" + path + "' has wrong magic bytes");
  const uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t doc_len = read_u32(is, "config length");
  std::string doc(doc_len, '\0');
  if (!is.read(doc.data(), doc_len)) throw IoError("checkpoint: truncated while reading config");
  const ModelConfig config = parse_config(doc);
  const auto expected = expected_shapes(config);

  ParamStore store;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const uint32_t name_len = read_u32(is, "tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("checkpoint: truncated while reading name");
    if (!expected.count(name))
      throw ValidationError("checkpoint: unknown tensor name '" + name + "'");
    const uint32_t rank = read_u32(is, "tensor rank");
    if (rank > 8) throw ValidationError("checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int64_t>(read_u64(is, "tensor extent"));
    const int64_t n = shape_numel(shape);
    if (n < 0 || n > (int64_t(1) << 31))
      throw ValidationError("checkpoint: implausible size for '" + name + "'");
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& f : data) {
      const uint32_t bits = read_u32(is, "tensor data");
      std::memcpy(&f, &bits, 4);
    }
    if (store.count(name)) throw ValidationError("checkpoint: duplicate tensor '" + name + "'");
    store.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  validate_store(store, config);
  return {std::move(store), config};
}

}  // namespace taperkit
