#include "taperkit/config.hpp"

#include <map>
#include <sstream>

#include "taperkit/errors.hpp"

namespace taperkit {

std::string to_string(LnOrder order) {
  switch (order) {
    case LnOrder::ln_then_dropout_in_embeddings:
      return "ln_then_dropout_in_embeddings";
    case LnOrder::dropout_then_ln_everywhere:
      return "dropout_then_ln_everywhere";
  }
  throw ValidationError("to_string: unknown ln_order value");
}

LnOrder ln_order_from_string(const std::string& s) {
  if (s == "ln_then_dropout_in_embeddings") return LnOrder::ln_then_dropout_in_embeddings;
  if (s == "dropout_then_ln_everywhere") return LnOrder::dropout_then_ln_everywhere;
  throw ValidationError("ln_order: unknown value '" + s + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v <= 0) throw ValidationError(std::string("config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(ffn_dim, "ffn_dim");
  positive(l_src, "l_src");
  positive(l_tgt, "l_tgt");
  if (num_layers < 0) throw ValidationError("config: num_layers must be non-negative");
  if (hidden_dim % num_heads != 0)
    throw ValidationError("config: hidden_dim must be divisible by num_heads");
  if (num_segment_types != 1 && num_segment_types != 2)
    throw ValidationError("config: num_segment_types must be 1 or 2");
  if (position_offset < 0) throw ValidationError("config: position_offset must be non-negative");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ValidationError("config: dropout_p must be in [0, 1)");
  if (ln_eps <= 0.0) throw ValidationError("config: ln_eps must be positive");
  auto token_ok = [this](int32_t id, const char* name) {
    if (id < 0 || id >= vocab_size)
      throw ValidationError(std::string("config: ") + name + " outside the vocabulary");
  };
  token_ok(mask_token_id, "mask_token_id");
  token_ok(sep_token_id, "sep_token_id");
  token_ok(pad_token_id, "pad_token_id");
  if (sparse) {
    if (l_tgt % l_src != 0)
      throw ValidationError("config: l_tgt must be an integer multiple of l_src");
    if (sparse->block_size <= 0) throw ValidationError("config: block_size must be positive");
    if (l_src % sparse->block_size != 0 || l_tgt % sparse->block_size != 0)
      throw ValidationError("config: l_src and l_tgt must be multiples of block_size");
    if (sparse->window_blocks <= 0 || sparse->window_blocks % 2 == 0)
      throw ValidationError("config: window_blocks must be odd and positive");
    if (sparse->num_global_blocks < 1)
      throw ValidationError("config: num_global_blocks must be at least 1");
    if (sparse->num_random_blocks < 0)
      throw ValidationError("config: num_random_blocks must be non-negative");
  } else if (l_tgt != l_src) {
    throw ValidationError("config: l_tgt must equal l_src when no sparse config is present");
  }
}

ModelConfig ModelConfig::desk_source() { return ModelConfig{}; }

namespace {

void put_line(std::ostringstream& os, const std::string& key, const std::string& value) {
  os << key << "=" << value << "\n";
}

}  // namespace

std::string serialize_config(const ModelConfig& config) {
  std::ostringstream os;
  put_line(os, "vocab_size", std::to_string(config.vocab_size));
  put_line(os, "hidden_dim", std::to_string(config.hidden_dim));
  put_line(os, "num_layers", std::to_string(config.num_layers));
  put_line(os, "num_heads", std::to_string(config.num_heads));
  put_line(os, "ffn_dim", std::to_string(config.ffn_dim));
  put_line(os, "l_src", std::to_string(config.l_src));
  put_line(os, "l_tgt", std::to_string(config.l_tgt));
  put_line(os, "num_segment_types", std::to_string(config.num_segment_types));
  put_line(os, "position_offset", std::to_string(config.position_offset));
  put_line(os, "ln_order", to_string(config.ln_order));
  put_line(os, "mask_token_id", std::to_string(config.mask_token_id));
  put_line(os, "sep_token_id", std::to_string(config.sep_token_id));
  put_line(os, "pad_token_id", std::to_string(config.pad_token_id));
  {
    std::ostringstream num;
    num.precision(17);
    num << config.dropout_p;
    put_line(os, "dropout_p", num.str());
  }
  {
    std::ostringstream num;
    num.precision(17);
    num << config.ln_eps;
    put_line(os, "ln_eps", num.str());
  }
  if (config.sparse) {
    put_line(os, "sparse.block_size", std::to_string(config.sparse->block_size));
    put_line(os, "sparse.num_global_blocks", std::to_string(config.sparse->num_global_blocks));
    put_line(os, "sparse.window_blocks", std::to_string(config.sparse->window_blocks));
    put_line(os, "sparse.num_random_blocks", std::to_string(config.sparse->num_random_blocks));
    put_line(os, "sparse.random_seed", std::to_string(config.sparse->random_seed));
  }
  return os.str();
}

ModelConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) + " is not key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  ModelConfig config;
  bool has_sparse = false;
  SparseConfig sparse;
  auto parse_i64 = [](const std::string& key, const std::string& value) -> int64_t {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config: bad integer for " + key + ": '" + value + "'");
    }
  };
  auto parse_f64 = [](const std::string& key, const std::string& value) -> double {
    try {
      size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config: bad number for " + key + ": '" + value + "'");
    }
  };

  for (const auto& [key, value] : kv) {
    if (key == "vocab_size") config.vocab_size = parse_i64(key, value);
    else if (key == "hidden_dim") config.hidden_dim = parse_i64(key, value);
    else if (key == "num_layers") config.num_layers = parse_i64(key, value);
    else if (key == "num_heads") config.num_heads = parse_i64(key, value);
    else if (key == "ffn_dim") config.ffn_dim = parse_i64(key, value);
    else if (key == "l_src") config.l_src = parse_i64(key, value);
    else if (key == "l_tgt") config.l_tgt = parse_i64(key, value);
    else if (key == "num_segment_types") config.num_segment_types = parse_i64(key, value);
    else if (key == "position_offset") config.position_offset = parse_i64(key, value);
    else if (key == "ln_order") config.ln_order = ln_order_from_string(value);
    else if (key == "mask_token_id") config.mask_token_id = static_cast<int32_t>(parse_i64(key, value));
    else if (key == "sep_token_id") config.sep_token_id = static_cast<int32_t>(parse_i64(key, value));
    else if (key == "pad_token_id") config.pad_token_id = static_cast<int32_t>(parse_i64(key, value));
    else if (key == "dropout_p") config.dropout_p = parse_f64(key, value);
    else if (key == "ln_eps") config.ln_eps = parse_f64(key, value);
    else if (key == "sparse.block_size") { sparse.block_size = parse_i64(key, value); has_sparse = true; }
    else if (key == "sparse.num_global_blocks") { sparse.num_global_blocks = parse_i64(key, value); has_sparse = true; }
    else if (key == "sparse.window_blocks") { sparse.window_blocks = parse_i64(key, value); has_sparse = true; }
    else if (key == "sparse.num_random_blocks") { sparse.num_random_blocks = parse_i64(key, value); has_sparse = true; }
    else if (key == "sparse.random_seed") { sparse.random_seed = static_cast<uint64_t>(parse_i64(key, value)); has_sparse = true; }
    else throw ValidationError("config: unknown key '" + key + "'");
  }
  if (has_sparse) config.sparse = sparse;
  config.validate();
  return config;
}

}  // namespace taperkit
