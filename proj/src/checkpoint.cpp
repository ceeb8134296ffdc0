#include "layerslim/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>

#include "layerslim/errors.hpp"

namespace layerslim {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr uint64_t kPreambleBytes = 16;  // magic + u32 version + u64 header length
constexpr char kChecksumPlaceholder[] = "0000000000000000";
constexpr uint64_t kMaxHeaderBytes = uint64_t{1} << 30;

class Fnv1a {
 public:
  void update(const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[static_cast<size_t>(15 - i)] = digits[(hash_ >> (4 * i)) & 0xF];
    return out;
  }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(const unsigned char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

json shape_json(const Shape& shape) {
  json out = json::array();
  for (int64_t d : shape) out.push_back(d);
  return out;
}

void require_keys(const json& doc, std::initializer_list<const char*> keys, const std::string& what) {
  if (!doc.is_object()) throw ConfigError(what + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, _] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError(what + ": unknown key '" + key + "'");
  }
  for (const char* key : keys) {
    if (!doc.contains(key)) throw ConfigError(what + ": missing key '" + std::string(key) + "'");
  }
}

int64_t int_field(const json& doc, const char* key) {
  const json& v = doc.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
  return v.get<int64_t>();
}

// Header as parsed from disk plus the bytes the checksum covers.
struct ParsedHeader {
  CheckpointInfo info;
  std::string unsigned_header;  // header serialised without the checksum key
};

json header_json(const ModelConfig& config, const json& metadata, const std::vector<TensorEntry>& tensors) {
  json t = json::object();
  for (const TensorEntry& e : tensors) {
    t[e.name] = {{"dtype", "F32"}, {"shape", shape_json(e.shape)}, {"offset", e.offset}, {"nbytes", e.nbytes}};
  }
  return json{{"config", to_json(config)},
              {"format_version", kCheckpointVersion},
              {"metadata", metadata},
              {"tensors", std::move(t)}};
}

ParsedHeader parse_header(std::ifstream& in, const fs::path& path) {
  std::error_code ec;
  const uint64_t file_size = fs::file_size(path, ec);
  if (ec) throw CheckpointError("cannot stat checkpoint '" + path.string() + "': " + ec.message());
  if (file_size < kPreambleBytes) {
    throw CheckpointError("truncated checkpoint: " + std::to_string(file_size) + " bytes is smaller than the preamble");
  }
  unsigned char pre[kPreambleBytes];
  in.read(reinterpret_cast<char*>(pre), kPreambleBytes);
  if (!in) throw CheckpointError("cannot read checkpoint preamble");
  if (std::memcmp(pre, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
  const auto version = get<uint32_t>(pre + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("version mismatch: file has version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto header_len = get<uint64_t>(pre + 8);
  if (header_len > kMaxHeaderBytes || header_len > file_size - kPreambleBytes) {
    throw CheckpointError("truncated checkpoint: header length " + std::to_string(header_len) + " exceeds file size");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("cannot read checkpoint header");

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupted header: ") + e.what());
  }
  if (!doc.is_object() || doc.dump() != text) throw CheckpointError("corrupted header: not in canonical form");

  ParsedHeader out;
  CheckpointInfo& info = out.info;
  info.version = version;
  try {
    require_keys(doc, {"checksum", "config", "format_version", "metadata", "tensors"}, "checkpoint header");
    if (!doc["checksum"].is_string() || doc["checksum"].get<std::string>().size() != 16) {
      throw ConfigError("checksum must be a 16-digit hex string");
    }
    if (int_field(doc, "format_version") != version) throw ConfigError("format_version disagrees with preamble");
    if (!doc["metadata"].is_object()) throw ConfigError("metadata must be an object");
    if (!doc["tensors"].is_object()) throw ConfigError("tensors must be an object");
    info.config = model_config_from_json(doc["config"]);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid header: ") + e.what());
  }
  info.checksum = doc["checksum"].get<std::string>();
  info.metadata = doc["metadata"];

  const json& tensors = doc["tensors"];
  std::vector<TensorEntry> expected = tensor_layout(info.config);
  std::set<std::string> seen;
  for (TensorEntry& e : expected) {
    if (!tensors.contains(e.name)) throw CheckpointError("missing tensor '" + e.name + "'");
    seen.insert(e.name);
    const json& t = tensors[e.name];
    try {
      require_keys(t, {"dtype", "nbytes", "offset", "shape"}, "tensor '" + e.name + "'");
      if (t["dtype"] != "F32") throw ConfigError("tensor '" + e.name + "' has dtype " + t["dtype"].dump());
      if (t["shape"] != shape_json(e.shape)) {
        throw ConfigError("tensor '" + e.name + "' has shape " + t["shape"].dump() + ", config requires " +
                          shape_to_string(e.shape));
      }
      if (!t["offset"].is_number_unsigned() || t["offset"].get<uint64_t>() != e.offset) {
        throw ConfigError("tensor '" + e.name + "' has offset " + t["offset"].dump() + ", expected " +
                          std::to_string(e.offset));
      }
      if (!t["nbytes"].is_number_unsigned() || t["nbytes"].get<uint64_t>() != e.nbytes) {
        throw ConfigError("tensor '" + e.name + "' has nbytes " + t["nbytes"].dump() + ", expected " +
                          std::to_string(e.nbytes));
      }
    } catch (const ConfigError& err) {
      throw CheckpointError(err.what());
    }
  }
  for (const auto& [name, _] : tensors.items()) {
    if (!seen.count(name)) throw CheckpointError("unexpected tensor '" + name + "' for this config");
  }

  info.tensors = std::move(expected);
  info.payload_offset = kPreambleBytes + header_len;
  info.payload_bytes = info.tensors.empty() ? 0 : info.tensors.back().offset + info.tensors.back().nbytes;
  const uint64_t available = file_size - info.payload_offset;
  if (available < info.payload_bytes) {
    for (const TensorEntry& e : info.tensors) {
      if (e.offset + e.nbytes > available) {
        throw CheckpointError("truncated payload: tensor '" + e.name + "' needs bytes up to " +
                              std::to_string(e.offset + e.nbytes) + ", file has " + std::to_string(available));
      }
    }
  }
  if (available > info.payload_bytes) {
    throw CheckpointError("unexpected " + std::to_string(available - info.payload_bytes) + " trailing bytes");
  }

  doc.erase("checksum");
  out.unsigned_header = doc.dump();
  return out;
}

std::ifstream open_input(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(std::string("cannot open ") + what + " '" + path.string() + "'");
  return in;
}

// Reads one tensor from the stream into `values`, feeding the hash.
void read_tensor(std::ifstream& in, const TensorEntry& e, std::span<float> values, Fnv1a& hash) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(e.nbytes));
  if (!in) throw CheckpointError("truncated payload while reading tensor '" + e.name + "'");
  hash.update(values.data(), e.nbytes);
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},     {"d_ff", c.d_ff},         {"max_seq_len", c.max_seq_len},
              {"head_type", to_string(c.head_type)}, {"num_classes", c.num_classes},
              {"tie_lm_head", c.tie_lm_head}};
}

ModelConfig model_config_from_json(const json& doc) {
  require_keys(doc,
               {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len", "head_type", "num_classes",
                "tie_lm_head"},
               "model config");
  ModelConfig c;
  c.vocab_size = int_field(doc, "vocab_size");
  c.d_model = int_field(doc, "d_model");
  c.n_heads = int_field(doc, "n_heads");
  c.n_layers = int_field(doc, "n_layers");
  c.d_ff = int_field(doc, "d_ff");
  c.max_seq_len = int_field(doc, "max_seq_len");
  if (!doc["head_type"].is_string()) throw ConfigError("'head_type' must be a string");
  c.head_type = head_type_from_string(doc["head_type"].get<std::string>());
  c.num_classes = int_field(doc, "num_classes");
  if (!doc["tie_lm_head"].is_boolean()) throw ConfigError("'tie_lm_head' must be a boolean");
  c.tie_lm_head = doc["tie_lm_head"].get<bool>();
  c.validate();
  return c;
}

std::vector<TensorEntry> tensor_layout(const ModelConfig& c) {
  c.validate();
  std::vector<TensorEntry> out;
  uint64_t offset = 0;
  auto add = [&](std::string name, Shape shape) {
    const auto nbytes = static_cast<uint64_t>(shape_numel(shape)) * sizeof(float);
    out.push_back(TensorEntry{std::move(name), std::move(shape), offset, nbytes});
    offset += nbytes;
  };
  const int64_t d = c.d_model;
  add("token_embedding", {c.vocab_size, d});
  add("position_embedding", {c.max_seq_len, d});
  for (int64_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    add(p + "ln1.gain", {d});
    add(p + "ln1.bias", {d});
    for (const char* m : {"q", "k", "v", "o"}) {
      add(p + "attn.w" + m, {d, d});
      add(p + "attn.b" + m, {d});
    }
    add(p + "ln2.gain", {d});
    add(p + "ln2.bias", {d});
    add(p + "mlp.w1", {d, c.d_ff});
    add(p + "mlp.b1", {c.d_ff});
    add(p + "mlp.w2", {c.d_ff, d});
    add(p + "mlp.b2", {d});
  }
  add("final_norm.gain", {d});
  add("final_norm.bias", {d});
  if (c.head_type == HeadType::LanguageModeling) {
    if (!c.tie_lm_head) add("lm_head", {d, c.vocab_size});
  } else {
    add("cls_head.weight", {d, c.num_classes});
    add("cls_head.bias", {c.num_classes});
  }
  return out;
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  std::ifstream in = open_input(path, "checkpoint");
  return parse_header(in, path).info;
}

void write_checkpoint(const fs::path& path, const ModelConfig& config, const json& metadata,
                      const TensorSource& source) {
  if (!metadata.is_object()) throw CheckpointError("checkpoint metadata must be a JSON object");
  const std::vector<TensorEntry> layout = tensor_layout(config);
  json doc = header_json(config, metadata, layout);
  Fnv1a hash;
  hash.update(doc.dump());
  doc["checksum"] = kChecksumPlaceholder;
  const std::string header = doc.dump();
  // "checksum" sorts first, so its value starts right after {"checksum":"
  const size_t checksum_at = std::string(R"({"checksum":")").size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(kCheckpointMagic, 4);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::vector<float> buffer;
  for (const TensorEntry& e : layout) {
    buffer.assign(e.nbytes / sizeof(float), 0.0f);
    source(e, buffer);
    hash.update(buffer.data(), e.nbytes);
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(e.nbytes));
  }
  const std::string digest = hash.hex();
  out.seekp(static_cast<std::streamoff>(kPreambleBytes + checksum_at));
  out.write(digest.data(), static_cast<std::streamsize>(digest.size()));
  out.flush();
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

void save_checkpoint(const TransformerModel& model, const fs::path& path, const json& metadata) {
  write_checkpoint(path, model.config(), metadata, [&](const TensorEntry& e, std::span<float> values) {
    const Parameter* p = model.find(e.name);
    if (p == nullptr || p->value.shape() != e.shape) {
      throw CheckpointError("model parameter '" + e.name + "' does not match its config");
    }
    std::copy(p->value.data().begin(), p->value.data().end(), values.begin());
  });
}

TransformerModel load_checkpoint(const fs::path& path, json* metadata) {
  std::ifstream in = open_input(path, "checkpoint");
  ParsedHeader parsed = parse_header(in, path);
  TransformerModel model(parsed.info.config);
  Fnv1a hash;
  hash.update(parsed.unsigned_header);
  for (const TensorEntry& e : parsed.info.tensors) {
    Parameter* p = model.find(e.name);
    read_tensor(in, e, p->value.data(), hash);
  }
  if (hash.hex() != parsed.info.checksum) {
    throw CheckpointError("checksum mismatch: header says " + parsed.info.checksum + ", contents hash to " +
                          hash.hex());
  }
  if (metadata != nullptr) *metadata = parsed.info.metadata;
  return model;
}

CheckpointInfo prune_checkpoint(const fs::path& in_path, int64_t keep, const fs::path& out_path) {
  std::error_code ec;
  if (fs::exists(out_path) && fs::equivalent(in_path, out_path, ec)) {
    throw CheckpointError("prune output must differ from its input");
  }
  std::ifstream in = open_input(in_path, "checkpoint");
  ParsedHeader parsed = parse_header(in, in_path);
  const ModelConfig& before = parsed.info.config;
  if (keep < 1 || keep > before.n_layers) {
    throw PruneError("keep must be in [1, " + std::to_string(before.n_layers) + "], got " + std::to_string(keep));
  }
  ModelConfig after = before;
  after.n_layers = keep;

  Fnv1a in_hash;
  in_hash.update(parsed.unsigned_header);
  const std::vector<TensorEntry>& inputs = parsed.info.tensors;
  size_t next = 0;
  std::vector<float> scratch;
  auto skip_until = [&](const std::string* name) {
    while (next < inputs.size() && (name == nullptr || inputs[next].name != *name)) {
      scratch.resize(inputs[next].nbytes / sizeof(float));
      read_tensor(in, inputs[next], scratch, in_hash);
      ++next;
    }
  };
  try {
    write_checkpoint(out_path, after, parsed.info.metadata, [&](const TensorEntry& e, std::span<float> values) {
      skip_until(&e.name);
      if (next == inputs.size()) throw CheckpointError("tensor '" + e.name + "' not found in input");
      read_tensor(in, inputs[next], values, in_hash);
      ++next;
    });
    skip_until(nullptr);
    if (in_hash.hex() != parsed.info.checksum) {
      throw CheckpointError("checksum mismatch in '" + in_path.string() + "'");
    }
  } catch (...) {
    fs::remove(out_path, ec);
    throw;
  }
  return read_checkpoint_info(out_path);
}

void export_safetensors(const TransformerModel& model, const fs::path& path,
                        const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  json meta = json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  meta["n_heads"] = std::to_string(model.config().n_heads);
  header["__metadata__"] = meta;
  uint64_t offset = 0;
  const auto params = model.parameters();
  for (const Parameter* p : params) {
    const uint64_t nbytes = static_cast<uint64_t>(p->numel()) * sizeof(float);
    header[p->name] = {{"dtype", "F32"}, {"shape", shape_json(p->value.shape())}, {"data_offsets", {offset, offset + nbytes}}};
    offset += nbytes;
  }
  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImportError("cannot open '" + path.string() + "' for writing");
  put<uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.ptr()), static_cast<std::streamsize>(p->numel() * 4));
  }
  out.flush();
  if (!out) throw ImportError("failed writing '" + path.string() + "'");
}

NameMapping load_name_mapping(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ImportError("cannot open name mapping '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ImportError("name mapping '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ImportError("name mapping must be a JSON object {external: internal}");
  NameMapping out;
  for (const auto& [k, v] : doc.items()) {
    if (!v.is_string()) throw ImportError("name mapping entry '" + k + "' must map to a string");
    out[k] = v.get<std::string>();
  }
  return out;
}

namespace {

struct ArchiveTensor {
  std::string external;
  Shape shape;
  uint64_t begin = 0;
  uint64_t end = 0;
};

std::optional<int64_t> layer_index(const std::string& name) {
  if (name.rfind("layers.", 0) != 0) return std::nullopt;
  const char* first = name.data() + 7;
  const char* last = name.data() + name.size();
  int64_t value = 0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr == first || ptr == last || *ptr != '.' || value < 0) return std::nullopt;
  return value;
}

[[noreturn]] void fail_import(const std::vector<std::string>& problems) {
  std::string msg = "import failed with " + std::to_string(problems.size()) + " problem(s):";
  for (const std::string& p : problems) msg += "\n  - " + p;
  throw ImportError(msg);
}

}  // namespace

ImportResult import_external(const fs::path& path, const NameMapping& mapping, int64_t n_heads) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImportError("cannot open archive '" + path.string() + "'");
  std::error_code ec;
  const uint64_t file_size = fs::file_size(path, ec);
  if (ec || file_size < 8) throw ImportError("archive '" + path.string() + "' is too small");
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  const auto header_len = get<uint64_t>(len_bytes);
  if (header_len > kMaxHeaderBytes || header_len > file_size - 8) {
    throw ImportError("archive header length " + std::to_string(header_len) + " exceeds file size");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ImportError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ImportError("archive header must be a JSON object");
  const uint64_t buffer_start = 8 + header_len;
  const uint64_t buffer_size = file_size - buffer_start;

  std::vector<std::string> problems;
  std::map<std::string, ArchiveTensor> by_internal;
  json archive_meta = json::object();

  for (const auto& [name, entry] : doc.items()) {
    if (name == "__metadata__") {
      archive_meta = entry;
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      problems.push_back("tensor '" + name + "': entry needs dtype, shape and data_offsets");
      continue;
    }
    const std::string dtype = entry["dtype"].is_string() ? entry["dtype"].get<std::string>() : entry["dtype"].dump();
    if (dtype == "F16" || dtype == "BF16") {
      problems.push_back("tensor '" + name + "': 16-bit float dtype " + dtype + " is not supported, convert to F32");
      continue;
    }
    if (dtype != "F32") {
      problems.push_back("tensor '" + name + "': unsupported dtype " + dtype);
      continue;
    }
    ArchiveTensor t;
    t.external = name;
    try {
      t.shape = entry["shape"].get<Shape>();
      auto offsets = entry["data_offsets"].get<std::vector<uint64_t>>();
      if (offsets.size() != 2) throw std::invalid_argument("data_offsets must have two entries");
      t.begin = offsets[0];
      t.end = offsets[1];
    } catch (const std::exception& e) {
      problems.push_back("tensor '" + name + "': malformed entry (" + e.what() + ")");
      continue;
    }
    if (std::any_of(t.shape.begin(), t.shape.end(), [](int64_t d) { return d < 0; })) {
      problems.push_back("tensor '" + name + "': negative dimension");
      continue;
    }
    if (t.end < t.begin || t.end > buffer_size ||
        t.end - t.begin != static_cast<uint64_t>(shape_numel(t.shape)) * sizeof(float)) {
      problems.push_back("tensor '" + name + "': byte range [" + std::to_string(t.begin) + ", " +
                         std::to_string(t.end) + ") does not fit shape " + shape_to_string(t.shape) +
                         " within a " + std::to_string(buffer_size) + "-byte buffer");
      continue;
    }
    auto it = mapping.find(name);
    const std::string internal = it == mapping.end() ? name : it->second;
    if (by_internal.count(internal)) {
      problems.push_back("tensors '" + by_internal[internal].external + "' and '" + name + "' both map to '" +
                         internal + "'");
      continue;
    }
    by_internal[internal] = std::move(t);
  }

  // Architecture from shapes.
  auto shape_of = [&](const std::string& n) -> const Shape* {
    auto it = by_internal.find(n);
    return it == by_internal.end() ? nullptr : &it->second.shape;
  };
  const Shape* tok = shape_of("token_embedding");
  const Shape* pos = shape_of("position_embedding");
  if (tok == nullptr || tok->size() != 2) problems.push_back("missing required tensor 'token_embedding' (rank 2)");
  if (pos == nullptr || pos->size() != 2) problems.push_back("missing required tensor 'position_embedding' (rank 2)");
  int64_t max_layer = -1;
  for (const auto& [name, _] : by_internal) {
    if (auto idx = layer_index(name)) max_layer = std::max(max_layer, *idx);
  }
  if (max_layer < 0) problems.push_back("no decoder layer tensors found");
  std::optional<int64_t> d_ff;
  for (int64_t i = 0; i <= max_layer && !d_ff; ++i) {
    const Shape* w1 = shape_of("layers." + std::to_string(i) + ".mlp.w1");
    if (w1 != nullptr && w1->size() == 2) d_ff = (*w1)[1];
  }
  if (max_layer >= 0 && !d_ff) problems.push_back("cannot infer d_ff: no 'layers.i.mlp.w1' tensor");
  if (n_heads == 0 && archive_meta.is_object() && archive_meta.contains("n_heads")) {
    const json& v = archive_meta["n_heads"];
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      auto [ptr, err] = std::from_chars(s.data(), s.data() + s.size(), n_heads);
      if (err != std::errc() || ptr != s.data() + s.size()) n_heads = 0;
    } else if (v.is_number_integer()) {
      n_heads = v.get<int64_t>();
    }
  }
  if (n_heads <= 0) problems.push_back("head count unknown: pass n_heads or add an 'n_heads' metadata entry");
  if (!problems.empty()) fail_import(problems);

  ModelConfig config;
  config.vocab_size = (*tok)[0];
  config.d_model = (*tok)[1];
  config.max_seq_len = (*pos)[0];
  config.n_layers = max_layer + 1;
  config.d_ff = *d_ff;
  config.n_heads = n_heads;
  if (const Shape* cls = shape_of("cls_head.weight"); cls != nullptr && cls->size() == 2) {
    config.head_type = HeadType::Classification;
    config.num_classes = (*cls)[1];
    config.tie_lm_head = true;
  } else {
    config.tie_lm_head = shape_of("lm_head") == nullptr;
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    fail_import({std::string("inferred config is invalid: ") + e.what()});
  }

  const std::vector<TensorEntry> layout = tensor_layout(config);
  std::set<std::string> required;
  for (const TensorEntry& e : layout) {
    required.insert(e.name);
    const Shape* got = shape_of(e.name);
    if (got == nullptr) {
      problems.push_back("missing required tensor '" + e.name + "'");
    } else if (*got != e.shape) {
      problems.push_back("tensor '" + e.name + "' (from '" + by_internal[e.name].external + "') has shape " +
                         shape_to_string(*got) + ", expected " + shape_to_string(e.shape));
    }
  }
  if (!problems.empty()) fail_import(problems);

  ImportResult result{TransformerModel(config), {}};
  for (const auto& [name, t] : by_internal) {
    if (!required.count(name)) result.ignored.push_back(t.external);
  }
  for (const TensorEntry& e : layout) {
    const ArchiveTensor& t = by_internal[e.name];
    Parameter* p = result.model.find(e.name);
    in.seekg(static_cast<std::streamoff>(buffer_start + t.begin));
    in.read(reinterpret_cast<char*>(p->value.ptr()), static_cast<std::streamsize>(t.end - t.begin));
    if (!in) throw ImportError("failed reading tensor '" + t.external + "'");
  }
  return result;
}

}  // namespace layerslim
