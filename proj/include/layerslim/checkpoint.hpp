#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "layerslim/model.hpp"

namespace layerslim {

// Checkpoint file layout (all integers little-endian):
//   "LSLM" | u32 version | u64 header length | JSON header | f32 payload
// The header is compact JSON with sorted keys:
//   {"checksum": "<16 hex digits>", "config": {...}, "format_version": 1,
//    "metadata": {...}, "tensors": {name: {"dtype": "F32", "nbytes", "offset", "shape"}}}
// Tensors are stored contiguously in the model's canonical parameter order.
// The checksum is FNV-1a 64 over the header serialised without "checksum",
// followed by the payload bytes.
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'L', 'S', 'L', 'M'};

nlohmann::json to_json(const ModelConfig& config);
// Strict: every key required, unknown keys rejected, invariants validated.
ModelConfig model_config_from_json(const nlohmann::json& doc);

struct TensorEntry {
  std::string name;
  Shape shape;
  uint64_t offset = 0;  // from the start of the payload
  uint64_t nbytes = 0;
};

// Names and shapes of every parameter a model with `config` has, in canonical order.
std::vector<TensorEntry> tensor_layout(const ModelConfig& config);

struct CheckpointInfo {
  uint32_t version = 0;
  ModelConfig config;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorEntry> tensors;  // canonical order
  uint64_t payload_offset = 0;       // from the start of the file
  uint64_t payload_bytes = 0;
  std::string checksum;
};

// Reads and validates the header only; the payload checksum is not verified.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Fills one tensor's values; called once per tensor in canonical order.
using TensorSource = std::function<void(const TensorEntry& entry, std::span<float> values)>;

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const nlohmann::json& metadata,
                      const TensorSource& source);

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Fails closed: either a fully validated model or a CheckpointError.
TransformerModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

// Removes the top layers of a checkpoint on disk, streaming tensor data so
// the model never has to fit in memory. Metadata is carried over.
CheckpointInfo prune_checkpoint(const std::filesystem::path& in, int64_t keep, const std::filesystem::path& out);

// safetensors archive: u64 header length | JSON header | byte buffer.
void export_safetensors(const TransformerModel& model, const std::filesystem::path& path,
                        const std::map<std::string, std::string>& metadata = {});

using NameMapping = std::map<std::string, std::string>;  // external name -> internal path

NameMapping load_name_mapping(const std::filesystem::path& path);

struct ImportResult {
  TransformerModel model;
  std::vector<std::string> ignored;  // external tensors that map to no parameter
};

// Builds a model from a safetensors archive. Architecture is inferred from
// tensor shapes; the head count comes from `n_heads` or, when that is 0, from
// the "n_heads" metadata entry. Names absent from `mapping` are used as-is.
// All problems are collected and reported in one ImportError.
ImportResult import_external(const std::filesystem::path& path, const NameMapping& mapping, int64_t n_heads = 0);

}  // namespace layerslim
