#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ufnet/data.hpp"
#include "ufnet/fusion.hpp"
#include "ufnet/task_model.hpp"

namespace ufnet {

using ordered_json = nlohmann::ordered_json;

std::uint64_t hash_bytes(const void* data, std::size_t n,
                         std::uint64_t h = 14695981039346656037ull);
std::uint64_t hash_file(const std::string& path);
std::string hex64(std::uint64_t h);

// JSON <-> core types. Doubles are emitted with shortest round-trip formatting
// so a save/load cycle is bit-exact; NaN maps to null.
ordered_json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const ordered_json& j);

ordered_json json_of(const TaskModelConfig& cfg);
TaskModelConfig task_model_config_from_json(const ordered_json& j);
ordered_json json_of(const UfnetConfig& cfg);
UfnetConfig ufnet_config_from_json(const ordered_json& j);
ordered_json json_of(const SplitPlan& plan);
SplitPlan split_from_json(const ordered_json& j);

// Canonical fingerprint of a subject->fold assignment (plus seed/ratios);
// bundles trained on different splits refuse to fuse.
std::uint64_t split_hash(const SplitPlan& plan);

// Writes text to path atomically enough for our purposes and always with a
// trailing newline; read_text_file throws DataError when missing.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

struct TaskBundle {
    std::string task; // task name, e.g. "smile"
    TaskModel model;
    SplitPlan split;
    std::vector<std::pair<std::string, std::string>> inputs; // path -> content hash (hex)
};

void save_task_bundle(const TaskBundle& b, const std::string& path);
TaskBundle load_task_bundle(const std::string& path);

struct FusionBundle {
    UfnetModel model;
    SplitPlan split;
    std::vector<std::string> task_bundle_files;
    std::vector<std::pair<std::string, std::string>> inputs;
};

void save_fusion_bundle(const FusionBundle& b, const std::string& path);
FusionBundle load_fusion_bundle(const std::string& path);

// Peeks at the "kind" field: "task_bundle" or "fusion_bundle".
std::string bundle_kind(const std::string& path);

} // namespace ufnet
