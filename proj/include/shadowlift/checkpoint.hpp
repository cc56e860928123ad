#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "shadowlift/nn.hpp"

namespace shadowlift {

constexpr int kCheckpointSchemaVersion = 1;

// Sidecar lives next to the weights file as <path>.json.
std::filesystem::path sidecar_path(const std::filesystem::path& weights);

// Binary layout: "SLWT", u32 version, u32 count, then per tensor
// {u32 name length, name bytes, u32 rank, i32 dims..., f64 values...}.
void save_weights(const std::filesystem::path& path, const nn::ParameterList& params);
// Copies stored values into params by name; names and shapes must match.
void load_weights(const std::filesystem::path& path, const nn::ParameterList& params);

// Writes weights plus a sidecar with schema_version and role added to meta.
void save_checkpoint(const std::filesystem::path& path, const std::string& role, const nn::ParameterList& params,
                     nlohmann::json meta);
// Reads and validates the sidecar (schema version and role).
nlohmann::json read_sidecar(const std::filesystem::path& path, const std::string& role);

}  // namespace shadowlift
