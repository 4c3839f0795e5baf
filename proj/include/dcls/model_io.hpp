#pragma once

#include <string>

#include <json.hpp>

#include "dcls/model.hpp"

namespace dcls {

inline constexpr int kModelFormatVersion = 1;

/// On-disk layout: the magic "DCLSMODL", a little-endian u32 header length,
/// a JSON header (format version, per-layer spec and conv geometry, element
/// offsets into the blob, free-form metadata), then all weights and positions
/// as little-endian float64. Round-trips are bit-exact.
void save_model(const Model& model, const std::string& path,
                const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedModel {
    Model model;
    nlohmann::json metadata;
};

/// Rejects wrong magic, unsupported format versions (naming both), non
/// little-endian payloads, and headers that disagree with the blob length.
LoadedModel load_model(const std::string& path);

}  // namespace dcls
