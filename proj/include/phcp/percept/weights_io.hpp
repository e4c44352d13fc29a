#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "phcp/percept/model.hpp"

namespace phcp::percept {

/// Frozen base-model weights as a tensor bundle of kind "model" tagged with the
/// family id.
std::string encode_model(const ModelWeights& model);
/// Verifies the family id and every tensor shape against the registered family.
ModelWeights decode_model(std::string_view bytes, const FamilyRegistry& families);

void save_model(const std::filesystem::path& path, const ModelWeights& model);
ModelWeights load_model(const std::filesystem::path& path, const FamilyRegistry& families);

}  // namespace phcp::percept
