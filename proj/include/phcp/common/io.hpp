#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace phcp {

/// Writes through a unique temporary file in the target directory, then
/// renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Throws PrerequisiteError if the file is missing.
std::string read_file(const std::filesystem::path& path);

}  // namespace phcp
