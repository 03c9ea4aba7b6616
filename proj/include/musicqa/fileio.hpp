#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace musicqa {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place, so readers see
// either the old content or the new content, never a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace musicqa
