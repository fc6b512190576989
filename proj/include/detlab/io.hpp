#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace detlab::io {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace detlab::io
