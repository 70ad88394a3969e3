#pragma once

#include <string>

namespace dyncap::io {

// Locale-independent "%.12g" rendering used for every numeric artifact, so
// a rerun with identical doubles produces byte-identical files.
std::string fmt(double v);

// Whole-file helpers. Both throw std::runtime_error naming the path.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dyncap::io
