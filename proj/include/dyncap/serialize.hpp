#pragma once

#include <string>

#include "dyncap/layers.hpp"

namespace dyncap::ser {

// Binary model container, magic "DCM1". Saves any mix of fixed, dynamic,
// and adaptive layers with their full state; a loaded model evaluates
// bitwise-identically to the saved one. Throws std::runtime_error naming
// the path on IO or format problems.
void save_model(const nn::ModelGraph& model, const std::string& path);
nn::ModelGraph load_model(const std::string& path);

}  // namespace dyncap::ser
