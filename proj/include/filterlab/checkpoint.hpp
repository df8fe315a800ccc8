#pragma once

#include <string>
#include <utility>

#include "filterlab/filter.hpp"
#include "filterlab/model.hpp"

namespace filterlab {

// Binary checkpoints: magic + format version + a JSON header declaring the
// config and every tensor's shape, followed by raw float64 payloads
// (column-major, little-endian). Round-trips are bit-exact.
inline constexpr uint32_t kCheckpointFormatVersion = 1;

void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

void save_filter(const FilterSpec& spec, const FilterParams& filter, const std::string& path);
std::pair<FilterSpec, FilterParams> load_filter(const std::string& path);

}  // namespace filterlab
