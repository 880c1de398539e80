#pragma once

#include "mpd/model/trained_model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mpd {

// Layout (little-endian): "MPDS1\0", u32 length + JSON header holding the
// model kind and configuration, u32 parameter count, then per parameter
// u32 name length + name, u32 rows, u32 cols, rows*cols f64 row-major.

std::vector<std::uint8_t> encode_snapshot(const TrainedModel& model);
/// Throws CorruptionError for malformed bytes and std::invalid_argument when
/// the parameters do not fit the stored configuration.
TrainedModel decode_snapshot(const std::vector<std::uint8_t>& bytes);

void save_snapshot(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_snapshot(const std::filesystem::path& path);

/// The configuration part of the header as pretty-printed JSON.
std::string describe_model(const TrainedModel& model);

}  // namespace mpd
