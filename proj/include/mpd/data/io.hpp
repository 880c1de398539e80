#pragma once

#include "mpd/data/records.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mpd {

/// Structurally damaged binary input: a length or count runs past the end.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// JSONL: one product per line, floats written with 32-bit precision.
void save_jsonl(std::span<const ProductRecord> products, const std::filesystem::path& path);
std::string to_jsonl_line(const ProductRecord& product);
/// Throws FormatError naming the first malformed line; invariant violations
/// are collected in the result instead.
LoadResult load_jsonl(const std::filesystem::path& path, const RecordDims& dims = {});
LoadResult parse_jsonl(const std::string& text, const RecordDims& dims = {});

// MPDG1 binary: "MPDG1\0", then little-endian u32 product count and per
// product: id, u8 title flag, [1536 f32 title], u32 image count, per image:
// id, u32 box count, per box: id, 512 f32 feature, u8 label. Ids are a u32
// byte length followed by the bytes. The title floats are present only when
// the flag is 1; label 255 marks an unlabeled box.
inline constexpr std::array<char, 6> kBinaryMagic = {'M', 'P', 'D', 'G', '1', '\0'};
inline constexpr std::uint8_t kUnlabeled = 255;

std::vector<std::uint8_t> encode_binary(std::span<const ProductRecord> products);
LoadResult decode_binary(std::span<const std::uint8_t> bytes);
void save_binary(std::span<const ProductRecord> products, const std::filesystem::path& path);
LoadResult load_binary(const std::filesystem::path& path);

enum class DataFormat { jsonl, binary, both };

DataFormat parse_data_format(const std::string& name);

/// Feature and title lengths of the first box and title found; defaults for
/// whatever is missing.
RecordDims infer_dims(const DatasetBundle& bundle);

/// Writes train/val/test files plus manifest.json into `dir`.
void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir, DataFormat format);

/// Reads the splits listed in `dir/manifest.json`, preferring binary files.
/// Any rejected record fails the load with the full report.
DatasetBundle load_bundle(const std::filesystem::path& dir);

/// Loads one dataset file by extension (.jsonl or .mpdg).
LoadResult load_products(const std::filesystem::path& path, const RecordDims& dims = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace mpd
