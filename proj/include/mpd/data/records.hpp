#pragma once

#include "mpd/core/tensor.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpd {

inline constexpr int kBoxFeatureDim = 512;
inline constexpr int kRawTitleDim = 1536;

/// Malformed file content (syntax, truncation, bad magic).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BoundingBox {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const BoundingBox&) const = default;
};

struct BoxRecord {
  std::string box_id;
  RowVector<double> feature;
  std::optional<int> label;  // 1 = main product
  std::optional<BoundingBox> bbox;
};

struct ImageRecord {
  std::string image_id;
  std::vector<BoxRecord> boxes;
};

struct ProductRecord {
  std::string product_id;
  std::optional<RowVector<double>> raw_title;
  std::optional<std::string> category;
  std::vector<ImageRecord> images;

  std::size_t box_count() const;
  bool labeled() const;
  std::size_t positive_count() const;
};

struct DatasetBundle {
  std::vector<ProductRecord> train;
  std::vector<ProductRecord> val;
  std::vector<ProductRecord> test;
  std::string provenance;
};

struct RecordDims {
  int box_dim = kBoxFeatureDim;
  int title_dim = kRawTitleDim;
};

struct Rejection {
  std::size_t position = 0;  // 1-based line (JSONL) or record index (binary)
  std::string product_id;
  std::string reason;
};

struct LoadResult {
  std::vector<ProductRecord> products;
  std::vector<Rejection> rejections;
};

/// Every invariant violation of one record, empty when the record is valid.
/// Labels must be all present or all absent; labeled records need at least
/// one positive box.
std::vector<std::string> validate(const ProductRecord& record, const RecordDims& dims = {});

/// Applies `validate` to each record and rejects repeated product ids.
/// `positions[i]` is reported for record i.
LoadResult screen(std::vector<ProductRecord> records, const std::vector<std::size_t>& positions,
                  const RecordDims& dims = {});

std::string describe(const std::vector<Rejection>& rejections);

}  // namespace mpd
