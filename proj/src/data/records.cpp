#include "mpd/data/records.hpp"

#include <set>
#include <sstream>
#include <unordered_set>

namespace mpd {

std::size_t ProductRecord::box_count() const {
  std::size_t n = 0;
  for (const auto& image : images) n += image.boxes.size();
  return n;
}

bool ProductRecord::labeled() const {
  for (const auto& image : images) {
    for (const auto& box : image.boxes) {
      if (!box.label) return false;
    }
  }
  return box_count() > 0;
}

std::size_t ProductRecord::positive_count() const {
  std::size_t n = 0;
  for (const auto& image : images) {
    for (const auto& box : image.boxes) n += box.label.value_or(0) == 1 ? 1 : 0;
  }
  return n;
}

std::vector<std::string> validate(const ProductRecord& record, const RecordDims& dims) {
  std::vector<std::string> problems;
  if (record.product_id.empty()) problems.emplace_back("empty product id");
  if (record.raw_title) {
    if (record.raw_title->size() != dims.title_dim) {
      problems.push_back("title has " + std::to_string(record.raw_title->size()) + " values, expected " +
                         std::to_string(dims.title_dim));
    } else if (!record.raw_title->allFinite()) {
      problems.emplace_back("non-finite title value");
    }
  }
  if (record.images.empty()) {
    problems.emplace_back("empty gallery");
    return problems;
  }

  std::set<std::string> image_ids;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::size_t positives = 0;
  for (const auto& image : record.images) {
    const std::string where = "image '" + image.image_id + "'";
    if (image.image_id.empty()) problems.emplace_back("empty image id");
    if (!image_ids.insert(image.image_id).second) problems.push_back("duplicate image id '" + image.image_id + "'");
    if (image.boxes.empty()) problems.push_back(where + " has no boxes");

    std::set<std::string> box_ids;
    for (const auto& box : image.boxes) {
      const std::string at = where + " box '" + box.box_id + "'";
      if (box.box_id.empty()) problems.push_back(where + ": empty box id");
      if (!box_ids.insert(box.box_id).second) problems.push_back("duplicate box id '" + box.box_id + "' in " + where);
      if (box.feature.size() != dims.box_dim) {
        problems.push_back(at + ": feature has " + std::to_string(box.feature.size()) + " values, expected " +
                           std::to_string(dims.box_dim));
      } else if (!box.feature.allFinite()) {
        problems.push_back(at + ": non-finite feature value");
      }
      if (box.label) {
        ++labeled;
        if (*box.label != 0 && *box.label != 1) {
          problems.push_back(at + ": label " + std::to_string(*box.label) + " is not 0 or 1");
        }
        positives += *box.label == 1 ? 1 : 0;
      } else {
        ++unlabeled;
      }
      if (box.bbox) {
        const BoundingBox& b = *box.bbox;
        if (!(b.x1 < b.x2 && b.y1 < b.y2)) problems.push_back(at + ": bbox corners out of order");
      }
    }
  }
  if (labeled > 0 && unlabeled > 0) problems.emplace_back("labels present on some boxes only");
  if (labeled > 0 && unlabeled == 0 && positives == 0) problems.emplace_back("no positive box");
  return problems;
}

LoadResult screen(std::vector<ProductRecord> records, const std::vector<std::size_t>& positions,
                  const RecordDims& dims) {
  LoadResult result;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t position = i < positions.size() ? positions[i] : i + 1;
    std::vector<std::string> problems = validate(records[i], dims);
    if (!records[i].product_id.empty() && !seen.insert(records[i].product_id).second) {
      problems.push_back("duplicate product id");
    }
    if (problems.empty()) {
      result.products.push_back(std::move(records[i]));
      continue;
    }
    for (auto& reason : problems) {
      result.rejections.push_back({position, records[i].product_id, std::move(reason)});
    }
  }
  return result;
}

std::string describe(const std::vector<Rejection>& rejections) {
  std::ostringstream os;
  for (const auto& r : rejections) {
    os << "record " << r.position << " (" << (r.product_id.empty() ? "?" : r.product_id) << "): " << r.reason
       << '\n';
  }
  return os.str();
}

}  // namespace mpd
