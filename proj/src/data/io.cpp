#include "mpd/data/io.hpp"
#include "mpd/data/byte_io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace mpd {
namespace {

using namespace bytes;

using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

FloatJson float_array(const RowVector<double>& v) {
  FloatJson arr = FloatJson::array();
  arr.get_ref<FloatJson::array_t&>().reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(static_cast<float>(v[i]));
  return arr;
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) malformed(line, std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require(obj, key, line);
  if (!v.is_string()) malformed(line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

RowVector<double> parse_floats(const nlohmann::json& v, const char* key, std::size_t line) {
  if (!v.is_array()) malformed(line, std::string("field '") + key + "' must be an array of numbers");
  RowVector<double> out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) malformed(line, std::string("field '") + key + "' holds a non-number");
    // Files carry 32-bit values; round through float so JSON and binary agree.
    out[static_cast<Eigen::Index>(i)] = static_cast<double>(static_cast<float>(v[i].get<double>()));
  }
  return out;
}

ProductRecord parse_record(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) malformed(line, "record is not an object");
  ProductRecord rec;
  rec.product_id = require_string(j, "product_id", line);
  if (auto it = j.find("title"); it != j.end() && !it->is_null()) rec.raw_title = parse_floats(*it, "title", line);
  if (auto it = j.find("category"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) malformed(line, "field 'category' must be a string");
    rec.category = it->get<std::string>();
  }
  const auto& images = require(j, "images", line);
  if (!images.is_array()) malformed(line, "field 'images' must be an array");
  for (const auto& im : images) {
    if (!im.is_object()) malformed(line, "image entry is not an object");
    ImageRecord image;
    image.image_id = require_string(im, "image_id", line);
    const auto& boxes = require(im, "boxes", line);
    if (!boxes.is_array()) malformed(line, "field 'boxes' must be an array");
    for (const auto& bx : boxes) {
      if (!bx.is_object()) malformed(line, "box entry is not an object");
      BoxRecord box;
      box.box_id = require_string(bx, "box_id", line);
      box.feature = parse_floats(require(bx, "feature", line), "feature", line);
      if (auto it = bx.find("label"); it != bx.end() && !it->is_null()) {
        if (!it->is_number_integer()) malformed(line, "field 'label' must be an integer");
        const auto label = it->get<std::int64_t>();
        box.label = static_cast<int>(std::clamp<std::int64_t>(label, -1, 2));
      }
      if (auto it = bx.find("bbox"); it != bx.end() && !it->is_null()) {
        RowVector<double> c = parse_floats(*it, "bbox", line);
        if (c.size() != 4) malformed(line, "field 'bbox' must hold 4 numbers");
        box.bbox = BoundingBox{static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2]),
                               static_cast<float>(c[3])};
      }
      image.boxes.push_back(std::move(box));
    }
    rec.images.push_back(std::move(image));
  }
  return rec;
}

constexpr std::size_t kMinBoxBytes = 4 + kBoxFeatureDim * 4 + 1;
constexpr std::size_t kMinImageBytes = 4 + 4;
constexpr std::size_t kMinProductBytes = 4 + 1 + 4;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace

std::string to_jsonl_line(const ProductRecord& product) {
  FloatJson j = FloatJson::object();
  j["product_id"] = product.product_id;
  if (product.category) j["category"] = *product.category;
  j["title"] = product.raw_title ? float_array(*product.raw_title) : FloatJson(nullptr);
  FloatJson images = FloatJson::array();
  for (const auto& image : product.images) {
    FloatJson im = FloatJson::object();
    im["image_id"] = image.image_id;
    FloatJson boxes = FloatJson::array();
    for (const auto& box : image.boxes) {
      FloatJson b = FloatJson::object();
      b["box_id"] = box.box_id;
      b["feature"] = float_array(box.feature);
      if (box.label) b["label"] = *box.label;
      if (box.bbox) b["bbox"] = FloatJson::array({box.bbox->x1, box.bbox->y1, box.bbox->x2, box.bbox->y2});
      boxes.push_back(std::move(b));
    }
    im["boxes"] = std::move(boxes);
    images.push_back(std::move(im));
  }
  j["images"] = std::move(images);
  return j.dump();
}

void save_jsonl(std::span<const ProductRecord> products, const std::filesystem::path& path) {
  std::string text;
  for (const auto& p : products) {
    text += to_jsonl_line(p);
    text += '\n';
  }
  write_text(path, text);
}

LoadResult parse_jsonl(const std::string& text, const RecordDims& dims) {
  std::vector<ProductRecord> records;
  std::vector<std::size_t> positions;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      malformed(number, std::string("malformed JSON: ") + e.what());
    }
    records.push_back(parse_record(j, number));
    positions.push_back(number);
  }
  return screen(std::move(records), positions, dims);
}

LoadResult load_jsonl(const std::filesystem::path& path, const RecordDims& dims) {
  const auto bytes = read_file_bytes(path);
  return parse_jsonl(std::string(bytes.begin(), bytes.end()), dims);
}

std::vector<std::uint8_t> encode_binary(std::span<const ProductRecord> products) {
  std::vector<std::uint8_t> out(kBinaryMagic.begin(), kBinaryMagic.end());
  put_u32(out, static_cast<std::uint32_t>(products.size()));
  for (const auto& p : products) {
    put_id(out, p.product_id);
    if (p.raw_title) {
      if (p.raw_title->size() != kRawTitleDim) {
        throw std::invalid_argument("save_binary: product '" + p.product_id + "' title is not " +
                                    std::to_string(kRawTitleDim) + "-dimensional");
      }
      put_u8(out, 1);
      for (Eigen::Index i = 0; i < p.raw_title->size(); ++i) put_f32(out, (*p.raw_title)[i]);
    } else {
      put_u8(out, 0);
    }
    put_u32(out, static_cast<std::uint32_t>(p.images.size()));
    for (const auto& image : p.images) {
      put_id(out, image.image_id);
      put_u32(out, static_cast<std::uint32_t>(image.boxes.size()));
      for (const auto& box : image.boxes) {
        if (box.feature.size() != kBoxFeatureDim) {
          throw std::invalid_argument("save_binary: box '" + box.box_id + "' feature is not " +
                                      std::to_string(kBoxFeatureDim) + "-dimensional");
        }
        put_id(out, box.box_id);
        for (Eigen::Index i = 0; i < box.feature.size(); ++i) put_f32(out, box.feature[i]);
        put_u8(out, box.label ? static_cast<std::uint8_t>(*box.label) : kUnlabeled);
      }
    }
  }
  return out;
}

LoadResult decode_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kBinaryMagic.size() ||
      std::memcmp(bytes.data(), kBinaryMagic.data(), kBinaryMagic.size()) != 0) {
    throw FormatError("not an MPDG1 file: bad magic bytes");
  }
  Reader r(bytes.subspan(kBinaryMagic.size()));
  const std::uint32_t n_products = r.count(kMinProductBytes, "product count");
  std::vector<ProductRecord> records;
  records.reserve(n_products);
  for (std::uint32_t pi = 0; pi < n_products; ++pi) {
    ProductRecord p;
    p.product_id = r.id("product id");
    const std::uint8_t flag = r.u8("title flag");
    if (flag > 1) {
      throw CorruptionError("corrupt binary: title flag " + std::to_string(flag) + " for product '" +
                            p.product_id + "'");
    }
    if (flag == 1) p.raw_title = r.f32s(kRawTitleDim, "title");
    const std::uint32_t n_images = r.count(kMinImageBytes, "image count");
    for (std::uint32_t ii = 0; ii < n_images; ++ii) {
      ImageRecord image;
      image.image_id = r.id("image id");
      const std::uint32_t n_boxes = r.count(kMinBoxBytes, "box count");
      for (std::uint32_t bi = 0; bi < n_boxes; ++bi) {
        BoxRecord box;
        box.box_id = r.id("box id");
        box.feature = r.f32s(kBoxFeatureDim, "feature");
        const std::uint8_t label = r.u8("label");
        if (label != kUnlabeled) box.label = label;
        image.boxes.push_back(std::move(box));
      }
      p.images.push_back(std::move(image));
    }
    records.push_back(std::move(p));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("corrupt binary: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  std::vector<std::size_t> positions(records.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i + 1;
  return screen(std::move(records), positions, RecordDims{});
}

void save_binary(std::span<const ProductRecord> products, const std::filesystem::path& path) {
  const auto bytes = encode_binary(products);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

LoadResult load_binary(const std::filesystem::path& path) { return decode_binary(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

DataFormat parse_data_format(const std::string& name) {
  if (name == "jsonl") return DataFormat::jsonl;
  if (name == "binary") return DataFormat::binary;
  if (name == "both") return DataFormat::both;
  throw std::invalid_argument("unknown data format '" + name + "' (jsonl, binary, both)");
}

RecordDims infer_dims(const DatasetBundle& bundle) {
  RecordDims dims;
  bool box_seen = false;
  bool title_seen = false;
  for (const auto* split : {&bundle.train, &bundle.val, &bundle.test}) {
    for (const auto& p : *split) {
      if (!title_seen && p.raw_title) {
        dims.title_dim = static_cast<int>(p.raw_title->size());
        title_seen = true;
      }
      if (!box_seen && !p.images.empty() && !p.images.front().boxes.empty()) {
        dims.box_dim = static_cast<int>(p.images.front().boxes.front().feature.size());
        box_seen = true;
      }
    }
  }
  return dims;
}

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir, DataFormat format) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["provenance"] = bundle.provenance;
  const RecordDims dims = infer_dims(bundle);
  manifest["box_dim"] = dims.box_dim;
  manifest["title_dim"] = dims.title_dim;
  const std::pair<const char*, const std::vector<ProductRecord>*> splits[] = {
      {"train", &bundle.train}, {"val", &bundle.val}, {"test", &bundle.test}};
  for (const auto& [name, products] : splits) {
    nlohmann::json entry;
    entry["count"] = products->size();
    std::size_t boxes = 0;
    for (const auto& p : *products) boxes += p.box_count();
    entry["boxes"] = boxes;
    if (format != DataFormat::binary) {
      const std::string file = std::string(name) + ".jsonl";
      save_jsonl(*products, dir / file);
      entry["jsonl"] = file;
    }
    if (format != DataFormat::jsonl) {
      const std::string file = std::string(name) + ".mpdg";
      save_binary(*products, dir / file);
      entry["binary"] = file;
    }
    manifest["splits"][name] = entry;
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

std::vector<ProductRecord> load_split(const std::filesystem::path& dir, const nlohmann::json& entry,
                                      const std::string& name, const RecordDims& dims) {
  LoadResult result;
  if (entry.contains("binary")) {
    result = load_binary(dir / entry["binary"].get<std::string>());
  } else if (entry.contains("jsonl")) {
    result = load_jsonl(dir / entry["jsonl"].get<std::string>(), dims);
  } else {
    throw FormatError("manifest split '" + name + "' lists no file");
  }
  if (!result.rejections.empty()) {
    throw FormatError("split '" + name + "' has rejected records:\n" + describe(result.rejections));
  }
  return std::move(result.products);
}

}  // namespace

DatasetBundle load_bundle(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  DatasetBundle bundle;
  try {
    bundle.provenance = manifest.value("provenance", "");
    RecordDims dims;
    dims.box_dim = manifest.value("box_dim", dims.box_dim);
    dims.title_dim = manifest.value("title_dim", dims.title_dim);
    const auto& splits = manifest.at("splits");
    bundle.train = load_split(dir, splits.at("train"), "train", dims);
    bundle.val = load_split(dir, splits.at("val"), "val", dims);
    bundle.test = load_split(dir, splits.at("test"), "test", dims);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return bundle;
}

LoadResult load_products(const std::filesystem::path& path, const RecordDims& dims) {
  if (std::filesystem::is_directory(path)) {
    throw std::invalid_argument("'" + path.string() + "' is a directory; name a .jsonl or .mpdg file");
  }
  const auto ext = path.extension().string();
  if (ext == ".jsonl") return load_jsonl(path, dims);
  if (ext == ".mpdg") return load_binary(path);
  throw std::invalid_argument("unrecognized dataset file '" + path.string() + "' (expected .jsonl or .mpdg)");
}

}  // namespace mpd
