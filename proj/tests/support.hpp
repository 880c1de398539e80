#pragma once

#include "mpd/core/tensor.hpp"
#include "mpd/data/records.hpp"

#include <random>
#include <string>

namespace mpd::test {

inline Tensor random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline RowVector<double> random_row(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  return random_matrix(rng, 1, n, scale).row(0);
}

// Textbook i-j-p triple loop.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (Eigen::Index p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
  return c;
}

/// A labeled product with images of the given box counts; box 0 of image 0
/// is the main product.
inline ProductRecord toy_product(std::mt19937_64& rng, const std::string& id, std::initializer_list<int> boxes,
                                 int box_dim, int title_dim, bool with_title = true) {
  ProductRecord p;
  p.product_id = id;
  if (with_title) p.raw_title = random_row(rng, title_dim);
  int im = 0;
  for (int n : boxes) {
    ImageRecord image;
    image.image_id = id + "-i" + std::to_string(im);
    for (int b = 0; b < n; ++b) {
      BoxRecord box;
      box.box_id = image.image_id + "-b" + std::to_string(b);
      box.feature = random_row(rng, box_dim);
      box.label = (im == 0 && b == 0) ? 1 : static_cast<int>(rng() % 2);
      image.boxes.push_back(std::move(box));
    }
    p.images.push_back(std::move(image));
    ++im;
  }
  return p;
}

}  // namespace mpd::test

#include <filesystem>

namespace mpd::test {

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mpd-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mpd::test
