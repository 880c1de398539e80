#include "mpd/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace mpd {
namespace {

constexpr std::uint64_t kSharedStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kSplitStream = 0x5851f42d4c957f2dULL;

RowVector<double> gaussian_row(std::mt19937_64& rng, int dim, double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector<double> v(dim);
  for (int i = 0; i < dim; ++i) v[i] = sigma * normal(rng);
  return v;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool bernoulli(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

std::string numbered(const char* prefix, long value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*ld", prefix, width, value);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the combined value
  std::uint64_t z = seed ^ (index * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SyntheticConfig::validate() const {
  if (n_products < 0) throw ConfigError("products", "must be >= 0");
  if (n_categories < 1) throw ConfigError("categories", "must be >= 1");
  if (images_min < 1) throw ConfigError("images-min", "must be >= 1");
  if (images_max < images_min) throw ConfigError("images-max", "must be >= images-min");
  if (boxes_min < 1) throw ConfigError("boxes-min", "must be >= 1");
  if (boxes_max < boxes_min) throw ConfigError("boxes-max", "must be >= boxes-min");
  if (!(sigma_feat >= 0) || !std::isfinite(sigma_feat)) throw ConfigError("sigma-feat", "must be finite and >= 0");
  if (!(sigma_title >= 0) || !std::isfinite(sigma_title)) throw ConfigError("sigma-title", "must be finite and >= 0");
  if (!(distractor_rate >= 0 && distractor_rate <= 1)) throw ConfigError("distractor-rate", "must lie in [0, 1]");
  if (!(main_box_prob >= 0 && main_box_prob <= 1)) throw ConfigError("main-box-prob", "must lie in [0, 1]");
  if (box_dim < 1) throw ConfigError("box-dim", "must be >= 1");
  if (title_dim < 1) throw ConfigError("title-dim", "must be >= 1");
}

std::string SyntheticConfig::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << n_products << '|' << n_categories << '|' << images_min << '|' << images_max << '|' << boxes_min << '|'
     << boxes_max << '|' << sigma_feat << '|' << sigma_title << '|' << distractor_rate << '|' << main_box_prob
     << '|' << seed << '|' << box_dim << '|' << title_dim;
  const std::string text = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "synthetic:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<ProductRecord> generate_synthetic(const SyntheticConfig& config) {
  config.validate();

  std::mt19937_64 shared(derive_seed(config.seed, kSharedStream));
  std::vector<RowVector<double>> prototypes;
  prototypes.reserve(static_cast<std::size_t>(config.n_categories));
  for (int c = 0; c < config.n_categories; ++c) {
    RowVector<double> p = gaussian_row(shared, config.box_dim, 1.0);
    prototypes.push_back(p / p.norm());
  }
  Matrix<double> lift(config.box_dim, config.title_dim);
  {
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.box_dim));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < lift.size(); ++i) lift.data()[i] = scale * normal(shared);
  }

  std::vector<ProductRecord> products;
  products.reserve(static_cast<std::size_t>(config.n_products));
  for (int pi = 0; pi < config.n_products; ++pi) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(pi) + 1));
    const int category = uniform_int(rng, 0, config.n_categories - 1);

    // Layout first: box counts and which slot (if any) holds the main item.
    const int n_images = uniform_int(rng, config.images_min, config.images_max);
    std::vector<int> box_counts(static_cast<std::size_t>(n_images));
    std::vector<int> main_slot(static_cast<std::size_t>(n_images), -1);
    bool any_main = false;
    for (int im = 0; im < n_images; ++im) {
      box_counts[im] = uniform_int(rng, config.boxes_min, config.boxes_max);
      if (bernoulli(rng, config.main_box_prob)) {
        main_slot[im] = uniform_int(rng, 0, box_counts[im] - 1);
        any_main = true;
      }
    }
    if (!any_main) {
      const int im = uniform_int(rng, 0, n_images - 1);
      main_slot[im] = uniform_int(rng, 0, box_counts[im] - 1);
    }

    const RowVector<double> latent = prototypes[category] + gaussian_row(rng, config.box_dim, config.sigma_feat);

    ProductRecord product;
    product.product_id = numbered("p", pi, 6);
    product.category = numbered("cat", category, 2);
    for (int im = 0; im < n_images; ++im) {
      ImageRecord image;
      image.image_id = product.product_id + "-" + numbered("i", im, 2);
      for (int b = 0; b < box_counts[im]; ++b) {
        BoxRecord box;
        box.box_id = image.image_id + "-" + numbered("b", b, 2);
        if (b == main_slot[im]) {
          box.feature = latent + gaussian_row(rng, config.box_dim, config.sigma_feat);
          box.label = 1;
        } else {
          int other = category;
          if (config.n_categories > 1 && !bernoulli(rng, config.distractor_rate)) {
            other = uniform_int(rng, 0, config.n_categories - 2);
            if (other >= category) ++other;
          }
          const RowVector<double> distractor =
              prototypes[other] + gaussian_row(rng, config.box_dim, config.sigma_feat);
          box.feature = distractor + gaussian_row(rng, config.box_dim, config.sigma_feat);
          box.label = 0;
        }
        image.boxes.push_back(std::move(box));
      }
      product.images.push_back(std::move(image));
    }
    RowVector<double> title = latent * lift;
    title += gaussian_row(rng, config.title_dim, config.sigma_title);
    product.raw_title = std::move(title);
    products.push_back(std::move(product));
  }
  return products;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  if (!(f.train >= 0 && f.val >= 0 && f.test >= 0)) throw std::invalid_argument("split: fractions must be >= 0");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  if (n < 3) throw std::invalid_argument("split: need at least 3 products, got " + std::to_string(n));
  const auto share = [n](double fraction) {
    if (fraction <= 0) return std::size_t{0};
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction)));
  };
  const std::size_t val = share(f.val);
  const std::size_t test = share(f.test);
  if (val + test >= n) throw std::invalid_argument("split: no products left for training");
  return {n - val - test, val, test};
}

DatasetBundle split(std::vector<ProductRecord> products, std::uint64_t seed, const SplitFractions& fractions) {
  const auto counts = split_counts(products.size(), fractions);
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  for (std::size_t i = products.size(); i > 1; --i) std::swap(products[i - 1], products[rng() % i]);
  DatasetBundle bundle;
  auto it = std::make_move_iterator(products.begin());
  bundle.train.assign(it, it + static_cast<std::ptrdiff_t>(counts[0]));
  it += static_cast<std::ptrdiff_t>(counts[0]);
  bundle.val.assign(it, it + static_cast<std::ptrdiff_t>(counts[1]));
  it += static_cast<std::ptrdiff_t>(counts[1]);
  bundle.test.assign(it, it + static_cast<std::ptrdiff_t>(counts[2]));
  return bundle;
}

}  // namespace mpd
