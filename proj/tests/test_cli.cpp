#include "cli.hpp"

#include "mpd/data/io.hpp"
#include "mpd/train/snapshot.hpp"

#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

using namespace mpd;
using test::TempDir;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome mpd_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<nlohmann::json> jsonl(const std::filesystem::path& p) {
  std::vector<nlohmann::json> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

const std::vector<std::string> kSmallModel{"--text-dim", "4", "--hidden-dim", "8", "--embed-dim", "4",
                                           "--head-dim", "4", "--node-dim",   "4", "--contrastive-dim", "4"};

std::vector<std::string> train_args(const std::string& model_flag, const std::string& model, const TempDir& dir,
                                    const std::string& run, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"train", model_flag, model, "--data", (dir / "data").string(), "--out",
                             (dir / run).string()};
  a.insert(a.end(), kSmallModel.begin(), kSmallModel.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

// A small JSONL bundle with 8-long features and 6-long titles.
void make_data(const TempDir& dir) {
  const Outcome g = mpd_cli({"gen", "--out", (dir / "data").string(), "--products", "40", "--box-dim", "8",
                             "--title-dim", "6", "--format", "jsonl", "--seed", "3"});
  REQUIRE(g.code == 0);
}

}  // namespace

TEST_CASE("cli gen writes a reproducible bundle") {
  TempDir dir("cli-gen");
  make_data(dir);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json", "config.ini"}) {
    CHECK(std::filesystem::exists(dir / "data" / f));
  }
  REQUIRE(mpd_cli({"gen", "--out", (dir / "again").string(), "--products", "40", "--box-dim", "8", "--title-dim",
                   "6", "--format", "jsonl", "--seed", "3"})
              .code == 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
    CHECK(slurp(dir / "data" / f) == slurp(dir / "again" / f));
  }
  const std::string echo = slurp(dir / "data" / "config.ini");
  CHECK(echo.find("[gen]") != std::string::npos);
  CHECK(echo.find("products = 40") != std::string::npos);

  const Outcome bin = mpd_cli({"gen", "--out", (dir / "b").string(), "--products", "12", "--format", "binary"});
  CHECK(bin.code == 0);
  CHECK(std::filesystem::exists(dir / "b" / "train.mpdg"));
}

TEST_CASE("cli gen rejects bad configuration with exit 2") {
  TempDir dir("cli-gen-bad");
  const Outcome range = mpd_cli({"gen", "--out", dir.path().string(), "--images-min", "5", "--images-max", "2"});
  CHECK(range.code == 2);
  CHECK(range.err.find("images") != std::string::npos);
  CHECK(mpd_cli({"gen", "--out", dir.path().string(), "--box-dim", "8", "--format", "binary"}).code == 2);
  CHECK(mpd_cli({"gen", "--out", dir.path().string(), "--format", "xml"}).code == 2);
  CHECK(mpd_cli({"gen"}).code == 2);
  CHECK(mpd_cli({"frobnicate"}).code == 2);
  CHECK(mpd_cli({}).code == 2);
  CHECK(mpd_cli({"--help"}).code == 0);
}

TEST_CASE("cli train, eval and predict") {
  TempDir dir("cli-train");
  make_data(dir);

  const Outcome pdfs = mpd_cli(train_args("--variant", "pdfs", dir, "pdfs", {"--epochs", "2"}));
  REQUIRE(pdfs.code == 0);
  for (const char* f : {"snapshot", "log.jsonl", "config.ini"}) CHECK(std::filesystem::exists(dir / "pdfs" / f));
  const auto log = jsonl(dir / "pdfs" / "log.jsonl");
  REQUIRE(log.size() == 2);
  CHECK(log[1]["epoch"] == 2);
  CHECK(log[0].contains("mean_loss"));
  CHECK(log[0].contains("val_product_accuracy"));

  REQUIRE(mpd_cli(train_args("--variant", "ng", dir, "ng", {"--epochs", "1"})).code == 0);
  const TrainedModel ng = load_snapshot(dir / "ng" / "snapshot");
  CHECK(ng.name() == "ng");
  CHECK_FALSE(ng.params.contains("decoupled_head.weight"));
  CHECK(load_snapshot(dir / "pdfs" / "snapshot").params.contains("decoupled_head.weight"));

  SUBCASE("config replay is bit-identical") {
    const Outcome replay = mpd_cli({"--config", (dir / "pdfs" / "config.ini").string(), "train", "--out",
                                    (dir / "replay").string()});
    REQUIRE(replay.code == 0);
    CHECK(slurp(dir / "replay" / "snapshot") == slurp(dir / "pdfs" / "snapshot"));
    CHECK(slurp(dir / "replay" / "log.jsonl") == slurp(dir / "pdfs" / "log.jsonl"));
  }

  SUBCASE("eval reports both conditions") {
    const std::string snap = (dir / "pdfs" / "snapshot").string();
    const Outcome normal = mpd_cli({"eval", "--snapshot", snap, "--data", (dir / "data").string(), "--report",
                                    (dir / "report.json").string(), "--curve", (dir / "curve.csv").string()});
    REQUIRE(normal.code == 0);
    const auto report = nlohmann::json::parse(normal.out);
    CHECK(report["condition"] == "normal");
    CHECK(report["model"] == "pdfs");
    CHECK(nlohmann::json::parse(slurp(dir / "report.json")) == report);
    CHECK(slurp(dir / "curve.csv").rfind("size,count,accuracy\n", 0) == 0);
    CHECK(std::filesystem::exists(dir / "report.config.ini"));
    CHECK(std::filesystem::exists(dir / "curve.config.ini"));

    const Outcome gallery =
        mpd_cli({"eval", "--snapshot", snap, "--data", (dir / "data").string(), "--gallery-only"});
    REQUIRE(gallery.code == 0);
    CHECK(nlohmann::json::parse(gallery.out)["condition"] == "gallery_only");

    const Outcome mismatch = mpd_cli({"eval", "--snapshot", (dir / "ng" / "snapshot").string(), "--data",
                                      (dir / "data").string(), "--variant", "pdfs"});
    CHECK(mismatch.code == 2);
    CHECK(mismatch.err.find("ng") != std::string::npos);
    CHECK(mpd_cli({"eval", "--snapshot", snap, "--data", (dir / "data").string(), "--split", "dev"}).code == 2);
    CHECK(mpd_cli({"eval", "--snapshot", (dir / "nope").string(), "--data", (dir / "data").string()}).code == 1);
  }

  SUBCASE("predict ranks every box and tolerates missing titles") {
    // Three "frames" of one product, no title, no labels.
    ProductRecord video;
    video.product_id = "clip";
    std::mt19937_64 rng(80);
    for (int f = 0; f < 3; ++f) {
      ImageRecord frame;
      frame.image_id = "frame" + std::to_string(f);
      for (int b = 0; b < 2; ++b) {
        BoxRecord box;
        box.box_id = frame.image_id + "-b" + std::to_string(b);
        box.feature = test::random_row(rng, 8);
        frame.boxes.push_back(box);
      }
      video.images.push_back(frame);
    }
    const std::vector<ProductRecord> input{video};
    save_jsonl(input, dir / "clip.jsonl");
    const Outcome p = mpd_cli({"predict", "--snapshot", (dir / "pdfs" / "snapshot").string(), "--input",
                               (dir / "clip.jsonl").string(), "--out", (dir / "pred.jsonl").string()});
    REQUIRE(p.code == 0);
    const auto rows = jsonl(dir / "pred.jsonl");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0]["product_id"] == "clip");
    CHECK(rows[0]["title_used"] == false);
    const auto& ranking = rows[0]["ranking"];
    REQUIRE(ranking.size() == 6);
    std::set<std::string> frames;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      CHECK(ranking[r]["rank"] == r + 1);
      CHECK_FALSE(ranking[r].contains("label"));
      frames.insert(ranking[r]["image_id"].get<std::string>());
      if (r > 0) CHECK(ranking[r - 1]["score"].get<double>() >= ranking[r]["score"].get<double>());
    }
    CHECK(frames.size() == 3);
    CHECK(std::filesystem::exists(dir / "pred.config.ini"));

    const Outcome labeled = mpd_cli({"predict", "--snapshot", (dir / "pdfs" / "snapshot").string(), "--data",
                                     (dir / "data").string(), "--out", (dir / "test_pred.jsonl").string()});
    REQUIRE(labeled.code == 0);
    const auto lrows = jsonl(dir / "test_pred.jsonl");
    CHECK_FALSE(lrows.empty());
    CHECK(lrows[0]["title_used"] == true);
    CHECK(lrows[0]["ranking"][0].contains("label"));
  }
}

TEST_CASE("cli train argument errors") {
  TempDir dir("cli-train-bad");
  make_data(dir);
  auto both = train_args("--variant", "pdfs", dir, "x");
  both.insert(both.end(), {"--baseline", "contrastive"});
  CHECK(mpd_cli(both).code == 2);
  CHECK(mpd_cli(train_args("--variant", "gcn", dir, "x")).code == 2);
  CHECK(mpd_cli(train_args("--baseline", "siamese", dir, "x")).code == 2);
  CHECK(mpd_cli(train_args("--variant", "ng", dir, "x", {"--epochs", "0"})).code == 2);
  CHECK(mpd_cli({"train", "--variant", "ng", "--out", (dir / "x").string()}).code == 2);
  CHECK(mpd_cli({"train", "--variant", "ng", "--data", (dir / "missing").string(), "--out",
                 (dir / "x").string()})
            .code == 1);
  // Input widths come from the data, not from flags.
  REQUIRE(mpd_cli({"train", "--variant", "ng", "--data", (dir / "data").string(), "--out", (dir / "y").string(),
                   "--epochs", "1"})
              .code == 0);
  CHECK(load_snapshot(dir / "y" / "snapshot").graph.box_dim == 8);
}

TEST_CASE("cli contrastive baseline uses its own defaults") {
  TempDir dir("cli-contrastive");
  make_data(dir);
  REQUIRE(mpd_cli(train_args("--baseline", "contrastive", dir, "c")).code == 0);
  const std::string echo = slurp(dir / "c" / "config.ini");
  CHECK(echo.find("epochs = 35") != std::string::npos);
  CHECK(echo.find("batch-size = 32") != std::string::npos);
  CHECK(jsonl(dir / "c" / "log.jsonl").size() == 35);
  const Outcome e = mpd_cli({"eval", "--snapshot", (dir / "c" / "snapshot").string(), "--data",
                             (dir / "data").string(), "--gallery-only"});
  CHECK(e.code == 0);
  CHECK(nlohmann::json::parse(e.out)["model"] == "contrastive");
}

TEST_CASE("cli divergence aborts with diagnostics") {
  TempDir dir("cli-diverge");
  make_data(dir);
  const Outcome o = mpd_cli(train_args("--variant", "pcfs", dir, "boom", {"--lr", "1e300", "--epochs", "3"}));
  CHECK(o.code == 1);
  CHECK(std::filesystem::exists(dir / "boom" / "abort.txt"));
  CHECK(slurp(dir / "boom" / "abort.txt").find("non-finite loss at epoch") != std::string::npos);
}
