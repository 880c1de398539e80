#include "cli.hpp"

#include "mpd/data/io.hpp"
#include "mpd/data/synthetic.hpp"
#include "mpd/eval/evaluate.hpp"
#include "mpd/train/snapshot.hpp"
#include "mpd/train/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace mpd::cli {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// "key = value" file under a [command] section, readable through --config.
class Echo {
 public:
  explicit Echo(const std::string& command) {
    text_ = "# resolved configuration for `mpd " + command + "`\n[" + command + "]\n";
  }

  void add(const std::string& key, const std::string& value) {
    std::string quoted = "\"";
    for (char c : value) {
      if (c == '"' || c == '\\') quoted.push_back('\\');
      quoted.push_back(c);
    }
    line(key, quoted + "\"");
  }
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, bool value) { line(key, value ? "true" : "false"); }
  void add(const std::string& key, int value) { line(key, std::to_string(value)); }
  void add(const std::string& key, std::uint64_t value) { line(key, std::to_string(value)); }
  void add(const std::string& key, double value) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, value).ptr;
    line(key, std::string(buf, end));
  }

  const std::string& str() const { return text_; }

 private:
  void line(const std::string& key, const std::string& value) { text_ += key + " = " + value + "\n"; }
  std::string text_;
};

fs::path sibling(const fs::path& output, const std::string& suffix) {
  fs::path p = output;
  p.replace_extension();
  return p.string() + suffix;
}

// gen

struct GenOptions {
  SyntheticConfig synthetic;
  double val_fraction = 0.05;
  double test_fraction = 0.20;
  std::string format = "both";
  std::string out;
};

void register_gen(CLI::App& app, GenOptions& o) {
  auto* cmd = app.add_subcommand("gen", "Generate a synthetic dataset bundle");
  auto& s = o.synthetic;
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_option("--products", s.n_products, "Number of products")->capture_default_str();
  cmd->add_option("--categories", s.n_categories, "Number of categories")->capture_default_str();
  cmd->add_option("--images-min", s.images_min, "Minimum images per product")->capture_default_str();
  cmd->add_option("--images-max", s.images_max, "Maximum images per product")->capture_default_str();
  cmd->add_option("--boxes-min", s.boxes_min, "Minimum boxes per image")->capture_default_str();
  cmd->add_option("--boxes-max", s.boxes_max, "Maximum boxes per image")->capture_default_str();
  cmd->add_option("--sigma-feat", s.sigma_feat, "Box feature noise")->capture_default_str();
  cmd->add_option("--sigma-title", s.sigma_title, "Title noise")->capture_default_str();
  cmd->add_option("--distractor-rate", s.distractor_rate, "Chance a distractor shares the product category")
      ->capture_default_str();
  cmd->add_option("--main-box-prob", s.main_box_prob, "Chance an image shows the main item")->capture_default_str();
  cmd->add_option("--box-dim", s.box_dim, "Box feature length (binary output needs 512)")->capture_default_str();
  cmd->add_option("--title-dim", s.title_dim, "Title length (binary output needs 1536)")->capture_default_str();
  cmd->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  cmd->add_option("--val-fraction", o.val_fraction, "Validation share")->capture_default_str();
  cmd->add_option("--test-fraction", o.test_fraction, "Test share")->capture_default_str();
  cmd->add_option("--format", o.format, "jsonl, binary or both")->capture_default_str();
}

int cmd_gen(const GenOptions& o, std::ostream& out) {
  o.synthetic.validate();
  const DataFormat format = parse_data_format(o.format);
  if (format != DataFormat::jsonl &&
      (o.synthetic.box_dim != kBoxFeatureDim || o.synthetic.title_dim != kRawTitleDim)) {
    throw ConfigError("format", "binary output needs box-dim 512 and title-dim 1536; use --format jsonl");
  }
  if (!(o.val_fraction >= 0 && o.test_fraction >= 0 && o.val_fraction + o.test_fraction < 1)) {
    throw ConfigError("val-fraction", "val and test fractions must be >= 0 and sum below 1");
  }
  SplitFractions fractions{1.0 - o.val_fraction - o.test_fraction, o.val_fraction, o.test_fraction};
  DatasetBundle bundle = split(generate_synthetic(o.synthetic), o.synthetic.seed, fractions);
  bundle.provenance = o.synthetic.hash();
  save_bundle(bundle, o.out, format);

  const auto& s = o.synthetic;
  Echo echo("gen");
  echo.add("out", o.out);
  echo.add("products", s.n_products);
  echo.add("categories", s.n_categories);
  echo.add("images-min", s.images_min);
  echo.add("images-max", s.images_max);
  echo.add("boxes-min", s.boxes_min);
  echo.add("boxes-max", s.boxes_max);
  echo.add("sigma-feat", s.sigma_feat);
  echo.add("sigma-title", s.sigma_title);
  echo.add("distractor-rate", s.distractor_rate);
  echo.add("main-box-prob", s.main_box_prob);
  echo.add("box-dim", s.box_dim);
  echo.add("title-dim", s.title_dim);
  echo.add("seed", s.seed);
  echo.add("val-fraction", o.val_fraction);
  echo.add("test-fraction", o.test_fraction);
  echo.add("format", o.format);
  write_text(fs::path(o.out) / "config.ini", echo.str());

  out << "wrote " << bundle.train.size() << "/" << bundle.val.size() << "/" << bundle.test.size()
      << " train/val/test products to " << o.out << " (" << bundle.provenance << ")\n";
  return kExitOk;
}

// train

struct TrainOptions {
  std::string variant;
  std::string baseline;
  std::string data;
  std::string out;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  double lr = 1e-4;
  double lr_title_proj = 1e-4;
  std::uint64_t seed = 0;
  bool gallery_only_train = false;
  double clip_norm = 0;
  int threads = 1;
  ModelConfig graph;
  ContrastiveConfig contrastive;
};

void register_train(CLI::App& app, TrainOptions& o) {
  auto* cmd = app.add_subcommand("train", "Train a graph model or the contrastive baseline");
  auto* variant = cmd->add_option("--variant", o.variant, "ng, icfs, pcfs or pdfs");
  auto* baseline = cmd->add_option("--baseline", o.baseline, "contrastive");
  variant->excludes(baseline);
  cmd->add_option("--data", o.data, "Dataset bundle directory")->required();
  cmd->add_option("--out", o.out, "Run directory")->required();
  cmd->add_option("--epochs", o.epochs, "Epochs (25 graph, 35 contrastive)");
  cmd->add_option("--batch-size", o.batch_size, "Products (graph) or pairs (contrastive) per batch; 6 / 32");
  cmd->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--lr-title-proj", o.lr_title_proj, "Learning rate of the title projection")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Seed for initialization and batch order")->capture_default_str();
  cmd->add_flag("--gallery-only-train", o.gallery_only_train, "Train with titles zeroed");
  cmd->add_option("--clip-norm", o.clip_norm, "Clip the gradient norm to this value; 0 disables")
      ->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads; results are reproducible per thread count")
      ->capture_default_str();
  auto& g = o.graph;
  cmd->add_option("--text-dim", g.text_dim, "Projected title length")->capture_default_str();
  cmd->add_option("--hidden-dim", g.hidden_dim, "Graph learner hidden width")->capture_default_str();
  cmd->add_option("--embed-dim", g.embed_dim, "Graph learner output width")->capture_default_str();
  cmd->add_option("--head-dim", g.head_dim, "Decoupled head width (pdfs)")->capture_default_str();
  cmd->add_option("--node-dim", g.node_dim, "Feature updater width")->capture_default_str();
  cmd->add_option("--leaky-slope", g.leaky_slope, "Feature updater negative slope")->capture_default_str();
  cmd->add_flag("--learner-relu-both", g.learner_relu_both, "ReLU after both learner layers");
  cmd->add_flag("--classifier-raw-title", g.classifier_raw_title, "Classifier reads the raw title");
  cmd->add_flag("--adjacency-row-softmax", g.adjacency_row_softmax, "Row-softmax the adjacency");
  cmd->add_flag("--zero-title-after-projection", g.zero_title_after_projection,
                "Gallery-only zeroes the projected title instead of the raw one");
  auto& c = o.contrastive;
  cmd->add_option("--contrastive-dim", c.embed_dim, "Contrastive embedding width")->capture_default_str();
  cmd->add_option("--margin", c.margin, "Contrastive margin")->capture_default_str();
  cmd->add_option("--eval-threshold", c.eval_threshold, "Contrastive positive distance threshold")
      ->capture_default_str();
}

void write_log_line(std::ostream& log, const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["mean_loss"] = e.mean_loss;
  j["val_product_accuracy"] = e.val_product_accuracy;
  log << j.dump() << "\n" << std::flush;
}

int cmd_train(TrainOptions o, std::ostream& out, std::ostream& err) {
  if (o.variant.empty() == o.baseline.empty()) {
    throw ConfigError("variant", "give exactly one of --variant or --baseline");
  }
  if (!o.baseline.empty() && o.baseline != "contrastive") {
    throw ConfigError("baseline", "unknown baseline '" + o.baseline + "' (contrastive)");
  }
  const std::string name = o.baseline.empty() ? o.variant : o.baseline;
  const ModelKind kind = o.baseline.empty() ? ModelKind::graph : ModelKind::contrastive;
  if (kind == ModelKind::graph) o.graph.variant = parse_variant(o.variant);

  TrainConfig config = default_train_config(kind);
  if (o.epochs) config.epochs = *o.epochs;
  if (o.batch_size) config.batch_size = *o.batch_size;
  config.learning_rate = o.lr;
  config.title_proj_learning_rate = o.lr_title_proj;
  config.seed = o.seed;
  config.gallery_only = o.gallery_only_train;
  config.clip_norm = o.clip_norm;
  config.threads = o.threads;
  config.validate();

  const DatasetBundle bundle = load_bundle(o.data);
  const RecordDims dims = infer_dims(bundle);
  o.graph.box_dim = o.contrastive.box_dim = dims.box_dim;
  o.graph.title_dim = o.contrastive.title_dim = dims.title_dim;
  o.graph.validate();
  o.contrastive.validate();
  TrainedModel model = make_model(name, o.graph, o.contrastive, o.seed);

  const fs::path run = o.out;
  fs::create_directories(run);
  Echo echo("train");
  echo.add(kind == ModelKind::graph ? "variant" : "baseline", name);
  echo.add("data", o.data);
  echo.add("out", o.out);
  echo.add("epochs", config.epochs);
  echo.add("batch-size", config.batch_size);
  echo.add("lr", config.learning_rate);
  echo.add("lr-title-proj", config.title_proj_learning_rate);
  echo.add("seed", config.seed);
  echo.add("gallery-only-train", config.gallery_only);
  echo.add("clip-norm", config.clip_norm);
  echo.add("threads", config.threads);
  const auto& g = o.graph;
  echo.add("text-dim", g.text_dim);
  echo.add("hidden-dim", g.hidden_dim);
  echo.add("embed-dim", g.embed_dim);
  echo.add("head-dim", g.head_dim);
  echo.add("node-dim", g.node_dim);
  echo.add("leaky-slope", g.leaky_slope);
  echo.add("learner-relu-both", g.learner_relu_both);
  echo.add("classifier-raw-title", g.classifier_raw_title);
  echo.add("adjacency-row-softmax", g.adjacency_row_softmax);
  echo.add("zero-title-after-projection", g.zero_title_after_projection);
  echo.add("contrastive-dim", o.contrastive.embed_dim);
  echo.add("margin", o.contrastive.margin);
  echo.add("eval-threshold", o.contrastive.eval_threshold);
  write_text(run / "config.ini", echo.str());

  std::ofstream log(run / "log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot open '" + (run / "log.jsonl").string() + "' for writing");
  out << "training " << name << " on " << bundle.train.size() << " products (" << config.epochs << " epochs, batch "
      << config.batch_size << ")\n";
  TrainResult result;
  try {
    result = train(model, bundle.train, bundle.val, config, [&](const EpochLog& e) {
      write_log_line(log, e);
      char line[128];
      std::snprintf(line, sizeof line, "epoch %3d  loss %.6f  val product accuracy %.4f\n", e.epoch, e.mean_loss,
                    e.val_product_accuracy);
      out << line << std::flush;
    });
  } catch (const TrainingDiverged& e) {
    write_text(run / "abort.txt", std::string(e.what()) + "\n");
    err << "mpd: training aborted: " << e.what() << "\n";
    return kExitRuntime;
  }
  save_snapshot(result.model, run / "snapshot");
  out << "best epoch " << result.best_epoch << "; snapshot written to " << (run / "snapshot").string() << "\n";
  return kExitOk;
}

// eval / predict

struct InputOptions {
  std::string snapshot;
  std::string data;
  std::string split = "test";
  std::string input;
  bool gallery_only = false;
  int threads = 1;
};

void register_input(CLI::App* cmd, InputOptions& o) {
  cmd->add_option("--snapshot", o.snapshot, "Trained model snapshot")->required();
  auto* data = cmd->add_option("--data", o.data, "Dataset bundle directory");
  auto* input = cmd->add_option("--input", o.input, "Single dataset file (.jsonl or .mpdg)");
  data->excludes(input);
  cmd->add_option("--split", o.split, "Bundle split: train, val or test")->capture_default_str();
  cmd->add_flag("--gallery-only", o.gallery_only, "Zero every title");
  cmd->add_option("--threads", o.threads, "Worker threads")->capture_default_str();
}

void echo_input(Echo& echo, const InputOptions& o) {
  echo.add("snapshot", o.snapshot);
  if (!o.data.empty()) {
    echo.add("data", o.data);
    echo.add("split", o.split);
  } else {
    echo.add("input", o.input);
  }
  echo.add("gallery-only", o.gallery_only);
  echo.add("threads", o.threads);
}

std::vector<ProductRecord> load_inputs(const InputOptions& o, const TrainedModel& model) {
  if (o.threads < 1) throw ConfigError("threads", "must be >= 1");
  if (o.data.empty() == o.input.empty()) throw ConfigError("data", "give exactly one of --data or --input");
  if (!o.data.empty()) {
    DatasetBundle bundle = load_bundle(o.data);
    if (o.split == "train") return std::move(bundle.train);
    if (o.split == "val") return std::move(bundle.val);
    if (o.split == "test") return std::move(bundle.test);
    throw ConfigError("split", "unknown split '" + o.split + "' (train, val, test)");
  }
  RecordDims dims;
  dims.box_dim = model.kind == ModelKind::graph ? model.graph.box_dim : model.contrastive.box_dim;
  dims.title_dim = model.kind == ModelKind::graph ? model.graph.title_dim : model.contrastive.title_dim;
  LoadResult loaded = load_products(o.input, dims);
  if (!loaded.rejections.empty()) {
    throw FormatError("'" + o.input + "' has rejected records:\n" + describe(loaded.rejections));
  }
  return std::move(loaded.products);
}

struct EvalOptions {
  InputOptions input;
  std::string variant;
  std::string report;
  std::string curve;
};

void register_eval(CLI::App& app, EvalOptions& o) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a snapshot on labeled data");
  register_input(cmd, o.input);
  cmd->add_option("--variant", o.variant, "Expected model (ng, icfs, pcfs, pdfs, contrastive)");
  cmd->add_option("--report", o.report, "Write the metrics report (JSON) here");
  cmd->add_option("--curve", o.curve, "Write the accuracy-by-size curve (CSV) here");
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const TrainedModel model = load_snapshot(o.input.snapshot);
  if (!o.variant.empty()) {
    std::string wanted = o.variant;
    std::transform(wanted.begin(), wanted.end(), wanted.begin(), [](unsigned char c) { return std::tolower(c); });
    if (wanted != model.name()) {
      throw std::invalid_argument("variant mismatch: snapshot holds '" + model.name() + "', requested '" +
                                  o.variant + "'");
    }
  }
  const auto products = load_inputs(o.input, model);
  const MetricsReport report =
      evaluate(model, products, o.input.gallery_only ? Condition::gallery_only : Condition::normal, o.input.threads);
  const std::string json = to_json(report) + "\n";
  out << json;
  Echo echo("eval");
  echo_input(echo, o.input);
  if (!o.variant.empty()) echo.add("variant", o.variant);
  if (!o.report.empty()) {
    echo.add("report", o.report);
    write_text(o.report, json);
  }
  if (!o.curve.empty()) {
    echo.add("curve", o.curve);
    write_text(o.curve, curve_csv(report));
  }
  if (!o.report.empty()) write_text(sibling(o.report, ".config.ini"), echo.str());
  if (!o.curve.empty()) write_text(sibling(o.curve, ".config.ini"), echo.str());
  return kExitOk;
}

struct PredictOptions {
  InputOptions input;
  std::string out;
};

void register_predict(CLI::App& app, PredictOptions& o) {
  auto* cmd = app.add_subcommand("predict", "Rank every product's boxes with a snapshot");
  register_input(cmd, o.input);
  cmd->add_option("--out", o.out, "Predictions file (JSONL)")->required();
}

int cmd_predict(const PredictOptions& o, std::ostream& out) {
  const TrainedModel model = load_snapshot(o.input.snapshot);
  const auto products = load_inputs(o.input, model);
  const auto predictions = predict_all(model, products, o.input.gallery_only, o.input.threads);
  const bool distance = model.kind == ModelKind::contrastive;
  std::string text;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    nlohmann::ordered_json j;
    j["product_id"] = p.product_id;
    j["model"] = model.name();
    j["title_used"] = !o.input.gallery_only && products[i].raw_title.has_value();
    j["score"] = distance ? "distance" : "probability";
    nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < p.ranking.size(); ++r) {
      const auto& node = p.nodes[p.ranking[r]];
      nlohmann::ordered_json entry;
      entry["rank"] = r + 1;
      entry["index"] = node.index;
      entry["image_id"] = node.image_id;
      entry["box_id"] = node.box_id;
      if (std::isfinite(node.score)) {
        entry["score"] = node.score;
      } else {
        entry["score"] = nullptr;
      }
      entry["predicted"] = node.predicted;
      if (node.truth) entry["label"] = *node.truth;
      ranking.push_back(std::move(entry));
    }
    j["ranking"] = std::move(ranking);
    text += j.dump() + "\n";
  }
  write_text(o.out, text);
  Echo echo("predict");
  echo_input(echo, o.input);
  echo.add("out", o.out);
  write_text(sibling(o.out, ".config.ini"), echo.str());
  out << "wrote predictions for " << predictions.size() << " products to " << o.out << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Main-product detection on gallery box embeddings", "mpd");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a key = value file with a [command] section; flags win");
  GenOptions gen;
  TrainOptions train_options;
  EvalOptions eval;
  PredictOptions predict;
  register_gen(app, gen);
  register_train(app, train_options);
  register_eval(app, eval);
  register_predict(app, predict);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("gen")) return cmd_gen(gen, out);
    if (app.got_subcommand("train")) return cmd_train(train_options, out, err);
    if (app.got_subcommand("eval")) return cmd_eval(eval, out);
    if (app.got_subcommand("predict")) return cmd_predict(predict, out);
  } catch (const ConfigError& e) {
    err << "mpd: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "mpd: invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "mpd: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace mpd::cli
