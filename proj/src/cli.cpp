#include "clustertab/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "clustertab/errors.hpp"
#include "clustertab/ingest.hpp"
#include "clustertab/metrics.hpp"
#include "clustertab/model.hpp"
#include "clustertab/parallel.hpp"
#include "clustertab/postprocess.hpp"
#include "clustertab/render.hpp"
#include "clustertab/synthgen.hpp"
#include "clustertab/tokenizer.hpp"
#include "clustertab/trainer.hpp"

namespace clustertab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// A subcommand whose settings resolve as defaults < config file < flags.
struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::vector<std::function<void(json&)>> overrides;
};

Command make_command(CLI::App& root, const std::string& name, const std::string& help) {
  Command c;
  c.app = root.add_subcommand(name, help);
  return c;
}

template <class T>
void bind(Command& cmd, const std::string& flag, const std::string& pointer, const std::string& help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = cmd.app->add_option(flag, *value, help);
  cmd.overrides.push_back([opt, value, pointer](json& j) {
    if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
  });
}

void bind_flag(Command& cmd, const std::string& flag, const std::string& pointer, const std::string& help) {
  auto value = std::make_shared<bool>(false);
  CLI::Option* opt = cmd.app->add_flag(flag, *value, help);
  cmd.overrides.push_back([opt, value, pointer](json& j) {
    if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
  });
}

void add_config_option(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON config file; flags given on the command line take precedence");
}

void merge_checked(json& base, const json& incoming, const std::string& path) {
  if (!incoming.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be a JSON object");
  for (auto it = incoming.begin(); it != incoming.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && it->is_object()) merge_checked(slot, *it, key);
    else slot = *it;
  }
}

json resolve(const Command& cmd, json defaults) {
  if (!cmd.config_path.empty()) merge_checked(defaults, read_json_file(cmd.config_path), "");
  for (const auto& o : cmd.overrides) o(defaults);
  return defaults;
}

template <class T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string require_path(const json& j, const std::string& key) {
  std::string v = get<std::string>(j, key);
  if (v.empty()) throw ConfigError("missing required setting '" + key + "' (flag --" + key + ")");
  return v;
}

struct NamedPage {
  std::string name;
  AnnotatedPage page;
};

std::vector<NamedPage> load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidInput(dir.string() + ": not a directory");
  std::vector<NamedPage> out;
  for (const auto& p : list_page_files(dir)) out.push_back({p.stem().string(), load_annotated_page(p)});
  return out;
}

std::vector<AnnotatedPage> pages_only(std::vector<NamedPage> named) {
  std::vector<AnnotatedPage> out;
  out.reserve(named.size());
  for (auto& n : named) out.push_back(std::move(n.page));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

json thresholds_default() {
  json t = json::object();
  for (ClassId c : kAllClasses) t[std::string(to_string(c))] = nullptr;
  return t;
}

DecodeOptions decode_options(const json& cfg, int model_max) {
  DecodeOptions opts;
  const double k = get<double>(cfg, "threshold");
  if (!(k > 0 && k < 1)) throw ConfigError("threshold must lie in (0,1)");
  opts.set_threshold(k);
  const json& per = cfg.at("thresholds");
  for (ClassId c : kAllClasses) {
    const json& v = per.at(std::string(to_string(c)));
    if (v.is_null()) continue;
    if (!v.is_number() || !(v.get<double>() > 0 && v.get<double>() < 1))
      throw ConfigError("thresholds." + std::string(to_string(c)) + " must be a number in (0,1)");
    opts.threshold[c] = v.get<double>();
  }
  int max_len = get<int>(cfg, "max_seq_len");
  if (max_len < 0) throw ConfigError("max_seq_len must be non-negative");
  if (max_len == 0 || (model_max > 0 && max_len > model_max)) max_len = model_max > 0 ? model_max : 1000;
  opts.max_seq_len = max_len;
  return opts;
}

// Loads model + vocab, or nothing in oracle mode.
struct Predictor {
  std::unique_ptr<Model> model;
  Vocabulary vocab;
  bool oracle = false;

  ProbabilityProvider provider(const AnnotatedPage& page) const {
    if (oracle) return oracle_provider(page.annotation);
    return model_provider(*model, vocab);
  }
  int max_len() const { return model ? model->config().max_seq_len : 0; }
};

Predictor load_predictor(const json& cfg) {
  Predictor p;
  p.oracle = get<bool>(cfg, "oracle");
  if (p.oracle) return p;
  const fs::path model_path = require_path(cfg, "model");
  p.model = std::make_unique<Model>(load_model(model_path));
  std::string vocab_path = get<std::string>(cfg, "vocab");
  if (vocab_path.empty()) vocab_path = (model_path.parent_path() / "vocab.txt").string();
  p.vocab = Vocabulary::load(vocab_path);
  if (p.vocab.size() != p.model->config().vocab_size)
    throw ConfigError("vocabulary " + vocab_path + " has " + std::to_string(p.vocab.size()) +
                      " ids but the model expects " + std::to_string(p.model->config().vocab_size));
  return p;
}

// build-vocab

void setup_build_vocab(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                       std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "build-vocab", "Build a frequency-ranked word vocabulary"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--input", "/input", "Directory of unified-format page files");
  bind<std::string>(*cmd, "--out", "/out", "Output vocabulary file");
  bind<int>(*cmd, "--max-size", "/max_size", "Maximum number of tokens (excluding UNK)");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, {{"input", ""}, {"out", "vocab.txt"}, {"max_size", kDefaultVocabSize}});
    const int max_size = get<int>(cfg, "max_size");
    if (max_size < 0) throw ConfigError("max_size must be non-negative");
    std::vector<std::string> corpus;
    for (const auto& np : load_dir(require_path(cfg, "input")))
      for (const auto& w : np.page.page.words) corpus.push_back(normalize_word(w.text));
    Vocabulary v = build_vocab(corpus, max_size);
    v.save(get<std::string>(cfg, "out"));
    out << "vocabulary: " << v.tokens().size() << " tokens + UNK from " << corpus.size() << " words -> "
        << get<std::string>(cfg, "out") << "\n";
    return kExitOk;
  });
}

// gen-data

json gen_defaults(const std::string& preset) {
  GenConfig g;
  if (preset == "desk") g = GenConfig::desk();
  else if (preset != "default") throw ConfigError("unknown gen-data preset '" + preset + "' (default, desk)");
  return {{"out", ""}, {"pages", 100}, {"preset", preset}, {"gen", to_json(g)}};
}

void setup_gen_data(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                    std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "gen-data", "Generate a synthetic annotated split"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--out", "/out", "Output directory");
  bind<int>(*cmd, "--pages", "/pages", "Number of pages");
  bind<std::string>(*cmd, "--preset", "/preset", "Generator preset: default or desk");
  bind<std::uint64_t>(*cmd, "--seed", "/gen/seed", "Generator seed");
  bind<int>(*cmd, "--max-words", "/gen/max_words", "Redraw pages with more words than this (0 = no limit)");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, gen_defaults("default"));
    const std::string preset = get<std::string>(cfg, "preset");
    if (preset != "default") cfg = resolve(*cmd, gen_defaults(preset));
    const GenConfig g = gen_config_from_json(cfg.at("gen"));
    const int pages = get<int>(cfg, "pages");
    const std::string dir = require_path(cfg, "out");
    generate_split(g, pages, dir);
    out << "generated " << pages << " pages (config " << config_hash(g) << ") -> " << dir << "\n";
    return kExitOk;
  });
}

// convert

void setup_convert(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                   std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "convert", "Convert external annotations to the unified format"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--format", "/format", "pascal-voc or html-cells");
  bind<std::string>(*cmd, "--input", "/input", "Input directory");
  bind<std::string>(*cmd, "--output", "/output", "Output directory");
  bind_flag(*cmd, "--strict", "/strict", "Fail records that raise warnings");
  bind<std::string>(*cmd, "--dataset", "/dataset", "Dataset name; fintabnet masks the header class");
  bind<int>(*cmd, "--jobs", "/jobs", "Worker threads (default: CLUSTERTAB_THREADS or 1)");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, {{"format", ""}, {"input", ""}, {"output", ""}, {"strict", false}, {"dataset", ""},
                              {"jobs", default_jobs()}});
    ConvertOptions opts;
    opts.strict = get<bool>(cfg, "strict");
    opts.dataset = get<std::string>(cfg, "dataset");
    opts.jobs = get<int>(cfg, "jobs");
    const std::string format = get<std::string>(cfg, "format");
    ConvertSummary s;
    if (format == "pascal-voc") s = convert_pascal_voc(require_path(cfg, "input"), require_path(cfg, "output"), opts);
    else if (format == "html-cells")
      s = convert_html_cells(require_path(cfg, "input"), require_path(cfg, "output"), opts);
    else throw ConfigError("unknown format '" + format + "' (pascal-voc, html-cells)");
    out << to_json(s).dump(1) << "\n";
    return opts.strict && s.skipped > 0 ? kExitValidation : kExitOk;
  });
}

// train

json train_defaults(const std::string& preset) {
  ModelConfig m;
  TrainConfig t;
  if (preset == "full") {
    t = TrainConfig::full();
  } else if (preset == "desk") {
    m = ModelConfig::desk();
    t = TrainConfig::desk();
  } else if (preset == "overfit") {
    m = ModelConfig::tiny();
    t = TrainConfig::overfit();
  } else {
    throw ConfigError("unknown train preset '" + preset + "' (full, desk, overfit)");
  }
  return {{"data", ""},      {"val", ""},      {"vocab", ""},     {"out", ""},
          {"resume", ""},    {"preset", preset}, {"init_seed", 0}, {"model", to_json(m)},
          {"train", to_json(t)}};
}

void setup_train(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                 std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "train", "Train the clustering model"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--data", "/data", "Training pages directory");
  bind<std::string>(*cmd, "--val", "/val", "Validation pages directory (optional)");
  bind<std::string>(*cmd, "--vocab", "/vocab", "Vocabulary file; built from the training data when absent");
  bind<std::string>(*cmd, "--out", "/out", "Output directory for checkpoints and logs");
  bind<std::string>(*cmd, "--resume", "/resume", "Training checkpoint to resume from");
  bind<std::string>(*cmd, "--preset", "/preset", "full, desk or overfit");
  bind<std::uint64_t>(*cmd, "--init-seed", "/init_seed", "Parameter initialisation seed");
  bind<std::uint64_t>(*cmd, "--seed", "/train/seed", "Batch order and dropout seed");
  bind<int>(*cmd, "--batch-size", "/train/batch_size", "Pages per step");
  bind<int>(*cmd, "--seq-len", "/train/seq_len", "Words kept per page");
  bind<double>(*cmd, "--lr1", "/train/lr_phase1", "Phase-1 learning rate");
  bind<double>(*cmd, "--lr2", "/train/lr_phase2", "Phase-2 learning rate");
  bind<int>(*cmd, "--epochs1", "/train/epochs_phase1", "Phase-1 epochs");
  bind<int>(*cmd, "--epochs2", "/train/epochs_phase2", "Phase-2 epochs");
  bind<int>(*cmd, "--steps-per-epoch", "/train/steps_per_epoch", "Optimiser steps per epoch");
  bind<int>(*cmd, "--checkpoint-every", "/train/checkpoint_every", "Steps between checkpoints (0 = end only)");
  bind<int>(*cmd, "--val-pages", "/train/val_pages", "Validation pages scored per epoch (0 = all)");
  bind<int>(*cmd, "--layers", "/model/num_layers", "Encoder layers");
  bind<int>(*cmd, "--d-model", "/model/d_model", "Model width");
  bind<int>(*cmd, "--dff", "/model/dff", "Feed-forward width");
  bind<int>(*cmd, "--heads", "/model/num_heads", "Attention heads");
  bind<int>(*cmd, "--c-out", "/model/c_out", "Head output width (Q and K get half each)");
  bind<double>(*cmd, "--dropout", "/model/dropout", "Dropout rate");
  bind<double>(*cmd, "--coord-sine", "/model/coord_sine", "Amplitude of sinusoidal coordinate-table init (0 = off)");
  bind<int>(*cmd, "--max-seq-len", "/model/max_seq_len", "Longest sequence the model accepts");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, train_defaults("desk"));
    const std::string preset = get<std::string>(cfg, "preset");
    if (preset != "desk") cfg = resolve(*cmd, train_defaults(preset));
    const fs::path out_dir = require_path(cfg, "out");
    fs::create_directories(out_dir);

    std::vector<AnnotatedPage> train_pages = pages_only(load_dir(require_path(cfg, "data")));
    Vocabulary vocab;
    const std::string vocab_path = get<std::string>(cfg, "vocab");
    if (!vocab_path.empty() && fs::exists(vocab_path)) {
      vocab = Vocabulary::load(vocab_path);
    } else {
      std::vector<std::string> corpus;
      for (const auto& p : train_pages)
        for (const auto& w : p.page.words) corpus.push_back(normalize_word(w.text));
      vocab = build_vocab(corpus);
    }
    vocab.save(out_dir / "vocab.txt");

    json model_json = cfg.at("model");
    model_json["vocab_size"] = vocab.size();
    const ModelConfig mc = model_config_from_json(model_json);
    const TrainConfig tc = train_config_from_json(cfg.at("train"));
    if (tc.seq_len > mc.max_seq_len)
      throw ConfigError("train.seq_len " + std::to_string(tc.seq_len) + " exceeds model.max_seq_len " +
                        std::to_string(mc.max_seq_len));

    Model model(mc, get<std::uint64_t>(cfg, "init_seed"));
    std::vector<TrainSample> samples;
    samples.reserve(train_pages.size());
    for (const auto& p : train_pages) samples.push_back(make_sample(p, vocab, tc.seq_len));
    Trainer trainer(model, tc, std::move(samples));
    const std::string val_dir = get<std::string>(cfg, "val");
    if (!val_dir.empty()) trainer.set_validation(pages_only(load_dir(val_dir)), &vocab);

    const fs::path log_path = out_dir / "train_log.jsonl";
    const std::string resume = get<std::string>(cfg, "resume");
    if (!resume.empty()) {
      trainer.resume(resume);
    } else {
      std::ofstream truncate(log_path, std::ios::trunc);
    }
    trainer.set_log_path(log_path);
    trainer.set_checkpoint_path(out_dir / "checkpoint.ckpt");
    trainer.set_epoch_callback([&out](const EpochLog& e) { out << to_json(e).dump() << "\n" << std::flush; });
    json effective = cfg;
    effective["model"] = to_json(mc);
    effective["train"] = to_json(tc);
    write_json_file(effective, out_dir / "config.json");
    out << "training " << model.parameter_count(false) << " parameters (+"
        << model.parameter_count(true) - model.parameter_count(false) << " embedding) on "
        << train_pages.size() << " pages for " << tc.total_steps() << " steps\n";
    trainer.run();
    save_model(out_dir / "model.ckpt", model, {{"train_config", to_json(tc)}, {"steps", trainer.global_step()}});
    out << "saved " << (out_dir / "model.ckpt").string() << "\n";
    return kExitOk;
  });
}

// predict

json predict_defaults() {
  return {{"model", ""},       {"vocab", ""}, {"input", ""},       {"output", ""},
          {"threshold", kDefaultThreshold}, {"thresholds", thresholds_default()},
          {"max_seq_len", 0},  {"jobs", default_jobs()}, {"oracle", false}};
}

void bind_predict_common(Command& cmd) {
  bind<std::string>(cmd, "--model", "/model", "Model checkpoint");
  bind<std::string>(cmd, "--vocab", "/vocab", "Vocabulary file (default: vocab.txt beside the model)");
  bind<std::string>(cmd, "--input", "/input", "Directory of unified-format page files");
  bind<int>(cmd, "--max-seq-len", "/max_seq_len", "Window length for long pages (0 = model maximum)");
  bind<int>(cmd, "--jobs", "/jobs", "Worker threads (default: CLUSTERTAB_THREADS or 1)");
  bind_flag(cmd, "--oracle", "/oracle", "Use each page's ground-truth adjacency instead of a model");
}

void setup_predict(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                   std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "predict", "Decode clusters for every page"));
  add_config_option(*cmd);
  bind_predict_common(*cmd);
  bind<std::string>(*cmd, "--output", "/output", "Prediction output directory");
  bind<double>(*cmd, "--threshold", "/threshold", "Strong-connection threshold k");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, predict_defaults());
    const Predictor pred = load_predictor(cfg);
    const DecodeOptions opts = decode_options(cfg, pred.max_len());
    const auto pages = load_dir(require_path(cfg, "input"));
    const fs::path out_dir = require_path(cfg, "output");
    fs::create_directories(out_dir);
    std::vector<json> results(pages.size());
    parallel_for(pages.size(), get<int>(cfg, "jobs"), [&](std::size_t i) {
      const auto& p = pages[i].page;
      results[i] = prediction_to_json(predict_page(p.page, pred.provider(p), opts),
                                      static_cast<int>(p.page.words.size()));
    });
    for (std::size_t i = 0; i < pages.size(); ++i) write_json_file(results[i], out_dir / (pages[i].name + ".json"));
    out << "predicted " << pages.size() << " pages -> " << out_dir.string() << "\n";
    return kExitOk;
  });
}

// evaluate

void setup_evaluate(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                    std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "evaluate", "Score predictions against annotations"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--pred", "/pred", "Prediction directory");
  bind<std::string>(*cmd, "--gt", "/gt", "Annotation directory");
  bind<std::string>(*cmd, "--out", "/out", "Report JSON path (optional)");
  bind<std::string>(*cmd, "--csv", "/csv", "Per-page CSV path (optional)");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, {{"pred", ""}, {"gt", ""}, {"out", ""}, {"csv", ""}});
    const fs::path pred_dir = require_path(cfg, "pred");
    const auto pages = load_dir(require_path(cfg, "gt"));
    Evaluator ev;
    for (const auto& np : pages) {
      const fs::path pf = pred_dir / (np.name + ".json");
      if (!fs::exists(pf)) throw InvalidInput("no prediction for page '" + np.name + "' in " + pred_dir.string());
      ClusterPrediction p = prediction_from_json(read_json_file(pf));
      for (ClassId c : kAllClasses)
        for (const auto& cl : p[c].clusters)
          for (int w : cl)
            if (w < 0 || w >= static_cast<int>(np.page.page.words.size()))
              throw InvalidInput(pf.string() + ": word index " + std::to_string(w) + " out of range");
      ev.add_page(np.page, p, np.name);
    }
    const EvalReport report = ev.report();
    const json j = to_json(report);
    if (!get<std::string>(cfg, "out").empty()) write_json_file(j, get<std::string>(cfg, "out"));
    if (!get<std::string>(cfg, "csv").empty()) write_text(get<std::string>(cfg, "csv"), page_scores_csv(report));
    out << j.dump(1) << "\n";
    return kExitOk;
  });
}

// sweep-threshold

void setup_sweep(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                 std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(
      make_command(root, "sweep-threshold", "Dice and AP50 of decoded predictions over a grid of thresholds"));
  add_config_option(*cmd);
  bind_predict_common(*cmd);
  bind<std::string>(*cmd, "--grid", "/grid", "start:stop:step, inclusive");
  bind<std::string>(*cmd, "--out", "/out", "CSV output path (optional)");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json defaults = predict_defaults();
    defaults.erase("output");
    defaults["grid"] = "0.5:0.95:0.05";
    defaults["out"] = "";
    json cfg = resolve(*cmd, defaults);
    const std::vector<double> grid = parse_grid(get<std::string>(cfg, "grid"));
    const Predictor pred = load_predictor(cfg);
    const auto pages = load_dir(require_path(cfg, "input"));
    std::vector<ProbabilityProvider> providers;
    for (const auto& np : pages) providers.push_back(caching_provider(pred.provider(np.page)));

    std::ostringstream csv;
    csv << "k,dice,ap50";
    for (ClassId c : kAllClasses) csv << ",dice_" << to_string(c);
    for (ClassId c : kAllClasses) csv << ",ap50_" << to_string(c);
    csv << "\n";
    for (double k : grid) {
      json kcfg = cfg;
      kcfg["threshold"] = k;
      const DecodeOptions opts = decode_options(kcfg, pred.max_len());
      std::vector<ClusterPrediction> preds(pages.size());
      parallel_for(pages.size(), get<int>(cfg, "jobs"),
                   [&](std::size_t i) { preds[i] = predict_page(pages[i].page.page, providers[i], opts); });
      Evaluator ev;
      for (std::size_t i = 0; i < pages.size(); ++i) ev.add_page(pages[i].page, preds[i], pages[i].name);
      const EvalReport r = ev.report();
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", k);
      csv << buf << ',' << r.mean_dice(kAllClasses) << ',' << r.mean_ap50(kAllClasses);
      for (ClassId c : kAllClasses) csv << ',' << r.classes[c].dice;
      for (ClassId c : kAllClasses) csv << ',' << (r.classes[c].ap.defined ? r.classes[c].ap.ap50 : 0.0);
      csv << "\n";
    }
    if (!get<std::string>(cfg, "out").empty()) write_text(get<std::string>(cfg, "out"), csv.str());
    out << csv.str();
    return kExitOk;
  });
}

// render

void setup_render(CLI::App& root, std::vector<std::function<int(std::ostream&)>>& runners,
                  std::vector<CLI::App*>& apps) {
  auto cmd = std::make_shared<Command>(make_command(root, "render", "Draw a page and its clusters as SVG"));
  add_config_option(*cmd);
  bind<std::string>(*cmd, "--page", "/page", "Unified-format page file");
  bind<std::string>(*cmd, "--pred", "/pred", "Prediction file (default: the page's own labels)");
  bind<std::string>(*cmd, "--out", "/out", "SVG output path");
  apps.push_back(cmd->app);
  runners.push_back([cmd](std::ostream& out) {
    json cfg = resolve(*cmd, {{"page", ""}, {"pred", ""}, {"out", ""}});
    const AnnotatedPage page = load_annotated_page(require_path(cfg, "page"));
    const std::string pred_path = get<std::string>(cfg, "pred");
    ClusterPrediction p = pred_path.empty() ? clusters_from_labels(page) : prediction_from_json(read_json_file(pred_path));
    const int n = static_cast<int>(page.page.words.size());
    for (ClassId c : kAllClasses)
      for (const auto& cl : p[c].clusters)
        for (int w : cl)
          if (w < 0 || w >= n) throw InvalidInput("prediction word index " + std::to_string(w) + " out of range");
    const std::string out_path = require_path(cfg, "out");
    write_text(out_path, render_overlay(page.page, p));
    out << "wrote " << out_path << "\n";
    return kExitOk;
  });
}

}  // namespace

std::vector<double> parse_grid(const std::string& spec) {
  double a, b, step;
  char c1, c2;
  std::istringstream in(spec);
  if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(in >> std::ws).eof())
    throw ConfigError("grid '" + spec + "' must look like start:stop:step");
  if (!(step > 0) || b < a) throw ConfigError("grid '" + spec + "' needs step > 0 and stop >= start");
  std::vector<double> out;
  const long n = static_cast<long>(std::floor((b - a) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(std::round((a + static_cast<double>(i) * step) * 1e12) / 1e12);
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Table structure recognition by supervised clustering of OCR words", "clustertab"};
  app.require_subcommand(1);
  std::vector<std::function<int(std::ostream&)>> runners;
  std::vector<CLI::App*> apps;
  setup_build_vocab(app, runners, apps);
  setup_gen_data(app, runners, apps);
  setup_convert(app, runners, apps);
  setup_train(app, runners, apps);
  setup_predict(app, runners, apps);
  setup_evaluate(app, runners, apps);
  setup_sweep(app, runners, apps);
  setup_render(app, runners, apps);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }
  try {
    for (std::size_t i = 0; i < apps.size(); ++i)
      if (apps[i]->parsed()) return runners[i](out);
    err << "no subcommand given\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidAnnotation& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace clustertab
