#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"
#include "clustertab/labels.hpp"
#include "clustertab/metrics.hpp"
#include "clustertab/model.hpp"
#include "clustertab/nn/tape.hpp"
#include "clustertab/tokenizer.hpp"

namespace clustertab {

/// Model input and targets for one page, truncated to the training length.
struct TrainSample {
  std::vector<TokenFeatures> features;
  LabelSet labels;
};

/// Canonicalises the page, keeps the first min(words, seq_len) words and builds
/// labels without padding (seq_len of the result = kept word count).
TrainSample make_sample(const AnnotatedPage& page, const Vocabulary& vocab, int seq_len);

/// Summed BCE over unpadded entries of unmasked classes, recorded on the tape.
/// Masked classes are left out of the graph entirely.
nn::Var bce_loss(nn::Tape& tape, const PerClass<nn::Var>& logits, const LabelSet& labels);
double bce_loss(const LogitSet& logits, const LabelSet& labels);
/// Number of entries contributing to bce_loss.
long long loss_entry_count(const LabelSet& labels);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<nn::Tensor> m;
  std::vector<nn::Tensor> v;
  long long t = 0;

  static AdamState zeros_like(const nn::ParamStore& params);
};

/// One bias-corrected Adam update of every parameter from its accumulated gradient.
void adam_step(nn::ParamStore& params, AdamState& state, double lr, const AdamConfig& config = {});

struct TrainConfig {
  int batch_size = 8;
  int seq_len = 1000;
  double lr_phase1 = 1e-4;
  int epochs_phase1 = 100;
  double lr_phase2 = 1e-5;
  int epochs_phase2 = 100;
  int steps_per_epoch = 5000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Steps between checkpoints; 0 writes only at the end.
  int checkpoint_every = 0;
  /// Decoding threshold used for validation Dice.
  double val_threshold = kDefaultThreshold;
  /// Validation pages scored at each epoch end (0 = all given).
  int val_pages = 0;

  long long total_steps() const {
    return static_cast<long long>(epochs_phase1 + epochs_phase2) * steps_per_epoch;
  }
  void validate() const;

  static TrainConfig full();
  /// Short-page preset: seq_len 128, 2 x 3000 steps.
  static TrainConfig desk();
  /// One page, 500 steps at lr 1e-3.
  static TrainConfig overfit();
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Epoch record written to the JSON-lines log.
struct EpochLog {
  int epoch = 0;  // 1-based, counted across phases
  int phase = 1;
  double mean_loss = 0;  // BCE per unmasked matrix entry
  PerClass<double> val_dice{};
  bool has_validation = false;
  double wall_time_s = 0;
};

nlohmann::json to_json(const EpochLog& e);

/// Two-phase Adam training over a fixed sample set. Every random choice
/// (batch order, dropout) is keyed by (seed, global step), so a run resumed
/// from a checkpoint matches the uninterrupted one bit for bit.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, std::vector<TrainSample> samples);

  void set_validation(std::vector<AnnotatedPage> pages, const Vocabulary* vocab);
  void set_log_path(std::filesystem::path path) { log_path_ = std::move(path); }
  void set_checkpoint_path(std::filesystem::path path) { checkpoint_path_ = std::move(path); }
  void set_epoch_callback(std::function<void(const EpochLog&)> cb) { on_epoch_ = std::move(cb); }

  long long global_step() const { return step_; }
  const AdamState& adam() const { return adam_; }
  const std::vector<EpochLog>& history() const { return history_; }

  /// Dataset indices of the batch at a given global step.
  std::vector<std::size_t> batch_indices(long long step) const;
  double learning_rate(long long step) const;

  /// One optimiser step; returns the summed batch loss. Throws TrainingError
  /// on a non-finite loss, naming the step and sample indices.
  double step();
  /// Runs until `stop_at` (default: the end of the schedule), logging at epoch ends.
  void run(std::optional<long long> stop_at = std::nullopt);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimiser state and step counter.
  void resume(const std::filesystem::path& path);

  /// Validation Dice per class on decoded predictions.
  PerClass<double> validate_dice() const;

 private:
  double sample_loss_and_grad(std::size_t index, std::uint64_t dropout_seed);
  void end_epoch();

  Model& model_;
  TrainConfig config_;
  std::vector<TrainSample> samples_;
  std::vector<AnnotatedPage> val_pages_;
  const Vocabulary* vocab_ = nullptr;
  AdamState adam_;
  long long step_ = 0;
  double epoch_loss_ = 0;
  long long epoch_steps_ = 0;
  long long epoch_entries_ = 0;
  double epoch_start_ = 0;
  std::vector<EpochLog> history_;
  std::filesystem::path log_path_;
  std::filesystem::path checkpoint_path_;
  std::function<void(const EpochLog&)> on_epoch_;
};

}  // namespace clustertab
