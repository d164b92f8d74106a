#include "clustertab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "clustertab/errors.hpp"
#include "clustertab/nn/checkpoint.hpp"
#include "clustertab/postprocess.hpp"

namespace clustertab {

using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

constexpr std::uint64_t kDropoutSalt = 0x5eed;
constexpr std::uint64_t kShuffleSalt = 0x5bff1e;

double stable_bce(double x, double y) {
  // max(x,0) - x*y + log(1 + exp(-|x|))
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

TrainSample make_sample(const AnnotatedPage& page, const Vocabulary& vocab, int seq_len) {
  if (seq_len <= 0) throw ConfigError("sequence length must be positive");
  AnnotatedPage canonical = to_canonical(page);
  const int n = std::min(static_cast<int>(canonical.page.words.size()), seq_len);
  canonical.page.words.resize(static_cast<std::size_t>(n));
  TrainSample s;
  s.features = encode_words(canonical.page, vocab);
  s.labels = build_labels(canonical.page, canonical.annotation, n);
  return s;
}

Var bce_loss(Tape& tape, const PerClass<Var>& logits, const LabelSet& labels) {
  const int L = labels.seq_len;
  Tensor weights({L, L}, 0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) weights.at(i, j) = labels.pad_mask[i] && labels.pad_mask[j] ? 1 : 0;
  Var total;
  for (ClassId c : kAllClasses) {
    if (!labels.class_mask[c]) continue;
    const Tensor& lv = tape.value(logits[c]);
    if (lv.rows() != L || lv.cols() != L)
      throw ShapeError("bce_loss: logits " + nn::shape_str(lv.shape()) + " do not match labels of length " +
                       std::to_string(L));
    Tensor targets({L, L}, 0);
    const auto& adj = labels.adjacency[c];
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j) targets.at(i, j) = adj(i, j) ? 1 : 0;
    Var term = tape.bce_with_logits(logits[c], targets, weights);
    total = total.valid() ? tape.add(total, term) : term;
  }
  if (!total.valid()) total = tape.constant(Tensor({1}, 0));
  return total;
}

double bce_loss(const LogitSet& logits, const LabelSet& labels) {
  const int L = labels.seq_len;
  double loss = 0;
  for (ClassId c : kAllClasses) {
    if (!labels.class_mask[c]) continue;
    const auto& m = logits[c];
    if (static_cast<int>(m.rows()) != L || static_cast<int>(m.cols()) != L)
      throw ShapeError("bce_loss: logit matrix does not match label length " + std::to_string(L));
    for (int i = 0; i < L; ++i) {
      if (!labels.pad_mask[i]) continue;
      for (int j = 0; j < L; ++j) {
        if (!labels.pad_mask[j]) continue;
        loss += stable_bce(m(i, j), labels.adjacency[c](i, j) ? 1.0 : 0.0);
      }
    }
  }
  return loss;
}

long long loss_entry_count(const LabelSet& labels) {
  long long real = std::count(labels.pad_mask.begin(), labels.pad_mask.end(), 1);
  long long classes = 0;
  for (ClassId c : kAllClasses) classes += labels.class_mask[c] ? 1 : 0;
  return real * real * classes;
}

AdamState AdamState::zeros_like(const nn::ParamStore& params) {
  AdamState s;
  for (const auto& p : params.all()) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adam_step(nn::ParamStore& params, AdamState& state, double lr, const AdamConfig& config) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: optimiser state does not match the parameter store");
  state.t += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.all()[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.value.size() || v.size() != p.value.size())
      throw ShapeError("adam_step: moment shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<nn::Scalar>(mi);
      v[i] = static_cast<nn::Scalar>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p.value[i] = static_cast<nn::Scalar>(p.value[i] - lr * mhat / (std::sqrt(vhat) + config.epsilon));
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
  if (seq_len < 1) throw ConfigError("train config: seq_len must be at least 1");
  if (!(lr_phase1 > 0) || !(lr_phase2 > 0)) throw ConfigError("train config: learning rates must be positive");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) throw ConfigError("train config: epoch counts must be non-negative");
  if (steps_per_epoch < 1) throw ConfigError("train config: steps_per_epoch must be at least 1");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
    throw ConfigError("train config: Adam betas must lie in [0,1)");
  if (!(adam.epsilon > 0)) throw ConfigError("train config: Adam epsilon must be positive");
  if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be non-negative");
  if (!(val_threshold > 0 && val_threshold < 1)) throw ConfigError("train config: val_threshold must lie in (0,1)");
  if (val_pages < 0) throw ConfigError("train config: val_pages must be non-negative");
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.seq_len = 128;
  c.epochs_phase1 = 6;
  c.epochs_phase2 = 6;
  c.steps_per_epoch = 500;
  c.checkpoint_every = 500;
  c.val_pages = 50;
  return c;
}

TrainConfig TrainConfig::overfit() {
  TrainConfig c;
  c.batch_size = 1;
  c.seq_len = 128;
  c.lr_phase1 = 1e-3;
  c.epochs_phase1 = 1;
  c.epochs_phase2 = 0;
  c.steps_per_epoch = 500;
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"seq_len", c.seq_len},
          {"lr_phase1", c.lr_phase1},
          {"epochs_phase1", c.epochs_phase1},
          {"lr_phase2", c.lr_phase2},
          {"epochs_phase2", c.epochs_phase2},
          {"steps_per_epoch", c.steps_per_epoch},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"val_threshold", c.val_threshold},
          {"val_pages", c.val_pages}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("train config: unknown key '" + it.key() + "'");
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
    c.epochs_phase1 = j.value("epochs_phase1", c.epochs_phase1);
    c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
    c.epochs_phase2 = j.value("epochs_phase2", c.epochs_phase2);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
    c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
    c.adam.epsilon = j.value("adam_epsilon", c.adam.epsilon);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.val_threshold = j.value("val_threshold", c.val_threshold);
    c.val_pages = j.value("val_pages", c.val_pages);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"phase", e.phase}, {"mean_loss", e.mean_loss}};
  nlohmann::json dice = nullptr;
  if (e.has_validation) {
    dice = nlohmann::json::object();
    for (ClassId c : kAllClasses) dice[std::string(to_string(c))] = e.val_dice[c];
  }
  j["val_dice"] = dice;
  j["wall_time_s"] = e.wall_time_s;
  return j;
}

Trainer::Trainer(Model& model, TrainConfig config, std::vector<TrainSample> samples)
    : model_(model), config_(std::move(config)), samples_(std::move(samples)) {
  config_.validate();
  if (samples_.empty()) throw ConfigError("training dataset is empty");
  for (const auto& s : samples_)
    if (s.labels.seq_len > model_.config().max_seq_len)
      throw ConfigError("training sample longer than the model's max_seq_len");
  adam_ = AdamState::zeros_like(model_.params());
  epoch_start_ = now_seconds();
}

void Trainer::set_validation(std::vector<AnnotatedPage> pages, const Vocabulary* vocab) {
  if (config_.val_pages > 0 && pages.size() > static_cast<std::size_t>(config_.val_pages))
    pages.resize(static_cast<std::size_t>(config_.val_pages));
  val_pages_ = std::move(pages);
  vocab_ = vocab;
}

std::vector<std::size_t> Trainer::batch_indices(long long step) const {
  const std::size_t n = samples_.size();
  const long long b = config_.batch_size;
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(b));
  long long cached_pass = -1;
  std::vector<std::size_t> perm(n);
  for (long long k = 0; k < b; ++k) {
    const long long q = step * b + k;
    const long long pass = q / static_cast<long long>(n);
    if (pass != cached_pass) {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(nn::mix_seed(config_.seed, kShuffleSalt, static_cast<std::uint64_t>(pass)));
      // Fisher-Yates with an explicit draw so the order is library-independent.
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
      cached_pass = pass;
    }
    out.push_back(perm[static_cast<std::size_t>(q % static_cast<long long>(n))]);
  }
  return out;
}

double Trainer::learning_rate(long long step) const {
  const long long phase1 = static_cast<long long>(config_.epochs_phase1) * config_.steps_per_epoch;
  return step < phase1 ? config_.lr_phase1 : config_.lr_phase2;
}

double Trainer::sample_loss_and_grad(std::size_t index, std::uint64_t dropout_seed) {
  const TrainSample& s = samples_[index];
  const int L = s.labels.seq_len;
  if (L == 0) return 0.0;
  Tape tape(&model_.params());
  ForwardOptions opts;
  opts.training = true;
  opts.dropout_seed = dropout_seed;
  auto logits = model_.forward_on_tape(tape, s.features, L, opts);
  Var loss = bce_loss(tape, logits, s.labels);
  const double value = tape.value(loss)[0];
  if (!std::isfinite(value)) return value;
  tape.backward(loss);
  return value;
}

double Trainer::step() {
  const auto batch = batch_indices(step_);
  model_.params().zero_grad();
  double total = 0;
  long long entries = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const std::uint64_t q = static_cast<std::uint64_t>(step_) * batch.size() + k;
    const double loss = sample_loss_and_grad(batch[k], nn::mix_seed(config_.seed, kDropoutSalt, q));
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step_ << " in batch [";
      for (std::size_t i = 0; i < batch.size(); ++i) os << (i ? "," : "") << batch[i];
      os << "] (sample " << batch[k] << ")";
      throw TrainingError(os.str());
    }
    total += loss;
    entries += loss_entry_count(samples_[batch[k]].labels);
  }
  adam_step(model_.params(), adam_, learning_rate(step_), config_.adam);
  ++step_;
  epoch_loss_ += total;
  epoch_entries_ += entries;
  ++epoch_steps_;
  return total;
}

PerClass<double> Trainer::validate_dice() const {
  PerClass<double> out{};
  if (val_pages_.empty() || !vocab_) return out;
  Evaluator ev;
  DecodeOptions opts;
  opts.set_threshold(config_.val_threshold);
  opts.max_seq_len = model_.config().max_seq_len;
  auto provider = model_provider(model_, *vocab_);
  for (const auto& p : val_pages_) ev.add_page(p, predict_page(p.page, provider, opts));
  const EvalReport r = ev.report();
  for (ClassId c : kAllClasses) out[c] = r.classes[c].dice;
  return out;
}

void Trainer::end_epoch() {
  EpochLog e;
  e.epoch = static_cast<int>(step_ / config_.steps_per_epoch);
  e.phase = e.epoch <= config_.epochs_phase1 ? 1 : 2;
  e.mean_loss = epoch_entries_ ? epoch_loss_ / static_cast<double>(epoch_entries_) : 0.0;
  if (!val_pages_.empty() && vocab_) {
    e.val_dice = validate_dice();
    e.has_validation = true;
  }
  e.wall_time_s = now_seconds() - epoch_start_;
  history_.push_back(e);
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app);
    if (!out) throw IoError("cannot append to training log " + log_path_.string());
    out << to_json(e).dump() << '\n';
  }
  if (on_epoch_) on_epoch_(e);
  epoch_loss_ = 0;
  epoch_entries_ = 0;
  epoch_steps_ = 0;
  epoch_start_ = now_seconds();
}

void Trainer::run(std::optional<long long> stop_at) {
  const long long end = std::min(stop_at.value_or(config_.total_steps()), config_.total_steps());
  while (step_ < end) {
    step();
    if (step_ % config_.steps_per_epoch == 0) end_epoch();
    if (!checkpoint_path_.empty() && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0)
      save_checkpoint(checkpoint_path_);
  }
  if (!checkpoint_path_.empty()) save_checkpoint(checkpoint_path_);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::vector<nn::NamedTensor> tensors = model_.named_tensors();
  const auto& params = model_.params().all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    tensors.push_back({"adam.m/" + params[k].name, &adam_.m[k]});
    tensors.push_back({"adam.v/" + params[k].name, &adam_.v[k]});
  }
  nlohmann::json meta;
  meta["model_config"] = to_json(model_.config());
  meta["train_config"] = to_json(config_);
  meta["step"] = step_;
  meta["adam_t"] = adam_.t;
  meta["epoch_loss"] = epoch_loss_;
  meta["epoch_steps"] = epoch_steps_;
  meta["epoch_entries"] = epoch_entries_;
  nn::save_checkpoint(path, tensors, meta);
}

void Trainer::resume(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::load_checkpoint(path);
  if (!ck.meta.contains("model_config") || !ck.meta.contains("step"))
    throw ConfigError(path.string() + ": not a training checkpoint");
  if (!(model_config_from_json(ck.meta["model_config"]) == model_.config()))
    throw ConfigError(path.string() + ": checkpoint model config differs from the current model");
  model_.load_tensors(ck.tensors);
  const auto& params = model_.params().all();
  AdamState state = AdamState::zeros_like(model_.params());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto m = ck.tensors.find("adam.m/" + params[k].name);
    auto v = ck.tensors.find("adam.v/" + params[k].name);
    if (m == ck.tensors.end() || v == ck.tensors.end())
      throw ConfigError(path.string() + ": optimiser state missing for '" + params[k].name + "'");
    if (m->second.shape() != params[k].value.shape() || v->second.shape() != params[k].value.shape())
      throw ConfigError(path.string() + ": optimiser state shape mismatch for '" + params[k].name + "'");
    state.m[k] = m->second;
    state.v[k] = v->second;
  }
  state.t = ck.meta["adam_t"].get<long long>();
  adam_ = std::move(state);
  step_ = ck.meta["step"].get<long long>();
  epoch_loss_ = ck.meta.value("epoch_loss", 0.0);
  epoch_steps_ = ck.meta.value("epoch_steps", 0LL);
  epoch_entries_ = ck.meta.value("epoch_entries", 0LL);
}

}  // namespace clustertab
