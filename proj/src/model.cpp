#include "clustertab/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "clustertab/errors.hpp"

namespace clustertab {

using nn::ParamId;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(d_model, "d_model");
  positive(dff, "dff");
  positive(num_heads, "num_heads");
  positive(c_out, "c_out");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (c_out % 2 != 0) throw ConfigError("model config: c_out must be even");
  if (d_model % num_heads != 0) throw ConfigError("model config: d_model must be divisible by num_heads");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("model config: dropout must be in [0,1)");
  if (!(init_std >= 0)) throw ConfigError("model config: init_std must be non-negative");
  if (!(coord_sine >= 0)) throw ConfigError("model config: coord_sine must be non-negative");
  if (coord_sine > 0 && d_model % 8 != 0)
    throw ConfigError("model config: coord_sine needs d_model divisible by 8");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.d_model = 128;
  c.dff = 512;
  c.c_out = 150;
  c.max_seq_len = 128;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 32;
  c.dff = 64;
  c.num_heads = 4;
  c.c_out = 32;
  c.max_seq_len = 128;
  c.dropout = 0;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"d_model", c.d_model},       {"dff", c.dff},
          {"num_heads", c.num_heads},   {"c_out", c.c_out},           {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"dropout", c.dropout},     {"init_std", c.init_std},
          {"coord_sine", c.coord_sine}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const char* kKeys[] = {"num_layers", "d_model",     "dff",     "num_heads", "c_out",
                                "vocab_size", "max_seq_len", "dropout", "init_std",
                                "coord_sine"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kKeys) known = known || it.key() == k;
    if (!known) throw ConfigError("model config: unknown key '" + it.key() + "'");
  }
  ModelConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.dff = j.value("dff", c.dff);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.c_out = j.value("c_out", c.c_out);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.dropout = j.value("dropout", c.dropout);
    c.init_std = j.value("init_std", c.init_std);
    c.coord_sine = j.value("coord_sine", c.coord_sine);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

ParamId Model::add_normal(const std::string& name, nn::Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(nn::mix_seed(seed, fnv1a(name)));
  std::normal_distribution<double> dist(0.0, config_.init_std);
  for (auto& v : t.values()) v = static_cast<nn::Scalar>(dist(rng));
  return params_.add(name, std::move(t));
}

ParamId Model::add_const(const std::string& name, nn::Shape shape, double value) {
  return params_.add(name, Tensor(std::move(shape), static_cast<nn::Scalar>(value)));
}

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  word_table_ = add_normal("embed.word", {config_.vocab_size + 1, d}, init_seed);
  const char* coord_names[4] = {"embed.x0", "embed.y0", "embed.x1", "embed.y1"};
  for (int k = 0; k < 4; ++k) coord_tables_[k] = add_normal(coord_names[k], {kCoordBins + 1, d}, init_seed);
  if (config_.coord_sine > 0) {
    // Coordinate k owns dims [k d/4, (k+1) d/4): sin/cos pairs with periods 8 .. 2048 bins.
    const int band = d / 4;
    const int freqs = band / 2;
    for (int k = 0; k < 4; ++k) {
      Tensor& t = params_[coord_tables_[k]].value;
      for (int f = 0; f < freqs; ++f) {
        const double ratio = freqs > 1 ? static_cast<double>(f) / (freqs - 1) : 0.0;
        const double omega = 2 * M_PI / (8.0 * std::pow(256.0, ratio));
        for (int q = 0; q < kCoordBins; ++q) {
          t.at(q, k * band + 2 * f) += static_cast<nn::Scalar>(config_.coord_sine * std::sin(omega * q));
          t.at(q, k * band + 2 * f + 1) += static_cast<nn::Scalar>(config_.coord_sine * std::cos(omega * q));
        }
      }
    }
  }

  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_gain = add_const(p + "ln1.gain", {d}, 1.0);
    lp.ln1_bias = add_const(p + "ln1.bias", {d}, 0.0);
    lp.wq = add_normal(p + "attn.wq", {d, d}, init_seed);
    lp.bq = add_const(p + "attn.bq", {d}, 0.0);
    lp.wk = add_normal(p + "attn.wk", {d, d}, init_seed);
    lp.bk = add_const(p + "attn.bk", {d}, 0.0);
    lp.wv = add_normal(p + "attn.wv", {d, d}, init_seed);
    lp.bv = add_const(p + "attn.bv", {d}, 0.0);
    lp.wo = add_normal(p + "attn.wo", {d, d}, init_seed);
    lp.bo = add_const(p + "attn.bo", {d}, 0.0);
    lp.ln2_gain = add_const(p + "ln2.gain", {d}, 1.0);
    lp.ln2_bias = add_const(p + "ln2.bias", {d}, 0.0);
    lp.w1 = add_normal(p + "ffn.w1", {d, config_.dff}, init_seed);
    lp.b1 = add_const(p + "ffn.b1", {config_.dff}, 0.0);
    lp.w2 = add_normal(p + "ffn.w2", {config_.dff, d}, init_seed);
    lp.b2 = add_const(p + "ffn.b2", {d}, 0.0);
    layers_.push_back(lp);
  }
  final_gain_ = add_const("encoder.final_ln.gain", {d}, 1.0);
  final_bias_ = add_const("encoder.final_ln.bias", {d}, 0.0);

  for (ClassId c : kAllClasses) {
    const std::string p = "head." + std::string(to_string(c)) + ".";
    HeadParams hp;
    hp.fc1_w = add_normal(p + "fc1.w", {d, d}, init_seed);
    hp.fc1_b = add_const(p + "fc1.b", {d}, 0.0);
    hp.ln_gain = add_const(p + "ln.gain", {d}, 1.0);
    hp.ln_bias = add_const(p + "ln.bias", {d}, 0.0);
    hp.fc2_w = add_normal(p + "fc2.w", {d, config_.c_out}, init_seed);
    hp.fc2_b = add_const(p + "fc2.b", {config_.c_out}, 0.0);
    heads_[c] = hp;
  }
}

Var Model::linear(Tape& tape, Var x, ParamId w, ParamId b) const {
  return tape.add(tape.matmul(x, tape.parameter(w)), tape.parameter(b));
}

Var Model::embed_inputs(Tape& tape, std::span<const TokenFeatures> features, int seq_len) const {
  const int n = static_cast<int>(features.size());
  if (seq_len < n) throw ShapeError("embed_inputs: sequence length shorter than the number of words");
  if (seq_len > config_.max_seq_len)
    throw ShapeError("embed_inputs: sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  std::vector<int> words(seq_len, pad_word_id());
  std::array<std::vector<int>, 4> coords;
  for (auto& c : coords) c.assign(seq_len, kPadCoord);
  for (int i = 0; i < n; ++i) {
    const auto& f = features[i];
    if (f.word_id < 0 || f.word_id >= config_.vocab_size)
      throw IndexError("embed_inputs: word id " + std::to_string(f.word_id) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    const int q[4] = {f.qx0, f.qy0, f.qx1, f.qy1};
    for (int k = 0; k < 4; ++k) {
      if (q[k] < 0 || q[k] >= kCoordBins)
        throw IndexError("embed_inputs: coordinate id " + std::to_string(q[k]) + " outside [0,1023]");
      coords[k][i] = q[k];
    }
    words[i] = f.word_id;
  }
  Var out = tape.embedding(tape.parameter(word_table_), words);
  for (int k = 0; k < 4; ++k) out = tape.add(out, tape.embedding(tape.parameter(coord_tables_[k]), coords[k]));
  return out;
}

Var Model::encoder_forward(Tape& tape, Var x, std::span<const unsigned char> pad_mask,
                           const ForwardOptions& options) const {
  const int L = tape.value(x).rows();
  if (static_cast<int>(pad_mask.size()) != L)
    throw ShapeError("encoder_forward: pad mask length " + std::to_string(pad_mask.size()) +
                     " does not match sequence length " + std::to_string(L));
  const int d = config_.d_model;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const nn::Scalar inv_sqrt = static_cast<nn::Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto p = static_cast<nn::Scalar>(config_.dropout);

  bool any_pad = false;
  std::vector<unsigned char> key_mask(static_cast<std::size_t>(L) * L, 0);
  for (int j = 0; j < L; ++j) {
    if (pad_mask[j]) continue;
    any_pad = true;
    for (int i = 0; i < L; ++i) key_mask[static_cast<std::size_t>(i) * L + j] = 1;
  }
  constexpr nn::Scalar kMasked = static_cast<nn::Scalar>(-1e30);

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerParams& lp = layers_[l];
    Var h = tape.layer_norm(x, tape.parameter(lp.ln1_gain), tape.parameter(lp.ln1_bias));
    Var q = linear(tape, h, lp.wq, lp.bq);
    Var k = linear(tape, h, lp.wk, lp.bk);
    Var v = linear(tape, h, lp.wv, lp.bv);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      Var qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
      Var kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
      Var vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
      Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
      if (any_pad) scores = tape.masked_fill(scores, key_mask, kMasked);
      outs.push_back(tape.matmul(tape.softmax(scores), vh));
    }
    Var attn = linear(tape, tape.concat_cols(outs), lp.wo, lp.bo);
    attn = tape.dropout(attn, p, nn::mix_seed(options.dropout_seed, 2 * l + 1), options.training);
    x = tape.add(x, attn);

    Var h2 = tape.layer_norm(x, tape.parameter(lp.ln2_gain), tape.parameter(lp.ln2_bias));
    Var f = linear(tape, tape.gelu(linear(tape, h2, lp.w1, lp.b1)), lp.w2, lp.b2);
    f = tape.dropout(f, p, nn::mix_seed(options.dropout_seed, 2 * l + 2), options.training);
    x = tape.add(x, f);
  }
  return tape.layer_norm(x, tape.parameter(final_gain_), tape.parameter(final_bias_));
}

Var Model::clustering_head_forward(Tape& tape, ClassId head, Var hidden, const ForwardOptions& options) const {
  const HeadParams& hp = heads_[head];
  Var h = tape.gelu(linear(tape, hidden, hp.fc1_w, hp.fc1_b));
  h = tape.layer_norm(h, tape.parameter(hp.ln_gain), tape.parameter(hp.ln_bias));
  h = tape.dropout(h, static_cast<nn::Scalar>(config_.dropout),
                   nn::mix_seed(options.dropout_seed, 1000 + index_of(head)), options.training);
  Var out = linear(tape, h, hp.fc2_w, hp.fc2_b);
  const int half = config_.c_out / 2;
  Var q = tape.slice_cols(out, 0, half);
  Var k = tape.slice_cols(out, half, config_.c_out);
  return tape.matmul(q, tape.transpose(k));
}

PerClass<Var> Model::forward_on_tape(Tape& tape, std::span<const TokenFeatures> features, int seq_len,
                                     const ForwardOptions& options) const {
  std::vector<unsigned char> pad_mask(seq_len, 0);
  std::fill(pad_mask.begin(), pad_mask.begin() + static_cast<std::ptrdiff_t>(features.size()), 1);
  Var hidden = encoder_forward(tape, embed_inputs(tape, features, seq_len), pad_mask, options);
  PerClass<Var> out;
  for (ClassId c : kAllClasses) out[c] = clustering_head_forward(tape, c, hidden, options);
  return out;
}

LogitSet Model::forward(std::span<const TokenFeatures> features, int seq_len, const ForwardOptions& options) const {
  LogitSet out;
  if (seq_len == 0) {
    for (auto& m : out) m = Matrix<double>();
    return out;
  }
  Tape tape(static_cast<const nn::ParamStore*>(&params_));
  auto vars = forward_on_tape(tape, features, seq_len, options);
  for (ClassId c : kAllClasses) {
    const Tensor& t = tape.value(vars[c]);
    Matrix<double> m(static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols()));
    for (std::size_t i = 0; i < t.size(); ++i) m.values()[i] = t[i];
    out[c] = std::move(m);
  }
  return out;
}

std::size_t Model::parameter_count(bool include_embeddings) const {
  return params_.count(include_embeddings ? std::string{} : std::string("embed."));
}

std::vector<nn::NamedTensor> Model::named_tensors() const {
  std::vector<nn::NamedTensor> out;
  for (const auto& p : params_.all()) out.push_back({p.name, &p.value});
  return out;
}

void Model::load_tensors(const std::map<std::string, Tensor>& tensors) {
  for (auto& p : params_.all()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.value.shape())
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + nn::shape_str(it->second.shape()) +
                        ", expected " + nn::shape_str(p.value.shape()));
    p.value = it->second;
  }
}

void save_model(const std::filesystem::path& path, const Model& model, nlohmann::json extra_meta) {
  nlohmann::json meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  meta["model_config"] = to_json(model.config());
  nn::save_checkpoint(path, model.named_tensors(), meta);
}

Model load_model(const std::filesystem::path& path, const ModelConfig* expected) {
  nn::Checkpoint ck = nn::load_checkpoint(path);
  if (!ck.meta.contains("model_config")) throw ConfigError(path.string() + ": checkpoint lacks model_config");
  ModelConfig stored = model_config_from_json(ck.meta["model_config"]);
  if (expected && !(*expected == stored))
    throw ConfigError(path.string() + ": checkpoint config " + to_json(stored).dump() +
                      " disagrees with requested " + to_json(*expected).dump());
  Model model(stored);
  model.load_tensors(ck.tensors);
  return model;
}

}  // namespace clustertab
