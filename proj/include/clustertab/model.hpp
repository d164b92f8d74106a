#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"
#include "clustertab/matrix.hpp"
#include "clustertab/nn/checkpoint.hpp"
#include "clustertab/nn/tape.hpp"
#include "clustertab/tokenizer.hpp"

namespace clustertab {

struct ModelConfig {
  int num_layers = 4;
  int d_model = 256;
  int dff = 1024;
  int num_heads = 8;
  int c_out = 300;  // split into Q and K of c_out / 2 each
  int vocab_size = kDefaultVocabSize + 1;
  int max_seq_len = 1000;
  double dropout = 0.1;
  double init_std = 0.02;
  /// Amplitude of sinusoidal profiles added to the coordinate tables at init (0 = none).
  double coord_sine = 1.0;

  /// Throws ConfigError when c_out is odd, d_model is not divisible by
  /// num_heads, or any size is non-positive.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  /// Default shape halved in width for short pages: d_model 128, dff 512,
  /// c_out 150, max_seq_len 128.
  static ModelConfig desk();
  /// Two layers of width 32 without dropout, for overfitting and gradient checks.
  static ModelConfig tiny();
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Pre-sigmoid L x L matrices, one per class.
using LogitSet = PerClass<Matrix<double>>;

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Summed word/coordinate embeddings, a pre-norm transformer encoder and five
/// bilinear clustering heads producing logits Q Kᵀ.
class Model {
 public:
  static constexpr int kPadCoord = kCoordBins;  // reserved row in each coordinate table

  explicit Model(ModelConfig config, std::uint64_t init_seed = 0);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Reserved padding id in the word table.
  int pad_word_id() const { return config_.vocab_size; }

  /// (seq_len x d_model) sum of the five embeddings; rows past features.size() are padding.
  nn::Var embed_inputs(nn::Tape& tape, std::span<const TokenFeatures> features, int seq_len) const;
  /// `pad_mask[i]` is 1 for real positions. Padded keys get zero attention weight.
  nn::Var encoder_forward(nn::Tape& tape, nn::Var embedded, std::span<const unsigned char> pad_mask,
                          const ForwardOptions& options) const;
  nn::Var clustering_head_forward(nn::Tape& tape, ClassId head, nn::Var hidden,
                                  const ForwardOptions& options) const;
  PerClass<nn::Var> forward_on_tape(nn::Tape& tape, std::span<const TokenFeatures> features, int seq_len,
                                    const ForwardOptions& options) const;

  /// Inference forward pass; safe to call concurrently.
  LogitSet forward(std::span<const TokenFeatures> features, int seq_len, const ForwardOptions& options = {}) const;
  LogitSet forward(std::span<const TokenFeatures> features) const {
    return forward(features, static_cast<int>(features.size()));
  }

  /// Learnable scalars, optionally without the embedding tables.
  std::size_t parameter_count(bool include_embeddings = true) const;

  std::vector<nn::NamedTensor> named_tensors() const;
  /// Copies tensors named like this model's parameters; throws on missing names or shape mismatch.
  void load_tensors(const std::map<std::string, nn::Tensor>& tensors);

 private:
  struct LayerParams {
    nn::ParamId ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };
  struct HeadParams {
    nn::ParamId fc1_w, fc1_b, ln_gain, ln_bias, fc2_w, fc2_b;
  };

  nn::ParamId add_normal(const std::string& name, nn::Shape shape, std::uint64_t seed);
  nn::ParamId add_const(const std::string& name, nn::Shape shape, double value);
  nn::Var linear(nn::Tape& tape, nn::Var x, nn::ParamId w, nn::ParamId b) const;

  ModelConfig config_;
  nn::ParamStore params_;
  nn::ParamId word_table_;
  std::array<nn::ParamId, 4> coord_tables_{};
  std::vector<LayerParams> layers_;
  nn::ParamId final_gain_, final_bias_;
  PerClass<HeadParams> heads_;
};

void save_model(const std::filesystem::path& path, const Model& model, nlohmann::json extra_meta = {});
/// Loads a checkpoint written by save_model or the trainer. When `expected`
/// is given, a differing stored configuration is rejected with ConfigError.
Model load_model(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace clustertab
