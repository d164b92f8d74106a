#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "clustertab/errors.hpp"
#include "clustertab/model.hpp"

using namespace clustertab;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::RowVectorXd;

namespace {

std::vector<TokenFeatures> random_features(int n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> w(0, vocab - 1), q(0, 1023);
  std::vector<TokenFeatures> f(n);
  for (auto& x : f) x = {w(rng), q(rng), q(rng), q(rng), q(rng)};
  return f;
}

Mat param(const Model& m, const std::string& name) {
  const auto& t = m.params()[m.params().at(name)].value;
  const int rows = t.dim() == 1 ? 1 : t.rows();
  const int cols = t.dim() == 1 ? static_cast<int>(t.size()) : t.cols();
  Mat out(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = t[static_cast<std::size_t>(i) * cols + j];
  return out;
}

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    out.row(i) = ((x.row(i).array() - mean) / std::sqrt(var + 1e-5)).matrix();
    out.row(i) = out.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
  });
}

Mat linear(const Model& m, const Mat& x, const std::string& w, const std::string& b) {
  Mat y = x * param(m, w);
  y.rowwise() += param(m, b).row(0);
  return y;
}

// Straight-line re-derivation of the forward pass from the stored parameters.
PerClass<Mat> naive_forward(const Model& m, const std::vector<TokenFeatures>& f) {
  const auto& c = m.config();
  const int n = static_cast<int>(f.size());
  Mat x(n, c.d_model);
  const Mat word = param(m, "embed.word");
  const Mat cx0 = param(m, "embed.x0"), cy0 = param(m, "embed.y0"), cx1 = param(m, "embed.x1"),
            cy1 = param(m, "embed.y1");
  for (int i = 0; i < n; ++i)
    x.row(i) = word.row(f[i].word_id) + cx0.row(f[i].qx0) + cy0.row(f[i].qy0) + cx1.row(f[i].qx1) + cy1.row(f[i].qy1);
  const int dh = c.d_model / c.num_heads;
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    Mat h = layer_norm(x, param(m, p + "ln1.gain"), param(m, p + "ln1.bias"));
    Mat q = linear(m, h, p + "attn.wq", p + "attn.bq");
    Mat k = linear(m, h, p + "attn.wk", p + "attn.bk");
    Mat v = linear(m, h, p + "attn.wv", p + "attn.bv");
    Mat cat(n, c.d_model);
    for (int hd = 0; hd < c.num_heads; ++hd) {
      Mat s = q.middleCols(hd * dh, dh) * k.middleCols(hd * dh, dh).transpose() / std::sqrt(double(dh));
      for (int i = 0; i < n; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      cat.middleCols(hd * dh, dh) = s * v.middleCols(hd * dh, dh);
    }
    x += linear(m, cat, p + "attn.wo", p + "attn.bo");
    Mat h2 = layer_norm(x, param(m, p + "ln2.gain"), param(m, p + "ln2.bias"));
    x += linear(m, gelu(linear(m, h2, p + "ffn.w1", p + "ffn.b1")), p + "ffn.w2", p + "ffn.b2");
  }
  x = layer_norm(x, param(m, "encoder.final_ln.gain"), param(m, "encoder.final_ln.bias"));
  PerClass<Mat> out;
  for (ClassId cls : kAllClasses) {
    const std::string p = "head." + std::string(to_string(cls)) + ".";
    Mat h = layer_norm(gelu(linear(m, x, p + "fc1.w", p + "fc1.b")), param(m, p + "ln.gain"), param(m, p + "ln.bias"));
    Mat o = linear(m, h, p + "fc2.w", p + "fc2.b");
    const int half = c.c_out / 2;
    out[cls] = o.leftCols(half) * o.rightCols(half).transpose();
  }
  return out;
}

ModelConfig small() {
  ModelConfig c = ModelConfig::tiny();
  c.vocab_size = 20;
  c.c_out = 16;
  c.max_seq_len = 16;
  c.init_std = 0.2;
  return c;
}

}  // namespace

TEST_CASE("config validation and json") {
  ModelConfig c = ModelConfig::tiny();
  CHECK_NOTHROW(c.validate());
  CHECK(model_config_from_json(to_json(c)) == c);
  ModelConfig bad = c;
  bad.c_out = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.num_heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.num_layers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto j = to_json(c);
  j["d_modle"] = 3;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
}

TEST_CASE("parameter count matches the closed form") {
  auto closed = [](const ModelConfig& c) {
    const long long d = c.d_model, f = c.dff, o = c.c_out;
    const long long layer = 4 * (d * d + d) + d * f + f + f * d + d + 4 * d;
    const long long head = d * d + d + 2 * d + d * o + o;
    return c.num_layers * layer + 2 * d + 5 * head;
  };
  ModelConfig full;
  Model m(full);
  CHECK(static_cast<long long>(m.parameter_count(false)) == closed(full));
  CHECK(m.parameter_count(false) == 3876572);
  const long long emb = (full.vocab_size + 1LL) * full.d_model + 4LL * 1025 * full.d_model;
  CHECK(static_cast<long long>(m.parameter_count(true)) == closed(full) + emb);
  Model desk(ModelConfig::desk());
  CHECK(static_cast<long long>(desk.parameter_count(false)) == closed(ModelConfig::desk()));
}

TEST_CASE("forward matches a naive re-derivation") {
  Model m(small(), 3);
  auto f = random_features(7, 20, 1);
  LogitSet got = m.forward(f);
  PerClass<Mat> want = naive_forward(m, f);
  for (ClassId c : kAllClasses)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) CHECK(got[c](i, j) == doctest::Approx(want[c](i, j)).epsilon(1e-10));
}

TEST_CASE("padding does not change real logits") {
  Model m(small(), 4);
  auto f = random_features(6, 20, 2);
  LogitSet a = m.forward(f, 6);
  LogitSet b = m.forward(f, 11);
  for (ClassId c : kAllClasses) {
    REQUIRE(b[c].rows() == 11);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) CHECK(std::abs(a[c](i, j) - b[c](i, j)) < 1e-9);
  }
}

TEST_CASE("forward is deterministic per seed and dropout only in training") {
  ModelConfig c = small();
  c.dropout = 0.3;
  Model m(c, 5), m2(c, 5), m3(c, 6);
  auto f = random_features(5, 20, 3);
  CHECK(m.forward(f)[ClassId::Row] == m2.forward(f)[ClassId::Row]);
  CHECK_FALSE(m.forward(f)[ClassId::Row] == m3.forward(f)[ClassId::Row]);
  ForwardOptions train{true, 9};
  auto t1 = m.forward(f, 5, train)[ClassId::Row];
  CHECK(t1 == m.forward(f, 5, train)[ClassId::Row]);
  CHECK_FALSE(t1 == m.forward(f)[ClassId::Row]);
}

TEST_CASE("invalid inputs are rejected") {
  Model m(small());
  auto f = random_features(3, 20, 4);
  f[1].word_id = 20;
  CHECK_THROWS_AS(m.forward(f), IndexError);
  f[1].word_id = 0;
  f[2].qy1 = 1024;
  CHECK_THROWS_AS(m.forward(f), IndexError);
  CHECK_THROWS_AS(m.forward(random_features(17, 20, 5)), ShapeError);
  CHECK(m.forward({}, 0)[ClassId::Table].empty());
}

TEST_CASE("save and load round-trip") {
  const auto path = std::filesystem::temp_directory_path() / "clustertab_model_test.ckpt";
  Model m(small(), 8);
  save_model(path, m, {{"extra", 1}});
  Model back = load_model(path);
  CHECK(back.config() == m.config());
  auto f = random_features(5, 20, 6);
  CHECK(back.forward(f)[ClassId::Cell] == m.forward(f)[ClassId::Cell]);
  ModelConfig other = small();
  other.d_model = 64;
  CHECK_THROWS_AS(load_model(path, &other), ConfigError);
  std::filesystem::remove(path);
}
