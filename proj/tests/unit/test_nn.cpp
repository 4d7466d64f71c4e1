#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "tonguesync/data_io.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/nn/checkpoint.hpp"
#include "tonguesync/nn/kernels.hpp"
#include "tonguesync/nn/loss.hpp"
#include "tonguesync/nn/train.hpp"
#include "tonguesync/rng.hpp"

using namespace tonguesync;
using namespace tonguesync::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng) {
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal());
  return t;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.frames_per_window = 1;
  c.frame_height = 6;
  c.frame_width = 6;
  c.audio_rows = 4;
  c.feature_dim = 5;
  c.ultrasound = {{{4, 3, 1}}, {8}};
  c.audio = {{{4, 3, 1}}, {8}};
  c.validate();
  return c;
}

std::vector<BatchNorm<float>*> batch_norms(Stream<float>& s) {
  std::vector<BatchNorm<float>*> out;
  for (auto& l : s.layers()) {
    if (auto* bn = dynamic_cast<BatchNorm<float>*>(l.get())) out.push_back(bn);
  }
  return out;
}

// Noisy copies of per-cluster prototypes; true when the clusters agree.
class Clusters final : public PairSource {
 public:
  Clusters(const ModelConfig& cfg, std::size_t count, std::uint64_t seed)
      : u_size_(cfg.ultrasound_input(1).size()), a_size_(cfg.audio_input(1).size()) {
    Rng protos(555);
    for (int k = 0; k < 4; ++k) {
      std::vector<float> u(u_size_), a(a_size_);
      for (auto& v : u) v = static_cast<float>(protos.uniform());
      for (auto& v : a) v = static_cast<float>(protos.normal());
      u_proto_.push_back(u);
      a_proto_.push_back(a);
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t ku = rng.index(4);
      const std::size_t ka = i % 2 == 0 ? ku : (ku + 1 + rng.index(3)) % 4;
      items_.push_back({ku, ka, rng.next()});
    }
  }
  std::size_t size() const override { return items_.size(); }
  int label(std::size_t i) const override { return items_[i].ku == items_[i].ka ? 1 : 0; }
  void load(std::size_t i, float* u, float* a) const override {
    Rng rng(items_[i].noise);
    for (std::size_t j = 0; j < u_size_; ++j) u[j] = u_proto_[items_[i].ku][j] + static_cast<float>(0.05 * rng.normal());
    for (std::size_t j = 0; j < a_size_; ++j) a[j] = a_proto_[items_[i].ka][j] + static_cast<float>(0.05 * rng.normal());
  }

 private:
  struct Item {
    std::size_t ku, ka;
    std::uint64_t noise;
  };
  std::size_t u_size_, a_size_;
  std::vector<std::vector<float>> u_proto_, a_proto_;
  std::vector<Item> items_;
};

class NanPairs final : public PairSource {
 public:
  explicit NanPairs(const ModelConfig& cfg) : u_(cfg.ultrasound_input(1).size()), a_(cfg.audio_input(1).size()) {}
  std::size_t size() const override { return 8; }
  int label(std::size_t i) const override { return static_cast<int>(i % 2); }
  void load(std::size_t, float* u, float* a) const override {
    for (std::size_t j = 0; j < u_; ++j) u[j] = std::numeric_limits<float>::quiet_NaN();
    for (std::size_t j = 0; j < a_; ++j) a[j] = 1.0f;
  }

 private:
  std::size_t u_, a_;
};

}  // namespace

TEST_CASE("parallel kernels match the serial references") {
  Rng rng(1);
  const auto in = random_tensor<float>({3, 4, 9, 11}, rng);
  const auto w = random_tensor<float>({5, 4, 3, 3}, rng);
  const auto b = random_tensor<float>({5, 1, 1, 1}, rng);
  Tensor<float> p(conv_output_shape(in.shape(), 5, 3)), s(p.shape());
  nn::parallel::conv2d_forward(in, w, b.span(), p);
  nn::serial::conv2d_forward(in, w, b.span(), s);
  CHECK(p == s);

  const auto g = random_tensor<float>(p.shape(), rng);
  Tensor<float> gi_p(in.shape()), gi_s(in.shape());
  nn::parallel::conv2d_backward_input(g, w, gi_p);
  nn::serial::conv2d_backward_input(g, w, gi_s);
  for (std::size_t i = 0; i < gi_p.size(); ++i) CHECK(gi_p[i] == doctest::Approx(gi_s[i]).epsilon(1e-5));

  Tensor<float> gw_p(w.shape()), gw_s(w.shape());
  std::vector<float> gb_p(5), gb_s(5);
  nn::parallel::conv2d_backward_params(in, g, gw_p, std::span<float>(gb_p));
  nn::serial::conv2d_backward_params(in, g, gw_s, std::span<float>(gb_s));
  for (std::size_t i = 0; i < gw_p.size(); ++i) CHECK(gw_p[i] == doctest::Approx(gw_s[i]).epsilon(1e-5));
  for (std::size_t i = 0; i < 5; ++i) CHECK(gb_p[i] == doctest::Approx(gb_s[i]).epsilon(1e-5));

  const auto x = random_tensor<float>({4, 7, 1, 1}, rng);
  const auto lw = random_tensor<float>({3, 7, 1, 1}, rng);
  const auto lb = random_tensor<float>({3, 1, 1, 1}, rng);
  Tensor<float> lp({4, 3, 1, 1}), ls({4, 3, 1, 1});
  nn::parallel::linear_forward(x, lw, lb.span(), lp);
  nn::serial::linear_forward(x, lw, lb.span(), ls);
  CHECK(lp == ls);

  Tensor<float> mp(pool_output_shape(in.shape(), 2)), ms(mp.shape());
  std::vector<std::size_t> ap(mp.size()), as(ms.size());
  nn::parallel::maxpool_forward(in, 2, mp, std::span<std::size_t>(ap));
  nn::serial::maxpool_forward(in, 2, ms, std::span<std::size_t>(as));
  CHECK(mp == ms);
  CHECK(ap == as);
  CHECK(mp.shape() == Shape{3, 4, 4, 5});
}

TEST_CASE("paper-sized model emits 64-dim embeddings") {
  const ModelConfig cfg = default_model_config();
  CHECK(cfg.ultrasound.convs[0].filters == 23);
  CHECK(cfg.embedding_dim() == 64);
  TwoStreamModel<float> model(cfg, 3);
  Rng rng(2);
  const auto u = random_tensor<float>(cfg.ultrasound_input(2), rng);
  const auto a = random_tensor<float>(cfg.audio_input(2), rng);
  const Embeddings<float> e = model.infer(u, a);
  CHECK(e.u.shape() == Shape{2, 64, 1, 1});
  CHECK(e.m.shape() == Shape{2, 64, 1, 1});
  for (float v : e.u.values()) CHECK(std::isfinite(v));
  const auto again = model.infer(u, a);
  CHECK(again.u == e.u);
  CHECK(again.m == e.m);

  const auto d = pair_distances(e.u, e.m);
  for (std::size_t n = 0; n < 2; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 64; ++k) s += std::pow(double(e.u.at(n, k, 0, 0)) - e.m.at(n, k, 0, 0), 2);
    CHECK(d[n] == doctest::Approx(std::sqrt(s)).epsilon(1e-6));
  }

  try {
    model.infer(random_tensor<float>({1, 5, 63, 137}, rng), random_tensor<float>(cfg.audio_input(1), rng));
    FAIL("expected ShapeError");
  } catch (const ShapeError& err) {
    CHECK(std::string(err.what()).find("ultrasound") != std::string::npos);
  }
}

TEST_CASE("zeroed final batch norm gives identical embeddings and zero gradients") {
  const ModelConfig cfg = tiny_config();
  TwoStreamModel<float> model(cfg, 4);
  for (Stream<float>* s : {&model.ultrasound(), &model.audio()}) {
    BatchNorm<float>* last = batch_norms(*s).back();
    last->gamma().value.fill(0.0f);
    last->beta().value.fill(0.0f);
  }
  Rng rng(5);
  const auto u = random_tensor<float>(cfg.ultrasound_input(6), rng);
  const auto a = random_tensor<float>(cfg.audio_input(6), rng);
  for (double d : pair_distances(model.infer(u, a).u, model.infer(u, a).m)) CHECK(d == 0.0);

  model.set_mode(Mode::kTraining);
  model.zero_grad();
  const auto e = model.forward(u, a);
  const std::vector<int> y(6, 1);
  const auto lg = contrastive_loss_gradient(e, y, cfg.margin);
  CHECK(lg.loss == 0.0);
  model.backward(lg.grad_u, lg.grad_m);
  for (Param<float>* p : model.params()) {
    for (float g : p->grad.values()) CHECK(std::abs(g) <= 1e-8);
  }
}

TEST_CASE("inference does not depend on batch composition") {
  const ModelConfig cfg = tiny_config();
  TwoStreamModel<float> model(cfg, 6);
  // Move the running statistics away from their initial values.
  Clusters data(cfg, 64, 1);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  train(model, data, data, tc);

  Rng rng(7);
  const auto u = random_tensor<float>(cfg.ultrasound_input(5), rng);
  const auto a = random_tensor<float>(cfg.audio_input(5), rng);
  const auto all = model.infer(u, a);
  const std::size_t us = cfg.ultrasound_input(1).size(), as = cfg.audio_input(1).size();
  for (std::size_t n = 0; n < 5; ++n) {
    Tensor<float> u1(cfg.ultrasound_input(1)), a1(cfg.audio_input(1));
    std::copy_n(u.data() + n * us, us, u1.data());
    std::copy_n(a.data() + n * as, as, a1.data());
    const auto one = model.infer(u1, a1);
    for (std::size_t k = 0; k < cfg.embedding_dim(); ++k) {
      CHECK(one.u[k] == all.u.at(n, k, 0, 0));
      CHECK(one.m[k] == all.m.at(n, k, 0, 0));
    }
  }
}

TEST_CASE("linear layer gradients match the closed form") {
  Rng rng(8);
  Linear<double> layer("fc", 6, 3, rng);
  const auto x = random_tensor<double>({4, 6, 1, 1}, rng);
  const auto g = random_tensor<double>({4, 3, 1, 1}, rng);
  const auto out = layer.forward(x);
  const auto gx = layer.backward(g);
  const auto& w = layer.weight().value;
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t o = 0; o < 3; ++o) {
      double v = layer.bias().value[o];
      for (std::size_t i = 0; i < 6; ++i) v += w[o * 6 + i] * x[n * 6 + i];
      CHECK(std::abs(out[n * 3 + o] - v) <= 1e-8);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      double v = 0.0;
      for (std::size_t o = 0; o < 3; ++o) v += g[n * 3 + o] * w[o * 6 + i];
      CHECK(std::abs(gx[n * 6 + i] - v) <= 1e-8);
    }
  }
  for (std::size_t o = 0; o < 3; ++o) {
    double gb = 0.0;
    for (std::size_t n = 0; n < 4; ++n) gb += g[n * 3 + o];
    CHECK(std::abs(layer.bias().grad[o] - gb) <= 1e-8);
    for (std::size_t i = 0; i < 6; ++i) {
      double gw = 0.0;
      for (std::size_t n = 0; n < 4; ++n) gw += g[n * 3 + o] * x[n * 6 + i];
      CHECK(std::abs(layer.weight().grad[o * 6 + i] - gw) <= 1e-8);
    }
  }
}

TEST_CASE("contrastive loss") {
  const std::vector<double> d0{0.0}, d1{1.5}, d2{0.4, 0.5};
  const std::vector<int> y1{1}, y0{0}, y2{0, 1};
  CHECK(contrastive_loss(d0, y1) == 0.0);
  CHECK(contrastive_loss(d1, y0) == 0.0);
  CHECK(contrastive_loss(d2, y2) == doctest::Approx(0.305));
  CHECK_THROWS_AS(contrastive_loss(std::vector<double>{}, std::vector<int>{}), ValidationError);
  CHECK_THROWS_AS(contrastive_loss(d2, y1), ValidationError);

  Rng rng(9);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> d(1 + rng.index(6));
    std::vector<int> y(d.size());
    bool zero = true;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = rng.index(4) == 0 ? 0.0 : rng.uniform(0.0, 2.0);
      y[i] = static_cast<int>(rng.index(2));
      zero = zero && (y[i] == 1 ? d[i] == 0.0 : d[i] >= 1.0);
    }
    const double l = contrastive_loss(d, y);
    CHECK(l >= 0.0);
    CHECK((l == 0.0) == zero);
  }
}

TEST_CASE("classification threshold") {
  CHECK(classify(0.2) == PairClass::kTrue);
  CHECK(classify(0.5) == PairClass::kFalse);
  CHECK(classify(0.9) == PairClass::kFalse);
}

TEST_CASE("training defaults") {
  const TrainConfig tc;
  CHECK(tc.learning_rate == 0.001);
  CHECK(tc.batch_size == 64);
  CHECK(tc.epochs == 20);
  CHECK(tc.plateau_patience == 2);
  CHECK(tc.plateau_factor == 0.1);
  CHECK(tc.threshold == 0.5);
  TrainConfig bad;
  bad.plateau_factor = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("plateau rule on a constant loss") {
  for (std::size_t patience = 1; patience <= 4; ++patience) {
    for (std::size_t epochs = 1; epochs <= 20; ++epochs) {
      PlateauScheduler s(1.0, patience, 0.1, 1e-4);
      double last = s.lr();
      for (std::size_t e = 0; e < epochs; ++e) {
        const double lr = s.step(0.7);
        CHECK(lr <= last);
        last = lr;
      }
      CHECK(s.reductions() == (epochs - 1) / patience);
    }
  }
  PlateauScheduler s(1.0, 2, 0.1, 1e-4);
  s.step(1.0);
  s.step(0.99995);  // below the minimum improvement
  CHECK(s.step(0.99994) == doctest::Approx(0.1));
}

TEST_CASE("a tiny model separates clusters") {
  const ModelConfig cfg = tiny_config();
  TwoStreamModel<float> model(cfg, 10);
  Clusters train_set(cfg, 400, 1), held_out(cfg, 200, 2);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.epochs = 25;
  tc.batch_size = 32;
  tc.seed = 3;
  const TrainReport r = train(model, train_set, held_out, tc);
  CHECK_FALSE(r.diverged);
  for (std::size_t e = 1; e < r.learning_rate.size(); ++e) CHECK(r.learning_rate[e] <= r.learning_rate[e - 1]);
  const Evaluation ev = evaluate_pairs(model, train_set);
  CHECK(ev.loss < 0.05);
  CHECK(ev.accuracy >= 0.95);
  CHECK(evaluate_pairs(model, held_out).accuracy >= 0.95);
}

TEST_CASE("divergence stops training and keeps the last finite parameters") {
  const ModelConfig cfg = tiny_config();
  TwoStreamModel<float> model(cfg, 11);
  std::vector<Tensor<float>> before;
  for (Param<float>* p : model.params()) before.push_back(p->value);
  NanPairs bad(cfg);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  const TrainReport r = train(model, bad, bad, tc);
  CHECK(r.diverged);
  const auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  const ModelConfig cfg = tiny_config();
  TwoStreamModel<float> model(cfg, 12);
  Clusters data(cfg, 64, 4);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  train(model, data, data, tc);

  const auto bytes = serialise_model(model);
  TwoStreamModel<float> back = deserialise_model(bytes);
  CHECK(back.config() == cfg);
  Rng rng(13);
  const auto u = random_tensor<float>(cfg.ultrasound_input(3), rng);
  const auto a = random_tensor<float>(cfg.audio_input(3), rng);
  CHECK(back.infer(u, a).u == model.infer(u, a).u);
  CHECK(back.infer(u, a).m == model.infer(u, a).m);
  CHECK(serialise_model(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "tonguesync-unit-model.bin";
  save_model(model, path);
  TwoStreamModel<float> loaded = load_model(path);
  const auto again = std::filesystem::temp_directory_path() / "tonguesync-unit-model2.bin";
  save_model(loaded, again);
  CHECK(read_file_bytes(path) == read_file_bytes(again));
  std::filesystem::remove(path);
  std::filesystem::remove(again);

  CHECK_THROWS_AS(deserialise_model(std::span(bytes).first(bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialise_model(std::span(bytes).first(20)), FormatError);
  auto version = bytes;
  version[8] = 99;
  CHECK_THROWS_AS(deserialise_model(version), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialise_model(longer), FormatError);
}
