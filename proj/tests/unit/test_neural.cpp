#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "../oracles.hpp"
#include "encod/neural.hpp"
#include "util.hpp"

using namespace encod;

namespace {

Matrix<double> random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix<double> x(rows, cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  for (auto& v : x.data) v = d(rng);
  return x;
}

ScalerParams identity_scaler() {
  ScalerParams p;
  p.mins.assign(kFeatureDim, 0.0);
  p.maxs.assign(kFeatureDim, 1.0);
  return p;
}

// Two classes of byte PDFs concentrated on disjoint byte ranges.
Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  Dataset d;
  d.x = Matrix<float>(n, kFeatureDim);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    d.y.push_back(cls);
    for (int k = 0; k < 8; ++k) d.x(i, (cls ? 128 : 0) + rng() % 128) += 0.25f;
  }
  return d;
}

}  // namespace

TEST_CASE("activation and scheme names round-trip") {
  for (auto a : {Activation::relu, Activation::selu, Activation::softmax}) CHECK(parse_activation(to_string(a)) == a);
  for (auto s : {InitScheme::glorot_uniform, InitScheme::lecun_normal}) CHECK(parse_init(to_string(s)) == s);
  CHECK_THROWS(parse_activation("tanh"));
}

TEST_CASE("initialisation bounds and moments") {
  const auto g = init_weights<double>(256, 128, InitScheme::glorot_uniform, 1);
  REQUIRE(g.size() == 256 * 128);
  const double bound = std::sqrt(6.0 / 384.0);
  CHECK(bound == doctest::Approx(0.125));
  double mx = 0;
  for (double w : g) mx = std::max(mx, std::fabs(w));
  CHECK(mx <= bound);
  CHECK(mx > 0.99 * bound);

  const auto l = init_weights<double>(256, 256, InitScheme::lecun_normal, 2);
  const double mean = std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
  double var = 0;
  for (double w : l) var += (w - mean) * (w - mean);
  CHECK(std::sqrt(var / static_cast<double>(l.size() - 1)) == doctest::Approx(0.0625).epsilon(0.02));
  CHECK(std::fabs(mean) < 0.002);

  CHECK(init_weights<float>(16, 8, InitScheme::glorot_uniform, 5) == init_weights<float>(16, 8, InitScheme::glorot_uniform, 5));
  CHECK(init_weights<float>(16, 8, InitScheme::glorot_uniform, 5) != init_weights<float>(16, 8, InitScheme::glorot_uniform, 6));
}

TEST_CASE("activations") {
  std::vector<double> s{0, 0};
  activate<double>(Activation::softmax, s, 2);
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);

  std::vector<double> v{0.0, 1.0, -1.0, -30.0};
  activate<double>(Activation::selu, v, 4);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == doctest::Approx(kSeluLambda));
  CHECK(v[2] == doctest::Approx(kSeluLambda * kSeluAlpha * (std::exp(-1.0) - 1)));
  CHECK(v[3] == doctest::Approx(-kSeluLambda * kSeluAlpha).epsilon(1e-9));

  std::vector<double> r{-2, 0, 3};
  activate<double>(Activation::relu, r, 3);
  CHECK(r == std::vector<double>{0, 0, 3});

  // Shift invariance and large logits.
  std::vector<double> a{1, 2, 3, 1001, 1002, 1003};
  activate<double>(Activation::softmax, a, 3);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(a[i + 3]).epsilon(1e-12));
  CHECK(a[0] + a[1] + a[2] == doctest::Approx(1.0));
}

TEST_CASE("architectures") {
  const auto b = build_binary(FormatLabel::zip, 1);
  CHECK(b.net.layers.size() == 4);
  CHECK(b.class_labels == std::vector<std::string>{"zip", "enc"});
  CHECK(b.task == "binary:zip");
  CHECK(b.init == InitScheme::glorot_uniform);
  const std::vector<std::size_t> bd{256, 128, 64, 16, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b.net.layers[i].in_dim == bd[i]);
    CHECK(b.net.layers[i].out_dim == bd[i + 1]);
    CHECK(b.net.layers[i].activation == (i < 3 ? Activation::relu : Activation::softmax));
  }
  CHECK_THROWS_AS(build_binary(FormatLabel::enc, 1), std::invalid_argument);

  const auto m = build_multiclass(1);
  CHECK(m.net.layers.size() == 5);
  CHECK(m.class_labels == std::vector<std::string>{"enc", "cmp", "png", "jpeg", "mp3", "pdf"});
  const std::vector<std::size_t> md{256, 256, 128, 64, 32, 6};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m.net.layers[i].in_dim == md[i]);
    CHECK(m.net.layers[i].out_dim == md[i + 1]);
    CHECK(m.net.layers[i].activation == Activation::selu);
  }
  CHECK(m.net.layers[4].activation == Activation::softmax);
  CHECK(m.init == InitScheme::lecun_normal);
  CHECK(m.class_of(FormatLabel::gzip) == 1);
  CHECK(m.class_of(FormatLabel::rar) == 1);
  CHECK(m.class_of(FormatLabel::pdf) == 5);
  CHECK(m.encrypted_class() == 0);
  CHECK(b.encrypted_class() == 1);
  CHECK_FALSE(b.class_of(FormatLabel::png).has_value());
  CHECK(build_for_task("binary:pdf", 3).class_labels[0] == "pdf");
  CHECK(build_for_task("multiclass", 3).net.layers.size() == 5);
  CHECK_THROWS(build_for_task("ternary", 3));
}

TEST_CASE("zero weights give uniform probabilities") {
  auto m = build_multiclass(1);
  for (auto& l : m.net.layers) std::fill(l.weights.begin(), l.weights.end(), 0.0f);
  Matrix<float> x(3, 256);
  for (auto& v : x.data) v = 1.3f;
  const auto p = forward(m.net, x);
  for (float v : p.data) CHECK(v == doctest::Approx(1.0 / 6));
}

TEST_CASE("cross-entropy examples") {
  const std::vector<std::size_t> dims{4, 3};
  const std::vector<Activation> acts{Activation::softmax};
  auto net = make_network<double>(dims, acts, InitScheme::glorot_uniform, 1);
  std::fill(net.layers[0].weights.begin(), net.layers[0].weights.end(), 0.0);
  const auto x = random_input(5, 4, 1);
  const std::vector<int> y{0, 1, 2, 0, 1};
  CHECK(mean_loss(net, x, y) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  net.layers[0].biases = {0, 0, 800};
  const std::vector<int> all2(5, 2);
  CHECK(mean_loss(net, x, all2) == doctest::Approx(0.0));

  Gradients<double> g;
  Matrix<double> bad(5, 3);
  bad(0, 0) = 0.5;
  CHECK_THROWS_AS(loss_and_grads(net, x, bad, g), std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t depth = 1 + rng() % 4;
    std::vector<std::size_t> dims{2 + rng() % 15};
    std::vector<Activation> acts;
    for (std::size_t i = 0; i < depth; ++i) {
      dims.push_back(i + 1 == depth ? 2 + rng() % 5 : 2 + rng() % 15);
      acts.push_back(i + 1 == depth ? Activation::softmax : (trial % 2 ? Activation::selu : Activation::relu));
    }
    auto net = make_network<double>(dims, acts, trial % 2 ? InitScheme::lecun_normal : InitScheme::glorot_uniform, trial);
    for (auto& l : net.layers)
      for (auto& b : l.biases) b = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const std::size_t batch = 1 + rng() % 8;
    const auto x = random_input(batch, dims.front(), 1000 + trial);
    std::vector<int> y;
    for (std::size_t i = 0; i < batch; ++i) y.push_back(static_cast<int>(rng() % dims.back()));

    Gradients<double> g;
    loss_and_grads(net, x, y, g);
    auto loss = [&] { return mean_loss(net, x, y); };
    auto compare = [&](double& param, double analytic) {
      const double numeric = oracle::central_difference(loss, param, 1e-5);
      const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-3});
      CHECK(std::fabs(numeric - analytic) / scale < 1e-4);
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (std::size_t i = 0; i < net.layers[l].weights.size(); ++i) compare(net.layers[l].weights[i], g.weights[l][i]);
      for (std::size_t i = 0; i < net.layers[l].biases.size(); ++i) compare(net.layers[l].biases[i], g.biases[l][i]);
    }
  }
}

TEST_CASE("training separates a toy set and is deterministic") {
  const auto tr = toy_dataset(2000, 1), dev = toy_dataset(200, 2);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.seed = 3;
  auto a = build_binary(FormatLabel::zip, 4);
  auto b = build_binary(FormatLabel::zip, 4);
  a.attach_scaler(identity_scaler());
  b.attach_scaler(identity_scaler());
  const auto ra = train(a, tr, dev, cfg);
  const auto rb = train(b, tr, dev, cfg);
  CHECK(accuracy(a, tr) >= 0.99);
  CHECK(ra.log.front().epoch == 0);
  CHECK(ra.log.back().train_loss < ra.log.front().train_loss);
  CHECK(ra.log.size() <= cfg.max_epochs + 1);
  CHECK(ra.best_epoch == rb.best_epoch);
  for (std::size_t l = 0; l < a.net.layers.size(); ++l) CHECK(a.net.layers[l].weights == b.net.layers[l].weights);

  Dataset empty;
  empty.x = Matrix<float>(0, kFeatureDim);
  CHECK_THROWS(train(a, empty, dev, cfg));
}

TEST_CASE("multiclass loss decreases on a noisy dataset") {
  Dataset d;
  d.x = Matrix<float>(600, kFeatureDim);
  std::mt19937_64 rng(5);
  for (std::size_t i = 0; i < 600; ++i) {
    const int c = static_cast<int>(rng() % 6);
    d.y.push_back(c);
    for (int k = 0; k < 30; ++k) d.x(i, (rng() % 2 ? c * 40 + rng() % 40 : rng() % 256)) += 0.05f;
  }
  auto m = build_multiclass(8);
  m.attach_scaler(identity_scaler());
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.patience = 10;
  const auto r = train(m, d, d, cfg);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
}

TEST_CASE("predict, scaler hygiene and save/load") {
  auto m = build_binary(FormatLabel::png, 11);
  const auto payload = testutil::random_bytes(512, 1);
  CHECK_THROWS_AS(predict(m, payload), std::invalid_argument);
  m.fragment_size = 512;
  m.attach_scaler(identity_scaler());
  const auto p = predict(m, payload);
  CHECK(p.probabilities.size() == 2);
  CHECK(p.probabilities[0] + p.probabilities[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.label == m.class_labels[p.argmax]);
  CHECK_THROWS_AS(predict(m, testutil::random_bytes(1024, 1)), std::invalid_argument);

  const auto scaled = transform(extract_features(payload), *m.scaler);
  const auto ps = predict_scaled(m, scaled, m.scaler->digest());
  CHECK(ps.probabilities == p.probabilities);
  auto other = identity_scaler();
  other.maxs[0] = 0.5;
  CHECK_THROWS_AS(predict_scaled(m, transform(extract_features(payload), other), other.digest()), std::invalid_argument);
  CHECK_THROWS_AS(predict_scaled(m, extract_features(payload), m.scaler->digest()), std::invalid_argument);

  testutil::TempDir tmp("model");
  save_model(m, tmp / "m.bin");
  const auto back = load_model(tmp / "m.bin");
  CHECK(back.task == m.task);
  CHECK(back.class_labels == m.class_labels);
  CHECK(back.scaler_ref == m.scaler_ref);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = testutil::random_bytes(512, 100 + s);
    CHECK(predict(back, x).probabilities == predict(m, x).probabilities);
  }
  auto bytes = testutil::read_all(tmp / "m.bin");
  auto tampered = m;
  tampered.scaler->maxs[3] = 0.25;
  save_model(tampered, tmp / "tampered.bin");
  CHECK_THROWS(load_model(tmp / "tampered.bin"));
  bytes[0] = 'X';
  testutil::write_all(tmp / "bad.bin", bytes);
  CHECK_THROWS(load_model(tmp / "bad.bin"));
}

TEST_CASE("single-sample latency") {
  auto m = build_multiclass(2);
  m.fragment_size = 2048;
  m.attach_scaler(identity_scaler());
  const auto x = testutil::random_bytes(2048, 3);
  predict(m, x);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 50; ++i) predict(m, x);
  const double per = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 50;
  CHECK(per < 5e-3);
}
