#include "encod/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "encod/corpus.hpp"
#include "encod/kernels.hpp"

namespace encod {
using nlohmann::json;

std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::selu: return "selu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

std::string_view to_string(InitScheme s) noexcept {
  return s == InitScheme::glorot_uniform ? "glorot_uniform" : "lecun_normal";
}

Activation parse_activation(std::string_view text) {
  for (auto a : {Activation::relu, Activation::selu, Activation::softmax})
    if (to_string(a) == text) return a;
  throw std::invalid_argument("unknown activation '" + std::string(text) + "'");
}

InitScheme parse_init(std::string_view text) {
  for (auto s : {InitScheme::glorot_uniform, InitScheme::lecun_normal})
    if (to_string(s) == text) return s;
  throw std::invalid_argument("unknown init scheme '" + std::string(text) + "'");
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

template <typename T>
std::vector<T> init_weights(std::size_t fan_in, std::size_t fan_out, InitScheme scheme, std::mt19937_64& rng) {
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("layer dimensions must be positive");
  std::vector<T> w(fan_in * fan_out);
  if (scheme == InitScheme::glorot_uniform) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& x : w) x = static_cast<T>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(fan_in)));
    for (auto& x : w) x = static_cast<T>(dist(rng));
  }
  return w;
}

template <typename T>
std::vector<T> init_weights(std::size_t fan_in, std::size_t fan_out, InitScheme scheme, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_weights<T>(fan_in, fan_out, scheme, rng);
}

template <typename T>
Network<T> make_network(std::span<const std::size_t> dims, std::span<const Activation> activations,
                        InitScheme scheme, std::uint64_t seed) {
  if (dims.size() < 2 || activations.size() != dims.size() - 1)
    throw std::invalid_argument("network needs one activation per layer");
  for (std::size_t i = 0; i + 1 < activations.size(); ++i)
    if (activations[i] == Activation::softmax) throw std::invalid_argument("softmax is only allowed on the output layer");
  if (activations.back() != Activation::softmax) throw std::invalid_argument("output layer must be softmax");
  std::mt19937_64 rng(seed);
  Network<T> net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer<T> layer;
    layer.in_dim = dims[i];
    layer.out_dim = dims[i + 1];
    layer.weights = init_weights<T>(dims[i], dims[i + 1], scheme, rng);
    layer.biases.assign(dims[i + 1], T{0});
    layer.activation = activations[i];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename T>
void activate(Activation a, std::span<T> values, std::size_t cols) {
  switch (a) {
    case Activation::relu:
      for (auto& v : values) v = v > T{0} ? v : T{0};
      break;
    case Activation::selu: {
      const T lambda = static_cast<T>(kSeluLambda);
      const T la = static_cast<T>(kSeluLambda * kSeluAlpha);
      for (auto& v : values) v = v > T{0} ? lambda * v : la * std::expm1(v);
      break;
    }
    case Activation::softmax:
      for (std::size_t r = 0; r * cols < values.size(); ++r) {
        T* row = values.data() + r * cols;
        const T mx = *std::max_element(row, row + cols);
        T sum{0};
        for (std::size_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
      }
      break;
  }
}

namespace {

template <typename T>
void check_input(const Network<T>& net, const Matrix<T>& x) {
  if (net.layers.empty()) throw std::invalid_argument("network has no layers");
  if (x.cols != net.input_dim())
    throw std::invalid_argument("input has " + std::to_string(x.cols) + " features, network expects " +
                                std::to_string(net.input_dim()));
}

// Z = A W + b for one layer.
template <typename T>
Matrix<T> affine(const DenseLayer<T>& layer, const Matrix<T>& a) {
  Matrix<T> z(a.rows, layer.out_dim);
  for (std::size_t r = 0; r < a.rows; ++r) std::copy(layer.biases.begin(), layer.biases.end(), z.data.begin() + r * z.cols);
  kernels::gemm_nn(a.rows, layer.in_dim, layer.out_dim, a.data.data(), layer.weights.data(), z.data.data(), true);
  return z;
}

template <typename T>
T activation_derivative(Activation a, T z) {
  if (a == Activation::relu) return z > T{0} ? T{1} : T{0};
  return z > T{0} ? static_cast<T>(kSeluLambda) : static_cast<T>(kSeluLambda * kSeluAlpha) * std::exp(z);
}

// Row-wise log-softmax of the final logits.
template <typename T>
T log_prob(std::span<const T> logits, int target) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  for (auto v : logits) sum += std::exp(v - mx);
  return logits[static_cast<std::size_t>(target)] - mx - std::log(sum);
}

}  // namespace

template <typename T>
Matrix<T> forward_logits(const Network<T>& net, const Matrix<T>& x) {
  check_input(net, x);
  Matrix<T> a = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    a = affine(net.layers[l], a);
    if (l + 1 < net.layers.size()) activate<T>(net.layers[l].activation, a.data, a.cols);
  }
  return a;
}

template <typename T>
Matrix<T> forward(const Network<T>& net, const Matrix<T>& x) {
  auto out = forward_logits(net, x);
  activate<T>(Activation::softmax, out.data, out.cols);
  return out;
}

template <typename T>
T loss_and_grads(const Network<T>& net, const Matrix<T>& x, std::span<const int> targets, Gradients<T>& grads) {
  check_input(net, x);
  if (targets.size() != x.rows) throw std::invalid_argument("one target per sample required");
  const std::size_t batch = x.rows;
  const std::size_t depth = net.layers.size();
  for (auto t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= net.output_dim()) throw std::invalid_argument("target class out of range");

  // pre[l] = Z of layer l, post[l] = input of layer l (post[0] = x).
  std::vector<Matrix<T>> pre(depth), post(depth + 1);
  post[0] = x;
  for (std::size_t l = 0; l < depth; ++l) {
    pre[l] = affine(net.layers[l], post[l]);
    post[l + 1] = pre[l];
    if (l + 1 < depth) activate<T>(net.layers[l].activation, post[l + 1].data, post[l + 1].cols);
  }

  const auto& logits = pre[depth - 1];
  T loss{0};
  for (std::size_t r = 0; r < batch; ++r) loss -= log_prob<T>(logits.row(r), targets[r]);
  loss /= static_cast<T>(batch);

  // dZ of the softmax/cross-entropy output: (P - Y) / B.
  Matrix<T> dz = logits;
  activate<T>(Activation::softmax, dz.data, dz.cols);
  const T inv_batch = T{1} / static_cast<T>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    dz(r, static_cast<std::size_t>(targets[r])) -= T{1};
    for (std::size_t c = 0; c < dz.cols; ++c) dz(r, c) *= inv_batch;
  }

  grads.weights.resize(depth);
  grads.biases.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = net.layers[l];
    auto& gw = grads.weights[l];
    auto& gb = grads.biases[l];
    gw.assign(layer.in_dim * layer.out_dim, T{0});
    gb.assign(layer.out_dim, T{0});
    kernels::gemm_tn(batch, layer.in_dim, layer.out_dim, post[l].data.data(), dz.data.data(), gw.data(), false);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < layer.out_dim; ++c) gb[c] += dz(r, c);
    if (l == 0) break;
    Matrix<T> da(batch, layer.in_dim);
    kernels::gemm_nt(batch, layer.out_dim, layer.in_dim, dz.data.data(), layer.weights.data(), da.data.data(), false);
    const auto act = net.layers[l - 1].activation;
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= activation_derivative(act, pre[l - 1].data[i]);
    dz = std::move(da);
  }
  return loss;
}

template <typename T>
T loss_and_grads(const Network<T>& net, const Matrix<T>& x, const Matrix<T>& one_hot, Gradients<T>& grads) {
  if (one_hot.rows != x.rows || one_hot.cols != net.output_dim())
    throw std::invalid_argument("target matrix shape does not match batch x classes");
  std::vector<int> targets(one_hot.rows);
  for (std::size_t r = 0; r < one_hot.rows; ++r) {
    int hot = -1;
    for (std::size_t c = 0; c < one_hot.cols; ++c) {
      const T v = one_hot(r, c);
      if (v == T{1} && hot < 0)
        hot = static_cast<int>(c);
      else if (v != T{0})
        throw std::invalid_argument("target row " + std::to_string(r) + " is not one-hot");
    }
    if (hot < 0) throw std::invalid_argument("target row " + std::to_string(r) + " is not one-hot");
    targets[r] = hot;
  }
  return loss_and_grads(net, x, std::span<const int>(targets), grads);
}

template <typename T>
T mean_loss(const Network<T>& net, const Matrix<T>& x, std::span<const int> targets) {
  const auto logits = forward_logits(net, x);
  T loss{0};
  for (std::size_t r = 0; r < x.rows; ++r) loss -= log_prob<T>(logits.row(r), targets[r]);
  return loss / static_cast<T>(x.rows);
}

#define ENCOD_INSTANTIATE_NET(T)                                                                               \
  template struct Network<T>;                                                                                  \
  template std::vector<T> init_weights<T>(std::size_t, std::size_t, InitScheme, std::mt19937_64&);             \
  template std::vector<T> init_weights<T>(std::size_t, std::size_t, InitScheme, std::uint64_t);                \
  template Network<T> make_network<T>(std::span<const std::size_t>, std::span<const Activation>, InitScheme,   \
                                      std::uint64_t);                                                          \
  template void activate<T>(Activation, std::span<T>, std::size_t);                                            \
  template Matrix<T> forward<T>(const Network<T>&, const Matrix<T>&);                                          \
  template Matrix<T> forward_logits<T>(const Network<T>&, const Matrix<T>&);                                   \
  template T loss_and_grads<T>(const Network<T>&, const Matrix<T>&, std::span<const int>, Gradients<T>&);      \
  template T loss_and_grads<T>(const Network<T>&, const Matrix<T>&, const Matrix<T>&, Gradients<T>&);          \
  template T mean_loss<T>(const Network<T>&, const Matrix<T>&, std::span<const int>);

ENCOD_INSTANTIATE_NET(float)
ENCOD_INSTANTIATE_NET(double)

// --- models ---------------------------------------------------------------------

std::optional<int> MlpModel::class_of(FormatLabel label) const {
  const auto name = to_string(label);
  for (std::size_t i = 0; i < class_labels.size(); ++i)
    if (class_labels[i] == name) return static_cast<int>(i);
  if (is_general_purpose_compressed(label))
    for (std::size_t i = 0; i < class_labels.size(); ++i)
      if (class_labels[i] == "cmp") return static_cast<int>(i);
  return std::nullopt;
}

int MlpModel::encrypted_class() const {
  const auto c = class_of(FormatLabel::enc);
  if (!c) throw std::logic_error("model has no 'enc' class");
  return *c;
}

void MlpModel::attach_scaler(ScalerParams s) {
  scaler_ref = s.digest();
  scaler = std::move(s);
}

MlpModel build_binary(FormatLabel format, std::uint64_t seed, std::span<const std::size_t> hidden) {
  if (is_encrypted(format)) throw std::invalid_argument("a binary model needs a compressed format, not enc");
  std::vector<std::size_t> dims{kFeatureDim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2);
  std::vector<Activation> acts(hidden.size(), Activation::relu);
  acts.push_back(Activation::softmax);
  MlpModel m;
  m.net = make_network<float>(dims, acts, InitScheme::glorot_uniform, seed);
  m.init = InitScheme::glorot_uniform;
  m.class_labels = {std::string(to_string(format)), "enc"};
  m.task = "binary:" + std::string(to_string(format));
  m.seed = seed;
  return m;
}

MlpModel build_multiclass(std::uint64_t seed, std::span<const std::size_t> hidden) {
  std::vector<std::size_t> dims{kFeatureDim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(6);
  std::vector<Activation> acts(hidden.size(), Activation::selu);
  acts.push_back(Activation::softmax);
  MlpModel m;
  m.net = make_network<float>(dims, acts, InitScheme::lecun_normal, seed);
  m.init = InitScheme::lecun_normal;
  m.class_labels = {"enc", "cmp", "png", "jpeg", "mp3", "pdf"};
  m.task = "multiclass";
  m.seed = seed;
  return m;
}

MlpModel build_for_task(std::string_view task, std::uint64_t seed) {
  if (task == "multiclass") return build_multiclass(seed);
  if (task.starts_with("binary:")) return build_binary(parse_label(task.substr(7)), seed);
  throw std::invalid_argument("task must be 'multiclass' or 'binary:<format>', got '" + std::string(task) + "'");
}

namespace {

Prediction finish_prediction(const MlpModel& model, const Matrix<float>& logits) {
  Prediction p;
  p.probabilities.resize(logits.cols);
  double mx = logits.data[0];
  for (auto v : logits.data) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.cols; ++c) sum += (p.probabilities[c] = std::exp(logits.data[c] - mx));
  for (auto& v : p.probabilities) v /= sum;
  p.argmax = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                              p.probabilities.begin());
  p.label = model.class_labels.at(static_cast<std::size_t>(p.argmax));
  return p;
}

}  // namespace

Prediction predict(const MlpModel& model, std::span<const std::uint8_t> payload) {
  if (!model.scaler) throw std::invalid_argument("model has no scaler attached");
  if (model.fragment_size != 0 && payload.size() != model.fragment_size)
    throw std::invalid_argument("payload of " + std::to_string(payload.size()) + " bytes given to a model trained on " +
                                std::to_string(model.fragment_size) + "-byte fragments");
  const kernels::Fragment frag = payload;
  Matrix<float> x;
  x.rows = 1;
  x.cols = kFeatureDim;
  x.data = kernels::feature_matrix_serial(std::span(&frag, 1), &*model.scaler);
  return finish_prediction(model, forward_logits(model.net, x));
}

Prediction predict_scaled(const MlpModel& model, const FeatureVector& scaled, std::string_view scaler_digest) {
  if (model.scaler_ref.empty()) throw std::invalid_argument("model has no scaler reference");
  if (scaler_digest != model.scaler_ref)
    throw std::invalid_argument("features were scaled by a different scaler than the model was trained with");
  if (!scaled.scaled) throw std::invalid_argument("predict_scaled expects scaled features");
  Matrix<float> x(1, scaled.values.size());
  for (std::size_t i = 0; i < scaled.values.size(); ++i) x.data[i] = static_cast<float>(scaled.values[i]);
  return finish_prediction(model, forward_logits(model.net, x));
}

// --- model file -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'N', 'C', 'O', 'D', 'M', 'L', 'P'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated model file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

void put_floats(std::ostream& out, const std::vector<float>& values) {
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<float> out(n);
  for (auto& v : out) v = std::bit_cast<float>(get_u32(in));
  return out;
}

}  // namespace

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  json header;
  header["tool_version"] = std::string(kToolVersion);
  header["task"] = model.task;
  header["fragment_size"] = model.fragment_size;
  header["seed"] = model.seed;
  header["init"] = std::string(to_string(model.init));
  header["labels"] = model.class_labels;
  header["layers"] = json::array();
  for (const auto& l : model.net.layers)
    header["layers"].push_back({{"in", l.in_dim}, {"out", l.out_dim}, {"activation", std::string(to_string(l.activation))}});
  header["scaler_ref"] = model.scaler_ref;
  header["scaler"] = model.scaler ? model.scaler->to_json() : json(nullptr);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& l : model.net.layers) {
    put_floats(out, l.weights);
    put_floats(out, l.biases);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path.string() + " is not a model file");
  if (const auto v = get_u32(in); v != kModelVersion)
    throw std::runtime_error("unsupported model version " + std::to_string(v));
  std::string text(get_u32(in), '\0');
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  if (!in) throw std::runtime_error("truncated model header");
  const auto header = json::parse(text);

  MlpModel m;
  m.task = header.at("task").get<std::string>();
  m.fragment_size = header.at("fragment_size").get<std::size_t>();
  m.seed = header.at("seed").get<std::uint64_t>();
  m.init = parse_init(header.at("init").get<std::string>());
  m.class_labels = header.at("labels").get<std::vector<std::string>>();
  std::size_t prev_out = kFeatureDim;
  for (const auto& lj : header.at("layers")) {
    DenseLayer<float> l;
    l.in_dim = lj.at("in").get<std::size_t>();
    l.out_dim = lj.at("out").get<std::size_t>();
    l.activation = parse_activation(lj.at("activation").get<std::string>());
    if (l.in_dim != prev_out) throw std::runtime_error("model layer dimensions do not chain");
    prev_out = l.out_dim;
    l.weights = get_floats(in, l.in_dim * l.out_dim);
    l.biases = get_floats(in, l.out_dim);
    m.net.layers.push_back(std::move(l));
  }
  if (m.net.layers.empty() || m.net.layers.back().activation != Activation::softmax ||
      m.net.output_dim() != m.class_labels.size())
    throw std::runtime_error("model architecture is inconsistent with its labels");
  m.scaler_ref = header.at("scaler_ref").get<std::string>();
  if (!header.at("scaler").is_null()) {
    m.scaler = ScalerParams::from_json(header["scaler"]);
    if (m.scaler->digest() != m.scaler_ref) throw std::runtime_error("model file scaler does not match its scaler_ref");
  }
  return m;
}

// --- training ----------------------------------------------------------------------

namespace {

Matrix<float> gather_rows(const Matrix<float>& x, std::span<const std::size_t> rows) {
  Matrix<float> out(rows.size(), x.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * x.cols), x.cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * x.cols));
  return out;
}

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

Evaluation evaluate(const Network<float>& net, const Dataset& data) {
  constexpr std::size_t kChunk = 2048;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    Matrix<float> x(end - start, data.x.cols);
    std::copy(data.x.data.begin() + static_cast<std::ptrdiff_t>(start * data.x.cols),
              data.x.data.begin() + static_cast<std::ptrdiff_t>(end * data.x.cols), x.data.begin());
    const auto logits = forward_logits(net, x);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto row = logits.row(r);
      loss -= static_cast<double>(log_prob<float>(row, data.y[start + r]));
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += best == data.y[start + r];
    }
  }
  return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

struct AdamState {
  std::vector<std::vector<float>> m_w, v_w, m_b, v_b;
  std::size_t step = 0;
};

void adam_update(std::vector<float>& param, std::vector<float>& m, std::vector<float>& v, const std::vector<float>& g,
                 const TrainConfig& cfg, double lr_t) {
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto eps = static_cast<float>(cfg.epsilon), lr = static_cast<float>(lr_t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    param[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace

double accuracy(const MlpModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  return evaluate(model.net, data).accuracy;
}

TrainResult train(MlpModel& model, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& cfg) {
  if (train_set.size() == 0 || dev_set.size() == 0) throw std::invalid_argument("training needs non-empty train and dev sets");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0 || !(cfg.learning_rate > 0) || cfg.patience == 0)
    throw std::invalid_argument("train config values must be positive");
  if (!model.scaler) throw std::invalid_argument("fit and attach the scaler on the train split before training");

  auto& net = model.net;
  AdamState adam;
  for (const auto& l : net.layers) {
    adam.m_w.emplace_back(l.weights.size(), 0.0f);
    adam.v_w.emplace_back(l.weights.size(), 0.0f);
    adam.m_b.emplace_back(l.biases.size(), 0.0f);
    adam.v_b.emplace_back(l.biases.size(), 0.0f);
  }

  TrainResult result;
  {
    const auto t = evaluate(net, train_set);
    const auto d = evaluate(net, dev_set);
    result.log.push_back({0, t.loss, d.loss, d.accuracy});
  }
  double best_dev = result.log.front().dev_loss;
  Network<float> best_net = net;
  std::size_t stale = 0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Gradients<float> grads;
  std::vector<int> targets;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto xb = gather_rows(train_set.x, idx);
      targets.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) targets[i] = train_set.y[idx[i]];
      const float loss = loss_and_grads(net, xb, std::span<const int>(targets), grads);
      loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());

      ++adam.step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
      const double lr_t = cfg.learning_rate * std::sqrt(bc2) / bc1;
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        adam_update(net.layers[l].weights, adam.m_w[l], adam.v_w[l], grads.weights[l], cfg, lr_t);
        adam_update(net.layers[l].biases, adam.m_b[l], adam.v_b[l], grads.biases[l], cfg, lr_t);
      }
    }
    const auto d = evaluate(net, dev_set);
    result.log.push_back({epoch, loss_sum / static_cast<double>(order.size()), d.loss, d.accuracy});
    spdlog::info("epoch {:>3}: train loss {:.5f}  dev loss {:.5f}  dev acc {:.4f}", epoch, result.log.back().train_loss,
                 d.loss, d.accuracy);
    if (d.loss < best_dev) {
      best_dev = d.loss;
      best_net = net;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  net = std::move(best_net);
  return result;
}

TaskData prepare_task(const FragmentStore& store, MlpModel& model, std::size_t per_class_quota, std::uint64_t seed) {
  const auto& manifest = store.manifest();
  if (!manifest.is_split()) throw std::invalid_argument("store has no train/dev/test split; run `corpus split` first");
  if (model.fragment_size == 0) model.fragment_size = store.fragment_size();
  if (model.fragment_size != store.fragment_size())
    throw std::invalid_argument("model and store fragment sizes differ");

  const std::size_t n_classes = model.class_labels.size();
  std::vector<std::vector<FormatLabel>> constituents(n_classes);
  for (const auto& lc : manifest.labels)
    if (const auto c = model.class_of(lc.tag)) constituents[static_cast<std::size_t>(*c)].push_back(lc.tag);
  for (std::size_t c = 0; c < n_classes; ++c)
    if (constituents[c].empty())
      throw std::invalid_argument("store has no fragments for class '" + model.class_labels[c] + "'");

  constexpr Split kSplits[3] = {Split::train, Split::dev, Split::test};
  constexpr double kFractions[3] = {0.85, 0.05, 0.10};
  std::vector<std::size_t> picked[3];
  std::vector<int> labels[3];
  std::mt19937_64 rng(seed);

  for (int s = 0; s < 3; ++s) {
    // Balanced per-class target: the smallest per-constituent availability
    // times the constituent count bounds every class.
    std::size_t target = SIZE_MAX;
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::size_t avail = SIZE_MAX;
      for (auto lab : constituents[c]) avail = std::min(avail, manifest.indices(lab, kSplits[s]).size());
      target = std::min(target, avail * constituents[c].size());
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::size_t single = SIZE_MAX;
      for (auto lab : constituents[c]) single = std::min(single, manifest.indices(lab, kSplits[s]).size());
      if (constituents[c].size() == 1) target = std::min(target, single);
    }
    if (per_class_quota > 0)
      target = std::min(target, static_cast<std::size_t>(std::llround(kFractions[s] * static_cast<double>(per_class_quota))));
    if (target == 0) throw std::invalid_argument(std::string("empty ") + std::string(to_string(kSplits[s])) + " split for the task");

    for (std::size_t c = 0; c < n_classes; ++c) {
      const std::size_t k = constituents[c].size();
      for (std::size_t j = 0; j < k; ++j) {
        auto idx = manifest.indices(constituents[c][j], kSplits[s]);
        const std::size_t share = target / k + (j < target % k ? 1 : 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(share);
        std::sort(idx.begin(), idx.end());
        for (auto i : idx) {
          picked[s].push_back(i);
          labels[s].push_back(static_cast<int>(c));
        }
      }
    }
  }

  auto frags_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<kernels::Fragment> frags;
    frags.reserve(idx.size());
    for (auto i : idx) frags.push_back(store.fragment(i));
    return frags;
  };

  TaskData data;
  const auto train_frags = frags_of(picked[0]);
  model.attach_scaler(kernels::fit_scaler_rows(kernels::feature_matrix(train_frags, nullptr), train_frags.size()));
  auto make = [&](const std::vector<kernels::Fragment>& frags, std::vector<int> y) {
    Dataset d;
    d.x.rows = frags.size();
    d.x.cols = kFeatureDim;
    d.x.data = kernels::feature_matrix(frags, &*model.scaler);
    d.y = std::move(y);
    return d;
  };
  data.train = make(train_frags, labels[0]);
  data.dev = make(frags_of(picked[1]), labels[1]);
  data.test = make(frags_of(picked[2]), labels[2]);
  data.train_records = std::move(picked[0]);
  data.dev_records = std::move(picked[1]);
  data.test_records = std::move(picked[2]);
  return data;
}

}  // namespace encod
