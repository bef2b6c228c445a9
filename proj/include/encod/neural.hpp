#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "encod/features.hpp"
#include "encod/format.hpp"

namespace encod {

class FragmentStore;

enum class Activation : std::uint8_t { relu, selu, softmax };
enum class InitScheme : std::uint8_t { glorot_uniform, lecun_normal };

std::string_view to_string(Activation a) noexcept;
std::string_view to_string(InitScheme s) noexcept;
Activation parse_activation(std::string_view text);
InitScheme parse_init(std::string_view text);

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{0}) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// Fully-connected layer; weights are in_dim x out_dim, row-major.
template <typename T>
struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<T> weights;
  std::vector<T> biases;
  Activation activation = Activation::relu;
};

template <typename T>
struct Network {
  std::vector<DenseLayer<T>> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
  std::size_t parameter_count() const;
};

template <typename T>
struct Gradients {
  std::vector<std::vector<T>> weights;
  std::vector<std::vector<T>> biases;
};

/// glorot_uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out));
/// lecun_normal: N(0, 1 / fan_in). Returns fan_in x fan_out values.
template <typename T>
std::vector<T> init_weights(std::size_t fan_in, std::size_t fan_out, InitScheme scheme, std::mt19937_64& rng);
template <typename T>
std::vector<T> init_weights(std::size_t fan_in, std::size_t fan_out, InitScheme scheme, std::uint64_t seed);

/// Layers dims[i] -> dims[i+1]; biases start at zero.
template <typename T>
Network<T> make_network(std::span<const std::size_t> dims, std::span<const Activation> activations,
                        InitScheme scheme, std::uint64_t seed);

template <typename T>
void activate(Activation a, std::span<T> values, std::size_t cols);

/// Class probabilities for a batch (rows = samples).
template <typename T>
Matrix<T> forward(const Network<T>& net, const Matrix<T>& x);

/// Pre-softmax outputs of the last layer.
template <typename T>
Matrix<T> forward_logits(const Network<T>& net, const Matrix<T>& x);

/// Mean categorical cross-entropy and its gradient with respect to every
/// parameter. `targets` holds the true class index per row.
template <typename T>
T loss_and_grads(const Network<T>& net, const Matrix<T>& x, std::span<const int> targets, Gradients<T>& grads);

/// One-hot variant; throws std::invalid_argument unless each row is one-hot.
template <typename T>
T loss_and_grads(const Network<T>& net, const Matrix<T>& x, const Matrix<T>& one_hot, Gradients<T>& grads);

template <typename T>
T mean_loss(const Network<T>& net, const Matrix<T>& x, std::span<const int> targets);

// --- models -------------------------------------------------------------------

struct MlpModel {
  Network<float> net;
  InitScheme init = InitScheme::glorot_uniform;
  std::vector<std::string> class_labels;
  std::string task;  // "binary:<fmt>" or "multiclass"
  std::size_t fragment_size = 0;
  std::uint64_t seed = 0;
  std::optional<ScalerParams> scaler;
  std::string scaler_ref;  // digest of the scaler the model was trained with

  /// Class index for a ground-truth label; zip/gzip/rar map to "cmp" when present.
  std::optional<int> class_of(FormatLabel label) const;
  int encrypted_class() const;
  void attach_scaler(ScalerParams scaler);
};

inline const std::vector<std::size_t> kBinaryHidden = {128, 64, 16};
inline const std::vector<std::size_t> kMulticlassHidden = {256, 128, 64, 32};

/// 256 -> 128 -> 64 -> 16 -> 2, ReLU x3 + softmax, Glorot uniform; labels {fmt, enc}.
MlpModel build_binary(FormatLabel format, std::uint64_t seed,
                      std::span<const std::size_t> hidden = kBinaryHidden);
/// 256 -> 256 -> 128 -> 64 -> 32 -> 6, SeLU x4 + softmax, LeCun normal;
/// labels {enc, cmp, png, jpeg, mp3, pdf}.
MlpModel build_multiclass(std::uint64_t seed, std::span<const std::size_t> hidden = kMulticlassHidden);

/// Builds the model named by a task string ("binary:<fmt>" or "multiclass").
MlpModel build_for_task(std::string_view task, std::uint64_t seed);

struct Prediction {
  std::vector<double> probabilities;
  int argmax = 0;
  std::string label;
};

/// extract -> scale (model's scaler) -> forward. Throws std::invalid_argument
/// when the model has no scaler or the payload size differs from the model's.
/// The scaler/scaler_ref pairing is checked by load_model and nn_detector.
Prediction predict(const MlpModel& model, std::span<const std::uint8_t> payload);

/// Forward pass on features scaled elsewhere; refuses a scaler whose digest is
/// not the model's scaler_ref.
Prediction predict_scaled(const MlpModel& model, const FeatureVector& scaled, std::string_view scaler_digest);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

// --- training ------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
};

struct Dataset {
  Matrix<float> x;  // scaled features
  std::vector<int> y;
  std::size_t size() const { return y.size(); }
};

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before training
  double train_loss = 0;
  double dev_loss = 0;
  double dev_accuracy = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

/// Mini-batch Adam with per-epoch seeded shuffling and early stopping on dev
/// loss; `model` ends up holding the best-dev checkpoint.
TrainResult train(MlpModel& model, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& cfg);

double accuracy(const MlpModel& model, const Dataset& data);

/// Train/dev/test data for a model's task drawn from a split store. Classes
/// are balanced per split; "cmp" draws equal shares from zip/gzip/rar.
/// per_class_quota > 0 caps the per-class total. The scaler is fitted on the
/// training rows only and attached to the model.
struct TaskData {
  Dataset train, dev, test;
  std::vector<std::size_t> train_records, dev_records, test_records;
};
TaskData prepare_task(const FragmentStore& store, MlpModel& model, std::size_t per_class_quota,
                      std::uint64_t seed);

}  // namespace encod
