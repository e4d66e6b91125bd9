#pragma once

// Dense feed-forward networks with reverse-mode gradients, Adam, and Polyak averaging.
//
// Batches are row-major in the logical sense: an input matrix is [batch x in_dim],
// one sample per row. All arithmetic is float64.

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "cgp/rng.hpp"

namespace cgp::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Identity, ReLU, Tanh };

const char* to_string(Activation a);

struct Layer {
  Matrix weight;  // [in x out]
  Vector bias;    // [out]
};

/// Per-layer inputs and activations recorded by one forward pass; consumed by backward().
struct ForwardTape {
  std::vector<int> layer_sizes;
  std::vector<Matrix> inputs;   // input to layer l
  std::vector<Matrix> outputs;  // post-activation output of layer l

  bool empty() const noexcept { return inputs.empty(); }
};

/// MLP with ReLU hidden layers and a configurable output activation.
class DenseNet {
 public:
  /// Seeded init: every weight and bias ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
  DenseNet(std::vector<int> layer_sizes, Activation output_activation, Rng& rng);

  /// All parameters zero.
  static DenseNet zeros(std::vector<int> layer_sizes, Activation output_activation);

  Matrix forward(const Matrix& inputs) const;
  Matrix forward(const Matrix& inputs, ForwardTape& tape) const;

  const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
  int input_dim() const noexcept { return sizes_.front(); }
  int output_dim() const noexcept { return sizes_.back(); }
  Activation output_activation() const noexcept { return output_; }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const;
  bool same_architecture(const DenseNet& other) const;
  bool all_finite() const;

  /// Visits every scalar parameter in a fixed order (layer, weight col-major, then bias).
  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& layer : layers_) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) f(layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) f(layer.bias.data()[i]);
    }
  }

  bool operator==(const DenseNet& other) const;

 private:
  DenseNet(std::vector<int> layer_sizes, Activation output_activation);
  Matrix run(const Matrix& inputs, ForwardTape* tape) const;
  void check_input(const Matrix& inputs) const;

  std::vector<int> sizes_;
  Activation output_;
  std::vector<Layer> layers_;
};

/// Parameter-shaped gradient buffers.
struct Gradients {
  std::vector<Layer> layers;

  static Gradients zeros_like(const DenseNet& net);
  bool all_finite() const;
  bool congruent_with(const DenseNet& net) const;
};

struct BackwardResult {
  Gradients params;
  Matrix input_grad;  // [batch x in_dim]
};

/// Propagates `upstream` (dLoss/dOutput, [batch x out_dim]) back through the recorded pass.
/// Gradients are summed over the batch; loss means belong in `upstream`.
BackwardResult backward(const DenseNet& net, const ForwardTape& tape, const Matrix& upstream);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamState(const DenseNet& net, AdamOptions options);

  AdamOptions options;
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam, in place. Throws NumericError on non-finite gradients without touching
/// the network or the state.
void adam_step(DenseNet& net, const Gradients& grads, AdamState& state);

/// target <- tau * source + (1 - tau) * target.
void polyak_update(DenseNet& target, const DenseNet& source, double tau);

// Artifact format "CGPN" v1: layer sizes, output activation, then every layer's weight
// (row-major, [in x out]) followed by its bias.
void save(const DenseNet& net, std::ostream& out);
DenseNet load(std::istream& in);
void save_file(const DenseNet& net, const std::filesystem::path& path);
DenseNet load_file(const std::filesystem::path& path);

}  // namespace cgp::nn
