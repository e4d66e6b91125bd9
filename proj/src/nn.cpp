#include "cgp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cgp/errors.hpp"
#include "cgp/serialize.hpp"

namespace cgp::nn {

namespace {

constexpr std::uint32_t kNetVersion = 1;

void validate_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ShapeError("DenseNet needs at least an input and an output size");
  for (int s : sizes) {
    if (s <= 0) throw ShapeError("DenseNet layer sizes must be positive");
  }
}

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + " x " + std::to_string(c) + "]";
}

void apply_activation(Matrix& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::ReLU:
      z = z.cwiseMax(0.0);
      break;
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
  }
}

// dLoss/dPreactivation given dLoss/dActivation and the activation output.
void activation_backward(Matrix& grad, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::Identity:
      break;
    case Activation::ReLU:
      grad = (out.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::Tanh:
      grad = (grad.array() * (1.0 - out.array().square())).matrix();
      break;
  }
}

bool layers_finite(const std::vector<Layer>& layers) {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

std::vector<Layer> zero_layers(const std::vector<int>& sizes) {
  std::vector<Layer> out;
  out.reserve(sizes.size() - 1);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    out.push_back({Matrix::Zero(sizes[i], sizes[i + 1]), Vector::Zero(sizes[i + 1])});
  }
  return out;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::ReLU:
      return "relu";
    case Activation::Tanh:
      return "tanh";
  }
  return "?";
}

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation output_activation)
    : sizes_(std::move(layer_sizes)), output_(output_activation) {
  validate_sizes(sizes_);
  layers_ = zero_layers(sizes_);
}

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation output_activation, Rng& rng)
    : DenseNet(std::move(layer_sizes), output_activation) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = dist(rng);
    }
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = dist(rng);
  }
}

DenseNet DenseNet::zeros(std::vector<int> layer_sizes, Activation output_activation) {
  return DenseNet(std::move(layer_sizes), output_activation);
}

void DenseNet::check_input(const Matrix& inputs) const {
  if (inputs.cols() != input_dim()) {
    throw ShapeError("forward: input " + shape_str(inputs.rows(), inputs.cols()) + " but network expects " +
                     std::to_string(input_dim()) + " columns");
  }
}

Matrix DenseNet::run(const Matrix& inputs, ForwardTape* tape) const {
  check_input(inputs);
  if (tape) {
    tape->layer_sizes = sizes_;
    tape->inputs.clear();
    tape->outputs.clear();
    tape->inputs.reserve(layers_.size());
    tape->outputs.reserve(layers_.size());
  }
  Matrix x = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix z = x * layer.weight;
    z.rowwise() += layer.bias.transpose();
    apply_activation(z, l + 1 == layers_.size() ? output_ : Activation::ReLU);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->outputs.push_back(z);
    }
    x = std::move(z);
  }
  return x;
}

Matrix DenseNet::forward(const Matrix& inputs) const {
  // Large CEM batches are evaluated in row blocks so temporaries stay cache sized.
  constexpr Eigen::Index kBlock = 512;
  if (inputs.rows() <= kBlock) return run(inputs, nullptr);
  check_input(inputs);
  Matrix out(inputs.rows(), output_dim());
  Matrix x, z;
  for (Eigen::Index r0 = 0; r0 < inputs.rows(); r0 += kBlock) {
    const auto rows = std::min(kBlock, inputs.rows() - r0);
    x = inputs.middleRows(r0, rows);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      z.noalias() = x * layer.weight;
      z.rowwise() += layer.bias.transpose();
      apply_activation(z, l + 1 == layers_.size() ? output_ : Activation::ReLU);
      x.swap(z);
    }
    out.middleRows(r0, rows) = x;
  }
  return out;
}

Matrix DenseNet::forward(const Matrix& inputs, ForwardTape& tape) const { return run(inputs, &tape); }

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool DenseNet::same_architecture(const DenseNet& other) const {
  return sizes_ == other.sizes_ && output_ == other.output_;
}

bool DenseNet::all_finite() const { return layers_finite(layers_); }

bool DenseNet::operator==(const DenseNet& other) const {
  if (!same_architecture(other)) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight != other.layers_[l].weight || layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const DenseNet& net) { return Gradients{zero_layers(net.layer_sizes())}; }

bool Gradients::all_finite() const { return layers_finite(layers); }

bool Gradients::congruent_with(const DenseNet& net) const {
  const auto& ref = net.layers();
  if (layers.size() != ref.size()) return false;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    if (layers[l].weight.rows() != ref[l].weight.rows() || layers[l].weight.cols() != ref[l].weight.cols() ||
        layers[l].bias.size() != ref[l].bias.size()) {
      return false;
    }
  }
  return true;
}

BackwardResult backward(const DenseNet& net, const ForwardTape& tape, const Matrix& upstream) {
  if (tape.empty()) throw UsageError("backward: no recorded forward pass");
  if (tape.layer_sizes != net.layer_sizes() || tape.inputs.size() != net.layers().size()) {
    throw UsageError("backward: tape was recorded on a different architecture");
  }
  const auto batch = tape.inputs.front().rows();
  if (upstream.rows() != batch || upstream.cols() != net.output_dim()) {
    throw ShapeError("backward: upstream gradient " + shape_str(upstream.rows(), upstream.cols()) + ", expected " +
                     shape_str(batch, net.output_dim()));
  }

  const auto& layers = net.layers();
  BackwardResult result{Gradients{std::vector<Layer>(layers.size())}, Matrix()};
  Matrix grad = upstream;
  for (std::size_t i = layers.size(); i-- > 0;) {
    activation_backward(grad, tape.outputs[i], i + 1 == layers.size() ? net.output_activation() : Activation::ReLU);
    auto& g = result.params.layers[i];
    g.weight.noalias() = tape.inputs[i].transpose() * grad;
    g.bias = grad.colwise().sum().transpose();
    Matrix next = grad * layers[i].weight.transpose();
    grad = std::move(next);
  }
  result.input_grad = std::move(grad);
  return result;
}

AdamState::AdamState(const DenseNet& net, AdamOptions opts)
    : options(opts), first_moment(zero_layers(net.layer_sizes())), second_moment(zero_layers(net.layer_sizes())) {
  if (!(opts.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (opts.weight_decay < 0.0) throw ConfigError("weight_decay", "must be non-negative");
}

void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) {
  if (!grads.congruent_with(net)) throw ShapeError("adam_step: gradient shapes do not match network");
  if (state.first_moment.size() != net.layers().size()) throw ShapeError("adam_step: optimizer state does not match network");
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");

  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    if (o.weight_decay != 0.0) {
      const auto g = (grad.array() + o.weight_decay * param.array()).eval();
      m.array() = o.beta1 * m.array() + (1.0 - o.beta1) * g;
      v.array() = o.beta2 * v.array() + (1.0 - o.beta2) * g.square();
    } else {
      m.array() = o.beta1 * m.array() + (1.0 - o.beta1) * grad.array();
      v.array() = o.beta2 * v.array() + (1.0 - o.beta2) * grad.array().square();
    }
    param.array() -= o.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + o.epsilon);
  };

  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.layers[l].weight, state.first_moment[l].weight, state.second_moment[l].weight);
    update(layers[l].bias, grads.layers[l].bias, state.first_moment[l].bias, state.second_moment[l].bias);
  }
}

void polyak_update(DenseNet& target, const DenseNet& source, double tau) {
  if (!target.same_architecture(source)) throw ShapeError("polyak_update: architectures differ");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau", "must lie in (0, 1]");
  auto& dst = target.layers();
  const auto& src = source.layers();
  for (std::size_t l = 0; l < dst.size(); ++l) {
    if (tau == 1.0) {
      dst[l] = src[l];
      continue;
    }
    dst[l].weight = tau * src[l].weight + (1.0 - tau) * dst[l].weight;
    dst[l].bias = tau * src[l].bias + (1.0 - tau) * dst[l].bias;
  }
}

void save(const DenseNet& net, std::ostream& out) {
  io::BinaryWriter w(out, "CGPN", kNetVersion);
  w.u64(net.layer_sizes().size());
  for (int s : net.layer_sizes()) w.u64(static_cast<std::uint64_t>(s));
  w.u32(static_cast<std::uint32_t>(net.output_activation()));
  for (const auto& layer : net.layers()) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weight;
    w.f64s({rm.data(), static_cast<std::size_t>(rm.size())});
    w.f64s({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())});
  }
}

DenseNet load(std::istream& in) {
  io::BinaryReader r(in, "CGPN", kNetVersion);
  const auto n = r.u64();
  if (n < 2 || n > 64) throw FormatError("network file: implausible layer count");
  std::vector<int> sizes;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto s = r.u64();
    if (s == 0 || s > (1u << 20)) throw FormatError("network file: implausible layer size");
    sizes.push_back(static_cast<int>(s));
  }
  const auto act = r.u32();
  if (act > static_cast<std::uint32_t>(Activation::Tanh)) throw FormatError("network file: unknown activation");
  auto net = DenseNet::zeros(sizes, static_cast<Activation>(act));
  for (auto& layer : net.layers()) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(layer.weight.rows(), layer.weight.cols());
    r.f64s({rm.data(), static_cast<std::size_t>(rm.size())});
    layer.weight = rm;
    r.f64s({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())});
  }
  return net;
}

void save_file(const DenseNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save(net, out);
}

DenseNet load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load(in);
}

}  // namespace cgp::nn
