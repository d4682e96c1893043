#pragma once

#include <string>
#include <vector>

#include "clel/common.hpp"

namespace clel {

enum class Activation { swish, leaky_relu, identity };

inline constexpr double kLeakySlope = 0.2;

enum class LayerKind { dense, conv };

struct InputShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int out = 0;  // output features (dense) or output channels (conv)
  int kernel = 3;
  int stride = 2;
  int padding = 1;
};

struct NetworkSpec {
  InputShape input;
  std::vector<LayerSpec> layers;
  Activation activation = Activation::swish;
  bool bias = true;
  bool spectral_norm = false;
};

/// Mutable view of one named parameter tensor and its gradient accumulator.
struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

/// Non-trainable persistent state (power-iteration vectors).
struct BufferRef {
  std::string name;
  Matrix* value;
};

struct Layer {
  LayerKind kind = LayerKind::dense;
  int in_dim = 0;
  int out_dim = 0;
  // conv geometry; unused for dense layers
  int in_channels = 0, in_h = 0, in_w = 0;
  int out_channels = 0, out_h = 0, out_w = 0;
  int kernel = 0, stride = 1, padding = 0;

  Matrix weight;  // out x fan_in (conv: out_channels x in_channels*k*k)
  Matrix bias;    // 1 x out (conv: 1 x out_channels); empty without bias
  Matrix weight_grad;
  Matrix bias_grad;

  bool spectral = false;
  Matrix sn_u;  // 1 x rows(weight)
  Matrix sn_v;  // 1 x cols(weight)
  double sn_sigma = 1.0;
  Matrix effective;  // weight / sigma under spectral norm, else weight
};

/// Feed-forward network of dense and strided-conv layers with a shared
/// nonlinearity between layers (none after the last) and hand-written
/// reverse mode. Inputs and outputs are batches with one flattened sample per
/// row; conv layers read rows as channel-major C×H×W.
class Network {
 public:
  struct Tape {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation output of each layer
  };

  Network() = default;
  Network(const NetworkSpec& spec, Rng& rng);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const NetworkSpec& spec() const { return spec_; }

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;

  /// Propagates `grad_out` (d loss / d output) back through the tape and
  /// returns d loss / d input. With `param_grads`, accumulates into the
  /// parameter gradient buffers.
  Matrix backward(const Tape& tape, const Matrix& grad_out, bool param_grads);
  /// d loss / d input only; leaves parameter gradients untouched.
  Matrix input_gradient(const Tape& tape, const Matrix& grad_out) const;

  void zero_grad();
  std::vector<ParamRef> params(const std::string& prefix);
  std::vector<BufferRef> buffers(const std::string& prefix);

  /// Runs `iterations` power-iteration updates of the singular-vector
  /// estimates, then recomputes the normalized weights.
  void spectral_step(int iterations);
  /// Recomputes sigma = uᵀWv and the normalized weights with u, v frozen.
  void spectral_refresh();
  /// Power iteration until σ changes by less than rel_tol per step.
  void spectral_converge(double rel_tol = 1e-9, int max_iterations = 5000);
  /// Largest singular value of each effective weight, by `iterations` of
  /// fresh power iteration (independent of the persisted estimates).
  std::vector<double> effective_operator_norms(int iterations) const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  Matrix apply_layer(const Layer& layer, const Matrix& in) const;
  Matrix backward_impl(const Tape& tape, const Matrix& grad_out, std::vector<Layer>* accum) const;

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  int input_dim_ = 0;
  int output_dim_ = 0;
};

Matrix activate(Activation act, const Matrix& pre);
/// d act / d pre, elementwise, multiplied into `grad`.
Matrix activate_backward(Activation act, const Matrix& pre, const Matrix& grad);

}  // namespace clel
