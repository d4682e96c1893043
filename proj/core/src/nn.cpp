#include "clel/nn.hpp"

#include <cmath>

namespace clel {
namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

void init_uniform(Matrix& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

// Column matrix of one channel-major image: (C*k*k) x (out_h*out_w).
Matrix im2col(const Layer& l, const double* img) {
  Matrix col = Matrix::Zero(l.in_channels * l.kernel * l.kernel, l.out_h * l.out_w);
  for (int c = 0; c < l.in_channels; ++c) {
    for (int ky = 0; ky < l.kernel; ++ky) {
      for (int kx = 0; kx < l.kernel; ++kx) {
        const int row = (c * l.kernel + ky) * l.kernel + kx;
        for (int oy = 0; oy < l.out_h; ++oy) {
          const int iy = oy * l.stride - l.padding + ky;
          if (iy < 0 || iy >= l.in_h) continue;
          for (int ox = 0; ox < l.out_w; ++ox) {
            const int ix = ox * l.stride - l.padding + kx;
            if (ix < 0 || ix >= l.in_w) continue;
            col(row, oy * l.out_w + ox) = img[(c * l.in_h + iy) * l.in_w + ix];
          }
        }
      }
    }
  }
  return col;
}

void col2im(const Layer& l, const Matrix& col, double* img) {
  for (int c = 0; c < l.in_channels; ++c) {
    for (int ky = 0; ky < l.kernel; ++ky) {
      for (int kx = 0; kx < l.kernel; ++kx) {
        const int row = (c * l.kernel + ky) * l.kernel + kx;
        for (int oy = 0; oy < l.out_h; ++oy) {
          const int iy = oy * l.stride - l.padding + ky;
          if (iy < 0 || iy >= l.in_h) continue;
          for (int ox = 0; ox < l.out_w; ++ox) {
            const int ix = ox * l.stride - l.padding + kx;
            if (ix < 0 || ix >= l.in_w) continue;
            img[(c * l.in_h + iy) * l.in_w + ix] += col(row, oy * l.out_w + ox);
          }
        }
      }
    }
  }
}

double power_sigma(const Matrix& w, Matrix& u, Matrix& v, int iterations) {
  for (int it = 0; it < iterations; ++it) {
    v = u * w;
    v /= std::max(v.norm(), kDegenerateNorm);
    u = v * w.transpose();
    u /= std::max(u.norm(), kDegenerateNorm);
  }
  return (u * w * v.transpose())(0, 0);
}

}  // namespace

Matrix activate(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::swish:
      return pre.unaryExpr([](double a) { return a * sigmoid(a); });
    case Activation::leaky_relu:
      return pre.unaryExpr([](double a) { return a > 0 ? a : kLeakySlope * a; });
    case Activation::identity:
      return pre;
  }
  return pre;
}

Matrix activate_backward(Activation act, const Matrix& pre, const Matrix& grad) {
  switch (act) {
    case Activation::swish:
      return grad.cwiseProduct(pre.unaryExpr([](double a) {
        const double s = sigmoid(a);
        return s * (1.0 + a * (1.0 - s));
      }));
    case Activation::leaky_relu:
      return grad.cwiseProduct(pre.unaryExpr([](double a) { return a > 0 ? 1.0 : kLeakySlope; }));
    case Activation::identity:
      return grad;
  }
  return grad;
}

Network::Network(const NetworkSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.layers.empty()) throw ConfigError("network needs at least one layer");
  input_dim_ = spec.input.size();
  int channels = spec.input.channels, h = spec.input.height, w = spec.input.width;
  bool flat = false;
  int dim = input_dim_;
  for (const LayerSpec& ls : spec.layers) {
    if (ls.out <= 0) throw ConfigError("layer output size must be positive");
    Layer l;
    l.kind = ls.kind;
    l.in_dim = dim;
    int fan_in = 0;
    if (ls.kind == LayerKind::conv) {
      if (flat) throw ConfigError("conv layer cannot follow a dense layer");
      l.in_channels = channels;
      l.in_h = h;
      l.in_w = w;
      l.kernel = ls.kernel;
      l.stride = ls.stride;
      l.padding = ls.padding;
      l.out_channels = ls.out;
      l.out_h = (h + 2 * ls.padding - ls.kernel) / ls.stride + 1;
      l.out_w = (w + 2 * ls.padding - ls.kernel) / ls.stride + 1;
      if (l.out_h <= 0 || l.out_w <= 0) throw ConfigError("conv layer shrinks input to nothing");
      l.out_dim = l.out_channels * l.out_h * l.out_w;
      fan_in = channels * ls.kernel * ls.kernel;
      l.weight.resize(ls.out, fan_in);
      if (spec.bias) l.bias.resize(1, ls.out);
      channels = ls.out;
      h = l.out_h;
      w = l.out_w;
    } else {
      flat = true;
      l.out_dim = ls.out;
      fan_in = dim;
      l.weight.resize(ls.out, fan_in);
      if (spec.bias) l.bias.resize(1, ls.out);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    init_uniform(l.weight, bound, rng);
    if (spec.bias) init_uniform(l.bias, bound, rng);
    l.weight_grad = Matrix::Zero(l.weight.rows(), l.weight.cols());
    l.bias_grad = Matrix::Zero(l.bias.rows(), l.bias.cols());
    l.spectral = spec.spectral_norm;
    if (l.spectral) {
      l.sn_u = rng.gaussian_matrix(1, l.weight.rows());
      l.sn_u /= l.sn_u.norm();
      l.sn_v = Matrix::Zero(1, l.weight.cols());
    }
    dim = l.out_dim;
    layers_.push_back(std::move(l));
  }
  output_dim_ = dim;
  spectral_converge();
}

Matrix Network::apply_layer(const Layer& l, const Matrix& in) const {
  if (l.kind == LayerKind::dense) {
    Matrix out = in * l.effective.transpose();
    if (l.bias.size() > 0) out.rowwise() += l.bias.row(0);
    return out;
  }
  const int positions = l.out_h * l.out_w;
  Matrix out(in.rows(), l.out_dim);
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const Matrix col = im2col(l, in.row(i).data());
    Matrix o = l.effective * col;  // out_channels x positions
    if (l.bias.size() > 0) o.colwise() += l.bias.row(0).transpose();
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(o.data(), l.out_channels * positions);
  }
  return out;
}

Matrix Network::forward(const Matrix& x, Tape* tape) const {
  if (x.cols() != input_dim_) {
    throw ConfigError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                      std::to_string(input_dim_));
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix a = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Matrix z = apply_layer(layers_[k], a);
    if (tape) tape->inputs.push_back(std::move(a));
    if (k + 1 == layers_.size()) {
      if (tape) tape->pre.push_back(z);
      return z;
    }
    a = activate(spec_.activation, z);
    if (tape) tape->pre.push_back(std::move(z));
  }
  return a;
}

namespace {

// `accum`, when set, receives the parameter gradients of layer `l`.
Matrix backward_layer(const Layer& l, const Matrix& in, const Matrix& grad, Layer* accum) {
  const bool param_grads = accum != nullptr;
  Matrix grad_eff;
  Matrix grad_in;
  if (l.kind == LayerKind::dense) {
    if (param_grads) {
      grad_eff = grad.transpose() * in;
      if (l.bias.size() > 0) accum->bias_grad += grad.colwise().sum();
    }
    grad_in = grad * l.effective;
  } else {
    const int positions = l.out_h * l.out_w;
    grad_in = Matrix::Zero(in.rows(), l.in_dim);
    if (param_grads) grad_eff = Matrix::Zero(l.weight.rows(), l.weight.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
      const Matrix g = Eigen::Map<const Matrix>(grad.row(i).data(), l.out_channels, positions);
      if (param_grads) {
        const Matrix col = im2col(l, in.row(i).data());
        grad_eff += g * col.transpose();
        if (l.bias.size() > 0) accum->bias_grad += g.rowwise().sum().transpose();
      }
      const Matrix dcol = l.effective.transpose() * g;
      col2im(l, dcol, grad_in.row(i).data());
    }
  }
  if (param_grads) {
    if (l.spectral && l.sn_sigma > kDegenerateNorm) {
      // W̄ = W / (uᵀWv) with u, v held constant.
      const double inner = grad_eff.cwiseProduct(l.effective).sum();
      accum->weight_grad += (grad_eff - inner * l.sn_u.transpose() * l.sn_v) / l.sn_sigma;
    } else {
      accum->weight_grad += grad_eff;
    }
  }
  return grad_in;
}

}  // namespace

Matrix Network::backward_impl(const Tape& tape, const Matrix& grad_out,
                              std::vector<Layer>* accum) const {
  Matrix g = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 != layers_.size()) g = activate_backward(spec_.activation, tape.pre[k], g);
    g = backward_layer(layers_[k], tape.inputs[k], g, accum ? &(*accum)[k] : nullptr);
  }
  return g;
}

Matrix Network::backward(const Tape& tape, const Matrix& grad_out, bool param_grads) {
  return backward_impl(tape, grad_out, param_grads ? &layers_ : nullptr);
}

Matrix Network::input_gradient(const Tape& tape, const Matrix& grad_out) const {
  return backward_impl(tape, grad_out, nullptr);
}

void Network::zero_grad() {
  for (Layer& l : layers_) {
    l.weight_grad.setZero();
    l.bias_grad.setZero();
  }
}

std::vector<ParamRef> Network::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Layer& l = layers_[k];
    const std::string base = prefix + "layer" + std::to_string(k) + ".";
    out.push_back({base + "weight", &l.weight, &l.weight_grad});
    if (l.bias.size() > 0) out.push_back({base + "bias", &l.bias, &l.bias_grad});
  }
  return out;
}

std::vector<BufferRef> Network::buffers(const std::string& prefix) {
  std::vector<BufferRef> out;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Layer& l = layers_[k];
    if (!l.spectral) continue;
    const std::string base = prefix + "layer" + std::to_string(k) + ".";
    out.push_back({base + "sn_u", &l.sn_u});
    out.push_back({base + "sn_v", &l.sn_v});
  }
  return out;
}

void Network::spectral_step(int iterations) {
  for (Layer& l : layers_) {
    if (!l.spectral) {
      l.effective = l.weight;
      continue;
    }
    l.sn_sigma = power_sigma(l.weight, l.sn_u, l.sn_v, iterations);
    l.effective = l.sn_sigma > kDegenerateNorm ? Matrix(l.weight / l.sn_sigma) : l.weight;
  }
}

void Network::spectral_refresh() { spectral_step(0); }

void Network::spectral_converge(double rel_tol, int max_iterations) {
  for (Layer& l : layers_) {
    if (!l.spectral) {
      l.effective = l.weight;
      continue;
    }
    double sigma = power_sigma(l.weight, l.sn_u, l.sn_v, 1);
    for (int it = 1; it < max_iterations; ++it) {
      const double next = power_sigma(l.weight, l.sn_u, l.sn_v, 1);
      const bool done = std::abs(next - sigma) <= rel_tol * std::abs(next);
      sigma = next;
      if (done) break;
    }
    l.sn_sigma = sigma;
    l.effective = l.sn_sigma > kDegenerateNorm ? Matrix(l.weight / l.sn_sigma) : l.weight;
  }
}

std::vector<double> Network::effective_operator_norms(int iterations) const {
  std::vector<double> out;
  Rng rng(12345);
  for (const Layer& l : layers_) {
    Matrix u = rng.gaussian_matrix(1, l.effective.rows());
    u /= u.norm();
    Matrix v;
    out.push_back(power_sigma(l.effective, u, v, iterations));
  }
  return out;
}

}  // namespace clel
