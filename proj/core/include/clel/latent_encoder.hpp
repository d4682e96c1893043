#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clel/common.hpp"
#include "clel/nn.hpp"

namespace clel {

class EnergyModel;

enum class AugmentationFamily { identity, jitter_rotate, image };

/// Random transform distribution 𝒯. Every draw maps a batch row to a valid
/// row of the same shape; `clamp` keeps results inside the data domain.
struct AugmentationPolicy {
  AugmentationFamily family = AugmentationFamily::identity;

  // jitter_rotate (vector data): Gaussian jitter, then a rotation of the
  // first two coordinates about `center`.
  double jitter_sigma = 0.0;
  double rotation_deg = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;

  // image (grayscale, channel-major rows)
  InputShape image;
  int crop_pad = 0;
  bool flip = false;
  double brightness = 0.0;
  double contrast = 0.0;

  std::optional<std::pair<double, double>> clamp;

  static AugmentationPolicy identity();
  static AugmentationPolicy jitter_rotate(double jitter_sigma, double rotation_deg);
  static AugmentationPolicy image_default(InputShape shape);

  /// Same family with every strength multiplied by `factor`.
  AugmentationPolicy scaled(double factor) const;

  /// Draws an independent transform per row.
  Matrix apply(const Matrix& x, Rng& rng) const;
};

struct EncoderConfig {
  InputShape input{2, 1, 1};
  std::vector<LayerSpec> hidden{{LayerKind::dense, 128}, {LayerKind::dense, 128}};
  int d_z = 128;
};

/// Contrastive latent encoder h_φ.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  int d_z() const { return config_.d_z; }

  Matrix encode(const Matrix& x) const { return net_.forward(x); }
  Matrix encode(const Matrix& x, Network::Tape* tape) const { return net_.forward(x, tape); }
  /// Accumulates parameter gradients given d loss / d encoder output.
  void backward(const Network::Tape& tape, const Matrix& grad_out) {
    net_.backward(tape, grad_out, true);
  }

  void zero_grad() { net_.zero_grad(); }
  std::vector<ParamRef> params() { return net_.params("enc/"); }
  Network& network() { return net_; }
  const Network& network() const { return net_; }

 private:
  EncoderConfig config_;
  Network net_;
};

/// z = h(t(x))/‖h(t(x))‖ with t drawn from `policy`, one draw per row.
Matrix sample_latent(const Encoder& encoder, const AugmentationPolicy& policy, const Matrix& x,
                     Rng& rng);

/// g(f(x̃)/‖f(x̃)‖), the mode of p(z | x̃).
Matrix mode_latent(const EnergyModel& ebm, const Matrix& x);

}  // namespace clel
