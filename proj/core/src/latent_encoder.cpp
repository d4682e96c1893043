#include "clel/latent_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "clel/energy_model.hpp"

namespace clel {

AugmentationPolicy AugmentationPolicy::identity() { return {}; }

AugmentationPolicy AugmentationPolicy::jitter_rotate(double jitter_sigma, double rotation_deg) {
  AugmentationPolicy p;
  p.family = AugmentationFamily::jitter_rotate;
  p.jitter_sigma = jitter_sigma;
  p.rotation_deg = rotation_deg;
  return p;
}

AugmentationPolicy AugmentationPolicy::image_default(InputShape shape) {
  AugmentationPolicy p;
  p.family = AugmentationFamily::image;
  p.image = shape;
  p.crop_pad = 3;
  p.flip = true;
  p.brightness = 0.4;
  p.contrast = 0.4;
  p.clamp = std::make_pair(-1.0, 1.0);
  return p;
}

AugmentationPolicy AugmentationPolicy::scaled(double factor) const {
  AugmentationPolicy p = *this;
  p.jitter_sigma *= factor;
  p.rotation_deg *= factor;
  p.crop_pad = static_cast<int>(std::lround(crop_pad * factor));
  p.brightness *= factor;
  p.contrast *= factor;
  return p;
}

namespace {

void augment_image_row(const AugmentationPolicy& p, double* row, Rng& rng) {
  const int c = p.image.channels, h = p.image.height, w = p.image.width;
  std::vector<double> src(row, row + c * h * w);
  int dy = 0, dx = 0;
  if (p.crop_pad > 0) {
    dy = static_cast<int>(rng.index(2 * p.crop_pad + 1)) - p.crop_pad;
    dx = static_cast<int>(rng.index(2 * p.crop_pad + 1)) - p.crop_pad;
  }
  const bool mirror = p.flip && rng.bernoulli(0.5);
  const double bright = p.brightness > 0 ? rng.uniform(-p.brightness, p.brightness) : 0.0;
  const double contrast = p.contrast > 0 ? rng.uniform(1 - p.contrast, 1 + p.contrast) : 1.0;
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0;
    for (int i = 0; i < h * w; ++i) mean += src[ch * h * w + i];
    mean /= h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // padded shift crop; out-of-frame pixels read as background (-1)
        const int sy = y + dy;
        int sx = x + dx;
        if (mirror) sx = w - 1 - sx;
        double v = -1.0;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = src[(ch * h + sy) * w + sx];
        v = (v - mean) * contrast + mean + bright;
        row[(ch * h + y) * w + x] = v;
      }
    }
  }
}

}  // namespace

Matrix AugmentationPolicy::apply(const Matrix& x, Rng& rng) const {
  Matrix out = x;
  switch (family) {
    case AugmentationFamily::identity:
      break;
    case AugmentationFamily::jitter_rotate: {
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += jitter_sigma * rng.gaussian();
        if (out.cols() >= 2 && rotation_deg > 0) {
          const double angle =
              rng.uniform(-rotation_deg, rotation_deg) * std::numbers::pi / 180.0;
          const double c = std::cos(angle), s = std::sin(angle);
          const double px = out(i, 0) - center_x, py = out(i, 1) - center_y;
          out(i, 0) = center_x + c * px - s * py;
          out(i, 1) = center_y + s * px + c * py;
        }
      }
      break;
    }
    case AugmentationFamily::image: {
      if (out.cols() != image.size()) throw ConfigError("image augmentation shape mismatch");
      for (Eigen::Index i = 0; i < out.rows(); ++i) augment_image_row(*this, out.row(i).data(), rng);
      break;
    }
  }
  if (clamp) out = out.cwiseMax(clamp->first).cwiseMin(clamp->second);
  return out;
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  NetworkSpec s;
  s.input = config.input;
  s.layers = config.hidden;
  s.layers.push_back({LayerKind::dense, config.d_z});
  s.activation = Activation::swish;
  net_ = Network(s, rng);
}

Matrix sample_latent(const Encoder& encoder, const AugmentationPolicy& policy, const Matrix& x,
                     Rng& rng) {
  return normalize_rows(encoder.encode(policy.apply(x, rng)));
}

Matrix mode_latent(const EnergyModel& ebm, const Matrix& x) { return ebm.mode_latent(x); }

}  // namespace clel
