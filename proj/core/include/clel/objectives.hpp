#pragma once

#include "clel/common.hpp"

namespace clel {

class EnergyModel;
class Encoder;

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.01;
  double tau = 0.2;
  bool use_generated_negatives = true;

  void validate() const;
};

/// Real and generated mini-batches for one training step. `real_z` and
/// `fake_z` are plain values: nothing flows back into the networks that
/// produced them.
struct TrainBatch {
  Matrix real_x;
  Matrix real_z;
  Matrix fake_x;
  Matrix fake_z;
  Matrix view1_x;  // two augmented views of real_x for the encoder loss
  Matrix view2_x;
};

/// −log softmax of the positive among {positive} ∪ negatives, similarities
/// being cosines scaled by 1/τ. `negatives` may have zero rows.
double nt_xent(const Vector& z, const Vector& z_pos, const Matrix& negatives, double tau);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_h1;  // d loss / d raw encoder outputs of view 1
  Matrix grad_h2;
};

/// Mean NT-Xent over the 2n anchors of paired encodings h1, h2 (raw, not
/// normalized). Each anchor's negatives are every other-item encoding of
/// both views plus all rows of `generated` (constants) when given.
ContrastiveResult contrastive_loss(const Matrix& h1, const Matrix& h2, const Matrix* generated,
                                   double tau);

/// Encoder objective; with `accumulate` the gradient lands in the encoder's
/// parameter buffers and nowhere else.
double encoder_loss(const TrainBatch& batch, Encoder& encoder, const LossConfig& cfg,
                    bool accumulate);

struct EbmLossStats {
  double loss = 0.0;
  double energy_real_mean = 0.0;
  double energy_fake_mean = 0.0;
};

/// (1/n) Σ [E(x, z) − E(x̃) + α(E(x)² + E(x̃)²)] with the joint energy on the
/// positive phase and the marginal on the negative phase. With `accumulate`
/// the gradient lands in the EBM's parameter buffers and nowhere else.
/// Throws TrainingDiverged on any non-finite energy.
EbmLossStats ebm_loss(const TrainBatch& batch, EnergyModel& ebm, const LossConfig& cfg,
                      bool accumulate);

}  // namespace clel
