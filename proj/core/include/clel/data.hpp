#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "clel/common.hpp"
#include "clel/nn.hpp"

namespace clel {

enum class DatasetId { gauss8, two_rings, moons, checkerboard, image_dir };
enum class OodKind { uniform, scaled };

DatasetId parse_dataset_id(const std::string& s);
std::string to_string(DatasetId id);
OodKind parse_ood_kind(const std::string& s);

/// Grayscale images, one flattened image per row, values in [-1, 1].
struct ImageSet {
  InputShape shape;
  Matrix images;
  std::vector<std::string> files;
};

struct DatasetSpec {
  DatasetId id = DatasetId::gauss8;
  InputShape shape{2, 1, 1};
  double clamp_lo = -3.0;
  double clamp_hi = 3.0;
  OodKind ood = OodKind::uniform;
  double data_scale = 2.0;  // reference length for augmentation strengths
  double mode_radius = 2.0;
  double mode_sigma = 0.1;
  double ring_sigma = 0.05;
  std::shared_ptr<const ImageSet> images;

  int dim() const { return shape.size(); }
};

/// Registry entry for a named dataset. `image_dir` loads the images eagerly.
DatasetSpec dataset_spec(const std::string& id, OodKind ood = OodKind::uniform,
                         const std::filesystem::path& image_dir = {});

/// Independent streams for training draws and held-out draws of one seed.
Rng training_stream(std::uint64_t seed);
Rng heldout_stream(std::uint64_t seed);

/// n i.i.d. samples, each within the clamp box.
Matrix generate(const DatasetSpec& spec, Eigen::Index n, Rng& rng);
/// Training batch `iteration` of an image dataset: consecutive slices of a
/// per-epoch shuffle seeded by (seed, epoch). Stateless, so resuming at any
/// iteration continues the same order.
Matrix epoch_batch(const DatasetSpec& spec, std::uint64_t seed, long iteration, int batch_size);
/// n out-of-distribution samples: uniform over the clamp box, or the
/// dataset itself scaled ×1.5 about the origin.
Matrix ood_counterpart(const DatasetSpec& spec, Eigen::Index n, Rng& rng);

/// Mode centers of gauss8 (rows); empty for other datasets.
Matrix mode_centers(const DatasetSpec& spec);
/// Index of the nearest row of `centers` for each row of `x`.
std::vector<int> nearest_mode(const Matrix& centers, const Matrix& x);

/// Loads every *.pgm (binary P5, 8-bit) in `dir`, ordered by filename.
ImageSet load_images(const std::filesystem::path& dir);
void save_pgm(const std::filesystem::path& path, const Eigen::Ref<const Eigen::RowVectorXd>& image,
              InputShape shape);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& rows);
Matrix read_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

}  // namespace clel
