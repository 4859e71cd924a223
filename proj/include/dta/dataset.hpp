#pragma once

#include <string>
#include <vector>

#include "dta/pgm.hpp"
#include "dta/rng.hpp"
#include "dta/tensor.hpp"

namespace dta {

struct ManifestRecord {
  std::string id;
  std::string image, lesion, organ;  // paths relative to the manifest
  int fold = 0;
};

struct Manifest {
  std::string dir;  // directory holding the manifest file
  std::vector<ManifestRecord> records;
};

/// Reads "dtrattunet-manifest v1" + TAB-separated records, verifying that
/// every referenced file exists.
Manifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

/// Seeded shuffle then round-robin: every index in exactly one fold, sizes
/// differing by at most one.
std::vector<int> kfold_split(int64_t n, int64_t k, RngState rng);

struct AugmentationConfig {
  double p_rotate = 0.10;
  double max_angle_deg = 35.0;
  double p_hflip = 0.20;
  double p_vflip = 0.20;
};

/// One decoded sample: unit-interval image plus class-index masks.
struct SampleF {
  std::string id;
  int64_t h = 0, w = 0;
  std::vector<float> image;
  std::vector<int32_t> lesion;
  std::vector<int32_t> organ;
};

class Dataset {
 public:
  static Dataset load_split(const Manifest& m, int fold, bool validation);
  static Dataset load_all(const Manifest& m);

  const std::vector<SampleF>& samples() const { return samples_; }
  int64_t size() const { return static_cast<int64_t>(samples_.size()); }

 private:
  std::vector<SampleF> samples_;
};

/// Shared-transform augmentation: optional rotation (image bilinear, masks
/// nearest-neighbor, out-of-field pixels -> 0 / class 0), then horizontal and
/// vertical flips. All draws come from the supplied stream in a fixed order.
void augment_sample(SampleF& s, const AugmentationConfig& cfg, RngState rng);

struct Batch {
  Tensor<float> images;  // (B, C, H, W), grayscale replicated to C
  IntMask lesion;        // (B, H, W)
  IntMask organ;         // (B, H, W)
  std::vector<std::string> ids;
};

/// Train mode shuffles per epoch and augments per sample (streams
/// "epoch.<e>" and "aug.<e>.<id>" of the given seed); eval mode batches in
/// manifest order untouched. The final short batch is kept.
std::vector<Batch> make_epoch_batches(const Dataset& ds, int64_t batch_size, bool train,
                                      int64_t epoch, uint64_t seed,
                                      const AugmentationConfig& aug, int64_t in_channels);

}  // namespace dta
