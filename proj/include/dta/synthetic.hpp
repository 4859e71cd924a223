#pragma once

#include <cstdint>
#include <string>

namespace dta {

/// Synthetic organ/lesion dataset: textured background, one organ of 1-2
/// ellipses, 0-4 brighter lesion blobs strictly inside the organ (about 20%
/// of samples are lesion-free). Multiclass mode draws two lesion classes:
/// diffuse (1) and dense (2). Fully determined by (seed, count, size).
struct SynthConfig {
  int64_t count = 250;
  int64_t size = 64;
  bool multiclass = false;
  uint64_t seed = 42;
  int64_t folds = 5;
};

/// Writes images/, lesion/, organ/ trees plus manifest.txt under out_dir and
/// returns the manifest path.
std::string generate_synthetic(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace dta
