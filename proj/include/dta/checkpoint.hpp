#pragma once

#include <string>
#include <vector>

#include "dta/tensor.hpp"

namespace dta {

struct NamedTensor {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

/// Binary checkpoint: magic "DTAU", u32 LE version (1), u32 tensor count,
/// then per tensor u16 name length + UTF-8 name, u8 dtype (0 = f32), u8 ndim,
/// ndim x u32 LE dims, f32 LE row-major payload. An optional trailing "OPTS"
/// section carries optimizer state in the same tensor encoding.
struct CheckpointData {
  std::vector<NamedTensor> tensors;
  std::vector<NamedTensor> opt;
  bool has_opt = false;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace dta
