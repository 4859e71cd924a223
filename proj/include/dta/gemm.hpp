#pragma once

#include <cstdint>

namespace dta {

/// Row-major C(MxN) = A(MxK) @ B(KxN), optionally accumulating into C.
/// Leading dimensions are in elements. Accumulation over k runs in ascending
/// order for every output element, so results are bit-identical whatever the
/// internal tiling or worker count.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
             const T* B, int64_t ldb, T* C, int64_t ldc, bool accumulate);

/// out(CxR) = in(RxC) transposed, both dense row-major.
template <typename T>
void transpose_copy(int64_t R, int64_t C, const T* in, T* out);

int gemm_thread_count();

}  // namespace dta
