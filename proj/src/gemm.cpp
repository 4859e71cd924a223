#include "dta/gemm.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace dta {

namespace {

int detect_threads() {
  if (const char* env = std::getenv("DTA_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return std::min(n, 64);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
}

// Register-tiled core: MR rows against a JB-wide strip of B, k innermost and
// ascending, so each output element accumulates in one fixed order no matter
// how the surrounding loops are blocked or threaded.
template <typename T, int MR, int JB>
inline void tile_kernel(int64_t K, const T* A, int64_t lda, const T* B, int64_t ldb,
                        T* C, int64_t ldc, bool accumulate) {
  T acc[MR][JB];
  if (accumulate) {
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < JB; ++j) acc[r][j] = C[r * ldc + j];
  } else {
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < JB; ++j) acc[r][j] = T(0);
  }
  for (int64_t k = 0; k < K; ++k) {
    const T* brow = B + k * ldb;
    for (int r = 0; r < MR; ++r) {
      T a = A[r * lda + k];
      for (int j = 0; j < JB; ++j) acc[r][j] += a * brow[j];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < JB; ++j) C[r * ldc + j] = acc[r][j];
}

// All rows for one j-strip of width JB.
template <typename T, int MR, int JB>
inline void strip(int64_t M, int64_t kc, const T* A, int64_t lda, const T* B,
                  int64_t ldb, T* C, int64_t ldc, bool accumulate) {
  int64_t i = 0;
  for (; i + MR <= M; i += MR)
    tile_kernel<T, MR, JB>(kc, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
  for (; i < M; ++i)
    tile_kernel<T, 1, JB>(kc, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
}

constexpr int64_t kKC = 256;
constexpr int kJB = 64;
constexpr int kMR = 8;

// One k-panel over a [j0, j1) column range: packed 64-wide strips; the
// column remainder runs through a zero-padded 64-wide panel (padded columns
// contribute nothing and are never copied back), so every surviving output
// element still sees the one fixed accumulation order.
template <typename T>
void panel(int64_t M, int64_t j0, int64_t j1, int64_t k0, int64_t kc, const T* A,
           int64_t lda, const T* B, int64_t ldb, T* C, int64_t ldc, bool accumulate) {
  thread_local std::vector<T> packed;
  thread_local std::vector<T> cpad;
  packed.resize(kKC * kJB);
  const T* Ak = A + k0;
  const T* Bk = B + k0 * ldb;
  int64_t j = j0;
  for (; j + kJB <= j1; j += kJB) {
    for (int64_t k = 0; k < kc; ++k)
      for (int jj = 0; jj < kJB; ++jj) packed[k * kJB + jj] = Bk[k * ldb + j + jj];
    strip<T, kMR, kJB>(M, kc, Ak, lda, packed.data(), kJB, C + j, ldc, accumulate);
  }
  if (j < j1) {
    int64_t rem = j1 - j;
    for (int64_t k = 0; k < kc; ++k) {
      for (int64_t jj = 0; jj < rem; ++jj) packed[k * kJB + jj] = Bk[k * ldb + j + jj];
      for (int64_t jj = rem; jj < kJB; ++jj) packed[k * kJB + jj] = T(0);
    }
    cpad.resize(static_cast<size_t>(M) * kJB);
    if (accumulate) {
      for (int64_t i = 0; i < M; ++i)
        for (int64_t jj = 0; jj < rem; ++jj) cpad[i * kJB + jj] = C[i * ldc + j + jj];
    }
    strip<T, kMR, kJB>(M, kc, Ak, lda, packed.data(), kJB, cpad.data(), kJB, accumulate);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t jj = 0; jj < rem; ++jj) C[i * ldc + j + jj] = cpad[i * kJB + jj];
  }
}

template <typename T>
void gemm_range(int64_t M, int64_t j0, int64_t j1, int64_t K, const T* A, int64_t lda,
                const T* B, int64_t ldb, T* C, int64_t ldc, bool accumulate) {
  for (int64_t k0 = 0; k0 < K; k0 += kKC) {
    int64_t kc = std::min<int64_t>(kKC, K - k0);
    panel<T>(M, j0, j1, k0, kc, A, lda, B, ldb, C, ldc, accumulate || k0 > 0);
  }
}

}  // namespace

int gemm_thread_count() {
  static int n = detect_threads();
  return n;
}

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda, const T* B,
             int64_t ldb, T* C, int64_t ldc, bool accumulate) {
  int nt = gemm_thread_count();
  // Workers own disjoint column ranges of C, so the result is independent of
  // the worker count.
  if (nt <= 1 || M * N * K < (1 << 20)) {
    gemm_range<T>(M, 0, N, K, A, lda, B, ldb, C, ldc, accumulate);
    return;
  }
  int64_t blocks = (N + 63) / 64;
  int use = static_cast<int>(std::min<int64_t>(nt, blocks));
  int64_t per = (blocks + use - 1) / use;
  std::vector<std::thread> workers;
  for (int t = 0; t < use; ++t) {
    int64_t j0 = std::min<int64_t>(N, t * per * 64);
    int64_t j1 = std::min<int64_t>(N, (t + 1) * per * 64);
    if (j0 >= j1) break;
    workers.emplace_back(
        [=] { gemm_range<T>(M, j0, j1, K, A, lda, B, ldb, C, ldc, accumulate); });
  }
  for (auto& w : workers) w.join();
}

template <typename T>
void transpose_copy(int64_t R, int64_t C, const T* in, T* out) {
  constexpr int64_t BL = 32;
  for (int64_t rb = 0; rb < R; rb += BL)
    for (int64_t cb = 0; cb < C; cb += BL) {
      int64_t re = std::min(R, rb + BL);
      int64_t ce = std::min(C, cb + BL);
      for (int64_t r = rb; r < re; ++r)
        for (int64_t c = cb; c < ce; ++c) out[c * R + r] = in[r * C + c];
    }
}

template void gemm_nn<float>(int64_t, int64_t, int64_t, const float*, int64_t,
                             const float*, int64_t, float*, int64_t, bool);
template void gemm_nn<double>(int64_t, int64_t, int64_t, const double*, int64_t,
                              const double*, int64_t, double*, int64_t, bool);
template void transpose_copy<float>(int64_t, int64_t, const float*, float*);
template void transpose_copy<double>(int64_t, int64_t, const double*, double*);

}  // namespace dta
