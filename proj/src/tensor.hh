// tensor.hh
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "threadpool.hh"

namespace dub {

// Dense row-major matrix. Kept deliberately minimal: the model code owns
// all the structure, this type only owns storage and the three matmul
// variants the forward/backward passes need.
template <typename T>
struct Mat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), T(0)) {}

  static Mat zeros(int64_t r, int64_t c) { return Mat(r, c); }

  T* row(int64_t i) { return data.data() + i * cols; }
  const T* row(int64_t i) const { return data.data() + i * cols; }

  T& at(int64_t i, int64_t j) { return data[i * cols + j]; }
  T at(int64_t i, int64_t j) const { return data[i * cols + j]; }

  int64_t size() const { return rows * cols; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

// C = A * B (+C if accumulate). A: RxK, B: KxN, C: RxN.
template <typename T>
void matmul_nn(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  const int64_t K = a.cols, N = b.cols;
  ThreadPool::instance().parallel_for(a.rows, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      T* ci = c.row(i);
      if (!accumulate) {
        for (int64_t j = 0; j < N; ++j) ci[j] = T(0);
      }
      const T* ai = a.row(i);
      for (int64_t k = 0; k < K; ++k) {
        const T aik = ai[k];
        const T* bk = b.row(k);
        for (int64_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
      }
    }
  });
}

// C = A * B^T (+C if accumulate). A: RxK, B: NxK, C: RxN.
template <typename T>
void matmul_nt(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  const int64_t K = a.cols, N = b.rows;
  ThreadPool::instance().parallel_for(a.rows, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      const T* ai = a.row(i);
      T* ci = c.row(i);
      for (int64_t j = 0; j < N; ++j) {
        const T* bj = b.row(j);
        T acc = T(0);
        for (int64_t k = 0; k < K; ++k) acc += ai[k] * bj[k];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  });
}

// C = A^T * B (+C if accumulate). A: RxK, B: RxN, C: KxN.
template <typename T>
void matmul_tn(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  const int64_t R = a.rows, N = b.cols;
  ThreadPool::instance().parallel_for(a.cols, [&](int64_t k0, int64_t k1) {
    for (int64_t k = k0; k < k1; ++k) {
      T* ck = c.row(k);
      if (!accumulate) {
        for (int64_t j = 0; j < N; ++j) ck[j] = T(0);
      }
      for (int64_t r = 0; r < R; ++r) {
        const T ark = a.at(r, k);
        const T* br = b.row(r);
        for (int64_t j = 0; j < N; ++j) ck[j] += ark * br[j];
      }
    }
  });
}

}  // namespace dub
