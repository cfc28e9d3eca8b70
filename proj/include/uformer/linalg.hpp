#pragma once

#include "uformer/tensor.hpp"

namespace uformer {

// Plain (non-tape) matrix product with double accumulation.
template <std::floating_point T>
Tensor<T> matmul_plain(const Tensor<T>& a, const Tensor<T>& b) {
  require<ShapeError>(a.rank() == 2 && b.rank() == 2,
                      "matmul operands must be rank 2");
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require<ShapeError>(b.shape()[0] == k,
                      "matmul inner dimensions disagree: " +
                          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> y({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(a[i * k + p]) *
               static_cast<double>(b[p * n + j]);
      y[i * n + j] = static_cast<T>(acc);
    }
  return y;
}

template <std::floating_point T>
Tensor<T> transpose_plain(const Tensor<T>& a) {
  require<ShapeError>(a.rank() == 2, "transpose expects rank 2");
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> y({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) y[j * m + i] = a[i * n + j];
  return y;
}

// Complex matrix product, evaluated directly on interleaved real planes:
// (A + iB)(C + iD) = (AC - BD) + i(AD + BC), accumulated per element.
template <std::floating_point T>
ComplexTensor<T> complex_matmul(const ComplexTensor<T>& a,
                                const ComplexTensor<T>& b) {
  require<ShapeError>(a.re.rank() == 2 && b.re.rank() == 2,
                      "complex matmul operands must be rank 2");
  const std::int64_t m = a.re.shape()[0], k = a.re.shape()[1],
                     n = b.re.shape()[1];
  require<ShapeError>(b.re.shape()[0] == k,
                      "complex matmul inner dimensions disagree");
  ComplexTensor<T> y({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc_re = 0.0, acc_im = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const double ar = a.re[i * k + p], ai = a.im[i * k + p];
        const double br = b.re[p * n + j], bi = b.im[p * n + j];
        acc_re += ar * br - ai * bi;
        acc_im += ar * bi + ai * br;
      }
      y.re[i * n + j] = static_cast<T>(acc_re);
      y.im[i * n + j] = static_cast<T>(acc_im);
    }
  return y;
}

template <std::floating_point T>
ComplexTensor<T> complex_mul_elementwise(const ComplexTensor<T>& a,
                                         const ComplexTensor<T>& b) {
  require<ShapeError>(a.shape() == b.shape(),
                      "complex elementwise product shape mismatch");
  ComplexTensor<T> y(a.shape());
  for (std::int64_t i = 0; i < a.re.numel(); ++i) {
    y.re[i] = a.re[i] * b.re[i] - a.im[i] * b.im[i];
    y.im[i] = a.re[i] * b.im[i] + a.im[i] * b.re[i];
  }
  return y;
}

}  // namespace uformer
