#pragma once

#include "leak/tensor.hpp"

namespace leak::kernels {

// Value-level math shared by the graph ops and the inference fast path, so
// both routes produce bit-identical numbers.

// c = a * b (2-D, inner dimensions must agree).
Tensor matmul(const Tensor& a, const Tensor& b);

// acc += op(a) * op(b) where op transposes when the flag is set. acc must
// already have the result shape. Used by the matmul backward rules.
void matmul_accumulate(const Tensor& a, bool transpose_a,
                       const Tensor& b, bool transpose_b, Tensor& acc);

Tensor relu(const Tensor& x);

// Row-wise softmax with max subtraction (2-D input).
Tensor softmax_rows(const Tensor& z);

// Natural log with the argument clamped below at `floor`.
Tensor log_floored(const Tensor& x, double floor);

} // namespace leak::kernels
