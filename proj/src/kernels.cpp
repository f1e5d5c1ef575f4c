#include "leak/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace leak::kernels {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const MatrixRM>;
using Map = Eigen::Map<MatrixRM>;

MapConst as_matrix(const Tensor& t) {
    if (t.ndim() != 2) throw std::invalid_argument("matmul: operand is not 2-D: " + shape_string(t));
    return MapConst(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    MapConst ma = as_matrix(a);
    MapConst mb = as_matrix(b);
    if (ma.cols() != mb.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ: " + shape_string(a) + " vs " +
                                    shape_string(b));
    }
    Tensor out({a.rows(), b.cols()});
    Map(out.data(), ma.rows(), mb.cols()).noalias() = ma * mb;
    return out;
}

void matmul_accumulate(const Tensor& a, bool transpose_a,
                       const Tensor& b, bool transpose_b, Tensor& acc) {
    MapConst ma = as_matrix(a);
    MapConst mb = as_matrix(b);
    Map mc(acc.data(), static_cast<Eigen::Index>(acc.rows()), static_cast<Eigen::Index>(acc.cols()));
    if (transpose_a && transpose_b)      mc.noalias() += ma.transpose() * mb.transpose();
    else if (transpose_a)                mc.noalias() += ma.transpose() * mb;
    else if (transpose_b)                mc.noalias() += ma * mb.transpose();
    else                                 mc.noalias() += ma * mb;
}

Tensor relu(const Tensor& x) {
    Tensor y = Tensor::zeros_like(x);
    const double* in = x.data();
    double* out = y.data();
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return y;
}

Tensor softmax_rows(const Tensor& z) {
    if (z.ndim() != 2) throw std::invalid_argument("softmax: input is not 2-D: " + shape_string(z));
    const std::size_t n = z.rows(), m = z.cols();
    if (m == 0) throw std::invalid_argument("softmax: zero columns");
    Tensor p = Tensor::zeros_like(z);
    for (std::size_t r = 0; r < n; ++r) {
        const double* zr = z.data() + r * m;
        double* pr = p.data() + r * m;
        double zmax = zr[0];
        for (std::size_t c = 1; c < m; ++c) zmax = std::max(zmax, zr[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            pr[c] = std::exp(zr[c] - zmax);
            total += pr[c];
        }
        for (std::size_t c = 0; c < m; ++c) pr[c] /= total;
    }
    return p;
}

Tensor log_floored(const Tensor& x, double floor) {
    Tensor y = Tensor::zeros_like(x);
    const double* in = x.data();
    double* out = y.data();
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::log(in[i] > floor ? in[i] : floor);
    return y;
}

} // namespace leak::kernels
