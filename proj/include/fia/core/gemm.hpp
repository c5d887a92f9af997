#pragma once

#include <Eigen/Core>

namespace fia {

// C (M x N) = op(A) * op(B), row-major contiguous buffers.
// accumulate=true adds into C instead of overwriting.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool trans_a = false, bool trans_b = false, bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<Mat>;
    using Map = Eigen::Map<const Mat>;
    CMap C(c, m, n);
    auto run = [&](const auto& A, const auto& B) {
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
    };
    if (!trans_a && !trans_b)
        run(Map(a, m, k), Map(b, k, n));
    else if (trans_a && !trans_b)
        run(Map(a, k, m).transpose(), Map(b, k, n));
    else if (!trans_a && trans_b)
        run(Map(a, m, k), Map(b, n, k).transpose());
    else
        run(Map(a, k, m).transpose(), Map(b, n, k).transpose());
}

}  // namespace fia
