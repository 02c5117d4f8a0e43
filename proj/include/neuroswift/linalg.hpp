#pragma once

#include <cmath>

#include "neuroswift/rng.hpp"
#include "neuroswift/tensor.hpp"

namespace neuroswift {

// Gaussian elimination with partial pivoting; a is [n x n], b is [n].
inline std::vector<double> solve_linear(Tensor a, std::vector<double> b) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1) || b.size() != a.dim(0)) {
        throw DimensionError("solve_linear: expected square system");
    }
    const std::size_t n = a.dim(0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a.at2(i, k)) > std::abs(a.at2(piv, k))) piv = i;
        if (std::abs(a.at2(piv, k)) < 1e-14) throw NumericalError("solve_linear: singular matrix");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a.at2(k, j), a.at2(piv, j));
            std::swap(b[k], b[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a.at2(i, k) / a.at2(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) a.at2(i, j) -= f * a.at2(k, j);
            b[i] -= f * b[k];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a.at2(i, j) * x[j];
        x[i] = s / a.at2(i, i);
    }
    return x;
}

// Moore-Penrose pseudoinverse of a tall full-column-rank matrix via normal
// equations: pinv(A) = (A^T A)^-1 A^T, returned as [n x m] for A [m x n].
inline Tensor pinv_tall(const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) < a.dim(1)) throw DimensionError("pinv_tall: expected tall matrix");
    const std::size_t n = a.dim(1);
    Tensor ata = matmul_tn(a, a);
    Tensor at = transpose2(a);  // [n x m]
    Tensor out({n, a.dim(0)});
    // solve (A^T A) X = A^T column block by column block of the identity trick:
    // row i of out solves against row i of A^T? Solve per output column instead.
    for (std::size_t col = 0; col < a.dim(0); ++col) {
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = at.at2(i, col);
        std::vector<double> x = solve_linear(ata, rhs);
        for (std::size_t i = 0; i < n; ++i) out.at2(i, col) = x[i];
    }
    return out;
}

// Orthonormalize the columns of a seeded Gaussian [rows x cols] matrix with
// modified Gram-Schmidt; rows >= cols required.
inline Tensor random_orthonormal_columns(std::size_t rows, std::size_t cols, RngStream& rng) {
    if (rows < cols) throw ConfigError("random_orthonormal_columns: rows < cols");
    Tensor m = normal_draw(rng, {rows, cols});
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double proj = 0.0;
            for (std::size_t i = 0; i < rows; ++i) proj += m.at2(i, k) * m.at2(i, j);
            for (std::size_t i = 0; i < rows; ++i) m.at2(i, j) -= proj * m.at2(i, k);
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) nrm += m.at2(i, j) * m.at2(i, j);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw NumericalError("random_orthonormal_columns: degenerate column");
        for (std::size_t i = 0; i < rows; ++i) m.at2(i, j) /= nrm;
    }
    return m;
}

}  // namespace neuroswift
