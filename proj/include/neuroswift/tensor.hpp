#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "neuroswift/errors.hpp"

namespace neuroswift {

// Dense row-major tensor of 64-bit reals. All numerics in this library run in
// double precision; gradient-check tolerances depend on it.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_numel(dims_), 0.0) {}

    Tensor(std::vector<std::size_t> dims, std::vector<double> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (checked_numel(dims_) != data_.size()) {
            throw DimensionError("tensor: dims product " + std::to_string(checked_numel(dims_)) +
                                 " != data length " + std::to_string(data_.size()));
        }
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<std::size_t> dims, double value) {
        Tensor t(std::move(dims));
        for (auto& x : t.data_) x = value;
        return t;
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows[0].size();
        Tensor t({r, c});
        for (std::size_t i = 0; i < r; ++i) {
            if (rows[i].size() != c) throw DimensionError("from_rows: ragged rows");
            for (std::size_t j = 0; j < c; ++j) t.at2(i, j) = rows[i][j];
        }
        return t;
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t ndim() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

    double& at3(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * dims_[1] + h) * dims_[2] + w];
    }
    double at3(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * dims_[1] + h) * dims_[2] + w];
    }

    // Shape change without copying payload semantics; element count must match.
    Tensor reshaped(std::vector<std::size_t> new_dims) const {
        if (checked_numel(new_dims) != numel()) {
            throw DimensionError("reshape: element count mismatch");
        }
        return Tensor(std::move(new_dims), data_);
    }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string dims_str() const {
        std::ostringstream oss;
        oss << "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) oss << (i ? "x" : "") << dims_[i];
        oss << "]";
        return oss.str();
    }

  private:
    static std::size_t checked_numel(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw DimensionError("tensor: zero extent");
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

inline void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_dims(b)) {
        throw DimensionError(std::string(what) + ": shape mismatch " + a.dims_str() + " vs " +
                             b.dims_str());
    }
}

// out[i,j] = sum_k a[i,k] * b[k,j]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible " + a.dims_str() + " * " + b.dims_str());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        const double* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// out[i,j] = sum_k a[k,i] * b[k,j]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0)) {
        throw DimensionError("matmul_tn: incompatible " + a.dims_str() + " * " + b.dims_str());
    }
    const std::size_t m = a.dim(1), k = a.dim(0), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data() + p * m;
        const double* brow = b.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// out[i,j] = sum_k a[i,k] * b[j,k]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt: incompatible " + a.dims_str() + " * " + b.dims_str());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            out.at2(i, j) = s;
        }
    }
    return out;
}

inline Tensor transpose2(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose2: rank != 2");
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) out.at2(j, i) = a.at2(i, j);
    return out;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
    require_same_dims(x, y, "axpy");
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_dims(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_dims(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    require_same_dims(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_dims(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) return false;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    for (std::size_t i = 0; i < a.numel(); ++i) {
        // bitwise compare, so -0.0 != +0.0 and NaN == NaN of equal payload
        const double da = a[i], db = b[i];
        std::uint64_t ua, ub;
        std::memcpy(&ua, &da, 8);
        std::memcpy(&ub, &db, 8);
        if (ua != ub) return false;
    }
    return true;
}

}  // namespace neuroswift
