#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lcfm/errors.hpp"

namespace lcfm {

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

/// 64-byte-aligned buffers keep Eigen's vectorised kernels on one code path
/// regardless of heap layout, so results are bit-reproducible even when
/// worker threads interleave allocations.
template <typename T, std::size_t Align>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }
    bool operator==(const AlignedAllocator&) const { return true; }
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
};

using AlignedVec = std::vector<double, AlignedAllocator<double, 64>>;

/// Dense row-major tensor of 64-bit reals. Rank 1 (vectors) and rank 2
/// (matrices) cover everything this library needs; a rank-1 tensor behaves as
/// a single row wherever a matrix is expected.
struct Tensor {
    std::vector<std::size_t> shape;
    AlignedVec data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)) {
        if (d.size() != numel_of(shape))
            raise(ErrorCode::ShapeMismatch, "tensor data length does not match shape");
        data.assign(d.begin(), d.end());
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor vector(std::vector<double> d) {
        std::vector<std::size_t> s{d.size()};
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    /// Rows/cols in the "matrix view": rank-1 tensors are 1 x n rows.
    std::size_t rows() const { return rank() <= 1 ? 1 : shape[0]; }
    std::size_t cols() const {
        if (rank() == 0) return 1;
        return rank() == 1 ? shape[0] : shape[1];
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    MatMap mat() { return MatMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
    ConstMatMap mat() const {
        return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        raise(ErrorCode::ShapeMismatch,
              std::string(where) + ": " + a.shape_str() + " vs " + b.shape_str());
}

/// c = a @ b with the usual [n,k] x [k,m] -> [n,m] contract.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        raise(ErrorCode::ShapeMismatch, "matmul: " + a.shape_str() + " x " + b.shape_str());
    Tensor c({a.rows(), b.cols()});
    c.mat().noalias() = a.mat() * b.mat();
    if (a.rank() == 1 && b.rank() == 2) c.shape = {b.cols()};  // vector @ matrix stays a vector
    return c;
}

/// c = a @ b^T where b is stored [m,k]; avoids materialising transposes.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        raise(ErrorCode::ShapeMismatch, "matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
    Tensor c({a.rows(), b.rows()});
    c.mat().noalias() = a.mat() * b.mat().transpose();
    return c;
}

/// c = a^T @ b where a is stored [k,n]; used by matmul backward.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        raise(ErrorCode::ShapeMismatch, "matmul_tn: " + a.shape_str() + "^T x " + b.shape_str());
    Tensor c({a.cols(), b.cols()});
    c.mat().noalias() = a.mat().transpose() * b.mat();
    return c;
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

}  // namespace lcfm
