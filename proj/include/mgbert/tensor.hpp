/*
 * Copyright (c) 2026, The mgbert Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "mgbert/error.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mgbert
{

/// Dense row-major matrix. Vectors are 1 x n matrices.
template <typename T>
struct Matrix
{
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c, T fill = T(0))
        : rows(r)
        , cols(c)
        , data(static_cast<std::size_t>(r * c), fill)
    {
    }

    T* row(std::int64_t r)
    {
        return data.data() + r * cols;
    }
    T const* row(std::int64_t r) const
    {
        return data.data() + r * cols;
    }
    T& operator()(std::int64_t r, std::int64_t c)
    {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    T operator()(std::int64_t r, std::int64_t c) const
    {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    std::int64_t size() const
    {
        return rows * cols;
    }
    bool same_shape(Matrix const& o) const
    {
        return rows == o.rows && cols == o.cols;
    }
    void zero()
    {
        std::fill(data.begin(), data.end(), T(0));
    }

    bool operator==(Matrix const&) const = default;
};

template <typename To, typename From>
Matrix<To> cast_matrix(Matrix<From> const& m)
{
    Matrix<To> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i)
    {
        out.data[i] = static_cast<To>(m.data[i]);
    }
    return out;
}

/// Fixed-order dot product with eight partial sums.
template <typename T>
inline T dot(T const* a, T const* b, std::int64_t n)
{
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
    {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    for (; i < n; ++i)
    {
        s0 += a[i] * b[i];
    }
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

template <typename T>
inline void axpy(T alpha, T const* x, T* y, std::int64_t n)
{
    for (std::int64_t i = 0; i < n; ++i)
    {
        y[i] += alpha * x[i];
    }
}

/// C (m x n) += A (m x k) * B^T, B is n x k. Rows of B are output features.
template <typename T>
void gemm_nt_acc(Matrix<T> const& a, Matrix<T> const& b, Matrix<T>& c)
{
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
    {
        throw ArgumentError("gemm_nt shape mismatch");
    }
    for (std::int64_t i = 0; i < a.rows; ++i)
    {
        T const* ar = a.row(i);
        T* cr = c.row(i);
        for (std::int64_t j = 0; j < b.rows; ++j)
        {
            cr[j] += dot(ar, b.row(j), a.cols);
        }
    }
}

template <typename T>
Matrix<T> gemm_nt(Matrix<T> const& a, Matrix<T> const& b)
{
    Matrix<T> c(a.rows, b.rows);
    gemm_nt_acc(a, b, c);
    return c;
}

/// C (m x n) += A (m x k) * B (k x n).
template <typename T>
void gemm_nn_acc(Matrix<T> const& a, Matrix<T> const& b, Matrix<T>& c)
{
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    {
        throw ArgumentError("gemm_nn shape mismatch");
    }
    for (std::int64_t i = 0; i < a.rows; ++i)
    {
        T const* ar = a.row(i);
        T* cr = c.row(i);
        for (std::int64_t k = 0; k < a.cols; ++k)
        {
            axpy(ar[k], b.row(k), cr, b.cols);
        }
    }
}

template <typename T>
Matrix<T> gemm_nn(Matrix<T> const& a, Matrix<T> const& b)
{
    Matrix<T> c(a.rows, b.cols);
    gemm_nn_acc(a, b, c);
    return c;
}

/// C (m x n) += A^T * B with A (k x m), B (k x n). Used for weight gradients.
template <typename T>
void gemm_tn_acc(Matrix<T> const& a, Matrix<T> const& b, Matrix<T>& c)
{
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    {
        throw ArgumentError("gemm_tn shape mismatch");
    }
    for (std::int64_t t = 0; t < a.rows; ++t)
    {
        T const* ar = a.row(t);
        T const* br = b.row(t);
        for (std::int64_t i = 0; i < a.cols; ++i)
        {
            if (ar[i] != T(0))
            {
                axpy(ar[i], br, c.row(i), b.cols);
            }
        }
    }
}

template <typename T>
bool all_finite(std::span<T const> values)
{
    for (auto const v : values)
    {
        if (!std::isfinite(v))
        {
            return false;
        }
    }
    return true;
}

template <typename T>
bool all_finite(Matrix<T> const& m)
{
    return all_finite(std::span<T const>(m.data));
}

template <typename T>
void add_inplace(Matrix<T>& dst, Matrix<T> const& src)
{
    if (!dst.same_shape(src))
    {
        throw ArgumentError("add shape mismatch");
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i)
    {
        dst.data[i] += src.data[i];
    }
}

} // namespace mgbert
