#pragma once

// Dense row-major 64-bit arrays. Everything the denoiser and RNE touch is
// either a vector (n) or a matrix (n x m); higher ranks are not needed.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "blocktraj/common.hpp"

namespace blocktraj {

class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor(1, n, fill); }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    static Tensor from_rows(std::size_t rows, std::size_t cols, std::vector<double> data) {
        if (data.size() != rows * cols)
            throw ContractError("Tensor::from_rows: data size " + std::to_string(data.size()) +
                                " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
        Tensor t;
        t.rows_ = rows;
        t.cols_ = cols;
        t.data_ = std::move(data);
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t numel() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double item() const {
        if (numel() != 1) throw ContractError("Tensor::item on non-scalar " + shape_str());
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    const std::vector<double>& storage() const { return data_; }
    std::vector<double>& storage() { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B, optional transposes. ikj order so the inner loop is contiguous.
void matmul_into(Tensor& out, const Tensor& a, const Tensor& b, bool trans_a, bool trans_b,
                 bool accumulate);

}  // namespace blocktraj
