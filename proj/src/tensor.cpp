#include "blocktraj/tensor.hpp"

namespace blocktraj {

void matmul_into(Tensor& out, const Tensor& a, const Tensor& b, bool trans_a, bool trans_b,
                 bool accumulate) {
    const std::size_t n = trans_a ? a.cols() : a.rows();
    const std::size_t k = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t m = trans_b ? b.rows() : b.cols();
    if (k != kb)
        throw ContractError("matmul: inner dims disagree " + a.shape_str() + (trans_a ? "^T" : "") +
                            " * " + b.shape_str() + (trans_b ? "^T" : ""));
    if (out.rows() != n || out.cols() != m) out = Tensor(n, m);
    if (!accumulate) out.fill(0.0);

    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < n; ++i) {
            double* orow = out.row(i);
            const double* arow = a.row(i);
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b.row(kk);
                for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < n; ++i) {
            double* orow = out.row(i);
            const double* arow = a.row(i);
            for (std::size_t j = 0; j < m; ++j) {
                const double* brow = b.row(j);
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                orow[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* arow = a.row(kk);
            const double* brow = b.row(kk);
            for (std::size_t i = 0; i < n; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* orow = out.row(i);
                for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double* orow = out.row(i);
            for (std::size_t j = 0; j < m; ++j) {
                const double* brow = b.row(j);
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk) acc += a.at(kk, i) * brow[kk];
                orow[j] += acc;
            }
        }
    }
}

}  // namespace blocktraj
