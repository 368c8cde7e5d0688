#pragma once

// Dense numeric kernels shared by the autodiff graph and the incremental
// decoder. Everything is row-major double precision.

#include <cstddef>
#include <cstdint>
#include <span>

namespace ptbt::kernels {

// C = alpha * op(A) * op(B) + beta * C, op(X) = X or X^T.
// op(A) is [m,k], op(B) is [k,n], C is [m,n].
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);

// In-place softmax over each row of a [rows, cols] block. Entries equal to
// -inf get probability zero; a row of all -inf becomes all zeros.
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

// Layer norm over the last axis. mean/rstd receive one value per row.
void layer_norm_forward(const double* x, const double* gain, const double* bias, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps);

// Accumulates into dx, dgain, dbias.
void layer_norm_backward(const double* x, const double* gain, const double* mean, const double* rstd,
                         const double* dy, double* dx, double* dgain, double* dbias, std::size_t rows,
                         std::size_t cols);

// Shape of one scaled dot-product attention call. Queries are rows
// [b*q_len, b*q_len + q_len) of Q; keys/values likewise with k_len.
// Query i of a batch item sits at absolute position i + query_offset; with
// `causal` it may attend to keys at positions <= that.
struct AttentionShape {
    std::size_t batch = 1;
    std::size_t q_len = 0;
    std::size_t k_len = 0;
    std::size_t model_dim = 0;
    std::size_t heads = 1;
    std::size_t query_offset = 0;
    bool causal = false;
};

// out: [batch*q_len, model_dim]; probs: [batch, heads, q_len, k_len].
// key_pad (optional, batch*k_len entries): nonzero marks a masked key.
void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       std::span<const std::uint8_t> key_pad, double* probs, double* out);

// Accumulates into dq, dk, dv (any may be null).
void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

}  // namespace ptbt::kernels
