#include "ptbt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace ptbt::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
    if (m == 0 || n == 0) return;
    const auto em = static_cast<Eigen::Index>(m);
    const auto en = static_cast<Eigen::Index>(n);
    const auto ek = static_cast<Eigen::Index>(k);
    View C(c, em, en, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
    if (beta == 0.0) C.setZero();
    else if (beta != 1.0) C *= beta;
    if (k == 0) return;
    const ConstView A(a, trans_a ? ek : em, trans_a ? em : ek, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
    const ConstView B(b, trans_b ? en : ek, trans_b ? ek : en, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
    if (!trans_a && !trans_b) C.noalias() += alpha * A * B;
    else if (!trans_a) C.noalias() += alpha * A * B.transpose();
    else if (!trans_b) C.noalias() += alpha * A.transpose() * B;
    else C.noalias() += alpha * A.transpose() * B.transpose();
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = x + r * cols;
        double mx = kNegInf;
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
        if (mx == kNegInf) {
            std::fill(row, row + cols, 0.0);
            continue;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
}

void layer_norm_forward(const double* x, const double* gain, const double* bias, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps) {
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
        mu *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var *= inv_n;
        const double rs = 1.0 / std::sqrt(var + eps);
        double* yr = y + r * cols;
        for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
        if (mean) mean[r] = mu;
        if (rstd) rstd[r] = rs;
    }
}

void layer_norm_backward(const double* x, const double* gain, const double* mean, const double* rstd,
                         const double* dy, double* dx, double* dgain, double* dbias, std::size_t rows,
                         std::size_t cols) {
    const double inv_n = 1.0 / static_cast<double>(cols);
    std::vector<double> dxhat(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        const double* dyr = dy + r * cols;
        const double mu = mean[r];
        const double rs = rstd[r];
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            if (dgain) dgain[j] += dyr[j] * xhat;
            if (dbias) dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat;
        }
        if (!dx) continue;
        double* dxr = dx + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            dxr[j] += rs * (dxhat[j] - inv_n * sum_d - xhat * inv_n * sum_dx);
        }
    }
}

void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       std::span<const std::uint8_t> key_pad, double* probs, double* out) {
    const std::size_t d = s.model_dim;
    const std::size_t dh = d / s.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t b = 0; b < s.batch; ++b) {
        const double* qb = q + b * s.q_len * d;
        const double* kb = k + b * s.k_len * d;
        const double* vb = v + b * s.k_len * d;
        double* ob = out + b * s.q_len * d;
        const std::uint8_t* pad = key_pad.empty() ? nullptr : key_pad.data() + b * s.k_len;
        for (std::size_t h = 0; h < s.heads; ++h) {
            double* p = probs + ((b * s.heads + h) * s.q_len) * s.k_len;
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < s.q_len; ++i) {
                const double* qi = qb + i * d + off;
                double* pi = p + i * s.k_len;
                const std::size_t limit = s.causal ? std::min(s.k_len, i + s.query_offset + 1) : s.k_len;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    if (j >= limit || (pad && pad[j])) {
                        pi[j] = kNegInf;
                        continue;
                    }
                    const double* kj = kb + j * d + off;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
                    pi[j] = acc * scale;
                }
            }
            softmax_rows(p, s.q_len, s.k_len);
            for (std::size_t i = 0; i < s.q_len; ++i) {
                double* oi = ob + i * d + off;
                std::fill(oi, oi + dh, 0.0);
                const double* pi = p + i * s.k_len;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    const double w = pi[j];
                    if (w == 0.0) continue;
                    const double* vj = vb + j * d + off;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
                }
            }
        }
    }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
    const std::size_t d = s.model_dim;
    const std::size_t dh = d / s.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dp(s.k_len);
    for (std::size_t b = 0; b < s.batch; ++b) {
        const std::size_t qrow = b * s.q_len;
        const std::size_t krow = b * s.k_len;
        for (std::size_t h = 0; h < s.heads; ++h) {
            const double* p = probs + ((b * s.heads + h) * s.q_len) * s.k_len;
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < s.q_len; ++i) {
                const double* pi = p + i * s.k_len;
                const double* doi = dout + (qrow + i) * d + off;
                // dP = dO V^T, and dV += P^T dO
                double dot = 0.0;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    const double* vj = v + (krow + j) * d + off;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += doi[c] * vj[c];
                    dp[j] = acc;
                    dot += acc * pi[j];
                    if (dv && pi[j] != 0.0) {
                        double* dvj = dv + (krow + j) * d + off;
                        for (std::size_t c = 0; c < dh; ++c) dvj[c] += pi[j] * doi[c];
                    }
                }
                const double* qi = q + (qrow + i) * d + off;
                double* dqi = dq ? dq + (qrow + i) * d + off : nullptr;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    if (pi[j] == 0.0) continue;
                    const double ds = pi[j] * (dp[j] - dot) * scale;
                    const double* kj = k + (krow + j) * d + off;
                    if (dqi)
                        for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                    if (dk) {
                        double* dkj = dk + (krow + j) * d + off;
                        for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    }
}

}  // namespace ptbt::kernels
