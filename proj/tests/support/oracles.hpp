#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the library's Jacobian, norm or convolution code.

#include "marginlab/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using marginlab::Matrix;
using marginlab::Network;
using marginlab::Vector;

/// Central differences of evaluate() with step h.
inline Matrix fd_jacobian(const Network& net, const Vector& x, double h = 1e-5) {
    const Eigen::Index n = x.size();
    Matrix J(static_cast<Eigen::Index>(net.num_classes()), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        J.col(i) = (marginlab::evaluate(net, xp) - marginlab::evaluate(net, xm)) / (2.0 * h);
    }
    return J;
}

/// max |a - b| / max(|b|_max, floor), entrywise over the matrices.
inline double max_rel_error(const Matrix& a, const Matrix& b, double floor = 1e-3) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Singular values by one-sided Jacobi rotations (Hestenes), descending.
inline std::vector<double> jacobi_singular_values(Matrix a) {
    const Eigen::Index n = a.cols();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (Eigen::Index r = 0; r < a.rows(); ++r) {
                    alpha += a(r, p) * a(r, p);
                    beta += a(r, q) * a(r, q);
                    gamma += a(r, p) * a(r, q);
                }
                if (gamma == 0.0) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index r = 0; r < a.rows(); ++r) {
                    const double ap = a(r, p), aq = a(r, q);
                    a(r, p) = c * ap - s * aq;
                    a(r, q) = s * ap + c * aq;
                }
            }
        }
        if (off < 1e-15) break;
    }
    std::vector<double> sv;
    for (Eigen::Index j = 0; j < n; ++j) {
        double s = 0;
        for (Eigen::Index r = 0; r < a.rows(); ++r) s += a(r, j) * a(r, j);
        sv.push_back(std::sqrt(s));
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

/// Zero-padded strided cross-correlation by explicit loops. Filters are
/// [out][in][kh][kw]; images are channel-major.
inline Vector direct_conv(const std::vector<double>& filt, int out_c, int in_c, int kh, int kw, const Vector& img,
                          int h, int w, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    Vector out = Vector::Zero(out_c * oh * ow);
    for (int o = 0; o < out_c; ++o)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0;
                for (int i = 0; i < in_c; ++i)
                    for (int r = 0; r < kh; ++r)
                        for (int c = 0; c < kw; ++c) {
                            const int iy = y * stride + r - pad, ix = x * stride + c - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += filt[((o * in_c + i) * kh + r) * kw + c] * img[(i * h + iy) * w + ix];
                        }
                out[(o * oh + y) * ow + x] = acc;
            }
    return out;
}

/// Distance from x to the nearest point of an n x n grid on
/// [lo, hi]^2 whose predicted class differs from `label`.
inline double grid_margin(const Network& net, const Vector& x, std::size_t label, double lo, double hi,
                          int n = 400) {
    double best = std::numeric_limits<double>::infinity();
    Vector p(2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            p << lo + (hi - lo) * i / (n - 1), lo + (hi - lo) * j / (n - 1);
            if (marginlab::classify(net, p) != label) best = std::min(best, (p - x).norm());
        }
    return best;
}

}  // namespace oracle
