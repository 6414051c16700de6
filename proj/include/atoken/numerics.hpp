#pragma once

// Analytic gradients for the differentiable pieces (score-weighted merge,
// biased attention, focal loss), a central-difference checker, and the
// reference double-loop cluster assignment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "atoken/att.hpp"
#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/matrix.hpp"
#include "atoken/rng.hpp"

namespace atoken {

struct GradCheckReport {
    std::string operation;
    double max_relative_error = 0.0;
    std::size_t element_count = 0;
    double epsilon = 0.0;
    bool pass = false;
};

/// |a - f| / max(|a|, |f|, 1e-8).
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

using ScalarFn = std::function<double(std::span<const double>)>;

/// Compare `analytic` against central differences of f at x0.
inline GradCheckReport fd_check(const std::string& operation, const ScalarFn& f, std::span<const double> x0,
                                std::span<const double> analytic, double epsilon = 1e-5, double tolerance = 1e-6) {
    if (analytic.size() != x0.size()) throw Error("analytic gradient length does not match the parameters");
    std::vector<double> x(x0.begin(), x0.end());
    GradCheckReport report{operation, 0.0, x.size(), epsilon, false};
    for (std::size_t i = 0; i < x.size(); ++i) {
        double saved = x[i];
        x[i] = saved + epsilon;
        double fp = f(x);
        x[i] = saved - epsilon;
        double fm = f(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw Error(operation + ": function is not finite near x0");
        double numeric = (fp - fm) / (2.0 * epsilon);
        report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[i], numeric));
    }
    report.pass = report.max_relative_error < tolerance;
    return report;
}

struct MergeGrad {
    Matrix g_x;
    std::vector<double> g_p;
};

/// Gradients of y = sum_j w_j x_j, w = softmax(p), contracted with g_y:
///   dL/dx_j = w_j g_y,   dL/dp_j = w_j (x_j - y) . g_y
inline MergeGrad merge_backward(const Matrix& x, std::span<const double> p, std::span<const double> g_y) {
    if (g_y.size() != x.cols()) throw Error("upstream gradient width does not match the features");
    std::vector<double> w(p.size());
    auto y = weighted_merge(x, p, w);
    MergeGrad g{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
    for (std::size_t j = 0; j < x.rows(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            g.g_x(j, c) = w[j] * g_y[c];
            s += (x(j, c) - y[c]) * g_y[c];
        }
        g.g_p[j] = w[j] * s;
    }
    return g;
}

struct AttentionGrad {
    Matrix g_q;
    Matrix g_k;
    Matrix g_v;
    std::vector<double> g_p;
};

/// Gradients of O = softmax(Q K^T / sqrt(d) + 1 p^T) V given dL/dO.
inline AttentionGrad biased_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> p,
                                               const Matrix& upstream) {
    if (v.rows() != k.rows()) throw Error("keys and values differ in count");
    if (upstream.rows() != q.rows() || upstream.cols() != v.cols()) throw Error("upstream gradient has the wrong shape");
    Matrix a = biased_attention_weights(q, k, p);
    double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    std::size_t nq = q.rows(), nk = k.rows();

    AttentionGrad g{Matrix(q.rows(), q.cols()), Matrix(k.rows(), k.cols()), Matrix(v.rows(), v.cols()),
                    std::vector<double>(nk, 0.0)};
    // dS = A * (dA - rowsum(dA * A)), dA = G V^T
    Matrix ds(nq, nk);
    for (std::size_t r = 0; r < nq; ++r) {
        double inner = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
            double da = dot(upstream.row(r), v.row(j));
            ds(r, j) = da;
            inner += da * a(r, j);
        }
        for (std::size_t j = 0; j < nk; ++j) ds(r, j) = a(r, j) * (ds(r, j) - inner);
    }
    for (std::size_t r = 0; r < nq; ++r) {
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < v.cols(); ++c) g.g_v(j, c) += a(r, j) * upstream(r, c);
            for (std::size_t c = 0; c < q.cols(); ++c) {
                g.g_q(r, c) += ds(r, j) * k(j, c) * scale;
                g.g_k(j, c) += ds(r, j) * q(r, c) * scale;
            }
            g.g_p[j] += ds(r, j);
        }
    }
    return g;
}

/// d focal_loss / d logits.
inline std::vector<double> focal_loss_backward(const ScoreMap& pred, const ScoreMap& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height()) throw Error("focal loss maps differ in size");
    std::size_t positives = 0;
    for (double g : gt.values()) positives += g == 1.0;
    double norm = static_cast<double>(std::max<std::size_t>(1, positives));
    std::vector<double> grad(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double x = pred[i];
        double p = sigmoid(x);
        double q = sigmoid(-x);
        if (gt[i] == 1.0) {
            // d/dx [-(1-p)^2 log p] = -2 p q^2 log p - q^3
            grad[i] = (-2.0 * p * q * q * softplus(-x) - q * q * q) / norm;
        } else {
            double w = 1.0 - gt[i];
            w *= w;
            w *= w;
            // d/dx [-(1-gt)^4 p^2 log(1-p)] = w (p^3 - 2 p^2 q log(1-p))
            grad[i] = w * (p * p * p + 2.0 * p * p * q * softplus(x)) / norm;
        }
    }
    return grad;
}

/// Reference O(n k) assignment as a plain double loop.
inline std::vector<std::uint32_t> brute_force_assign(const TokenSet& ts, std::span<const std::uint32_t> centers, double beta,
                                                     double position_scale = 1.0) {
    std::vector<std::uint32_t> out(ts.count());
    for (std::size_t i = 0; i < ts.count(); ++i) {
        bool is_center = false;
        for (std::size_t j = 0; j < centers.size(); ++j) {
            if (centers[j] == i) {
                out[i] = static_cast<std::uint32_t>(j);
                is_center = true;
            }
        }
        if (is_center) continue;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < centers.size(); ++j) {
            std::size_t c = centers[j];
            double feat = 0.0;
            for (std::size_t ch = 0; ch < ts.channels(); ++ch) {
                double d = ts.features()(i, ch) - ts.features()(c, ch);
                feat += d * d;
            }
            double du = ts.positions()[i].u * position_scale - ts.positions()[c].u * position_scale;
            double dv = ts.positions()[i].v * position_scale - ts.positions()[c].v * position_scale;
            double delta = feat - beta * (du * du + dv * dv);
            if (delta < best) {
                best = delta;
                out[i] = static_cast<std::uint32_t>(j);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Seeded gradient-check instances, shared by the test suite and `verify`.

namespace gradcheck {

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Cluster of `members` tokens with `channels` features under a fixed
/// linear readout g_y . y.
inline GradCheckReport merge_instance(std::uint64_t seed, std::size_t members = 5, std::size_t channels = 4,
                                      double epsilon = 1e-5) {
    Rng rng(seed);
    auto params = random_vector(rng, members * channels + members, -2.0, 2.0);
    auto g_y = random_vector(rng, channels);
    auto unpack = [=](std::span<const double> x) {
        Matrix feats(members, channels, std::vector<double>(x.begin(), x.begin() + members * channels));
        std::vector<double> p(x.begin() + members * channels, x.end());
        return std::pair{feats, p};
    };
    auto f = [&](std::span<const double> x) {
        auto [feats, p] = unpack(x);
        return dot(g_y, weighted_merge(feats, p));
    };
    auto [feats, p] = unpack(params);
    auto g = merge_backward(feats, p, g_y);
    std::vector<double> analytic = g.g_x.data();
    analytic.insert(analytic.end(), g.g_p.begin(), g.g_p.end());
    return fd_check("merge_backward", f, params, analytic, epsilon);
}

/// n_q x n_k x d attention with a fixed random upstream gradient.
inline GradCheckReport attention_instance(std::uint64_t seed, std::size_t nq = 4, std::size_t nk = 3, std::size_t d = 2,
                                          double epsilon = 1e-5) {
    Rng rng(seed);
    std::size_t sizes[] = {nq * d, nk * d, nk * d, nk};
    auto params = random_vector(rng, sizes[0] + sizes[1] + sizes[2] + sizes[3]);
    Matrix upstream(nq, d, random_vector(rng, nq * d));
    struct Parts {
        Matrix q, k, v;
        std::vector<double> p;
    };
    auto unpack = [=](std::span<const double> x) {
        auto it = x.begin();
        auto take = [&](std::size_t n) {
            std::vector<double> out(it, it + static_cast<std::ptrdiff_t>(n));
            it += static_cast<std::ptrdiff_t>(n);
            return out;
        };
        Parts parts{Matrix(nq, d, take(sizes[0])), Matrix(nk, d, take(sizes[1])), Matrix(nk, d, take(sizes[2])), {}};
        parts.p = take(sizes[3]);
        return parts;
    };
    auto f = [&](std::span<const double> x) {
        auto s = unpack(x);
        return dot(biased_attention(s.q, s.k, s.v, s.p).data(), upstream.data());
    };
    auto s = unpack(params);
    auto g = biased_attention_backward(s.q, s.k, s.v, s.p, upstream);
    std::vector<double> analytic = g.g_q.data();
    analytic.insert(analytic.end(), g.g_k.data().begin(), g.g_k.data().end());
    analytic.insert(analytic.end(), g.g_v.data().begin(), g.g_v.data().end());
    analytic.insert(analytic.end(), g.g_p.begin(), g.g_p.end());
    return fd_check("biased_attention_backward", f, params, analytic, epsilon);
}

/// side x side logits in [-1, 1] against a sigma = 1 heatmap of one or two
/// keypoints. The ranges keep every partial above ~1e-4 so that central
/// differences of an O(1) loss can resolve them.
inline GradCheckReport focal_instance(std::uint64_t seed, std::size_t side = 6, double epsilon = 1e-5) {
    Rng rng(seed);
    KeypointSet kps;
    kps.gaussian_sigma = 1.0;
    std::size_t m = 1 + rng.index(2);
    for (std::size_t i = 0; i < m; ++i)
        kps.points.push_back({static_cast<double>(rng.index(side)), static_cast<double>(rng.index(side))});
    ScoreMap gt = keypoint_heatmap(kps, side, side);
    auto params = random_vector(rng, side * side);
    auto f = [&](std::span<const double> x) {
        return focal_loss(ScoreMap(side, side, std::vector<double>(x.begin(), x.end())), gt);
    };
    auto analytic = focal_loss_backward(ScoreMap(side, side, params), gt);
    return fd_check("focal_loss_backward", f, params, analytic, epsilon);
}

/// Every check run by `verify`: `instances` seeded cases per operation plus
/// the checker's own sanity cases.
inline std::vector<GradCheckReport> run_all(std::uint64_t seed = 1, std::size_t instances = 20) {
    std::vector<GradCheckReport> reports;
    Rng rng(seed);
    {
        auto x0 = random_vector(rng, 8);
        reports.push_back(fd_check("fd_check_quadratic", [](std::span<const double> x) { return 0.5 * dot(x, x); }, x0, x0,
                                   1e-5, 1e-9));
        auto a = random_vector(rng, 8);
        reports.push_back(fd_check("fd_check_linear", [&](std::span<const double> x) { return dot(a, x); }, x0, a, 1e-5,
                                   1e-9));
    }
    for (std::size_t i = 0; i < instances; ++i) reports.push_back(merge_instance(rng.bits()));
    for (std::size_t i = 0; i < instances; ++i) reports.push_back(attention_instance(rng.bits()));
    for (std::size_t i = 0; i < instances; ++i) reports.push_back(focal_instance(rng.bits()));
    return reports;
}

}  // namespace gradcheck

}  // namespace atoken
