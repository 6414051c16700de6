#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "atoken/binary_io.hpp"
#include "atoken/error.hpp"
#include "atoken/matrix.hpp"
#include "atoken/rng.hpp"

namespace atoken {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// y = W x + b with W stored out x in.
struct Linear {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    static Linear zeros(std::size_t in, std::size_t out) {
        return {in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
    }

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
    static Linear random(std::size_t in, std::size_t out, Rng& rng) {
        Linear l = zeros(in, out);
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& w : l.weight) w = rng.uniform(-bound, bound);
        return l;
    }

    void apply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t o = 0; o < out; ++o) {
            double s = bias[o];
            const double* w = weight.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) s += w[i] * x[i];
            y[o] = s;
        }
    }

    Matrix apply_rows(const Matrix& x) const {
        require(x.cols() == in, "linear layer input width mismatch");
        Matrix y(x.rows(), out);
        for (std::size_t r = 0; r < x.rows(); ++r) apply(x.row(r), y.row(r));
        return y;
    }

    WeightLayer to_layer() const {
        return {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), 1, 1, weight, bias};
    }

    static Linear from_layer(const WeightLayer& l) {
        if (l.kh != 1 || l.kw != 1) throw IoError("expected a linear (1x1) weight layer");
        return {l.in, l.out, l.weights, l.biases};
    }

    bool operator==(const Linear&) const = default;
};

/// Per-token normalisation over channels with learned scale and shift.
struct LayerNorm {
    std::vector<double> gamma;
    std::vector<double> beta;
    static constexpr double eps = 1e-5;

    static LayerNorm identity(std::size_t channels) {
        return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0)};
    }

    Matrix apply_rows(const Matrix& x) const {
        require(x.cols() == gamma.size(), "layer norm width mismatch");
        Matrix y(x.rows(), x.cols());
        double n = static_cast<double>(x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            auto row = x.row(r);
            double mean = 0.0;
            for (double v : row) mean += v;
            mean /= n;
            double var = 0.0;
            for (double v : row) var += (v - mean) * (v - mean);
            var /= n;
            double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < row.size(); ++c) y(r, c) = (row[c] - mean) * inv * gamma[c] + beta[c];
        }
        return y;
    }

    // Stored as an out=C, in=1 layer: weights = gamma, biases = beta.
    WeightLayer to_layer() const {
        return {static_cast<std::uint32_t>(gamma.size()), 1, 1, 1, gamma, beta};
    }

    static LayerNorm from_layer(const WeightLayer& l) {
        if (l.in != 1 || l.kh != 1 || l.kw != 1) throw IoError("expected a normalisation weight layer");
        return {l.weights, l.biases};
    }

    bool operator==(const LayerNorm&) const = default;
};

/// Two-layer perceptron with ReLU between and a residual around the block.
struct ResidualMlp {
    Linear fc1;
    Linear fc2;

    static ResidualMlp zeros(std::size_t channels, std::size_t hidden) {
        return {Linear::zeros(channels, hidden), Linear::zeros(hidden, channels)};
    }
    static ResidualMlp random(std::size_t channels, std::size_t hidden, Rng& rng) {
        return {Linear::random(channels, hidden, rng), Linear::random(hidden, channels, rng)};
    }

    /// x + fc2(relu(fc1(x))) applied to every row.
    Matrix apply_rows(const Matrix& x) const {
        require(x.cols() == fc1.in && fc2.out == fc1.in && fc2.in == fc1.out, "MLP shape chain mismatch");
        Matrix y = x;
        std::vector<double> hidden(fc1.out);
        std::vector<double> outv(fc2.out);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            fc1.apply(x.row(r), hidden);
            for (auto& h : hidden) h = relu(h);
            fc2.apply(hidden, outv);
            for (std::size_t c = 0; c < outv.size(); ++c) y(r, c) += outv[c];
        }
        return y;
    }

    bool operator==(const ResidualMlp&) const = default;
};

}  // namespace atoken
