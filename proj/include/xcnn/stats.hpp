#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "xcnn/error.hpp"
#include "xcnn/rng.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

/// Tensor of i.i.d. Normal(mean, stddev^2) draws; advances `rng`.
inline Tensor gaussian_sample(Rng& rng, double mean, double stddev, const Shape& shape) {
    if (!(stddev >= 0.0)) throw UsageError("gaussian_sample: stddev must be non-negative");
    Tensor out(shape);
    for (auto& v : out.values()) v = static_cast<float>(mean + stddev * rng.normal());
    out.require_finite("gaussian_sample");
    return out;
}

/// Neumaier-compensated sum in double precision.
template <typename T>
double sum(std::span<const T> values) {
    double s = 0.0, comp = 0.0;
    for (T v : values) {
        const double x = static_cast<double>(v);
        const double t = s + x;
        if (std::abs(s) >= std::abs(x))
            comp += (s - t) + x;
        else
            comp += (x - t) + s;
        s = t;
    }
    return s + comp;
}

inline double sum(const Tensor& t) { return sum(t.values()); }

/// Population variance E[z^2] - E[z]^2, computed with Welford's update.
template <typename T>
double variance(std::span<const T> values) {
    if (values.empty()) throw UsageError("variance of an empty sequence");
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (T v : values) {
        ++k;
        const double x = static_cast<double>(v);
        const double delta = x - mean;
        mean += delta / static_cast<double>(k);
        m2 += delta * (x - mean);
    }
    return std::max(0.0, m2 / static_cast<double>(k));
}

inline double variance(const Tensor& t) { return variance(t.values()); }

/// |Pearson r| between x and y.
///
/// Returns nullopt when either sequence has zero variance (the correlation is
/// undefined). Co-moments are accumulated in a single Welford pass.
template <typename T, typename U>
std::optional<double> pearson_abs(std::span<const T> x, std::span<const U> y) {
    if (x.size() != y.size()) throw UsageError("pearson_abs: sequences differ in length");
    if (x.size() < 2) throw UsageError("pearson_abs: need at least two points");
    double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double k = static_cast<double>(i + 1);
        const double dx = static_cast<double>(x[i]) - mx;
        const double dy = static_cast<double>(y[i]) - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (static_cast<double>(x[i]) - mx);
        syy += dy * (static_cast<double>(y[i]) - my);
        sxy += dx * (static_cast<double>(y[i]) - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    const double r = std::abs(sxy) / std::sqrt(sxx * syy);
    return std::min(1.0, r);
}

} // namespace xcnn
