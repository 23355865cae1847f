#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "catcache/errors.hpp"

namespace catcache {

/// Dot product with four independent accumulators so the loop vectorizes
/// without relaxing floating-point semantics.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
    const std::size_t n = a.size();
    float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return static_cast<double>((s0 + s1) + (s2 + s3));
}

/// Unit-norm vector. Construction normalizes, so every live Embedding
/// satisfies |v| = 1 within float rounding.
class Embedding {
public:
    Embedding() = default;

    explicit Embedding(std::vector<float> values) : values_(std::move(values)) {
        if (values_.empty()) throw UsageError("embedding must have at least one component");
        double norm2 = 0.0;
        for (float v : values_) {
            if (!std::isfinite(v)) throw UsageError("embedding contains a non-finite value");
            norm2 += static_cast<double>(v) * v;
        }
        if (norm2 <= 0.0) throw UsageError("cannot normalize a zero vector");
        const double inv = 1.0 / std::sqrt(norm2);
        for (float& v : values_) v = static_cast<float>(v * inv);
    }

    template <typename T>
    static Embedding from(std::span<const T> values) {
        return Embedding(std::vector<float>(values.begin(), values.end()));
    }

    std::size_t dimension() const noexcept { return values_.size(); }
    std::span<const float> values() const noexcept { return values_; }
    float operator[](std::size_t i) const noexcept { return values_[i]; }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<float> values_;
};

/// Cosine similarity of two unit vectors (their dot product).
inline double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.dimension() != b.dimension())
        throw UsageError("dimension mismatch: " + std::to_string(a.dimension()) + " vs " +
                         std::to_string(b.dimension()));
    return dot(a.values(), b.values());
}

}  // namespace catcache
