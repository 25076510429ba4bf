// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_DATASETS_HPP
#define HYBRIDNET_DATASETS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hybridnet/tensor.hpp"

namespace hybridnet {

struct Dataset {
    std::vector<Tensor<float>> inputs; // (C, S, S) each
    std::vector<std::size_t> labels;
    std::size_t classes = 0;

    std::size_t size() const { return inputs.size(); }
};

struct DataSplit {
    Dataset train;
    Dataset test;
};

struct BlobOptions {
    std::size_t classes = 2;
    std::size_t features = 2;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    double separation = 6.0; // distance of each class mean from the origin
    double stddev = 1.0;
};

/// Isotropic Gaussian blobs with class means spread on a circle (or the
/// coordinate axes for more than two features). Inputs are (features, 1, 1).
inline DataSplit make_blobs(const BlobOptions& o, std::uint64_t seed) {
    detail::require(o.classes >= 2 && o.features >= 2, "blobs need at least two classes and two features");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, o.stddev);
    std::vector<std::vector<double>> means(o.classes, std::vector<double>(o.features, 0.0));
    for (std::size_t c = 0; c < o.classes; ++c) {
        const double t = 2.0 * 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(o.classes);
        means[c][0] = o.separation * std::cos(t);
        means[c][1] = o.separation * std::sin(t);
    }
    auto fill = [&](Dataset& d, std::size_t per_class) {
        d.classes = o.classes;
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t c = 0; c < o.classes; ++c) {
                Tensor<float> x({o.features, 1, 1});
                for (std::size_t f = 0; f < o.features; ++f) x[f] = static_cast<float>(means[c][f] + noise(rng));
                d.inputs.push_back(std::move(x));
                d.labels.push_back(c);
            }
        }
    };
    DataSplit s;
    fill(s.train, o.train_per_class);
    fill(s.test, o.test_per_class);
    return s;
}

// ---------------------------------------------------------------------------
// 8x8 synthetic shapes, 10 classes
// ---------------------------------------------------------------------------

inline constexpr std::size_t kShapeSide = 8;
inline constexpr std::size_t kShapeClasses = 10;

struct ShapeOptions {
    std::size_t train = 1000;
    std::size_t test = 500;
    double noise = 0.35;
};

namespace detail {

// Draws shape `c` into an 8x8 canvas at a random offset and size.
inline void draw_shape(std::size_t c, std::vector<float>& img, std::mt19937_64& rng) {
    constexpr int S = static_cast<int>(kShapeSide);
    std::uniform_int_distribution<int> size_d(4, 6);
    const int n = size_d(rng);
    std::uniform_int_distribution<int> off_d(0, S - n);
    const int ox = off_d(rng), oy = off_d(rng);
    auto put = [&](int x, int y) {
        if (x >= 0 && y >= 0 && x < S && y < S) img[static_cast<std::size_t>(y * S + x)] = 1.0f;
    };
    const int m = n / 2;
    for (int i = 0; i < n; ++i) {
        switch (c) {
        case 0: put(ox + i, oy + m); break;                  // horizontal bar
        case 1: put(ox + m, oy + i); break;                  // vertical bar
        case 2: put(ox + i, oy + i); break;                  // diagonal
        case 3: put(ox + n - 1 - i, oy + i); break;          // anti-diagonal
        case 4: put(ox + i, oy + m), put(ox + m, oy + i); break; // plus
        case 5: put(ox + i, oy + i), put(ox + n - 1 - i, oy + i); break; // cross
        case 6:                                              // hollow square
            put(ox + i, oy), put(ox + i, oy + n - 1), put(ox, oy + i), put(ox + n - 1, oy + i);
            break;
        case 7:                                              // filled square
            for (int j = 0; j < n; ++j) put(ox + i, oy + j);
            break;
        case 8: put(ox, oy + i), put(ox + i, oy + n - 1); break; // L corner
        case 9: put(ox + i, oy), put(ox + m, oy + i); break;     // T
        default: break;
        }
    }
}

inline Dataset make_shape_set(std::size_t count, double noise, std::mt19937_64& rng) {
    Dataset d;
    d.classes = kShapeClasses;
    std::normal_distribution<double> nd(0.0, noise);
    std::uniform_real_distribution<double> gain(0.6, 1.4);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t c = i % kShapeClasses;
        std::vector<float> img(kShapeSide * kShapeSide, 0.0f);
        draw_shape(c, img, rng);
        const double g = gain(rng);
        for (auto& v : img) v = static_cast<float>(g * v + nd(rng));
        d.inputs.emplace_back(Shape{1, kShapeSide, kShapeSide}, std::move(img));
        d.labels.push_back(c);
    }
    return d;
}

} // namespace detail

/// Procedural 8x8 single-channel images of ten line/box shapes with random
/// placement, size, gain and additive Gaussian noise.
inline DataSplit make_shapes(const ShapeOptions& o, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DataSplit s;
    s.train = detail::make_shape_set(o.train, o.noise, rng);
    s.test = detail::make_shape_set(o.test, o.noise, rng);
    return s;
}

} // namespace hybridnet

#endif
