#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace baa {

/// Dense row-major array of doubles. Images are [H,W,C], batches [B,H,W,C].
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
        : shape(std::move(dims)), data(element_count(shape), fill) {}

    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    const double& operator[](std::size_t i) const { return data[i]; }

    std::span<double> values() noexcept { return data; }
    std::span<const double> values() const noexcept { return data; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shape_string(const std::vector<std::size_t>& shape);

} // namespace baa
