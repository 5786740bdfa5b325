#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace coat {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces NaN or Inf.
class NumericFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a higher-order request is made on a first-order graph.
class ModeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Dense row-major array of doubles. Plain value type; the autodiff graph
/// stores one per node.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s, double fill = 0.0);
    Array(Shape s, std::vector<double> d);

    static Array scalar(double v);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool empty() const { return data.empty(); }
    double item() const;

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<const double> values() const { return data; }
    std::span<double> values() { return data; }

    friend bool operator==(const Array&, const Array&) = default;
};

bool all_finite(std::span<const double> v);

}  // namespace coat
