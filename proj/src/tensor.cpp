#include "coat/tensor.hpp"

#include <cmath>
#include <sstream>

namespace coat {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
        n *= e;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("array of " + std::to_string(data.size()) + " values does not fit shape " + to_string(shape));
    }
}

Array Array::scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

double Array::item() const {
    if (data.size() != 1) throw ShapeError("item() on non-scalar array of shape " + to_string(shape));
    return data[0];
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace coat
