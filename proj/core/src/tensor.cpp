#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::int64_t e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template class TensorT<float>;
template class TensorT<double>;

}  // namespace glyphcrm
