#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/error.hpp"
#include "glyphcrm/rng.hpp"

namespace glyphcrm {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);  // throws ShapeError on non-positive extents
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor. Copies share storage (a tensor is a cheap handle);
// clone() makes an independent copy. The shape is fixed at construction.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(shape_size(shape_), T(0))) {}

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    static TensorT from(Shape shape, std::vector<T> values) {
        TensorT t;
        t.shape_ = std::move(shape);
        if (values.size() != shape_size(t.shape_)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(t.shape_));
        }
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev) {
        TensorT t(std::move(shape));
        for (auto& x : *t.data_) x = static_cast<T>(rng.gaussian(0.0f, static_cast<float>(stddev)));
        return t;
    }

    bool empty() const { return data_ == nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    std::span<T> values() { return {data_->data(), data_->size()}; }
    std::span<const T> values() const { return {data_->data(), data_->size()}; }

    T& operator[](std::size_t i) { return (*data_)[i]; }
    const T& operator[](std::size_t i) const { return (*data_)[i]; }

    // Multi-index access, mainly for tests and small fixtures.
    T& at(std::initializer_list<std::int64_t> idx) { return (*data_)[flat_index(idx)]; }
    const T& at(std::initializer_list<std::int64_t> idx) const { return (*data_)[flat_index(idx)]; }

    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.requires_grad = requires_grad;
        if (data_) t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    // Same storage, new shape of equal element count.
    TensorT reshaped(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw ShapeError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        }
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        t.requires_grad = requires_grad;
        return t;
    }

    void fill(T v) {
        for (auto& x : *data_) x = v;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(size());
        const T* src = data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
        auto t = TensorT<U>::from(shape_, std::move(out));
        t.requires_grad = requires_grad;
        return t;
    }

    // Marks leaf intent: graphs track gradients for leaves created from
    // tensors carrying this flag.
    bool requires_grad = false;

private:
    std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::int64_t i : idx) {
            flat = flat * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return flat;
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
};

using Tensor = TensorT<float>;

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace glyphcrm
