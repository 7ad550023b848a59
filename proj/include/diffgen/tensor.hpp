#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffgen {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

/// Dense row-major array of scalars. float is the working precision,
/// double is used by the gradient-verification suites.
template <typename S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

    TensorT(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, S value) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static TensorT scalar(S value) { return TensorT({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int extent(std::size_t i) const { return shape_.at(i); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    S item() const {
        if (data_.size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    /// Reinterpret under a new shape with identical element count.
    TensorT reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
        return TensorT(std::move(shape), data_);
    }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(S value) {
        for (auto& v : data_) v = value;
    }

    template <typename T>
    TensorT<T> cast() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return TensorT<T>(shape_, std::move(out));
    }

private:
    Shape shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;

template <typename S>
void check_finite(const TensorT<S>& t, const char* what) {
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

}  // namespace diffgen
