#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sigil {

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) {
            throw std::invalid_argument("negative dimension in shape");
        }
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); i++) {
        s += std::to_string(shape[i]);
        if (i + 1 < shape.size()) {
            s += ",";
        }
    }
    return s + ")";
}

// Dense nd array. Copies share the buffer (numpy-style); ops allocate fresh
// buffers, so aliasing only matters if a caller mutates in place.
template <class T>
struct ArrayND {
    std::vector<int64_t> shape;
    std::shared_ptr<std::vector<T>> buf;

    ArrayND() = default;
    explicit ArrayND(std::vector<int64_t> s)
        : shape(std::move(s)), buf(std::make_shared<std::vector<T>>(numel_of(shape), T(0))) {}

    static ArrayND zeros(std::vector<int64_t> s) { return ArrayND(std::move(s)); }

    static ArrayND full(std::vector<int64_t> s, T v) {
        ArrayND a(std::move(s));
        std::fill(a.buf->begin(), a.buf->end(), v);
        return a;
    }

    static ArrayND from(std::vector<int64_t> s, std::vector<T> values) {
        if (numel_of(s) != (int64_t)values.size()) {
            throw std::invalid_argument("from(): value count does not match shape " + shape_str(s));
        }
        ArrayND a;
        a.shape = std::move(s);
        a.buf   = std::make_shared<std::vector<T>>(std::move(values));
        return a;
    }

    bool defined() const { return buf != nullptr; }
    int64_t numel() const { return buf ? (int64_t)buf->size() : 0; }
    int rank() const { return (int)shape.size(); }

    int64_t dim(int i) const {
        if (i < 0) {
            i += rank();
        }
        if (i < 0 || i >= rank()) {
            throw std::out_of_range("dim index out of range");
        }
        return shape[i];
    }

    T* data() { return buf->data(); }
    const T* data() const { return buf->data(); }

    T& operator[](int64_t i) { return (*buf)[i]; }
    const T& operator[](int64_t i) const { return (*buf)[i]; }

    ArrayND clone() const {
        ArrayND a;
        a.shape = shape;
        a.buf   = buf ? std::make_shared<std::vector<T>>(*buf) : nullptr;
        return a;
    }

    // Same buffer, new shape.
    ArrayND reshaped(std::vector<int64_t> s) const {
        if (numel_of(s) != numel()) {
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape) + " -> " + shape_str(s));
        }
        ArrayND a;
        a.shape = std::move(s);
        a.buf   = buf;
        return a;
    }

    template <class U>
    ArrayND<U> cast() const {
        ArrayND<U> a;
        a.shape = shape;
        a.buf   = std::make_shared<std::vector<U>>(numel());
        for (int64_t i = 0; i < numel(); i++) {
            (*a.buf)[i] = (U)(*buf)[i];
        }
        return a;
    }

    bool same_shape(const ArrayND& o) const { return shape == o.shape; }
};

template <class T>
void check_same_shape(const ArrayND<T>& a, const ArrayND<T>& b, const char* where) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
}

template <class T>
bool all_finite(const ArrayND<T>& a) {
    for (int64_t i = 0; i < a.numel(); i++) {
        if (!std::isfinite((double)a[i])) {
            return false;
        }
    }
    return true;
}

template <class T>
double max_abs_diff(const ArrayND<T>& a, const ArrayND<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (int64_t i = 0; i < a.numel(); i++) {
        m = std::max(m, std::abs((double)a[i] - (double)b[i]));
    }
    return m;
}

template <class T>
bool bitwise_equal(const ArrayND<T>& a, const ArrayND<T>& b) {
    if (!a.same_shape(b)) {
        return false;
    }
    for (int64_t i = 0; i < a.numel(); i++) {
        if (a[i] != b[i]) {
            return false;
        }
    }
    return true;
}

}  // namespace sigil
