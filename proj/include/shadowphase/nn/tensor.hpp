#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "shadowphase/errors.hpp"

namespace shadowphase::nn {

// Dense row-major real tensor. float in the training path, double in
// gradient-check mode.
template <class T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ConfigError("Tensor: data length does not match shape");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (std::int64_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(static_cast<std::size_t>(numel_of(t.shape)), T(0));
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rows() const { return shape.at(0); }
    std::int64_t cols() const { return shape.at(1); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? ", " : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

}  // namespace shadowphase::nn
