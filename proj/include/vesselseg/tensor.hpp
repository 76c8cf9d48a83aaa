#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vseg {

/// Dense row-major tensor of doubles. Rank is dynamic; the last axis is
/// contiguous. Used for volumes (D,H,W), predictions (C,D,H,W) and network
/// parameters alike.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
        data_.assign(count(shape_), fill);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int s : shape) {
            if (s < 0) throw std::invalid_argument("negative tensor extent");
            n *= static_cast<std::size_t>(s);
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 3D access (D,H,W)
    double& at(int d, int h, int w) {
        return data_[(static_cast<std::size_t>(d) * shape_[1] + h) * shape_[2] + w];
    }
    const double& at(int d, int h, int w) const {
        return data_[(static_cast<std::size_t>(d) * shape_[1] + h) * shape_[2] + w];
    }

    // 4D access (C,D,H,W)
    double& at(int c, int d, int h, int w) {
        return data_[((static_cast<std::size_t>(c) * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
    }
    const double& at(int c, int d, int h, int w) const {
        return data_[((static_cast<std::size_t>(c) * shape_[1] + d) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
    double max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }
    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    out += ")";
    return out;
}

}  // namespace vseg
