#include "loramerge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "loramerge/errors.hpp"

namespace loramerge {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t dim : shape) {
        if (dim == 0) {
            raise(errc::invariant_violation, "tensor shape has a zero dimension");
        }
        n *= dim;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t expected = shape_numel(shape_);
    if (expected != data_.size()) {
        raise(errc::invariant_violation,
              "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                  shape_to_string(shape_));
    }
    for (float v : data_) {
        if (!std::isfinite(v)) {
            raise(errc::invariant_violation, "tensor contains a non-finite element");
        }
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, float value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    return full(std::move(shape), 0.0f);
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
    if (shape_ != other.shape_) return false;
    if (data_.size() != other.data_.size()) return false;
    return data_.empty() ||
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

std::size_t Tensor::nonzero_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0f; }));
}

Tensor lincomb(std::span<const Tensor> tensors, std::span<const double> weights) {
    if (tensors.empty()) {
        raise(errc::arity_mismatch, "lincomb requires at least one tensor");
    }
    if (tensors.size() != weights.size()) {
        raise(errc::arity_mismatch, "lincomb got " + std::to_string(tensors.size()) +
                                        " tensors but " + std::to_string(weights.size()) +
                                        " weights");
    }
    const Tensor& first = tensors.front();
    for (std::size_t i = 1; i < tensors.size(); ++i) {
        if (!tensors[i].same_shape(first)) {
            raise(errc::shape_mismatch, "lincomb input " + std::to_string(i) + " has shape " +
                                            shape_to_string(tensors[i].shape()) +
                                            ", expected " + shape_to_string(first.shape()));
        }
    }

    std::vector<float> out(first.numel());
    for (std::size_t e = 0; e < out.size(); ++e) {
        double acc = 0.0;
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            acc += weights[i] * static_cast<double>(tensors[i][e]);
        }
        out[e] = static_cast<float>(acc);
    }
    return Tensor(first.shape(), std::move(out));
}

Tensor trim_topk(const Tensor& tensor, double density) {
    if (!(density > 0.0) || density > 1.0) {
        raise(errc::invalid_density, "density must lie in (0, 1], got " + std::to_string(density));
    }
    const std::size_t n = tensor.numel();
    std::size_t keep = static_cast<std::size_t>(
        std::ceil(density * static_cast<double>(n)));
    keep = std::min(keep, n);
    if (keep == n) {
        return tensor;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& data = tensor.data();
    // Magnitude descending; equal magnitudes resolve to the lowest flat index.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const float ma = std::fabs(data[a]);
        const float mb = std::fabs(data[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });

    std::vector<float> out(n, 0.0f);
    for (std::size_t i = 0; i < keep; ++i) {
        out[order[i]] = data[order[i]];
    }
    return Tensor(tensor.shape(), std::move(out));
}

} // namespace loramerge
