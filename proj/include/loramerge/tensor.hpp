#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace loramerge {

// Dense row-major f32 tensor. Construction validates the two type
// invariants: data length equals the shape product, and every element is
// finite. Weighted sums accumulate in f64 and round to f32 on store.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static Tensor full(std::vector<std::size_t> shape, float value);
    static Tensor zeros(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    const std::vector<float>& data() const noexcept { return data_; }
    std::size_t numel() const noexcept { return data_.size(); }
    std::size_t ndim() const noexcept { return shape_.size(); }

    float operator[](std::size_t flat_index) const { return data_[flat_index]; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool bitwise_equal(const Tensor& other) const noexcept;

    std::size_t nonzero_count() const noexcept;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

// Product of dimensions; raises invariant_violation on a zero/negative dim.
std::size_t shape_numel(const std::vector<std::size_t>& shape);

std::string shape_to_string(const std::vector<std::size_t>& shape);

// result[e] = sum_i weights[i] * tensors[i][e], f64 accumulation in the given
// order, rounded to f32 on store.
Tensor lincomb(std::span<const Tensor> tensors, std::span<const double> weights);

// Keeps the ceil(density * numel) elements of largest magnitude (ties broken
// by lowest flat index) and zeroes the rest. Survivors are bit-unchanged.
Tensor trim_topk(const Tensor& tensor, double density);

} // namespace loramerge
