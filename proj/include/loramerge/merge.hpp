#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loramerge/checkpoint.hpp"

namespace loramerge {

enum class MergeMethod { weight_average, ties, dare_ties };

const char* merge_method_name(MergeMethod method);
MergeMethod parse_merge_method(const std::string& name);

struct MergeParams {
    std::vector<double> weights;  // nonnegative, sum to 1 within 1e-9
    double density = 0.5;         // TIES trim ratio, (0, 1]
    double drop_rate = 0.5;       // DARE drop probability, [0, 1)
    std::uint64_t seed = 0;
};

inline constexpr double kWeightSumTolerance = 1e-9;

void check_weights(std::span<const double> weights, std::size_t n_adapters);

// All merges process constituents in id-sorted order, so permuting
// (adapters, weights) in lockstep gives a bit-identical result.

// Per-tensor weighted sum of the constituents.
AdapterCheckpoint weight_average_merge(std::span<const AdapterCheckpoint> adapters,
                                       std::span<const double> weights);

// Trim to the top `density` magnitudes per tensor, elect a per-element sign by
// weighted mass, then average the sign-agreeing survivors.
AdapterCheckpoint ties_merge(std::span<const AdapterCheckpoint> adapters,
                             std::span<const double> weights, double density);

// Zero each element with probability drop_rate and rescale survivors by
// 1/(1 - drop_rate). Randomness is keyed by (seed, tensor name, adapter id).
AdapterCheckpoint dare_transform(const AdapterCheckpoint& adapter, double drop_rate,
                                 std::uint64_t seed);

// DARE each constituent, then fuse with TIES sign election at density 1
// (no second magnitude trim).
AdapterCheckpoint dare_ties_merge(std::span<const AdapterCheckpoint> adapters,
                                  std::span<const double> weights, double drop_rate,
                                  std::uint64_t seed);

// Dispatch on method using the relevant fields of params.
AdapterCheckpoint merge(MergeMethod method, std::span<const AdapterCheckpoint> adapters,
                        const MergeParams& params);

} // namespace loramerge
