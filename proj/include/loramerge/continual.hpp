#pragma once

#include <map>
#include <string>
#include <vector>

#include "loramerge/merge.hpp"

namespace loramerge {

// Ordered list of adapter ids; position n is merged last and carries the
// highest influence.
struct MergeOrder {
    std::vector<std::string> adapter_ids;
};

inline constexpr std::size_t kMaxEnumeratedTasks = 6;

// Final influence of each constituent after an n-step continual merge:
// I_1 = 1/2^(n-1) and I_i = 1/2^(n+1-i) for i >= 2. Exact dyadic values that
// sum to exactly 1.
std::vector<double> influence_weights(std::size_t n);

// Sequential pairwise merging: start from the first adapter, then fold each
// subsequent one in with weights [1/2, 1/2]. The step index is mixed into the
// RNG seed so DARE draws are independent per step yet reproducible.
AdapterCheckpoint continual_merge(std::span<const AdapterCheckpoint> adapters,
                                  MergeMethod method, const MergeParams& params);

// All permutations in lexicographic order of positions; capped at
// kMaxEnumeratedTasks ids.
std::vector<MergeOrder> enumerate_orders(const std::vector<std::string>& ids);

// Ids sorted ascending by score (stable), so the best-scoring adapter is
// merged last and receives the highest influence.
MergeOrder greedy_order(const std::vector<std::string>& ids,
                        const std::map<std::string, double>& scores);

} // namespace loramerge
