#include "loramerge/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "loramerge/errors.hpp"
#include "loramerge/rng.hpp"

namespace loramerge {

std::vector<double> influence_weights(std::size_t n) {
    if (n < 1) {
        raise(errc::invalid_n, "influence weights need n >= 1");
    }
    std::vector<double> weights(n);
    weights[0] = std::ldexp(1.0, -static_cast<int>(n - 1));
    for (std::size_t i = 2; i <= n; ++i) {
        weights[i - 1] = std::ldexp(1.0, -static_cast<int>(n + 1 - i));
    }
    return weights;
}

AdapterCheckpoint continual_merge(std::span<const AdapterCheckpoint> adapters,
                                  MergeMethod method, const MergeParams& params) {
    if (adapters.empty()) {
        raise(errc::invalid_args, "continual merge requires at least one adapter");
    }
    const CompatReport compat = validate_compatible(adapters);
    if (!compat.compatible) {
        const Mismatch& first = compat.mismatches.front();
        raise(errc::incompatible, "adapters are not compatible: tensor '" + first.name + "' (" +
                                      std::string(mismatch_kind_name(first.kind)) + ": " +
                                      first.detail + ")");
    }

    std::string order_trace = adapters.front().id;
    AdapterCheckpoint merged = adapters.front();
    for (std::size_t i = 1; i < adapters.size(); ++i) {
        MergeParams step = params;
        step.weights = {0.5, 0.5};
        step.seed = derive_step_seed(params.seed, i + 1);  // step 2..n
        const AdapterCheckpoint pair[2] = {std::move(merged), adapters[i]};
        merged = merge(method, pair, step);
        order_trace += ">" + adapters[i].id;
        merged.id = order_trace;
    }

    merged.meta.extra["merge_provenance"] =
        "method=" + std::string(merge_method_name(method)) + ";regime=continual;order=" +
        order_trace + ";density=" + format_double(params.density) +
        ";drop_rate=" + format_double(params.drop_rate) + ";seed=" + std::to_string(params.seed);
    return merged;
}

std::vector<MergeOrder> enumerate_orders(const std::vector<std::string>& ids) {
    if (ids.empty()) {
        raise(errc::invalid_args, "cannot enumerate orders of an empty id list");
    }
    if (ids.size() > kMaxEnumeratedTasks) {
        raise(errc::too_many_tasks, "order enumeration is capped at " +
                                        std::to_string(kMaxEnumeratedTasks) + " tasks, got " +
                                        std::to_string(ids.size()));
    }
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
        raise(errc::invalid_args, "id list contains duplicates");
    }

    std::vector<std::size_t> positions(ids.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::vector<MergeOrder> orders;
    do {
        MergeOrder order;
        order.adapter_ids.reserve(ids.size());
        for (std::size_t p : positions) order.adapter_ids.push_back(ids[p]);
        orders.push_back(std::move(order));
    } while (std::next_permutation(positions.begin(), positions.end()));
    return orders;
}

MergeOrder greedy_order(const std::vector<std::string>& ids,
                        const std::map<std::string, double>& scores) {
    for (const auto& id : ids) {
        if (!scores.contains(id)) {
            raise(errc::missing_score, "no score for id '" + id + "'");
        }
    }
    MergeOrder order;
    order.adapter_ids = ids;
    std::stable_sort(order.adapter_ids.begin(), order.adapter_ids.end(),
                     [&](const std::string& a, const std::string& b) {
                         return scores.at(a) < scores.at(b);
                     });
    return order;
}

} // namespace loramerge
