#include "loramerge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "loramerge/continual.hpp"
#include "loramerge/errors.hpp"
#include "loramerge/merge.hpp"
#include "loramerge/rng.hpp"

namespace loramerge::synth {

namespace {

double next_gaussian(Xoshiro256ss& rng) {
    const double u1 = rng.next_double();
    const double u2 = rng.next_double();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * M_PI * u2);
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                       std::string_view stream_name) {
    Xoshiro256ss rng = keyed_stream(seed, stream_name, "lab");
    Matrix m(rows, cols);
    for (double& v : m.data) v = next_gaussian(rng);
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

// a * b^T
Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(j, k);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

// a^T * b
Matrix transposed_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = a.at(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aki * b.at(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

double frobenius_norm(const Matrix& a) {
    double ss = 0.0;
    for (double v : a.data) ss += v * v;
    return std::sqrt(ss);
}

// In-place Cholesky solve of (spd) X = rhs for SPD spd; rhs holds the
// solution on return.
void cholesky_solve(Matrix spd, Matrix& rhs) {
    const std::size_t n = spd.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double diag = spd.at(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= spd.at(j, k) * spd.at(j, k);
        if (diag <= 0.0) {
            raise(errc::ill_posed, "normal-equation matrix is not positive definite");
        }
        spd.at(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = spd.at(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= spd.at(i, k) * spd.at(j, k);
            spd.at(i, j) = v / spd.at(j, j);
        }
    }
    // Forward then backward substitution, one rhs column at a time.
    for (std::size_t col = 0; col < rhs.cols; ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double v = rhs.at(i, col);
            for (std::size_t k = 0; k < i; ++k) v -= spd.at(i, k) * rhs.at(k, col);
            rhs.at(i, col) = v / spd.at(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double v = rhs.at(i, col);
            for (std::size_t k = i + 1; k < n; ++k) v -= spd.at(k, i) * rhs.at(k, col);
            rhs.at(i, col) = v / spd.at(i, i);
        }
    }
}

// Modified Gram-Schmidt with re-orthogonalization. Columns that collapse into
// the span of earlier ones are zeroed rather than normalized.
void orthonormalize_columns(Matrix& v) {
    for (std::size_t j = 0; j < v.cols; ++j) {
        double before = 0.0;
        for (std::size_t i = 0; i < v.rows; ++i) before += v.at(i, j) * v.at(i, j);
        before = std::sqrt(before);
        if (before == 0.0) continue;

        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double coef = 0.0;
                for (std::size_t i = 0; i < v.rows; ++i) coef += v.at(i, k) * v.at(i, j);
                for (std::size_t i = 0; i < v.rows; ++i) v.at(i, j) -= coef * v.at(i, k);
            }
        }
        double after = 0.0;
        for (std::size_t i = 0; i < v.rows; ++i) after += v.at(i, j) * v.at(i, j);
        after = std::sqrt(after);
        if (after < 1e-10 * before) {
            for (std::size_t i = 0; i < v.rows; ++i) v.at(i, j) = 0.0;
            continue;
        }
        for (std::size_t i = 0; i < v.rows; ++i) v.at(i, j) /= after;
    }
}

// Top-r invariant subspace of the PSD matrix s by orthogonal iteration. The
// starting block is keyed only by the problem dimensions, so nearby inputs
// give nearby (same-gauge) outputs.
Matrix top_eigenvectors(const Matrix& s, std::size_t r, std::size_t iters, double tol) {
    Matrix v = gaussian_matrix(s.rows, r, 0x6f727468u /* fixed basis seed */,
                               "orthit." + std::to_string(s.rows) + "x" + std::to_string(r));
    orthonormalize_columns(v);

    double previous_energy = -1.0;
    bool converged = false;
    for (std::size_t it = 0; it < iters; ++it) {
        const Matrix w = matmul(s, v);
        double energy = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            for (std::size_t i = 0; i < s.rows; ++i) energy += v.at(i, j) * w.at(i, j);
        }
        v = w;
        orthonormalize_columns(v);
        if (std::fabs(energy - previous_energy) <= tol * std::max(1.0, std::fabs(energy))) {
            converged = true;
            break;
        }
        previous_energy = energy;
    }
    if (!converged) {
        raise(errc::not_converged, "orthogonal iteration did not converge within " +
                                       std::to_string(iters) + " iterations");
    }

    // Deterministic gauge: make each column's largest-magnitude entry positive.
    for (std::size_t j = 0; j < r; ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < s.rows; ++i) {
            const double mag = std::fabs(v.at(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (v.at(arg, j) < 0.0) {
            for (std::size_t i = 0; i < s.rows; ++i) v.at(i, j) = -v.at(i, j);
        }
    }
    return v;
}

Tensor matrix_to_tensor(const Matrix& m) {
    std::vector<float> data(m.data.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(m.data[i]);
    return Tensor({m.rows, m.cols}, std::move(data));
}

Matrix tensor_to_matrix(const Tensor& t) {
    Matrix m(t.shape()[0], t.shape()[1]);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<double>(t[i]);
    return m;
}

std::string format_loss(double loss) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6e", loss);
    return buf;
}

std::string format_loss_delta(double delta) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%+.3e", delta);
    return buf;
}

} // namespace

void validate_config(const LabConfig& cfg) {
    if (cfg.d_in < 1 || cfg.d_out < 1 || cfg.m < 1) {
        raise(errc::invalid_config, "dimensions must be positive");
    }
    if (cfg.rank < 1 || cfg.rank > std::min(cfg.d_in, cfg.d_out)) {
        raise(errc::invalid_config, "rank must lie in [1, min(d_in, d_out)]");
    }
    if (cfg.m < cfg.d_in) {
        raise(errc::invalid_config, "m must be at least d_in for a well-posed least squares");
    }
    if (!(cfg.similarity >= 0.0 && cfg.similarity <= 1.0)) {
        raise(errc::invalid_config, "similarity must lie in [0, 1]");
    }
    if (cfg.fit_iters < 1 || !(cfg.fit_tol > 0.0)) {
        raise(errc::invalid_config, "fit_iters must be >= 1 and fit_tol positive");
    }
}

GeneratedTasks gen_tasks(const LabConfig& cfg) {
    validate_config(cfg);

    GeneratedTasks out;
    out.base_map = gaussian_matrix(cfg.d_out, cfg.d_in, cfg.seed, "W0");

    const Matrix shared_left = gaussian_matrix(cfg.d_out, cfg.rank, cfg.seed, "shared.left");
    const Matrix shared_right = gaussian_matrix(cfg.rank, cfg.d_in, cfg.seed, "shared.right");
    Matrix shared_delta = matmul(shared_left, shared_right);
    const double shared_norm = frobenius_norm(shared_delta);
    for (double& v : shared_delta.data) v /= shared_norm;

    for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
        const std::string task_id = "task" + std::to_string(t);
        // All task deltas share the left factor, so alpha-blends of the shared
        // and task deltas remain exactly rank-r.
        const Matrix task_right =
            gaussian_matrix(cfg.rank, cfg.d_in, cfg.seed, task_id + ".right");
        Matrix task_delta = matmul(shared_left, task_right);
        const double task_norm = frobenius_norm(task_delta);
        for (double& v : task_delta.data) v /= task_norm;

        Matrix target_map = out.base_map;
        for (std::size_t i = 0; i < target_map.data.size(); ++i) {
            target_map.data[i] += cfg.similarity * shared_delta.data[i] +
                                  (1.0 - cfg.similarity) * task_delta.data[i];
        }

        SyntheticTask task;
        task.task_id = task_id;
        task.inputs = gaussian_matrix(cfg.m, cfg.d_in, cfg.seed, task_id + ".X");
        task.targets = matmul_transposed(task.inputs, target_map);
        out.tasks.push_back(std::move(task));
    }
    return out;
}

AdapterCheckpoint fit_adapter(const Matrix& base_map, const SyntheticTask& task, std::size_t rank,
                              std::size_t iters, double tol) {
    const Matrix& x = task.inputs;
    const Matrix& y = task.targets;
    if (x.rows != y.rows || x.cols != base_map.cols || y.cols != base_map.rows) {
        raise(errc::shape_mismatch, "task and base map dimensions are inconsistent");
    }
    if (x.rows < x.cols) {
        raise(errc::ill_posed, "least squares needs m >= d_in");
    }
    if (rank < 1 || rank > std::min(base_map.rows, base_map.cols)) {
        raise(errc::invalid_args, "rank must lie in [1, min(d_in, d_out)]");
    }

    // Residual targets the delta has to explain.
    Matrix residual = y;
    {
        const Matrix base_pred = matmul_transposed(x, base_map);
        for (std::size_t i = 0; i < residual.data.size(); ++i) {
            residual.data[i] -= base_pred.data[i];
        }
    }

    // Ridge-regularized normal equations: (X^T X + 1e-8 I) delta^T = X^T R.
    Matrix gram = transposed_matmul(x, x);
    for (std::size_t i = 0; i < gram.rows; ++i) gram.at(i, i) += 1e-8;
    Matrix delta_t = transposed_matmul(x, residual);  // d_in x d_out
    cholesky_solve(std::move(gram), delta_t);
    const Matrix delta = transpose(delta_t);  // d_out x d_in

    AdapterCheckpoint adapter;
    adapter.id = task.task_id;
    adapter.meta.base_model_id = "synthetic-lab";
    adapter.meta.rank = static_cast<std::uint32_t>(rank);
    adapter.meta.alpha = static_cast<double>(rank);
    adapter.meta.target_modules = {kLabModuleName};

    const std::string a_name = std::string(kLabModuleName) + ".lora_A";
    const std::string b_name = std::string(kLabModuleName) + ".lora_B";

    if (frobenius_norm(delta) < 1e-12) {
        adapter.set_tensor(a_name, Tensor::zeros({rank, base_map.cols}));
        adapter.set_tensor(b_name, Tensor::zeros({base_map.rows, rank}));
        return adapter;
    }

    // Best rank-r factorization: V spans the top right-singular subspace of
    // delta, A = V^T, B = delta V, so B A = delta V V^T.
    const Matrix s = transposed_matmul(delta, delta);  // d_in x d_in PSD
    const Matrix v = top_eigenvectors(s, rank, iters, tol);
    const Matrix b = matmul(delta, v);  // d_out x r

    adapter.set_tensor(a_name, matrix_to_tensor(transpose(v)));
    adapter.set_tensor(b_name, matrix_to_tensor(b));
    return adapter;
}

double task_loss(const Matrix& base_map, const AdapterCheckpoint& adapter,
                 const SyntheticTask& task) {
    const Tensor delta = lora_delta(adapter, kLabModuleName);
    if (delta.shape()[0] != base_map.rows || delta.shape()[1] != base_map.cols) {
        raise(errc::shape_mismatch, "adapter delta shape " + shape_to_string(delta.shape()) +
                                        " does not match the base map");
    }
    Matrix effective = base_map;
    const Matrix delta_m = tensor_to_matrix(delta);
    for (std::size_t i = 0; i < effective.data.size(); ++i) {
        effective.data[i] += delta_m.data[i];
    }
    const Matrix pred = matmul_transposed(task.inputs, effective);
    double ss = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double err = pred.data[i] - task.targets.data[i];
        ss += err * err;
    }
    return ss / static_cast<double>(pred.data.size());
}

std::string run_study(const LabConfig& cfg) {
    validate_config(cfg);
    const GeneratedTasks generated = gen_tasks(cfg);
    if (generated.tasks.empty()) {
        return "# synthetic merge study\n\nno tasks configured\n";
    }

    std::vector<AdapterCheckpoint> adapters;
    adapters.reserve(generated.tasks.size());
    for (const auto& task : generated.tasks) {
        adapters.push_back(
            fit_adapter(generated.base_map, task, cfg.rank, cfg.fit_iters, cfg.fit_tol));
    }

    const SyntheticTask& target = generated.tasks.front();
    const double own_loss = task_loss(generated.base_map, adapters.front(), target);

    std::string out;
    out += "# synthetic merge study\n\n";
    out += "- config: seed=" + std::to_string(cfg.seed) + " d_in=" + std::to_string(cfg.d_in) +
           " d_out=" + std::to_string(cfg.d_out) + " m=" + std::to_string(cfg.m) +
           " rank=" + std::to_string(cfg.rank) + " n_tasks=" + std::to_string(cfg.n_tasks) +
           " similarity=" + format_double(cfg.similarity) + "\n";
    out += "- target task: " + target.task_id + "\n";
    out += "- own-adapter loss on " + target.task_id + ": " + format_loss(own_loss) + "\n\n";

    out += "## individual adapters (loss on " + target.task_id + ")\n\n";
    out += "| adapter | loss | delta |\n|:--|--:|--:|\n";
    std::map<std::string, double> target_scores;
    for (const auto& adapter : adapters) {
        const double loss = task_loss(generated.base_map, adapter, target);
        target_scores[adapter.id] = -loss;  // greedy_order puts the best (lowest loss) last
        out += "| " + adapter.id + " | " + format_loss(loss) + " | " +
               format_loss_delta(loss - own_loss) + " |\n";
    }
    out += "\n";

    const MergeMethod methods[] = {MergeMethod::weight_average, MergeMethod::ties,
                                   MergeMethod::dare_ties};

    out += "## equal-weight subset merges (loss on " + target.task_id + ")\n\n";
    out += "| subset | weight-average | ties | dare-ties |\n|:--|--:|--:|--:|\n";
    const std::size_t n = adapters.size();
    for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
        std::vector<AdapterCheckpoint> subset;
        std::string label;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::size_t{1} << i)) {
                if (!label.empty()) label += "+";
                label += adapters[i].id;
                subset.push_back(adapters[i]);
            }
        }
        MergeParams params;
        params.weights.assign(subset.size(), 1.0 / static_cast<double>(subset.size()));
        params.seed = cfg.seed;
        out += "| " + label + " |";
        for (MergeMethod method : methods) {
            const AdapterCheckpoint merged = merge(method, subset, params);
            const double loss = task_loss(generated.base_map, merged, target);
            out += " " + format_loss(loss) + " (" + format_loss_delta(loss - own_loss) + ") |";
        }
        out += "\n";
    }
    out += "\n";

    if (n <= kMaxEnumeratedTasks) {
        std::vector<std::string> ids;
        for (const auto& adapter : adapters) ids.push_back(adapter.id);
        const auto orders = enumerate_orders(ids);

        out += "## continual order merges (loss on " + target.task_id + ")\n\n";
        out += "| order | weight-average | ties | dare-ties |\n|:--|--:|--:|--:|\n";
        std::map<std::string, const AdapterCheckpoint*> by_id;
        for (const auto& adapter : adapters) by_id[adapter.id] = &adapter;
        for (const auto& order : orders) {
            std::vector<AdapterCheckpoint> chain;
            std::string label;
            for (const auto& id : order.adapter_ids) {
                if (!label.empty()) label += ">";
                label += id;
                chain.push_back(*by_id.at(id));
            }
            MergeParams params;
            params.seed = cfg.seed;
            out += "| " + label + " |";
            for (MergeMethod method : methods) {
                const AdapterCheckpoint merged = continual_merge(chain, method, params);
                const double loss = task_loss(generated.base_map, merged, target);
                out += " " + format_loss(loss) + " (" + format_loss_delta(loss - own_loss) + ") |";
            }
            out += "\n";
        }
        out += "\n";

        const MergeOrder greedy = greedy_order(ids, target_scores);
        std::string greedy_label;
        for (const auto& id : greedy.adapter_ids) {
            if (!greedy_label.empty()) greedy_label += ">";
            greedy_label += id;
        }
        out += "greedy continual order (best adapter last): " + greedy_label + "\n";
    }
    return out;
}

} // namespace loramerge::synth
