#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loramerge/checkpoint.hpp"

namespace loramerge::synth {

// Row-major double matrix for the lab's linear algebra.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct SyntheticTask {
    std::string task_id;
    Matrix inputs;   // m x d_in
    Matrix targets;  // m x d_out
};

struct LabConfig {
    std::uint64_t seed = 42;
    std::size_t d_in = 32;
    std::size_t d_out = 32;
    std::size_t m = 256;
    std::size_t rank = 4;
    std::size_t n_tasks = 4;
    double similarity = 0.5;  // alpha in [0, 1]; 1 = all tasks share one target map
    std::size_t fit_iters = 200;
    double fit_tol = 1e-10;
};

void validate_config(const LabConfig& cfg);

// Base map W0 plus n_tasks linear tasks. Task t's implicit target map is
// W_t = W0 + alpha * D_shared + (1 - alpha) * D_t where the D's are unit-norm
// rank-r deltas sharing one left factor, so W_t - W0 stays exactly rank r for
// every alpha. Fully determined by cfg.seed.
struct GeneratedTasks {
    Matrix base_map;  // d_out x d_in
    std::vector<SyntheticTask> tasks;
};

GeneratedTasks gen_tasks(const LabConfig& cfg);

// Least-squares delta (ridge-regularized normal equations) followed by its
// best rank-r factorization via orthogonal iteration on delta^T * delta.
// Factors are stored as <module>.lora_A / <module>.lora_B with alpha = rank.
AdapterCheckpoint fit_adapter(const Matrix& base_map, const SyntheticTask& task, std::size_t rank,
                              std::size_t iters, double tol);

inline constexpr const char* kLabModuleName = "linear";

// Mean squared error of inputs * (W0 + delta)^T against targets.
double task_loss(const Matrix& base_map, const AdapterCheckpoint& adapter,
                 const SyntheticTask& task);

// Fits one adapter per task, then evaluates every equal-weight subset merge
// and every continual order (3 methods each) on the first task, reporting
// losses with deltas against that task's own adapter. Byte-deterministic for
// a fixed config.
std::string run_study(const LabConfig& cfg);

} // namespace loramerge::synth
