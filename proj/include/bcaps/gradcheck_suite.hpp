#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bcaps {

struct GradSuiteEntry {
    std::string name;
    double max_rel_error = 0;
    double tolerance = 0;
    bool passed = false;
};

struct GradSuiteOptions {
    std::uint64_t seed = 7;
    double op_tolerance = 1e-6;
    double model_tolerance = 1e-4;
    bool include_models = true;
    /// Adds an op whose backward is deliberately wrong; the suite must fail.
    bool corrupt = false;
};

/// Finite-difference checks of every tensor op, the capsule and latent ops
/// (five random inputs each),
/// and both autoencoders end to end on a two-image micro-batch, all in double
/// precision.
std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options = {});

bool all_passed(const std::vector<GradSuiteEntry>& entries);

} // namespace bcaps
