#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crowdsca/networks.hpp"
#include "crowdsca/training.hpp"

namespace crowdsca {

/// Small architecture for finite-difference checks: 128x128 images give 16x16 features.
ArchConfig gradcheck_arch();

struct GradSuiteOptions {
    ArchConfig arch = gradcheck_arch();
    int image_size = 128;
    int batch_size = 2;
    int n_coords = 40;  // coordinates sampled per check
    double step = 1e-5;
    std::uint64_t seed = 0;
};

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
};

/// Finite-difference checks, in double precision, of every loss on its own and of
/// the weighted objective through all four networks.
std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& opt = {});

}  // namespace crowdsca
