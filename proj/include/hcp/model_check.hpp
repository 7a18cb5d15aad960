#pragma once

#include <cstdint>

#include "hcp/gradcheck.hpp"

namespace hcp::runner {

struct GradCheckSetup {
    std::uint64_t seed = 7;
    int blocks = 3;
    std::size_t d = 8;
    int heads = 2;
    int classes = 4;  // split over two sessions
    int tokens = 4;
    std::size_t batch = 2;
    double step = 1e-5;
};

/// Finite-difference check of the full training graph: purifier, diagonal
/// classifier, unknown output and the weighted asymmetric loss.
ad::GradCheckReport purifier_gradcheck(const GradCheckSetup& setup = {});

}  // namespace hcp::runner
