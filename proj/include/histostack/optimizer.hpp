#pragma once

#include <functional>
#include <span>
#include <vector>

namespace histostack {

struct NelderMeadOptions {
    int max_iterations = 200;
    double ftol = 1e-5;       // spread of simplex values
    double xtol = 1e-3;       // simplex extent, in the caller's scaled units
    double initial_step = 1.0;
    int restarts = 1;         // fresh simplexes around the best point after convergence
};

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

// Derivative-free minimisation. Deterministic: ties are broken by vertex order.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective, std::vector<double> x0,
                             const NelderMeadOptions& options = {});

}  // namespace histostack
