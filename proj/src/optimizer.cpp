#include "histostack/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace histostack {

namespace {

struct Vertex {
    std::vector<double> x;
    double f;
};

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective, std::vector<double> x0,
                             const NelderMeadOptions& options) {
    const std::size_t n = x0.size();
    NelderMeadResult result;
    auto eval = [&](const std::vector<double>& x) {
        ++result.evaluations;
        return objective(x);
    };
    if (n == 0) {
        result.x = x0;
        result.value = eval(x0);
        result.converged = true;
        return result;
    }

    Vertex best{x0, eval(x0)};
    int iterations_left = options.max_iterations;

    for (int round = 0; round <= options.restarts && iterations_left > 0; ++round) {
        std::vector<Vertex> simplex;
        simplex.push_back(best);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x = best.x;
            x[i] += options.initial_step;
            simplex.push_back({x, eval(x)});
        }
        const double start_value = best.f;
        bool converged = false;

        while (iterations_left > 0) {
            std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
            double fspread = simplex.back().f - simplex.front().f;
            double xspread = 0.0;
            for (std::size_t v = 1; v <= n; ++v)
                for (std::size_t i = 0; i < n; ++i)
                    xspread = std::max(xspread, std::abs(simplex[v].x[i] - simplex[0].x[i]));
            if (fspread <= options.ftol && xspread <= options.xtol) {
                converged = true;
                break;
            }
            --iterations_left;
            ++result.iterations;

            std::vector<double> centroid(n, 0.0);
            for (std::size_t v = 0; v < n; ++v)
                for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[v].x[i] / static_cast<double>(n);
            auto along = [&](double t) {
                std::vector<double> x(n);
                for (std::size_t i = 0; i < n; ++i) x[i] = centroid[i] + t * (simplex[n].x[i] - centroid[i]);
                return x;
            };

            Vertex reflected{along(-1.0), 0.0};
            reflected.f = eval(reflected.x);
            if (reflected.f < simplex[0].f) {
                Vertex expanded{along(-2.0), 0.0};
                expanded.f = eval(expanded.x);
                simplex[n] = expanded.f < reflected.f ? expanded : reflected;
                continue;
            }
            if (reflected.f < simplex[n - 1].f) {
                simplex[n] = reflected;
                continue;
            }
            const bool outside = reflected.f < simplex[n].f;
            Vertex contracted{along(outside ? -0.5 : 0.5), 0.0};
            contracted.f = eval(contracted.x);
            if (contracted.f < (outside ? reflected.f : simplex[n].f)) {
                simplex[n] = contracted;
                continue;
            }
            for (std::size_t v = 1; v <= n; ++v) {
                for (std::size_t i = 0; i < n; ++i) simplex[v].x[i] = simplex[0].x[i] + 0.5 * (simplex[v].x[i] - simplex[0].x[i]);
                simplex[v].f = eval(simplex[v].x);
            }
        }
        std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
        if (simplex.front().f <= best.f) best = simplex.front();
        result.converged = converged;
        // A restart that gains nothing means the optimum is stable.
        if (round > 0 && start_value - best.f <= options.ftol) break;
        if (!converged) break;
    }
    result.x = best.x;
    result.value = best.f;
    return result;
}

}  // namespace histostack
