#pragma once

// Compressibility-removing factors: mu_k(x_k) with div(mu_k d_k) = 0.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "igm/expr.hpp"
#include "igm/manifold.hpp"

namespace igm {

struct Crf {
    std::size_t index = 0;
    std::string coordinate;
    Expr mu;
};

/// mu_k = 1 / g^k for each separable factor of sqrt(g).
inline std::vector<Crf> compute_crfs(const FactoredDeterminant& factored, const Chart& chart) {
    std::vector<Crf> out;
    for (std::size_t k = 0; k < factored.factors.size(); ++k)
        out.push_back({k, chart.names().at(k), reciprocal(factored.factors[k])});
    return out;
}

/// Uniform random interior points; infinite ranges are truncated to the sampling window.
/// `margin` is the relative distance kept from each window edge.
inline std::vector<std::vector<double>> random_interior_points(const Chart& chart, std::size_t count,
                                                               std::uint64_t seed, double truncation = 50.0,
                                                               double margin = 1e-3) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> points(count, std::vector<double>(chart.dimension()));
    for (std::size_t k = 0; k < chart.dimension(); ++k) {
        const Window w = sampling_window(chart[k].range, truncation);
        const double pad = margin * (w.hi - w.lo);
        std::uniform_real_distribution<double> u(w.lo + pad, w.hi - pad);
        for (auto& p : points) p[k] = u(rng);
    }
    return points;
}

/// max over samples of |g^{-1/2} d_k(mu sqrt(g))|, with the derivative taken symbolically.
/// The flux mu sqrt(g) is first collected into a power product where possible, so
/// cancelling powers leave no rounding noise near degenerate points.
inline double divergence_residual(const Expr& mu, const Expr& sqrt_g, const std::string& coordinate,
                                  const Chart& chart, std::span<const std::vector<double>> samples) {
    Expr flux = mu * sqrt_g;
    if (auto m = detail::to_monomial(flux, detail::positive_on(chart, SampleGrid(chart, 9, 50.0))))
        flux = detail::from_monomial(*m);
    const CompiledExpr flux_derivative(differentiate(flux, coordinate), chart.names());
    const CompiledExpr density(sqrt_g, chart.names());
    double worst = 0.0;
    for (const auto& p : samples) worst = std::max(worst, std::abs(flux_derivative(p) / density(p)));
    return worst;
}

/// max over samples of |mu_k g^k - 1|.
inline double reciprocity_residual(const Crf& crf, const Expr& factor, const Chart& chart,
                                   std::span<const std::vector<double>> samples) {
    const CompiledExpr product(crf.mu * factor, chart.names());
    double worst = 0.0;
    for (const auto& p : samples) worst = std::max(worst, std::abs(product(p) - 1.0));
    return worst;
}

/// True when mu depends on its own coordinate only.
inline bool is_separable_crf(const Crf& crf) {
    for (const auto& v : free_variables(crf.mu))
        if (v != crf.coordinate) return false;
    return true;
}

}  // namespace igm
