#pragma once

// Globally adaptive Gauss-Kronrod (7, 15) integration on finite intervals and
// fixed-order Gauss-Legendre rules for tensor-product integration.
//
// Only interior nodes are ever sampled, so integrands that are singular or
// undefined exactly at an endpoint are fine as long as they are integrable.

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <queue>
#include <string>
#include <vector>

#include "igm/error.hpp"

namespace igm::quadrature {

struct Options {
    double abs_tol = 1e-10;
    int max_subdivisions = 10000;
};

template <class T>
struct Result {
    T value{};
    double error = 0.0;
    int subdivisions = 0;
    bool converged = false;
};

namespace detail {

// Kronrod abscissae on [0, 1]; odd positions (1, 3, 5) are the Gauss-7 nodes.
inline constexpr std::array<double, 8> kronrod_x = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851, 0.864864423359769072789712788640926,
    0.741531185599394439863864773280788, 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kronrod_w = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204, 0.104790010322250183839876322541518,
    0.140653259715525918745189590510238, 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> gauss_w = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780, 0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};

inline double magnitude(double v) { return std::abs(v); }
inline double magnitude(const std::complex<double>& v) { return std::abs(v); }
inline bool finite(double v) { return std::isfinite(v); }
inline bool finite(const std::complex<double>& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); }

template <class T>
struct Segment {
    double a, b;
    T value;
    double error;
    bool operator<(const Segment& o) const { return error < o.error; }
};

template <class T, class F>
Segment<T> gk15(F& f, double a, double b) {
    const double center = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const T fc = f(center);
    T kronrod = fc * kronrod_w[7];
    T gauss = fc * gauss_w[3];
    for (int i = 0; i < 7; ++i) {
        const double dx = half * kronrod_x[i];
        const T sum = f(center - dx) + f(center + dx);
        kronrod += sum * kronrod_w[i];
        if (i % 2 == 1) gauss += sum * gauss_w[i / 2];
    }
    const T value = kronrod * half;
    double err = magnitude((kronrod - gauss) * half);
    if (!finite(value)) err = std::numeric_limits<double>::infinity();
    return {a, b, value, err};
}

}  // namespace detail

/// Integrates f over (a, b). Never throws; inspect `converged`.
template <class F>
auto integrate(F&& f, double a, double b, const Options& opt = {}) {
    using T = std::decay_t<decltype(f(a))>;
    Result<T> result;
    if (a == b) {
        result.converged = true;
        return result;
    }
    double sign = 1.0;
    if (b < a) {
        std::swap(a, b);
        sign = -1.0;
    }
    std::priority_queue<detail::Segment<T>> heap;
    heap.push(detail::gk15<T>(f, a, b));
    T total = heap.top().value;
    double total_error = heap.top().error;
    int subdivisions = 0;
    while (total_error > opt.abs_tol && subdivisions < opt.max_subdivisions) {
        auto worst = heap.top();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) break;  // interval no longer divisible in double precision
        heap.pop();
        auto left = detail::gk15<T>(f, worst.a, mid);
        auto right = detail::gk15<T>(f, mid, worst.b);
        ++subdivisions;
        heap.push(left);
        heap.push(right);
        // Re-sum instead of updating incrementally so cancellation does not accumulate.
        if (subdivisions % 64 == 0) {
            auto copy = heap;
            total = T{};
            total_error = 0.0;
            while (!copy.empty()) {
                total += copy.top().value;
                total_error += copy.top().error;
                copy.pop();
            }
        } else {
            total += left.value + right.value - worst.value;
            total_error += left.error + right.error - worst.error;
        }
    }
    {
        auto copy = heap;
        total = T{};
        total_error = 0.0;
        while (!copy.empty()) {
            total += copy.top().value;
            total_error += copy.top().error;
            copy.pop();
        }
    }
    result.value = total * sign;
    result.error = total_error;
    result.subdivisions = subdivisions;
    result.converged = total_error <= opt.abs_tol && detail::finite(total);
    return result;
}

/// Like integrate() but throws QuadratureError when the budget is exhausted.
template <class F>
auto integrate_or_throw(F&& f, double a, double b, const Options& opt = {}) {
    auto r = integrate(std::forward<F>(f), a, b, opt);
    if (!r.converged)
        throw QuadratureError("quadrature did not converge: subdivision budget exhausted (error estimate " +
                                  std::to_string(r.error) + ")",
                              r.subdivisions, r.error);
    return r.value;
}

/// n-point Gauss-Legendre rule mapped onto [a, b].
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

inline GaussRule gauss_legendre(int n, double a = -1.0, double b = 1.0) {
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double half = 0.5 * (b - a), center = 0.5 * (a + b);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = center - half * x;
        rule.nodes[n - 1 - i] = center + half * x;
        rule.weights[i] = rule.weights[n - 1 - i] = w * half;
    }
    return rule;
}

/// Composite Gauss-Legendre: `panels` equal panels of an `order`-point rule.
inline GaussRule composite_gauss(int order, int panels, double a, double b) {
    GaussRule out;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        auto r = gauss_legendre(order, a + p * h, a + (p + 1) * h);
        out.nodes.insert(out.nodes.end(), r.nodes.begin(), r.nodes.end());
        out.weights.insert(out.weights.end(), r.weights.begin(), r.weights.end());
    }
    return out;
}

}  // namespace igm::quadrature
