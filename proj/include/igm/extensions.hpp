#pragma once

// Self-adjoint extensions of Q = -i mu(x) d/dx: classification by coordinate
// range, constructive deficiency indices, twisted-periodic spectra and
// eigenfunctions.
//
// Boundary convention: the extension with angle alpha has domain
// psi(a) = e^{i alpha} psi(b). Its eigenvalues are (2 pi j - alpha) / L with
// eigenfunctions exp(i P X(x)) / sqrt(L), X(a) = 0, X(b) = L.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "igm/conjugate.hpp"
#include "igm/error.hpp"
#include "igm/manifold.hpp"
#include "igm/quadrature.hpp"

namespace igm {

enum class ExtensionClass { EssentiallySelfAdjoint, MaximalSymmetric, Family };

inline std::string to_string(ExtensionClass c) {
    switch (c) {
        case ExtensionClass::EssentiallySelfAdjoint: return "essentially_self_adjoint";
        case ExtensionClass::MaximalSymmetric: return "maximal_symmetric";
        case ExtensionClass::Family: return "family";
    }
    return "?";
}

inline ExtensionClass classify_extension(const CoordinateRange& range) {
    if (std::holds_alternative<RealLine>(range)) return ExtensionClass::EssentiallySelfAdjoint;
    if (std::holds_alternative<SemiAxis>(range)) return ExtensionClass::MaximalSymmetric;
    return ExtensionClass::Family;
}

struct DeficiencyIndices {
    int plus = 0;
    int minus = 0;
    /// Some truncation sequence neither stabilized nor clearly diverged.
    bool inconclusive = false;

    friend bool operator==(const DeficiencyIndices& a, const DeficiencyIndices& b) {
        return a.plus == b.plus && a.minus == b.minus;
    }
};

inline ExtensionClass class_from_indices(const DeficiencyIndices& d) {
    if (d.plus == d.minus) return d.plus == 0 ? ExtensionClass::EssentiallySelfAdjoint : ExtensionClass::Family;
    return ExtensionClass::MaximalSymmetric;
}

namespace detail {

enum class Tail { Converged, Diverged, Inconclusive };

// Integral of f from `center` towards `end` along a truncation sequence:
// geometric approach to a finite end, doubling distance to an infinite one.
template <class F>
Tail tail_behaviour(F&& f, double center, double end, const quadrature::Options& opt) {
    const bool infinite = std::isinf(end);
    const double dir = end > center ? 1.0 : -1.0;
    constexpr int max_steps = 60;
    double previous_point = center, total = 0.0, last_increment = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (int m = 1; m <= max_steps; ++m) {
        const double point = infinite ? center + dir * std::ldexp(1.0, m - 1) : end - (end - center) * std::ldexp(1.0, -m);
        if (point == previous_point || point == end) return Tail::Converged;
        auto r = quadrature::integrate(f, previous_point, point, opt);
        const double increment = std::abs(r.value);
        if (!std::isfinite(r.value) || !std::isfinite(total + increment) || total + increment > 1e250) return Tail::Diverged;
        total += increment;
        if (m >= 3 && increment <= 1e-10 * std::max(total, std::numeric_limits<double>::min())) return Tail::Converged;
        stalled = (increment >= 0.9 * last_increment) ? stalled + 1 : 0;
        if (stalled >= 4) return Tail::Diverged;
        last_increment = increment;
        previous_point = point;
    }
    return Tail::Inconclusive;
}

}  // namespace detail

/// (n+, n-) from the square integrability of exp(-X) and exp(+X), which solve
/// Q+ psi = +i psi and Q+ psi = -i psi. Integrals run in x with weight 1/mu.
inline DeficiencyIndices deficiency_indices(const CrfFunction& mu, const CoordinateRange& range,
                                            const quadrature::Options& opt = {1e-12, 2000}) {
    double center;
    if (auto f = std::get_if<FiniteInterval>(&range)) center = 0.5 * (f->a + f->b);
    else if (auto s = std::get_if<SemiAxis>(&range)) center = s->a + 1.0;
    else center = 0.0;
    ConjugateCoordinate::Settings settings;
    settings.reference = center;
    const ConjugateCoordinate cc(mu, range, settings);

    DeficiencyIndices d;
    for (int sign : {+1, -1}) {
        auto f = [&](double x) {
            const double e = -2.0 * sign * cc(x);
            if (e > 700.0) return std::numeric_limits<double>::infinity();
            return std::exp(e) * cc.derivative(x);
        };
        bool integrable = true;
        for (double end : {lower_bound(range), upper_bound(range)}) {
            const auto tail = detail::tail_behaviour(f, center, end, opt);
            if (tail == detail::Tail::Inconclusive) d.inconclusive = true;
            if (tail != detail::Tail::Converged) integrable = false;
        }
        (sign > 0 ? d.plus : d.minus) = integrable ? 1 : 0;
    }
    return d;
}

struct SpectrumEntry {
    int j = 0;
    double eigenvalue = 0.0;
};

struct SpectrumTable {
    std::string coordinate;
    double alpha = 0.0;
    double period = 0.0;
    double period_error = 0.0;
    /// 1 / sqrt(L): eigenfunctions are normalization * exp(i P X(x)) in the measure dX.
    double normalization = 0.0;
    std::vector<SpectrumEntry> entries;
};

inline double twisted_eigenvalue(int j, double alpha, double period) {
    return (2.0 * std::numbers::pi * j - alpha) / period;
}

/// Eigenvalues (2 pi j - alpha) / L for j in [j_lo, j_hi].
inline SpectrumTable analytic_spectrum(const CrfFunction& mu, const FiniteInterval& range, double alpha, int j_lo = -5,
                                       int j_hi = 5, const quadrature::Options& opt = {}) {
    if (j_hi < j_lo) throw InputError("empty j range");
    const PeriodLength L = period_length(mu, range, opt);
    if (!L.finite || !(L.value > 0.0))
        throw NumericsError("period length of " + to_string(mu.expr()) + " on " + describe(CoordinateRange{range}) +
                            " is not finite and positive; no discrete spectrum");
    SpectrumTable t;
    t.coordinate = mu.coordinate();
    t.alpha = alpha;
    t.period = L.value;
    t.period_error = L.error;
    t.normalization = 1.0 / std::sqrt(L.value);
    for (int j = j_lo; j <= j_hi; ++j) t.entries.push_back({j, twisted_eigenvalue(j, alpha, L.value)});
    return t;
}

/// {0} when the endpoints are one point of the manifold, {0, pi} otherwise.
inline std::vector<double> physical_alphas(bool endpoints_identified) {
    if (endpoints_identified) return {0.0};
    return {0.0, std::numbers::pi};
}

inline std::complex<double> eigenfunction_value(const ConjugateCoordinate& cc, double momentum, double x,
                                                double normalization = 1.0) {
    return normalization * std::polar(1.0, momentum * cc(x));
}

/// Range-based classification next to the constructive one; `agrees` is false
/// when the effective range X((a, b)) differs in kind from (a, b).
struct ExtensionReport {
    ExtensionClass by_range = ExtensionClass::Family;
    DeficiencyIndices indices;
    ExtensionClass by_indices = ExtensionClass::Family;
    bool agrees = true;
    std::vector<double> alphas;
};

inline ExtensionReport analyze_extension(const CrfFunction& mu, const Coordinate& coordinate,
                                         const quadrature::Options& opt = {1e-12, 2000}) {
    ExtensionReport r;
    r.by_range = classify_extension(coordinate.range);
    r.indices = deficiency_indices(mu, coordinate.range, opt);
    r.by_indices = class_from_indices(r.indices);
    r.agrees = !r.indices.inconclusive && r.by_indices == r.by_range;
    if (r.by_range == ExtensionClass::Family) r.alphas = physical_alphas(coordinate.endpoints_identified);
    return r;
}

}  // namespace igm
