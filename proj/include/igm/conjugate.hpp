#pragma once

// Conjugate coordinates X(x) = integral of dt / mu(t) from a reference point,
// period lengths, the canonical commutator check, plane-wave states and the
// uncertainty product.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "igm/error.hpp"
#include "igm/expr.hpp"
#include "igm/manifold.hpp"
#include "igm/quadrature.hpp"

namespace igm {

using complex = std::complex<double>;

/// A CRF compiled as a function of its own coordinate. Throws if mu mentions other coordinates.
class CrfFunction {
public:
    CrfFunction() = default;
    CrfFunction(Expr mu, std::string coordinate) : mu_(std::move(mu)), coordinate_(std::move(coordinate)) {
        for (const auto& v : free_variables(mu_))
            if (v != coordinate_)
                throw InputError("CRF " + to_string(mu_) + " depends on '" + v + "', not only on '" + coordinate_ + "'");
        const std::vector<std::string> vars{coordinate_};
        compiled_ = CompiledExpr(mu_, vars);
    }

    double operator()(double x) const { return compiled_(x); }
    const Expr& expr() const noexcept { return mu_; }
    const std::string& coordinate() const noexcept { return coordinate_; }

private:
    Expr mu_;
    std::string coordinate_;
    CompiledExpr compiled_;
};

class ConjugateCoordinate {
public:
    struct Settings {
        /// Default: left endpoint for intervals and semi-axes, 0 on the line.
        std::optional<double> reference;
        double offset = 0.0;
        quadrature::Options quadrature{};
        double truncation = 50.0;
        int cache_segments = 64;
    };

    ConjugateCoordinate(CrfFunction mu, CoordinateRange range) : ConjugateCoordinate(std::move(mu), range, Settings{}) {}

    ConjugateCoordinate(CrfFunction mu, CoordinateRange range, Settings settings)
        : mu_(std::move(mu)), range_(range), settings_(settings) {
        const Window w = sampling_window(range_, settings_.truncation);
        reference_ = settings_.reference ? *settings_.reference
                     : std::holds_alternative<RealLine>(range_) ? 0.0
                                                                 : lower_bound(range_);
        if (reference_ < lower_bound(range_) || reference_ > upper_bound(range_))
            throw InputError("reference point " + detail::format_double(reference_) + " is outside " + describe(range_));
        auto cache = std::make_shared<Cache>();
        const int m = std::max(settings_.cache_segments, 1);
        for (int i = 0; i <= m; ++i) cache->nodes.push_back(w.lo + (w.hi - w.lo) * i / m);
        cache->nodes.front() = w.lo;
        cache->nodes.back() = w.hi;
        auto pos = std::lower_bound(cache->nodes.begin(), cache->nodes.end(), reference_);
        if (pos == cache->nodes.end() || *pos != reference_) pos = cache->nodes.insert(pos, reference_);
        cache->reference_index = static_cast<std::size_t>(pos - cache->nodes.begin());
        const std::size_t n = cache->nodes.size();
        cache->cumulative.assign(n, std::numeric_limits<double>::quiet_NaN());
        cache->cumulative[cache->reference_index] = 0.0;
        for (std::size_t i = cache->reference_index + 1; i < n; ++i) {
            auto r = segment(cache->nodes[i - 1], cache->nodes[i]);
            if (!r.converged) break;
            cache->cumulative[i] = cache->cumulative[i - 1] + r.value;
        }
        for (std::size_t i = cache->reference_index; i-- > 0;) {
            auto r = segment(cache->nodes[i], cache->nodes[i + 1]);
            if (!r.converged) break;
            cache->cumulative[i] = cache->cumulative[i + 1] - r.value;
        }
        cache_ = std::move(cache);
    }

    /// X(x). Throws QuadratureError if the integral from the reference diverges.
    double operator()(double x) const { return settings_.offset + relative(x); }

    /// dX/dx = 1 / mu(x), the quadrature integrand itself.
    double derivative(double x) const { return 1.0 / mu_(x); }

    double mu(double x) const { return mu_(x); }

    /// x with X(x) = value, by safeguarded Newton iteration within the cached bracket.
    double inverse(double value) const {
        const double target = value - settings_.offset;
        const auto& c = *cache_;
        // Find a bracket [lo, hi] in x with relative(lo) <= target <= relative(hi).
        std::size_t first = 0, last = c.nodes.size() - 1;
        while (first < c.nodes.size() && std::isnan(c.cumulative[first])) ++first;
        while (last > first && std::isnan(c.cumulative[last])) --last;
        double lo = c.nodes[first], hi = c.nodes[last];
        if (target < c.cumulative[first] || target > c.cumulative[last])
            throw NumericsError("conjugate value " + detail::format_double(value) + " lies outside the cached range");
        for (std::size_t i = first; i < last; ++i) {
            if (c.cumulative[i] <= target && target <= c.cumulative[i + 1]) {
                lo = c.nodes[i];
                hi = c.nodes[i + 1];
                break;
            }
        }
        double x = 0.5 * (lo + hi);
        for (int iter = 0; iter < 200; ++iter) {
            const double f = relative(x) - target;
            if (f == 0.0) return x;
            if (f > 0.0) hi = x;
            else lo = x;
            const double step = f / derivative(x);
            double next = x - step;
            if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
            if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) return next;
            x = next;
            if (hi - lo <= 1e-15 * std::max(1.0, std::abs(x))) return x;
        }
        return x;
    }

    const CoordinateRange& range() const noexcept { return range_; }
    double reference() const noexcept { return reference_; }
    double offset() const noexcept { return settings_.offset; }
    const CrfFunction& crf() const noexcept { return mu_; }
    const Settings& settings() const noexcept { return settings_; }

private:
    struct Cache {
        std::vector<double> nodes;
        std::vector<double> cumulative;
        std::size_t reference_index = 0;
    };

    quadrature::Result<double> segment(double a, double b) const {
        return quadrature::integrate([this](double t) { return 1.0 / mu_(t); }, a, b, settings_.quadrature);
    }

    double relative(double x) const {
        if (x < lower_bound(range_) || x > upper_bound(range_))
            throw InputError("point " + detail::format_double(x) + " is outside " + describe(range_));
        const auto& c = *cache_;
        std::size_t base;
        if (x >= reference_) {
            auto it = std::upper_bound(c.nodes.begin() + static_cast<std::ptrdiff_t>(c.reference_index), c.nodes.end(), x);
            base = static_cast<std::size_t>(it - c.nodes.begin()) - 1;
        } else {
            auto it = std::lower_bound(c.nodes.begin(), c.nodes.begin() + static_cast<std::ptrdiff_t>(c.reference_index) + 1, x);
            base = static_cast<std::size_t>(it - c.nodes.begin());
        }
        const double start = c.cumulative[base];
        if (std::isnan(start))
            throw QuadratureError("conjugate coordinate diverges between the reference point and " + detail::format_double(x), 0,
                                  std::numeric_limits<double>::infinity());
        if (x == c.nodes[base]) return start;
        auto r = segment(c.nodes[base], x);
        if (!r.converged)
            throw QuadratureError("quadrature did not converge: subdivision budget exhausted while integrating 1/mu", r.subdivisions,
                                  r.error);
        return start + r.value;
    }

    CrfFunction mu_;
    CoordinateRange range_;
    Settings settings_;
    double reference_ = 0.0;
    std::shared_ptr<const Cache> cache_;
};

inline double conjugate_value(const ConjugateCoordinate& cc, double x) { return cc(x); }

struct PeriodLength {
    double value = 0.0;
    double error = 0.0;
    bool finite = false;
};

/// L = integral of dt / mu over (a, b); `finite` is false when the subdivision budget runs out.
inline PeriodLength period_length(const CrfFunction& mu, const FiniteInterval& range, const quadrature::Options& opt = {}) {
    auto r = quadrature::integrate([&](double t) { return 1.0 / mu(t); }, range.a, range.b, opt);
    if (!r.converged) return {std::numeric_limits<double>::infinity(), r.error, false};
    return {r.value, r.error, true};
}

/// max over samples of |X (P psi) - P (X psi) - i psi| with P = -i mu d/dx applied symbolically.
inline double commutator_residual(const ConjugateCoordinate& cc, const Expr& psi, std::span<const double> samples) {
    const std::vector<std::string> vars{cc.crf().coordinate()};
    const CompiledExpr f(psi, vars);
    const CompiledExpr df(differentiate(psi, vars[0]), vars);
    const complex i(0.0, 1.0);
    double worst = 0.0;
    for (double x : samples) {
        const double X = cc(x), mu = cc.mu(x), value = f(x), slope = df(x);
        const complex p_psi = -i * mu * slope;
        const complex p_x_psi = -i * mu * (cc.derivative(x) * value + X * slope);
        worst = std::max(worst, std::abs(X * p_psi - p_x_psi - i * value));
    }
    return worst;
}

/// c exp(i sum_k P_k X_k(x_k)).
struct PlaneWaveState {
    complex normalization{1.0, 0.0};
    std::vector<double> momenta;
    std::vector<ConjugateCoordinate> coordinates;

    complex operator()(std::span<const double> point) const {
        double phase = 0.0;
        for (std::size_t k = 0; k < momenta.size(); ++k) phase += momenta[k] * coordinates[k](point[k]);
        return normalization * std::polar(1.0, phase);
    }
};

inline complex plane_wave_value(const PlaneWaveState& s, std::span<const double> point) { return s(point); }

/// A one-dimensional wavefunction with its derivative in x.
struct SampledWavefunction {
    std::function<complex(double)> value;
    std::function<complex(double)> derivative;
};

/// Gaussian with |psi|^2 of standard deviation sigma in X, centred at X = center, mapped back to x.
inline SampledWavefunction gaussian_in_conjugate(const ConjugateCoordinate& cc, double center, double sigma,
                                                 double momentum = 0.0) {
    const double norm = std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.25);
    auto phi = [=](double X) {
        return norm * std::exp(-(X - center) * (X - center) / (4.0 * sigma * sigma)) * std::polar(1.0, momentum * X);
    };
    auto dphi = [=](double X) {
        return phi(X) * complex(-(X - center) / (2.0 * sigma * sigma), momentum);
    };
    return {[cc, phi](double x) { return phi(cc(x)); },
            [cc, dphi](double x) { return dphi(cc(x)) * cc.derivative(x); }};
}

struct Uncertainty {
    double norm = 0.0;
    double mean_x = 0.0;
    double delta_x = 0.0;
    double mean_p = 0.0;
    double delta_p = 0.0;
    double product = 0.0;
};

/// Delta X * Delta P for a state normalized under the weight 1/mu on [window.lo, window.hi].
/// The state must vanish (or decay) at the window edges so P is symmetric on it.
inline Uncertainty uncertainty_product(const SampledWavefunction& psi, const ConjugateCoordinate& cc, Window window,
                                       const quadrature::Options& opt = {1e-12, 20000}, double norm_tolerance = 1e-6) {
    auto integrate = [&](auto&& f) { return quadrature::integrate_or_throw(f, window.lo, window.hi, opt); };
    Uncertainty u;
    u.norm = integrate([&](double x) { return std::norm(psi.value(x)) * cc.derivative(x); });
    if (std::abs(u.norm - 1.0) > norm_tolerance)
        throw InputError("state is not normalized: norm = " + detail::format_double(u.norm));
    u.mean_x = integrate([&](double x) { return cc(x) * std::norm(psi.value(x)) * cc.derivative(x); });
    const double x2 = integrate([&](double x) {
        const double X = cc(x);
        return X * X * std::norm(psi.value(x)) * cc.derivative(x);
    });
    // <P> = integral psi* (-i psi') dx, <P^2> = integral mu |psi'|^2 dx (symmetric form).
    u.mean_p = integrate([&](double x) { return (std::conj(psi.value(x)) * complex(0.0, -1.0) * psi.derivative(x)).real(); });
    const double p2 = integrate([&](double x) { return cc.mu(x) * std::norm(psi.derivative(x)); });
    u.delta_x = std::sqrt(std::max(0.0, x2 - u.mean_x * u.mean_x));
    u.delta_p = std::sqrt(std::max(0.0, p2 - u.mean_p * u.mean_p));
    u.product = u.delta_x * u.delta_p;
    return u;
}

}  // namespace igm
