#pragma once

// Charts with diagonal metrics, the volume density sqrt(g), and the
// separability test that decides whether sqrt(g) splits into one factor per
// coordinate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "igm/error.hpp"
#include "igm/expr.hpp"

namespace igm {

struct FiniteInterval {
    double a;
    double b;
};

/// The half line (a, +inf).
struct SemiAxis {
    double a;
};

struct RealLine {};

using CoordinateRange = std::variant<FiniteInterval, SemiAxis, RealLine>;

inline bool is_finite_interval(const CoordinateRange& r) { return std::holds_alternative<FiniteInterval>(r); }

inline double lower_bound(const CoordinateRange& r) {
    if (auto f = std::get_if<FiniteInterval>(&r)) return f->a;
    if (auto s = std::get_if<SemiAxis>(&r)) return s->a;
    return -std::numeric_limits<double>::infinity();
}

inline double upper_bound(const CoordinateRange& r) {
    if (auto f = std::get_if<FiniteInterval>(&r)) return f->b;
    return std::numeric_limits<double>::infinity();
}

inline bool contains_interior(const CoordinateRange& r, double x) { return x > lower_bound(r) && x < upper_bound(r); }

inline std::string describe(const CoordinateRange& r) {
    if (auto f = std::get_if<FiniteInterval>(&r))
        return "interval(" + detail::format_double(f->a) + ", " + detail::format_double(f->b) + ")";
    if (auto s = std::get_if<SemiAxis>(&r)) return "semi_axis(" + detail::format_double(s->a) + ", inf)";
    return "line";
}

/// Finite window used for sampling: the range itself, [a, a+T] or [-T, T].
struct Window {
    double lo;
    double hi;
};

inline Window sampling_window(const CoordinateRange& r, double truncation) {
    if (auto f = std::get_if<FiniteInterval>(&r)) return {f->a, f->b};
    if (auto s = std::get_if<SemiAxis>(&r)) return {s->a, s->a + truncation};
    return {-truncation, truncation};
}

struct Coordinate {
    std::string name;
    CoordinateRange range;
    /// Both endpoint limits describe the same point of the manifold (e.g. phi = 0 and 2 pi).
    bool endpoints_identified = false;
};

class Chart {
public:
    Chart() = default;

    explicit Chart(std::vector<Coordinate> coordinates) : coordinates_(std::move(coordinates)) {
        if (coordinates_.empty()) throw InputError("chart needs at least one coordinate");
        for (std::size_t i = 0; i < coordinates_.size(); ++i) {
            const auto& c = coordinates_[i];
            if (c.name.empty()) throw InputError("coordinate " + std::to_string(i) + " has an empty name");
            if (c.name == "pi" || func_from_name(c.name)) throw InputError("coordinate name '" + c.name + "' is reserved");
            for (std::size_t j = 0; j < i; ++j)
                if (coordinates_[j].name == c.name) throw InputError("duplicate coordinate name '" + c.name + "'");
            if (auto f = std::get_if<FiniteInterval>(&c.range)) {
                if (!std::isfinite(f->a) || !std::isfinite(f->b) || !(f->a < f->b))
                    throw InputError("coordinate '" + c.name + "': interval needs finite a < b");
            } else if (auto s = std::get_if<SemiAxis>(&c.range)) {
                if (!std::isfinite(s->a)) throw InputError("coordinate '" + c.name + "': semi-axis needs finite a");
            }
            if (c.endpoints_identified && !is_finite_interval(c.range))
                throw InputError("coordinate '" + c.name + "': only finite intervals can identify their endpoints");
            names_.push_back(c.name);
        }
    }

    std::size_t dimension() const noexcept { return coordinates_.size(); }
    const Coordinate& operator[](std::size_t k) const { return coordinates_.at(k); }
    const std::vector<Coordinate>& coordinates() const noexcept { return coordinates_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) throw InputError("unknown coordinate '" + name + "'");
        return static_cast<std::size_t>(it - names_.begin());
    }

    Assignment assignment(std::span<const double> point) const {
        Assignment a;
        for (std::size_t k = 0; k < names_.size(); ++k) a[names_[k]] = point[k];
        return a;
    }

private:
    std::vector<Coordinate> coordinates_;
    std::vector<std::string> names_;
};

struct SamplingOptions {
    int points_per_axis = 9;
    double truncation = 50.0;
};

/// Tensor grid of interior points; endpoints, where metrics may degenerate, are never sampled.
class SampleGrid {
public:
    SampleGrid(const Chart& chart, int points_per_axis, double truncation) {
        for (const auto& c : chart.coordinates()) {
            const Window w = sampling_window(c.range, truncation);
            std::vector<double> axis(points_per_axis);
            for (int i = 0; i < points_per_axis; ++i) axis[i] = w.lo + (i + 0.5) * (w.hi - w.lo) / points_per_axis;
            axes_.push_back(std::move(axis));
        }
    }

    explicit SampleGrid(std::vector<std::vector<double>> axes) : axes_(std::move(axes)) {}

    const std::vector<std::vector<double>>& axes() const noexcept { return axes_; }

    std::size_t size() const {
        std::size_t n = 1;
        for (const auto& a : axes_) n *= a.size();
        return n;
    }

    template <class F>
    void for_each(F&& f) const {
        std::vector<std::size_t> idx(axes_.size(), 0);
        std::vector<double> point(axes_.size());
        const std::size_t total = size();
        for (std::size_t count = 0; count < total; ++count) {
            for (std::size_t k = 0; k < axes_.size(); ++k) point[k] = axes_[k][idx[k]];
            f(std::span<const double>(point));
            for (std::size_t k = axes_.size(); k-- > 0;) {
                if (++idx[k] < axes_[k].size()) break;
                idx[k] = 0;
            }
        }
    }

private:
    std::vector<std::vector<double>> axes_;
};

// --------------------------------------------------------------------------
// Power-product normal form, used to present sqrt(g) and its factors as
// products such as r^2 * sin(theta) instead of nested square roots.

namespace detail {

struct Monomial {
    double coefficient = 1.0;
    std::vector<std::pair<Expr, Rational>> factors;

    void multiply(const Expr& base, Rational e) {
        for (auto& [b, p] : factors)
            if (structurally_equal(b, base)) {
                p = p + e;
                return;
            }
        factors.emplace_back(base, e);
    }
};

// `positive(base)` must confirm base > 0 wherever the result is used; it
// guards the (b^q)^p = b^(qp) rewrite.
inline std::optional<Monomial> to_monomial(const Expr& e, const std::function<bool(const Expr&)>& positive) {
    switch (e.kind()) {
        case Kind::Constant: return Monomial{e.constant_value(), {}};
        case Kind::Neg: {
            auto m = to_monomial(e.operand(), positive);
            if (m) m->coefficient = -m->coefficient;
            return m;
        }
        case Kind::Mul:
        case Kind::Div: {
            auto a = to_monomial(e.lhs(), positive);
            auto b = to_monomial(e.rhs(), positive);
            if (!a || !b) return std::nullopt;
            if (e.kind() == Kind::Div) {
                if (b->coefficient == 0.0) return std::nullopt;
                a->coefficient /= b->coefficient;
                for (auto& [base, p] : b->factors) a->multiply(base, -p);
            } else {
                a->coefficient *= b->coefficient;
                for (auto& [base, p] : b->factors) a->multiply(base, p);
            }
            return a;
        }
        case Kind::Pow:
        case Kind::Call: {
            Rational p(1);
            if (e.kind() == Kind::Pow) {
                p = e.exponent();
            } else if (e.func() == Func::Sqrt) {
                p = Rational(1, 2);
            } else {
                Monomial m;
                m.factors.emplace_back(e, Rational(1));
                return m;
            }
            auto m = to_monomial(e.operand(), positive);
            if (!m) return std::nullopt;
            if (!p.is_integer()) {
                if (!(m->coefficient > 0.0)) return std::nullopt;
                for (auto& [base, q] : m->factors)
                    if (!positive(base)) return std::nullopt;
            }
            m->coefficient = std::pow(m->coefficient, p.value());
            for (auto& [base, q] : m->factors) q = q * p;
            return m;
        }
        default: {
            Monomial m;
            m.factors.emplace_back(e, Rational(1));
            return m;
        }
    }
}

inline Expr from_monomial(const Monomial& m) {
    std::optional<Expr> product;
    for (const auto& [base, p] : m.factors) {
        if (p == Rational(0)) continue;
        Expr term = p == Rational(1) ? base : pow(base, p);
        product = product ? *product * term : term;
    }
    if (!product) return Expr(m.coefficient);
    if (m.coefficient == 1.0) return simplify(*product);
    return simplify(Expr(m.coefficient) * *product);
}

inline std::function<bool(const Expr&)> positive_on(const Chart& chart, const SampleGrid& grid) {
    return [&chart, &grid](const Expr& base) {
        bool ok = true;
        CompiledExpr f(base, chart.names());
        grid.for_each([&](std::span<const double> p) {
            if (!ok) return;
            try {
                ok = f(p) > 0.0;
            } catch (const DomainError&) {
                ok = false;
            }
        });
        return ok;
    };
}

}  // namespace detail

/// 1/e presented as a power product where possible (1/r^2 -> r^(-2), 1/sin -> 1 / sin).
inline Expr reciprocal(const Expr& e) {
    const auto never = [](const Expr&) { return false; };
    if (auto m = detail::to_monomial(e, never); m && m->coefficient != 0.0) {
        if (m->factors.size() == 1 && m->factors[0].second == Rational(1))
            return simplify(Expr(1.0 / m->coefficient) / m->factors[0].first);
        detail::Monomial inv{1.0 / m->coefficient, {}};
        for (const auto& [b, p] : m->factors) inv.multiply(b, -p);
        return detail::from_monomial(inv);
    }
    return simplify(Expr(1.0) / e);
}

class MetricSpec;
Expr sqrt_det(const Chart& chart, const std::vector<Expr>& diagonal, const SampleGrid& grid);

/// Diagonal metric g = diag(g_11, ..., g_nn) on a chart (orthogonal coordinates).
class MetricSpec {
public:
    MetricSpec(Chart chart, std::vector<Expr> diagonal, SamplingOptions sampling = {})
        : chart_(std::move(chart)), diagonal_(std::move(diagonal)), sampling_(sampling) {
        if (diagonal_.size() != chart_.dimension())
            throw InputError("metric has " + std::to_string(diagonal_.size()) + " diagonal components for a " +
                             std::to_string(chart_.dimension()) + "-dimensional chart");
        for (std::size_t k = 0; k < diagonal_.size(); ++k)
            for (const auto& v : free_variables(diagonal_[k])) chart_.index_of(v);
        const SampleGrid grid = interior_grid();
        for (std::size_t k = 0; k < diagonal_.size(); ++k) {
            CompiledExpr g(diagonal_[k], chart_.names());
            grid.for_each([&](std::span<const double> p) {
                double v = 0.0;
                try {
                    v = g(p);
                } catch (const DomainError& e) {
                    throw InputError("metric component g_" + chart_[k].name + chart_[k].name + " is undefined at an interior point: " + e.what());
                }
                if (!(v > 0.0))
                    throw InputError("metric component g_" + chart_[k].name + chart_[k].name + " = " +
                                     to_string(diagonal_[k]) + " is not positive at an interior point");
            });
        }
        sqrt_g_ = sqrt_det(chart_, diagonal_, grid);
        CompiledExpr s(sqrt_g_, chart_.names());
        grid.for_each([&](std::span<const double> p) {
            if (!(s(p) > 0.0)) throw InputError("sqrt(g) is not positive at an interior point");
        });
    }

    const Chart& chart() const noexcept { return chart_; }
    const std::vector<Expr>& diagonal() const noexcept { return diagonal_; }
    const Expr& component(std::size_t k) const { return diagonal_.at(k); }
    const Expr& sqrt_g() const noexcept { return sqrt_g_; }
    const SamplingOptions& sampling() const noexcept { return sampling_; }
    SampleGrid interior_grid() const { return SampleGrid(chart_, sampling_.points_per_axis, sampling_.truncation); }

private:
    Chart chart_;
    std::vector<Expr> diagonal_;
    SamplingOptions sampling_;
    Expr sqrt_g_;
};

/// Product of the component square roots, normalized to a power product when
/// every base involved is positive on the interior grid.
inline Expr sqrt_det(const Chart& chart, const std::vector<Expr>& diagonal, const SampleGrid& grid) {
    std::optional<Expr> raw;
    for (const auto& g : diagonal) {
        Expr root = sqrt(g);
        raw = raw ? *raw * root : root;
    }
    if (auto m = detail::to_monomial(*raw, detail::positive_on(chart, grid))) return detail::from_monomial(*m);
    return simplify(*raw);
}

inline Expr sqrt_det(const MetricSpec& m) { return m.sqrt_g(); }

// --------------------------------------------------------------------------
// Factorizability

struct FactoredDeterminant {
    /// factors[k] depends on coordinate k only; their product is sqrt(g).
    std::vector<Expr> factors;
    std::vector<double> anchor;
    /// True when factors were read off a power product, false when taken from anchor slices.
    bool symbolic = false;
    double max_mixed_partial = 0.0;
    double reconstruction_error = 0.0;
};

struct NotFactorable {
    std::vector<double> point;
    std::size_t i = 0;
    std::size_t j = 0;
    double mixed_partial = 0.0;
};

using Factorization = std::variant<FactoredDeterminant, NotFactorable>;

/// Midpoint of finite ranges, a+1 on semi-axes, 0 on the line.
inline std::vector<double> default_anchor(const Chart& chart) {
    std::vector<double> p;
    for (const auto& c : chart.coordinates()) {
        if (auto f = std::get_if<FiniteInterval>(&c.range)) p.push_back(0.5 * (f->a + f->b));
        else if (auto s = std::get_if<SemiAxis>(&c.range)) p.push_back(s->a + 1.0);
        else p.push_back(0.0);
    }
    return p;
}

/// Max relative deviation |prod factors - sqrt(g)| / sqrt(g) over the grid.
inline double reconstruction_error(const Expr& sqrt_g, const std::vector<Expr>& factors, const Chart& chart,
                                   const SampleGrid& grid) {
    CompiledExpr s(sqrt_g, chart.names());
    std::vector<CompiledExpr> f;
    for (const auto& e : factors) f.emplace_back(e, chart.names());
    double worst = 0.0;
    grid.for_each([&](std::span<const double> p) {
        const double exact = s(p);
        double prod = 1.0;
        for (const auto& fk : f) prod *= fk(p);
        worst = std::max(worst, std::abs(prod - exact) / std::abs(exact));
    });
    return worst;
}

/// Separability test on the mixed partials of log sqrt(g).
/// Factors are read off the power product when possible; otherwise they are
/// axis slices through `anchor` with the constant folded into the first factor.
inline Factorization check_factorizable(const Expr& sqrt_g, const Chart& chart, const SampleGrid& grid,
                                        std::optional<std::vector<double>> anchor = std::nullopt,
                                        double tolerance = 1e-9) {
    const std::size_t n = chart.dimension();
    std::vector<double> p = anchor ? *anchor : default_anchor(chart);
    if (p.size() != n) throw InputError("anchor point has the wrong dimension");
    for (std::size_t k = 0; k < n; ++k)
        if (!contains_interior(chart[k].range, p[k]))
            throw InputError("anchor coordinate " + chart[k].name + " = " + detail::format_double(p[k]) +
                             " lies outside its range " + describe(chart[k].range));

    const Expr log_g = log(sqrt_g);
    std::vector<Expr> first;
    for (std::size_t k = 0; k < n; ++k) first.push_back(differentiate(log_g, chart.names()[k]));
    double max_mixed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            CompiledExpr mixed(differentiate(first[i], chart.names()[j]), chart.names());
            NotFactorable witness;
            grid.for_each([&](std::span<const double> x) {
                const double v = std::abs(mixed(x));
                max_mixed = std::max(max_mixed, v);
                if (v > tolerance && v > std::abs(witness.mixed_partial)) {
                    witness.point.assign(x.begin(), x.end());
                    witness.i = i;
                    witness.j = j;
                    witness.mixed_partial = mixed(x);
                }
            });
            if (!witness.point.empty()) return witness;
        }
    }

    FactoredDeterminant result;
    result.anchor = p;
    result.max_mixed_partial = max_mixed;

    if (auto m = detail::to_monomial(sqrt_g, detail::positive_on(chart, grid))) {
        std::vector<detail::Monomial> per_axis(n);
        bool separable = true;
        for (const auto& [base, e] : m->factors) {
            const auto vars = free_variables(base);
            if (vars.size() > 1) {
                separable = false;
                break;
            }
            if (vars.empty()) {
                per_axis[0].coefficient *= std::pow(evaluate(base, {}), e.value());
            } else {
                per_axis[chart.index_of(vars[0])].multiply(base, e);
            }
        }
        if (separable) {
            per_axis[0].coefficient *= m->coefficient;
            for (std::size_t k = 0; k < n; ++k) result.factors.push_back(detail::from_monomial(per_axis[k]));
            result.symbolic = true;
        }
    }
    if (!result.symbolic) {
        const double at_anchor = evaluate(sqrt_g, chart.assignment(p));
        for (std::size_t k = 0; k < n; ++k) {
            std::map<std::string, double> others;
            for (std::size_t j = 0; j < n; ++j)
                if (j != k) others[chart.names()[j]] = p[j];
            result.factors.push_back(substitute(sqrt_g, others));
        }
        if (n > 1)
            result.factors[0] = simplify(Expr(std::pow(at_anchor, -static_cast<double>(n - 1))) * result.factors[0]);
    }
    result.reconstruction_error = reconstruction_error(sqrt_g, result.factors, chart, grid);
    return result;
}

/// Same test with the reconstruction error measured on a grid not used for extraction.
inline Factorization check_factorizable(const MetricSpec& m, std::optional<std::vector<double>> anchor = std::nullopt,
                                        double tolerance = 1e-9) {
    auto f = check_factorizable(m.sqrt_g(), m.chart(), m.interior_grid(), std::move(anchor), tolerance);
    if (auto* fd = std::get_if<FactoredDeterminant>(&f)) {
        const SampleGrid fresh(m.chart(), m.sampling().points_per_axis + 2, m.sampling().truncation);
        fd->reconstruction_error = reconstruction_error(m.sqrt_g(), fd->factors, m.chart(), fresh);
    }
    return f;
}

}  // namespace igm
