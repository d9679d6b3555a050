#pragma once

// Verification harness: grid discretizations of the momentum operators with
// their weighted inner products, numeric spectra, and the Hamiltonian,
// operator-identity and expectation-value cross-checks.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "igm/conjugate.hpp"
#include "igm/error.hpp"
#include "igm/expr.hpp"
#include "igm/extensions.hpp"
#include "igm/manifold.hpp"
#include "igm/quadrature.hpp"

namespace igm {

enum class Scheme {
    /// Central differences of d/dx on a uniform x grid, scaled by mu(x_i).
    XCentral,
    /// Central differences of d/dX on a grid uniform in the conjugate coordinate.
    XUniform,
};

inline std::string to_string(Scheme s) { return s == Scheme::XCentral ? "x-central" : "X-uniform"; }

/// Cell-centred nodes with quadrature weights for the measure (1/mu) dx.
struct Grid1D {
    std::string coordinate;
    Scheme scheme = Scheme::XCentral;
    std::vector<double> x;
    std::vector<double> conjugate;
    std::vector<double> weights;
    double spacing = 0.0;

    std::size_t size() const noexcept { return x.size(); }
};

inline Grid1D make_grid(const ConjugateCoordinate& cc, const FiniteInterval& range, int n, Scheme scheme) {
    if (n < 16) throw InputError("grid needs at least 16 points, got " + std::to_string(n));
    Grid1D g;
    g.coordinate = cc.crf().coordinate();
    g.scheme = scheme;
    g.x.resize(n);
    g.conjugate.resize(n);
    g.weights.resize(n);
    if (scheme == Scheme::XCentral) {
        g.spacing = (range.b - range.a) / n;
        for (int i = 0; i < n; ++i) {
            g.x[i] = range.a + (i + 0.5) * g.spacing;
            const double mu = cc.mu(g.x[i]);
            if (!(mu > 0.0) || !std::isfinite(mu))
                throw NumericsError("mu = " + detail::format_double(mu) + " is not strictly positive at node x = " +
                                    detail::format_double(g.x[i]));
            g.conjugate[i] = cc(g.x[i]);
            g.weights[i] = g.spacing / mu;
        }
    } else {
        const double lo = cc(range.a), hi = cc(range.b);
        g.spacing = (hi - lo) / n;
        for (int i = 0; i < n; ++i) {
            g.conjugate[i] = lo + (i + 0.5) * g.spacing;
            g.x[i] = cc.inverse(g.conjugate[i]);
            const double mu = cc.mu(g.x[i]);
            if (!(mu > 0.0) || !std::isfinite(mu))
                throw NumericsError("mu = " + detail::format_double(mu) + " is not strictly positive at node x = " +
                                    detail::format_double(g.x[i]));
            g.weights[i] = g.spacing;
        }
    }
    return g;
}

/// Complex matrix acting on grid values, Hermitian in the inner product sum_i w_i conj(u_i) v_i.
struct OperatorMatrix {
    Eigen::MatrixXcd matrix;
    Eigen::VectorXd weights;
    /// Twist angle of the boundary closure; empty when no closure makes the stencil symmetric.
    std::optional<double> twist;
    Grid1D grid;
};

/// Momentum -i mu d/dx with the closure psi(a) = e^{i alpha} psi(b) wrapped into the stencil.
inline OperatorMatrix discretize_momentum(const ConjugateCoordinate& cc, const FiniteInterval& range, double alpha, int n,
                                          Scheme scheme) {
    OperatorMatrix m;
    m.grid = make_grid(cc, range, n, scheme);
    m.twist = alpha;
    m.weights = Eigen::Map<const Eigen::VectorXd>(m.grid.weights.data(), n);
    m.matrix = Eigen::MatrixXcd::Zero(n, n);
    const std::complex<double> i(0.0, 1.0);
    for (int row = 0; row < n; ++row) {
        const double scale = scheme == Scheme::XCentral ? cc.mu(m.grid.x[row]) / (2.0 * m.grid.spacing)
                                                        : 1.0 / (2.0 * m.grid.spacing);
        // psi_{n} = e^{-i alpha} psi_0 and psi_{-1} = e^{i alpha} psi_{n-1}.
        const std::complex<double> up = row + 1 < n ? 1.0 : std::polar(1.0, -alpha);
        const std::complex<double> down = row > 0 ? 1.0 : std::polar(1.0, alpha);
        m.matrix(row, (row + 1) % n) += -i * scale * up;
        m.matrix(row, (row + n - 1) % n) += i * scale * down;
    }
    return m;
}

/// Semi-axis or line: the truncated stencil with one-sided closures. No twist
/// closes it, so numeric_spectrum() refuses it.
inline OperatorMatrix discretize_momentum_unclosed(const ConjugateCoordinate& cc, const CoordinateRange& range, int n,
                                                   double truncation = 50.0) {
    const Window w = sampling_window(range, truncation);
    OperatorMatrix m;
    m.grid = make_grid(cc, {w.lo, w.hi}, n, Scheme::XCentral);
    m.weights = Eigen::Map<const Eigen::VectorXd>(m.grid.weights.data(), n);
    m.matrix = Eigen::MatrixXcd::Zero(n, n);
    const std::complex<double> i(0.0, 1.0);
    const double h = m.grid.spacing;
    for (int row = 0; row < n; ++row) {
        const double mu = cc.mu(m.grid.x[row]);
        if (row == 0) {
            m.matrix(row, 0) += i * mu / h;
            m.matrix(row, 1) += -i * mu / h;
        } else if (row == n - 1) {
            m.matrix(row, n - 1) += -i * mu / h;
            m.matrix(row, n - 2) += i * mu / h;
        } else {
            m.matrix(row, row + 1) += -i * mu / (2.0 * h);
            m.matrix(row, row - 1) += i * mu / (2.0 * h);
        }
    }
    return m;
}

/// max |(WM) - (WM)^H| / max |WM|.
inline double hermiticity_defect(const OperatorMatrix& m) {
    const Eigen::MatrixXcd wm = m.weights.asDiagonal() * m.matrix;
    const double scale = wm.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (wm - wm.adjoint()).cwiseAbs().maxCoeff() / scale;
}

struct Eigensystem {
    Eigen::VectorXd values;
    /// Columns are eigenvectors in grid-value space, orthonormal in the weighted inner product.
    Eigen::MatrixXcd vectors;
};

inline void require_self_adjoint_closure(const OperatorMatrix& m, double tolerance) {
    if (!m.twist)
        throw NumericsError("operator has no self-adjoint boundary closure (maximal symmetric or unclosed); no spectrum");
    const double defect = hermiticity_defect(m);
    if (defect > tolerance)
        throw NumericsError("operator is not Hermitian under its weight: max asymmetry " + detail::format_double(defect));
}

/// Eigen-decomposition of W^{1/2} M W^{-1/2}.
inline Eigensystem numeric_eigensystem(const OperatorMatrix& m, double tolerance = 1e-10) {
    require_self_adjoint_closure(m, tolerance);
    const Eigen::VectorXd root = m.weights.cwiseSqrt();
    Eigen::MatrixXcd s = root.asDiagonal() * m.matrix * root.cwiseInverse().asDiagonal();
    s = 0.5 * (s + s.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(s);
    if (solver.info() != Eigen::Success) throw NumericsError("Hermitian eigensolver failed");
    return {solver.eigenvalues(), root.cwiseInverse().asDiagonal() * solver.eigenvectors()};
}

/// The `count` distinct eigenvalues nearest zero, sorted ascending. Eigenvalues within
/// `merge` (relative) of each other count once: central differences duplicate every
/// low mode in a branch near the grid cutoff.
inline std::vector<double> numeric_spectrum(const OperatorMatrix& m, std::size_t count, double tolerance = 1e-10,
                                            double merge = 1e-9);

/// Analytic eigenfunctions sampled on the grid, one column per table entry.
inline Eigen::MatrixXcd sampled_eigenfunctions(const Grid1D& grid, const SpectrumTable& table) {
    Eigen::MatrixXcd u(grid.size(), table.entries.size());
    for (std::size_t c = 0; c < table.entries.size(); ++c)
        for (std::size_t i = 0; i < grid.size(); ++i)
            u(i, c) = table.normalization * std::polar(1.0, table.entries[c].eigenvalue * grid.conjugate[i]);
    return u;
}

/// max |Gram - I| of the sampled analytic eigenfunctions under the grid weights.
inline double discrete_gram_defect(const Grid1D& grid, const SpectrumTable& table) {
    const Eigen::MatrixXcd u = sampled_eigenfunctions(grid, table);
    const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(grid.weights.data(), grid.size());
    const Eigen::MatrixXcd gram = u.adjoint() * w.asDiagonal() * u;
    return (gram - Eigen::MatrixXcd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

struct MatchedMode {
    int j = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double overlap = 0.0;
};

/// All eigenvalues of W^{1/2} M W^{-1/2}, ascending.
inline Eigen::VectorXd numeric_eigenvalues(const OperatorMatrix& m, double tolerance = 1e-10) {
    require_self_adjoint_closure(m, tolerance);
    const Eigen::VectorXd root = m.weights.cwiseSqrt();
    Eigen::MatrixXcd s = root.asDiagonal() * m.matrix * root.cwiseInverse().asDiagonal();
    s = 0.5 * (s + s.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(s, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericsError("Hermitian eigensolver failed");
    return solver.eigenvalues();
}

inline std::vector<double> numeric_spectrum(const OperatorMatrix& m, std::size_t count, double tolerance, double merge) {
    const Eigen::VectorXd all = numeric_eigenvalues(m, tolerance);
    const double scale = std::max(1.0, all.cwiseAbs().maxCoeff());
    std::vector<double> distinct;
    for (Eigen::Index k = 0; k < all.size(); ++k)
        if (distinct.empty() || all(k) - distinct.back() > merge * scale) distinct.push_back(all(k));
    std::stable_sort(distinct.begin(), distinct.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    distinct.resize(std::min(count, distinct.size()));
    std::sort(distinct.begin(), distinct.end());
    return distinct;
}

/// Pairs each analytic mode with the nearest numeric eigenvalue and measures how much of
/// the sampled analytic eigenfunction lies in that eigenspace, by one step of sparse
/// inverse iteration started from the sampled function.
///
/// Central differences of a first derivative carry a doubled branch of modes near the
/// grid cutoff whose eigenvalues repeat the low ones, so eigenvalue order alone cannot
/// identify modes; the overlap confirms the smooth branch is present in the eigenspace.
inline std::vector<MatchedMode> match_modes(const OperatorMatrix& m, const SpectrumTable& table,
                                            double tolerance = 1e-10) {
    const Eigen::VectorXd values = numeric_eigenvalues(m, tolerance);
    const Eigen::VectorXd root = m.weights.cwiseSqrt();
    const Eigen::MatrixXcd dense = root.asDiagonal() * m.matrix * root.cwiseInverse().asDiagonal();
    const Eigen::SparseMatrix<std::complex<double>> s = (0.5 * (dense + dense.adjoint())).sparseView();
    const Eigen::MatrixXcd u = root.asDiagonal() * sampled_eigenfunctions(m.grid, table);
    const double scale = values.cwiseAbs().maxCoeff();
    std::vector<MatchedMode> out;
    for (std::size_t c = 0; c < table.entries.size(); ++c) {
        const double target = table.entries[c].eigenvalue;
        Eigen::Index best = 0;
        (values.array() - target).abs().minCoeff(&best);
        Eigen::SparseMatrix<std::complex<double>> shifted = s;
        for (Eigen::Index k = 0; k < shifted.rows(); ++k)
            shifted.coeffRef(k, k) -= values(best) + 1e-9 * std::max(1.0, scale);
        shifted.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<std::complex<double>>> lu(shifted);
        if (lu.info() != Eigen::Success) throw NumericsError("inverse iteration factorization failed");
        const Eigen::VectorXcd v = u.col(static_cast<Eigen::Index>(c));
        Eigen::VectorXcd x = lu.solve(v);
        x = lu.solve(x.normalized()).eval();
        const double overlap = std::abs(v.dot(x)) / (v.norm() * x.norm());
        out.push_back({table.entries[c].j, target, values(best), overlap});
    }
    return out;
}

/// Three-point Richardson estimate log2(|v1 - v2| / |v2 - v3|) for values at N, 2N, 4N.
/// Empty when both differences are at rounding level (the mode is exact on every grid).
inline std::optional<double> richardson_order(double v1, double v2, double v3, double noise = 1e-12) {
    const double d1 = std::abs(v1 - v2), d2 = std::abs(v2 - v3);
    if (d1 <= noise && d2 <= noise) return std::nullopt;
    if (d2 == 0.0) return std::numeric_limits<double>::infinity();
    return std::log2(d1 / d2);
}

struct ModeConvergence {
    int j = 0;
    double analytic = 0.0;
    std::vector<double> numeric;
    std::vector<double> error;
    std::optional<double> order;
    double overlap = 0.0;
};

struct SpectralConvergence {
    std::string coordinate;
    Scheme scheme = Scheme::XUniform;
    double alpha = 0.0;
    std::vector<int> grids;
    std::vector<ModeConvergence> modes;
    double hermiticity_defect = 0.0;
    double gram_defect = 0.0;

    double max_error_at_finest() const {
        double e = 0.0;
        for (const auto& m : modes) e = std::max(e, m.error.back());
        return e;
    }
};

/// Numeric spectra on N, 2N, 4N against the analytic table, with per-mode Richardson order.
inline SpectralConvergence spectral_convergence(const ConjugateCoordinate& cc, const FiniteInterval& range,
                                                const SpectrumTable& table, std::vector<int> grids, Scheme scheme) {
    if (grids.size() != 3) throw InputError("spectral convergence needs three grid sizes");
    SpectralConvergence out;
    out.coordinate = table.coordinate;
    out.scheme = scheme;
    out.alpha = table.alpha;
    out.grids = grids;
    out.modes.resize(table.entries.size());
    for (std::size_t c = 0; c < table.entries.size(); ++c) {
        out.modes[c].j = table.entries[c].j;
        out.modes[c].analytic = table.entries[c].eigenvalue;
    }
    for (std::size_t g = 0; g < grids.size(); ++g) {
        const OperatorMatrix m = discretize_momentum(cc, range, table.alpha, grids[g], scheme);
        out.hermiticity_defect = std::max(out.hermiticity_defect, hermiticity_defect(m));
        const auto matched = match_modes(m, table);
        for (std::size_t c = 0; c < matched.size(); ++c) {
            out.modes[c].numeric.push_back(matched[c].numeric);
            out.modes[c].error.push_back(std::abs(matched[c].numeric - matched[c].analytic));
            out.modes[c].overlap = matched[c].overlap;
        }
        if (g + 1 == grids.size()) out.gram_defect = discrete_gram_defect(m.grid, table);
    }
    // Rounding in the eigensolve scales with the operator norm, about N / L.
    const double noise = 1e-12 * std::max(1.0, grids.back() / table.period);
    for (auto& mode : out.modes) mode.order = richardson_order(mode.numeric[0], mode.numeric[1], mode.numeric[2], noise);
    return out;
}

// --------------------------------------------------------------------------
// Hamiltonian operator application on tensor grids

/// Cell-centred axis on [lo, hi].
struct GridAxis {
    double lo = 0.0;
    double hi = 1.0;
    int n = 16;

    double spacing() const { return (hi - lo) / n; }
    /// Position of half-index s: node i sits at s = 2i, the midpoint between i and i+1 at s = 2i+1.
    double at_half_index(int s) const { return lo + (0.5 + 0.5 * s) * spacing(); }
    double node(int i) const { return at_half_index(2 * i); }
};

/// Sum of products of one-variable factors with a bounding box of their support.
struct SeparableState {
    struct Term {
        std::complex<double> weight{1.0, 0.0};
        std::vector<std::function<std::complex<double>(double)>> factors;
    };
    std::vector<Term> terms;
    /// Per-axis box; the state vanishes, with all derivatives, near its faces.
    std::vector<Window> box;

    std::complex<double> operator()(std::span<const double> x) const {
        std::complex<double> sum = 0.0;
        for (const auto& t : terms) {
            std::complex<double> p = t.weight;
            for (std::size_t k = 0; k < t.factors.size(); ++k) p *= t.factors[k](x[k]);
            sum += p;
        }
        return sum;
    }
};

/// C-infinity bump exp(-k s^2 / (1 - s^2)), s = (x - center)/half_width, zero for |s| >= 1.
/// k = 8 keeps the fourth derivative within a few dozen times the second, close to a
/// Gaussian, so difference stencils resolve it at moderate grid sizes.
inline double bump(double x, double center, double half_width, double k = 8.0) {
    const double s = (x - center) / half_width;
    if (std::abs(s) >= 1.0) return 0.0;
    return std::exp(-k * s * s / (1.0 - s * s));
}

namespace detail {

/// Scalar field on a tensor grid with lookups at nodes and half nodes.
/// Separable expressions are tabulated per axis; anything else is evaluated pointwise.
class GridField {
public:
    GridField(const Expr& e, const Chart& chart, const std::vector<GridAxis>& axes) : axes_(axes) {
        const std::size_t n = axes.size();
        std::vector<std::vector<double>> sample_axes(n);
        std::vector<double> anchor(n);
        for (std::size_t k = 0; k < n; ++k) {
            for (int i = 0; i < 5; ++i) sample_axes[k].push_back(axes[k].lo + (i + 0.5) * (axes[k].hi - axes[k].lo) / 5);
            anchor[k] = 0.5 * (axes[k].lo + axes[k].hi);
        }
        const SampleGrid grid(sample_axes);
        bool separable = false;
        try {
            // The separability test requires an anchor inside the chart; the box always is.
            auto f = check_factorizable(e, chart, grid, anchor, 1e-9);
            if (auto* fd = std::get_if<FactoredDeterminant>(&f); fd && fd->reconstruction_error <= 1e-13) {
                tables_.resize(n);
                for (std::size_t k = 0; k < n; ++k) {
                    const std::vector<std::string> var{chart.names()[k]};
                    const CompiledExpr fk(fd->factors[k], chart.names());
                    std::vector<double> point(anchor);
                    tables_[k].resize(2 * axes[k].n + 1);
                    for (int s = -1; s < 2 * axes[k].n; ++s) {
                        point[k] = axes[k].at_half_index(s);
                        tables_[k][s + 1] = fk(point);
                    }
                }
                separable = true;
            }
        } catch (const Error&) {
            separable = false;
        }
        if (!separable) general_ = CompiledExpr(e, chart.names());
        separable_ = separable;
    }

    bool separable() const noexcept { return separable_; }

    /// Product of the tabulated factors except axis `skip`.
    double partial_product(std::span<const int> half_index, std::size_t skip) const {
        double p = 1.0;
        for (std::size_t k = 0; k < tables_.size(); ++k)
            if (k != skip) p *= tables_[k][half_index[k] + 1];
        return p;
    }

    double factor(std::size_t axis, int s) const { return tables_[axis][s + 1]; }

    double value(std::span<const int> half_index) const {
        if (separable_) return partial_product(half_index, tables_.size()) ;
        std::vector<double> x(half_index.size());
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = axes_[k].at_half_index(half_index[k]);
        return general_(x);
    }

    /// Value with axis `axis` moved to half-index s.
    double value_along(std::span<const int> half_index, std::size_t axis, int s, double partial) const {
        if (separable_) return partial * factor(axis, s);
        std::vector<int> h(half_index.begin(), half_index.end());
        h[axis] = s;
        return value(h);
    }

private:
    std::vector<GridAxis> axes_;
    bool separable_ = false;
    std::vector<std::vector<double>> tables_;
    CompiledExpr general_;
};

}  // namespace detail

/// Residual summary of the two Hamiltonian forms on one grid.
struct HamiltonianComparison {
    int n = 0;
    double max_difference = 0.0;
    double max_reference = 0.0;
    double relative() const { return max_reference > 0.0 ? max_difference / max_reference : max_difference; }
};

/// Both free Hamiltonians on a tensor grid: the CRF form (1/2m) sum P_i (g^ii/mu_i^2) P_i with
/// each P_i a central-difference momentum, and the divergence form
/// -(1/2m) g^{-1/2} d_i (g^{1/2} g^ii d_i) on the compact three-point stencil.
///
/// States are compactly supported inside the grid box, so no boundary closure enters.
class HamiltonianStencil {
public:
    HamiltonianStencil(const MetricSpec& metric, std::vector<Expr> crfs, std::vector<GridAxis> axes, double mass = 1.0)
        : chart_(metric.chart()), axes_(std::move(axes)), mass_(mass) {
        const std::size_t n = chart_.dimension();
        if (crfs.size() != n || axes_.size() != n) throw InputError("Hamiltonian: dimension mismatch");
        for (std::size_t k = 0; k < n; ++k) {
            if (!(axes_[k].lo > lower_bound(chart_[k].range) && axes_[k].hi < upper_bound(chart_[k].range)))
                throw InputError("Hamiltonian grid box for '" + chart_[k].name + "' must lie inside the chart interior");
            if (axes_[k].n < 8) throw InputError("Hamiltonian grid needs at least 8 points per axis");
        }
        const SampleGrid box_grid = [&] {
            std::vector<std::vector<double>> a(n);
            for (std::size_t k = 0; k < n; ++k)
                for (int i = 0; i < 5; ++i) a[k].push_back(axes_[k].lo + (i + 0.5) * (axes_[k].hi - axes_[k].lo) / 5);
            return SampleGrid(a);
        }();
        const auto positive = igm::detail::positive_on(chart_, box_grid);
        auto normalized = [&](const Expr& e) {
            if (auto m = igm::detail::to_monomial(e, positive)) return igm::detail::from_monomial(*m);
            return simplify(e);
        };
        for (std::size_t k = 0; k < n; ++k) {
            const std::vector<std::string> var{chart_.names()[k]};
            for (const auto& v : free_variables(crfs[k]))
                if (v != var[0]) throw InputError("CRF for '" + var[0] + "' depends on '" + v + "'");
            const CompiledExpr mu(crfs[k], var);
            mu_.emplace_back(2 * axes_[k].n + 1);
            for (int s = -1; s < 2 * axes_[k].n; ++s) mu_[k][s + 1] = mu(axes_[k].at_half_index(s));
            const Expr& g = metric.component(k);
            igm_coefficient_.emplace_back(normalized(Expr(1.0) / (g * pow(crfs[k], 2))), chart_, axes_);
            lb_flux_.emplace_back(normalized(metric.sqrt_g() / g), chart_, axes_);
        }
        lb_inverse_density_.emplace(normalized(Expr(1.0) / metric.sqrt_g()), chart_, axes_);
    }

    const std::vector<GridAxis>& axes() const noexcept { return axes_; }

    bool coefficients_separable() const {
        bool all = lb_inverse_density_->separable();
        for (const auto& f : igm_coefficient_) all = all && f.separable();
        for (const auto& f : lb_flux_) all = all && f.separable();
        return all;
    }

    /// Visits every output node (one node away from each face) with both Hamiltonian values.
    template <class Visitor>
    void for_each(const SeparableState& psi, Visitor&& visit) const {
        const std::size_t n = axes_.size();
        // psi factor tables over node indices -2 .. n+1 (offset 2).
        std::vector<std::vector<std::vector<std::complex<double>>>> tables(psi.terms.size());
        for (std::size_t t = 0; t < psi.terms.size(); ++t) {
            if (psi.terms[t].factors.size() != n) throw InputError("state dimension does not match the grid");
            tables[t].resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                tables[t][k].resize(axes_[k].n + 4);
                for (int i = -2; i < axes_[k].n + 2; ++i) tables[t][k][i + 2] = psi.terms[t].factors[k](axes_[k].node(i));
            }
        }
        std::vector<int> idx(n, 1);
        std::vector<int> half(n);
        std::vector<double> x(n);
        std::vector<std::complex<double>> other(psi.terms.size());
        auto psi_along = [&](std::size_t axis, int i) {
            std::complex<double> s = 0.0;
            for (std::size_t t = 0; t < tables.size(); ++t) s += other[t] * tables[t][axis][i + 2];
            return s;
        };
        const double inv_2m = 1.0 / (2.0 * mass_);
        for (;;) {
            for (std::size_t k = 0; k < n; ++k) {
                half[k] = 2 * idx[k];
                x[k] = axes_[k].node(idx[k]);
            }
            std::complex<double> h_igm = 0.0, h_lb = 0.0;
            for (std::size_t axis = 0; axis < n; ++axis) {
                for (std::size_t t = 0; t < tables.size(); ++t) {
                    std::complex<double> p = psi.terms[t].weight;
                    for (std::size_t k = 0; k < n; ++k)
                        if (k != axis) p *= tables[t][k][idx[k] + 2];
                    other[t] = p;
                }
                const int i = idx[axis];
                const double h = axes_[axis].spacing();
                const auto& mu = mu_[axis];
                auto mu_at = [&](int node) { return mu[2 * node + 1]; };
                const auto& c = igm_coefficient_[axis];
                const double c_partial = c.separable() ? c.partial_product(half, axis) : 0.0;
                auto flux = [&](int node) {
                    const double coeff = c.value_along(half, axis, 2 * node, c_partial);
                    return coeff * mu_at(node) * (psi_along(axis, node + 1) - psi_along(axis, node - 1)) / (2.0 * h);
                };
                h_igm += -mu_at(i) * (flux(i + 1) - flux(i - 1)) / (2.0 * h);

                const auto& a = lb_flux_[axis];
                const double a_partial = a.separable() ? a.partial_product(half, axis) : 0.0;
                const double a_up = a.value_along(half, axis, 2 * i + 1, a_partial);
                const double a_down = a.value_along(half, axis, 2 * i - 1, a_partial);
                const std::complex<double> p0 = psi_along(axis, i);
                h_lb += -(a_up * (psi_along(axis, i + 1) - p0) - a_down * (p0 - psi_along(axis, i - 1))) / (h * h) *
                        lb_inverse_density_->value(half);
            }
            visit(std::span<const double>(x), inv_2m * h_igm, inv_2m * h_lb);
            std::size_t k = n;
            while (k-- > 0) {
                if (++idx[k] < axes_[k].n - 1) break;
                idx[k] = 1;
            }
            if (k == static_cast<std::size_t>(-1)) break;
        }
    }

    HamiltonianComparison compare(const SeparableState& psi) const {
        HamiltonianComparison r;
        r.n = axes_.front().n;
        for_each(psi, [&](std::span<const double>, std::complex<double> igm, std::complex<double> lb) {
            r.max_difference = std::max(r.max_difference, std::abs(igm - lb));
            r.max_reference = std::max(r.max_reference, std::abs(lb));
        });
        return r;
    }

private:
    Chart chart_;
    std::vector<GridAxis> axes_;
    double mass_;
    std::vector<std::vector<double>> mu_;
    std::vector<detail::GridField> igm_coefficient_;
    std::vector<detail::GridField> lb_flux_;
    std::optional<detail::GridField> lb_inverse_density_;
};

/// Node values of the CRF-form Hamiltonian; boundary nodes are left at zero. Index is row-major.
inline std::vector<std::complex<double>> hamiltonian_igm_apply(const HamiltonianStencil& stencil, const SeparableState& psi) {
    std::size_t total = 1;
    for (const auto& a : stencil.axes()) total *= a.n;
    std::vector<std::complex<double>> out(total);
    std::size_t cursor = 0;
    // for_each visits the interior in row-major order; map it onto the full grid.
    const auto& axes = stencil.axes();
    std::vector<int> idx(axes.size(), 1);
    stencil.for_each(psi, [&](std::span<const double>, std::complex<double> igm, std::complex<double>) {
        std::size_t flat = 0;
        for (std::size_t k = 0; k < axes.size(); ++k) flat = flat * axes[k].n + idx[k];
        out[flat] = igm;
        ++cursor;
        std::size_t k = axes.size();
        while (k-- > 0) {
            if (++idx[k] < axes[k].n - 1) break;
            idx[k] = 1;
        }
    });
    return out;
}

inline std::vector<std::complex<double>> hamiltonian_lb_apply(const HamiltonianStencil& stencil, const SeparableState& psi) {
    std::size_t total = 1;
    for (const auto& a : stencil.axes()) total *= a.n;
    std::vector<std::complex<double>> out(total);
    const auto& axes = stencil.axes();
    std::vector<int> idx(axes.size(), 1);
    stencil.for_each(psi, [&](std::span<const double>, std::complex<double>, std::complex<double> lb) {
        std::size_t flat = 0;
        for (std::size_t k = 0; k < axes.size(); ++k) flat = flat * axes[k].n + idx[k];
        out[flat] = lb;
        std::size_t k = axes.size();
        while (k-- > 0) {
            if (++idx[k] < axes[k].n - 1) break;
            idx[k] = 1;
        }
    });
    return out;
}

/// Grid axes covering the state's box with n nodes each.
inline std::vector<GridAxis> box_axes(const SeparableState& psi, int n) {
    std::vector<GridAxis> axes;
    for (const auto& w : psi.box) axes.push_back({w.lo, w.hi, n});
    return axes;
}

struct HamiltonianConvergence {
    std::vector<HamiltonianComparison> levels;
    std::optional<double> order;
};

inline HamiltonianConvergence hamiltonian_convergence(const MetricSpec& metric, const std::vector<Expr>& crfs,
                                                      const SeparableState& psi, const std::vector<int>& grids,
                                                      double mass = 1.0) {
    HamiltonianConvergence out;
    for (int n : grids) out.levels.push_back(HamiltonianStencil(metric, crfs, box_axes(psi, n), mass).compare(psi));
    if (out.levels.size() >= 2) {
        const double a = out.levels[out.levels.size() - 2].relative(), b = out.levels.back().relative();
        if (a > 0.0 && b > 0.0) out.order = std::log2(a / b);
    }
    return out;
}

/// Five smooth compactly supported states placed inside the sampling window of every axis:
/// a bump product, a bump envelope times a joint plane wave exp(i sum P_k X_k), a modulated
/// bump, a two-term sum, and an oscillating envelope.
inline std::vector<SeparableState> hamiltonian_corpus(const Chart& chart, const std::vector<ConjugateCoordinate>& conjugates,
                                                      double truncation = 50.0) {
    const std::size_t n = chart.dimension();
    std::vector<Window> windows;
    for (const auto& c : chart.coordinates()) windows.push_back(sampling_window(c.range, truncation));
    auto bump_factor = [](double center, double half_width) {
        return [=](double x) { return std::complex<double>(bump(x, center, half_width), 0.0); };
    };
    auto place = [&](double rel_center, double rel_width) {
        std::vector<std::pair<double, double>> cw;
        for (const auto& w : windows) cw.emplace_back(w.lo + rel_center * (w.hi - w.lo), rel_width * (w.hi - w.lo));
        return cw;
    };
    auto box_of = [&](const std::vector<std::vector<std::pair<double, double>>>& placements) {
        std::vector<Window> box(n, {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
        for (const auto& p : placements)
            for (std::size_t k = 0; k < n; ++k) {
                box[k].lo = std::min(box[k].lo, p[k].first - 1.1 * p[k].second);
                box[k].hi = std::max(box[k].hi, p[k].first + 1.1 * p[k].second);
            }
        return box;
    };
    std::vector<SeparableState> corpus;
    {
        const auto p = place(0.5, 0.3);
        SeparableState s;
        SeparableState::Term t;
        for (std::size_t k = 0; k < n; ++k) t.factors.push_back(bump_factor(p[k].first, p[k].second));
        s.terms.push_back(t);
        s.box = box_of({p});
        corpus.push_back(s);
    }
    {
        const auto p = place(0.45, 0.28);
        SeparableState s;
        SeparableState::Term t;
        for (std::size_t k = 0; k < n; ++k) {
            const auto& cc = conjugates.at(k);
            const double span = cc(p[k].first + p[k].second) - cc(p[k].first - p[k].second);
            const double momentum = std::numbers::pi / span;
            const double c = p[k].first, w = p[k].second;
            t.factors.push_back([cc, momentum, c, w](double x) {
                const double b = bump(x, c, w);
                return b == 0.0 ? std::complex<double>(0.0) : b * std::polar(1.0, momentum * cc(x));
            });
        }
        s.terms.push_back(t);
        s.box = box_of({p});
        corpus.push_back(s);
    }
    {
        const auto p = place(0.55, 0.3);
        SeparableState s;
        SeparableState::Term t;
        for (std::size_t k = 0; k < n; ++k) {
            const double c = p[k].first, w = p[k].second;
            t.factors.push_back([c, w](double x) { return std::complex<double>((1.0 + 0.5 * (x - c) / w) * bump(x, c, w), 0.0); });
        }
        s.terms.push_back(t);
        s.box = box_of({p});
        corpus.push_back(s);
    }
    {
        const auto p = place(0.46, 0.3), q = place(0.54, 0.3);
        SeparableState s;
        SeparableState::Term t1, t2;
        t2.weight = {0.5, 0.5};
        for (std::size_t k = 0; k < n; ++k) {
            t1.factors.push_back(bump_factor(p[k].first, p[k].second));
            t2.factors.push_back(bump_factor(q[k].first, q[k].second));
        }
        s.terms = {t1, t2};
        s.box = box_of({p, q});
        corpus.push_back(s);
    }
    {
        const auto p = place(0.5, 0.32);
        SeparableState s;
        SeparableState::Term t;
        for (std::size_t k = 0; k < n; ++k) {
            const double c = p[k].first, w = p[k].second;
            t.factors.push_back([c, w](double x) {
                return std::complex<double>(std::cos(0.5 * std::numbers::pi * (x - c) / w) * bump(x, c, w), 0.0);
            });
        }
        s.terms.push_back(t);
        s.box = box_of({p});
        corpus.push_back(s);
    }
    return corpus;
}

// --------------------------------------------------------------------------
// Operator identities between q = -i d_k, its adjoint and the CRF momentum

/// div(d_k) = g^{-1/2} d_k g^{1/2}, symbolic.
inline Expr coordinate_divergence(const Expr& sqrt_g, const std::string& coordinate) {
    return simplify(differentiate(sqrt_g, coordinate) / sqrt_g);
}

struct OperatorIdentityResiduals {
    /// q psi against (1/mu) P psi.
    double q_vs_scaled_momentum = 0.0;
    /// q+ psi = -i g^{-1/2} d_k (g^{1/2} psi) against P (psi / mu).
    double adjoint_vs_momentum = 0.0;
    /// (q + q+)/2 psi against -i (d_k + div(d_k)/2) psi.
    double symmetric_vs_divergence_form = 0.0;
};

/// Pointwise residuals of the operator identities for a real test function psi.
inline OperatorIdentityResiduals operator_identities(const Expr& mu, const Expr& sqrt_g, const std::string& coordinate,
                                                     const Expr& psi, const Chart& chart,
                                                     std::span<const std::vector<double>> samples) {
    const auto& names = chart.names();
    const Expr dpsi = differentiate(psi, coordinate);
    const CompiledExpr q(dpsi, names);  // times -i
    const CompiledExpr scaled_momentum(simplify((Expr(1.0) / mu) * (mu * dpsi)), names);
    const CompiledExpr adjoint(differentiate(sqrt_g * psi, coordinate) / sqrt_g, names);
    const CompiledExpr momentum_of_ratio(mu * differentiate(psi / mu, coordinate), names);
    const Expr div = coordinate_divergence(sqrt_g, coordinate);
    const CompiledExpr symmetric(Expr(0.5) * (dpsi + differentiate(sqrt_g * psi, coordinate) / sqrt_g), names);
    const CompiledExpr divergence_form(dpsi + Expr(0.5) * div * psi, names);
    OperatorIdentityResiduals r;
    // Every side carries the same factor -i; compare the real coefficients.
    for (const auto& p : samples) {
        r.q_vs_scaled_momentum = std::max(r.q_vs_scaled_momentum, std::abs(q(p) - scaled_momentum(p)));
        r.adjoint_vs_momentum = std::max(r.adjoint_vs_momentum, std::abs(adjoint(p) - momentum_of_ratio(p)));
        r.symmetric_vs_divergence_form =
            std::max(r.symmetric_vs_divergence_form, std::abs(symmetric(p) - divergence_form(p)));
    }
    return r;
}

// --------------------------------------------------------------------------
// Expectation values

/// psi = scale * (re + i im), both parts real expressions in the chart coordinates.
struct ComplexExpr {
    Expr re;
    Expr im{0.0};
    double scale = 1.0;
};

struct TensorRule {
    std::vector<quadrature::GaussRule> axes;
};

/// Composite Gauss-Legendre per axis over the sampling windows.
inline TensorRule tensor_rule(const Chart& chart, int order = 8, int panels = 8, double truncation = 50.0) {
    TensorRule t;
    for (const auto& c : chart.coordinates()) {
        const Window w = sampling_window(c.range, truncation);
        t.axes.push_back(quadrature::composite_gauss(order, panels, w.lo, w.hi));
    }
    return t;
}

namespace detail {

template <class F>
void for_each_tensor_node(const TensorRule& rule, std::span<const std::size_t> axes, F&& f) {
    std::vector<std::size_t> idx(axes.size(), 0);
    std::vector<double> x(rule.axes.size(), 0.0);
    if (axes.empty()) {
        f(std::span<const double>(x), 1.0);
        return;
    }
    for (;;) {
        double w = 1.0;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            x[axes[a]] = rule.axes[axes[a]].nodes[idx[a]];
            w *= rule.axes[axes[a]].weights[idx[a]];
        }
        f(std::span<const double>(x), w);
        std::size_t a = axes.size();
        while (a-- > 0) {
            if (++idx[a] < rule.axes[axes[a]].nodes.size()) break;
            idx[a] = 0;
        }
        if (a == static_cast<std::size_t>(-1)) return;
    }
}

}  // namespace detail

/// Integral of |psi|^2 sqrt(g) by tensor Gauss-Legendre.
inline double state_norm(const ComplexExpr& psi, const Expr& sqrt_g, const Chart& chart, const TensorRule& rule) {
    const CompiledExpr re(psi.re, chart.names()), im(psi.im, chart.names()), density(sqrt_g, chart.names());
    std::vector<std::size_t> all(chart.dimension());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    double sum = 0.0;
    detail::for_each_tensor_node(rule, all, [&](std::span<const double> x, double w) {
        const double a = re(x), b = im(x);
        sum += w * (a * a + b * b) * density(x);
    });
    return sum * psi.scale * psi.scale;
}

inline ComplexExpr normalized(ComplexExpr psi, const Expr& sqrt_g, const Chart& chart, const TensorRule& rule) {
    psi.scale /= std::sqrt(state_norm(psi, sqrt_g, chart, rule));
    return psi;
}

struct ExpectationComparison {
    std::complex<double> full;
    std::complex<double> reduced;
    double difference() const { return std::abs(full - reduced); }
};

/// <P_k> with the full weight sqrt(g) against <q_k> with the reduced weight prod_{j != k} g^j.
/// The full side is a tensor Gauss-Legendre sum; the reduced side nests an adaptive
/// Gauss-Kronrod integral over x_k inside Gauss-Legendre over the remaining axes.
inline ExpectationComparison expectation_equivalence(const ComplexExpr& psi, const Expr& mu, std::size_t k,
                                                     const Expr& sqrt_g, const FactoredDeterminant& factored,
                                                     const Chart& chart, const TensorRule& rule,
                                                     double norm_tolerance = 1e-6, double truncation = 50.0) {
    const double norm = state_norm(psi, sqrt_g, chart, rule);
    if (std::abs(norm - 1.0) > norm_tolerance) throw InputError("state is not normalized: norm = " + detail::format_double(norm));
    const auto& names = chart.names();
    const std::string& var = names.at(k);
    const CompiledExpr re(psi.re, names), im(psi.im, names);
    const CompiledExpr dre(differentiate(psi.re, var), names), dim(differentiate(psi.im, var), names);
    const CompiledExpr density(sqrt_g, names), crf(mu, names);
    std::optional<Expr> reduced_weight;
    for (std::size_t j = 0; j < chart.dimension(); ++j)
        if (j != k) reduced_weight = reduced_weight ? *reduced_weight * factored.factors[j] : factored.factors[j];
    const CompiledExpr weight(reduced_weight ? *reduced_weight : Expr(1.0), names);
    const double s2 = psi.scale * psi.scale;
    // psi* (-i d psi) with psi = a + i b: (a - i b)(-i)(a' + i b') = (a b' - b a') - i (a a' + b b').
    auto integrand = [&](std::span<const double> x) {
        const double a = re(x), b = im(x), da = dre(x), db = dim(x);
        return std::complex<double>(a * db - b * da, -(a * da + b * db));
    };

    ExpectationComparison out;
    std::vector<std::size_t> all(chart.dimension());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    detail::for_each_tensor_node(rule, all, [&](std::span<const double> x, double w) {
        out.full += w * crf(x) * integrand(x) * density(x);
    });
    out.full *= s2;

    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < chart.dimension(); ++j)
        if (j != k) others.push_back(j);
    const Window wk = sampling_window(chart[k].range, truncation);
    detail::for_each_tensor_node(rule, others, [&](std::span<const double> x, double w) {
        std::vector<double> point(x.begin(), x.end());
        const double outer = weight(point);
        auto inner = quadrature::integrate_or_throw(
            [&](double t) {
                point[k] = t;
                return integrand(point);
            },
            wk.lo, wk.hi, {1e-13, 20000});
        out.reduced += w * outer * inner;
    });
    out.reduced *= s2;
    return out;
}

/// max | |psi|^2 - mean | / mean over the given values.
inline double uniform_density_deviation(std::span<const std::complex<double>> values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (const auto& v : values) mean += std::norm(v);
    mean /= static_cast<double>(values.size());
    double worst = 0.0;
    for (const auto& v : values) worst = std::max(worst, std::abs(std::norm(v) - mean) / mean);
    return worst;
}

}  // namespace igm
