#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "igm/crf.hpp"
#include "igm/manifold.hpp"

using namespace igm;

namespace {

constexpr double pi = std::numbers::pi;

Chart ball_chart(double a = 1.0) {
    return Chart({{"r", FiniteInterval{0.0, a}}, {"theta", FiniteInterval{0.0, pi}}, {"phi", FiniteInterval{0.0, 2 * pi}, true}});
}

MetricSpec spherical(double a = 1.0) {
    const Chart c = ball_chart(a);
    return MetricSpec(c, {parse_expression("1", c.names()), parse_expression("r^2", c.names()),
                          parse_expression("r^2 * sin(theta)^2", c.names())});
}

double at(const Expr& e, const Chart& c, std::vector<double> p) { return evaluate(e, c.assignment(p)); }

}  // namespace

TEST(Chart, RejectsInvalidCharts) {
    EXPECT_THROW(Chart(std::vector<Coordinate>{}), InputError);
    EXPECT_THROW(Chart({{"x", FiniteInterval{1.0, 0.0}}}), InputError);
    EXPECT_THROW(Chart({{"x", RealLine{}}, {"x", RealLine{}}}), InputError);
    EXPECT_THROW(Chart({{"x", SemiAxis{0.0}, true}}), InputError);
    EXPECT_THROW(Chart({{"sin", RealLine{}}}), InputError);
}

TEST(Metric, RejectsNonPositiveComponents) {
    const Chart c({{"x", FiniteInterval{-1.0, 1.0}}});
    EXPECT_THROW(MetricSpec(c, {parse_expression("x", c.names())}), InputError);
    EXPECT_THROW(MetricSpec(c, {parse_expression("y", {"y"})}), InputError);
}

TEST(SqrtDet, Spherical) {
    const MetricSpec m = spherical();
    EXPECT_EQ(to_string(sqrt_det(m)), "r^2 * sin(theta)");
    EXPECT_DOUBLE_EQ(at(sqrt_det(m), m.chart(), {2.0, pi / 2, 0.3}), 4.0);
}

TEST(SqrtDet, IdentityIsOne) {
    const Chart c({{"x", RealLine{}}, {"y", RealLine{}}, {"z", RealLine{}}});
    const MetricSpec m(c, {Expr(1.0), Expr(1.0), Expr(1.0)});
    EXPECT_TRUE(sqrt_det(m).is_constant(1.0)) << to_string(sqrt_det(m));
}

TEST(SqrtDet, PolarMatchesProductOfRootsOnGrid) {
    const Chart c({{"r", SemiAxis{0.0}}, {"phi", FiniteInterval{0.0, 2 * pi}, true}});
    const MetricSpec m(c, {Expr(1.0), parse_expression("r^2", c.names())});
    EXPECT_EQ(to_string(sqrt_det(m)), "r");
    m.interior_grid().for_each([&](std::span<const double> p) {
        EXPECT_NEAR(evaluate(sqrt_det(m), c.assignment(p)), std::sqrt(p[0] * p[0]), 1e-14);
    });
}

TEST(Factorizable, SphericalGivesPaperFactors) {
    const MetricSpec m = spherical();
    const auto f = check_factorizable(m);
    ASSERT_TRUE(std::holds_alternative<FactoredDeterminant>(f));
    const auto& fd = std::get<FactoredDeterminant>(f);
    EXPECT_TRUE(fd.symbolic);
    EXPECT_EQ(to_string(fd.factors[0]), "r^2");
    EXPECT_EQ(to_string(fd.factors[1]), "sin(theta)");
    EXPECT_TRUE(fd.factors[2].is_constant(1.0));
    EXPECT_LE(fd.reconstruction_error, 1e-8);
}

TEST(Factorizable, UnitDeterminant) {
    const Chart c({{"x", FiniteInterval{0.0, 1.0}}, {"y", FiniteInterval{0.0, 1.0}}});
    const auto f = check_factorizable(Expr(1.0), c, SampleGrid(c, 7, 50.0));
    ASSERT_TRUE(std::holds_alternative<FactoredDeterminant>(f));
    for (const auto& g : std::get<FactoredDeterminant>(f).factors) EXPECT_TRUE(g.is_constant(1.0));
}

TEST(Factorizable, MixedTermGivesSoundWitness) {
    const Chart c({{"u", FiniteInterval{0.0, 1.0}}, {"v", FiniteInterval{0.0, 1.0}}});
    const Expr s = parse_expression("1 + u*v", c.names());
    const auto f = check_factorizable(s, c, SampleGrid(c, 9, 50.0));
    ASSERT_TRUE(std::holds_alternative<NotFactorable>(f));
    const auto& w = std::get<NotFactorable>(f);
    EXPECT_EQ(w.i, 0u);
    EXPECT_EQ(w.j, 1u);
    // d^2 log(1 + uv) / du dv = 1 / (1 + uv)^2, evaluated independently at the witness.
    const double oracle = 1.0 / std::pow(1.0 + w.point[0] * w.point[1], 2);
    EXPECT_NEAR(w.mixed_partial, oracle, 1e-12);
    EXPECT_GT(std::abs(oracle), 1e-9);
}

TEST(Factorizable, SliceFallbackReconstructsOnFreshGrid) {
    // exp(x + y^2) is separable but not a power product of single-variable bases.
    const Chart c({{"x", FiniteInterval{0.0, 1.0}}, {"y", SemiAxis{0.0}}});
    const MetricSpec m(c, {parse_expression("exp(2*x + 2*y^2/2500)", c.names()), Expr(1.0)});
    const auto f = check_factorizable(m);
    ASSERT_TRUE(std::holds_alternative<FactoredDeterminant>(f));
    const auto& fd = std::get<FactoredDeterminant>(f);
    EXPECT_LE(fd.reconstruction_error, 1e-8);
    for (std::size_t k = 0; k < 2; ++k)
        for (const auto& v : free_variables(fd.factors[k])) EXPECT_EQ(v, c.names()[k]);
}

TEST(Factorizable, AnchorOutsideRangesIsAnError) {
    const MetricSpec m = spherical();
    EXPECT_THROW(check_factorizable(m, std::vector<double>{2.0, 1.0, 1.0}), InputError);
}

TEST(Factorizable, CylindricalAndFlat) {
    const Chart cyl({{"r", SemiAxis{0.0}}, {"phi", FiniteInterval{0.0, 2 * pi}, true}, {"z", RealLine{}}});
    const MetricSpec m(cyl, {Expr(1.0), parse_expression("r^2", cyl.names()), Expr(1.0)});
    const auto f = check_factorizable(m);
    ASSERT_TRUE(std::holds_alternative<FactoredDeterminant>(f));
    EXPECT_EQ(to_string(std::get<FactoredDeterminant>(f).factors[0]), "r");
}

TEST(Crf, SphericalCrfsAreThePaperValues) {
    const MetricSpec m = spherical();
    const auto crfs = compute_crfs(std::get<FactoredDeterminant>(check_factorizable(m)), m.chart());
    ASSERT_EQ(crfs.size(), 3u);
    EXPECT_EQ(to_string(crfs[0].mu), "r^(-2)");
    EXPECT_EQ(to_string(crfs[1].mu), "1 / sin(theta)");
    EXPECT_TRUE(crfs[2].mu.is_constant(1.0));
    const auto samples = random_interior_points(m.chart(), 1000, 1);
    for (const auto& c : crfs) {
        EXPECT_TRUE(is_separable_crf(c));
        EXPECT_LE(divergence_residual(c.mu, m.sqrt_g(), c.coordinate, m.chart(), samples), 1e-12);
    }
}

TEST(Crf, ReciprocityAgainstFactors) {
    const MetricSpec m = spherical(2.0);
    const auto fd = std::get<FactoredDeterminant>(check_factorizable(m));
    const auto crfs = compute_crfs(fd, m.chart());
    const auto samples = random_interior_points(m.chart(), 1000, 5);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(reciprocity_residual(crfs[k], fd.factors[k], m.chart(), samples), 1e-12);
}

TEST(Crf, UnitFactorsGiveUnitCrfs) {
    const Chart c({{"x", FiniteInterval{0.0, 1.0}}, {"y", FiniteInterval{0.0, 1.0}}});
    const auto crfs = compute_crfs(std::get<FactoredDeterminant>(check_factorizable(Expr(1.0), c, SampleGrid(c, 5, 50.0))), c);
    for (const auto& k : crfs) EXPECT_TRUE(k.mu.is_constant(1.0));
    const auto samples = random_interior_points(c, 100, 3);
    EXPECT_EQ(divergence_residual(Expr(1.0), Expr(1.0), "x", c, samples), 0.0);
}

TEST(Crf, PolarRadialCrf) {
    const Chart c({{"r", SemiAxis{0.0}}, {"phi", FiniteInterval{0.0, 2 * pi}, true}});
    const MetricSpec m(c, {Expr(1.0), parse_expression("r^2", c.names())});
    const auto crfs = compute_crfs(std::get<FactoredDeterminant>(check_factorizable(m)), c);
    EXPECT_EQ(to_string(crfs[0].mu), "1 / r");
    EXPECT_LE(divergence_residual(crfs[0].mu, m.sqrt_g(), "r", c, random_interior_points(c, 1000, 2)), 1e-12);
}

TEST(Crf, WrongCrfHasResidualOneOverR) {
    const Chart c({{"r", FiniteInterval{0.5, 2.0}}});
    const std::vector<std::vector<double>> samples{{0.5 + 1e-9}, {1.0}, {1.5}};
    // d_r(1 * r) / r = 1 / r, largest at the smallest sample.
    EXPECT_NEAR(divergence_residual(Expr(1.0), Expr::variable("r"), "r", c, samples), 1.0 / (0.5 + 1e-9), 1e-12);
}

TEST(Crf, CorruptedThetaCrfFails) {
    const MetricSpec m = spherical();
    const Expr corrupted = parse_expression("1/sin(2*theta)", m.chart().names());
    const auto samples = random_interior_points(m.chart(), 1000, 11);
    EXPECT_GT(divergence_residual(corrupted, m.sqrt_g(), "theta", m.chart(), samples), 1e-3);
}
