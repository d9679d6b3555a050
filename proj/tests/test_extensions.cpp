#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "igm/extensions.hpp"

using namespace igm;

namespace {

constexpr double pi = std::numbers::pi;

CrfFunction crf(const char* text, const char* var) { return CrfFunction(parse_expression(text, {var}), var); }

}  // namespace

TEST(Classify, ByRange) {
    EXPECT_EQ(classify_extension(RealLine{}), ExtensionClass::EssentiallySelfAdjoint);
    EXPECT_EQ(classify_extension(SemiAxis{0.0}), ExtensionClass::MaximalSymmetric);
    EXPECT_EQ(classify_extension(FiniteInterval{0.0, pi}), ExtensionClass::Family);
}

TEST(Deficiency, UnitCrfTriple) {
    const auto finite = deficiency_indices(crf("1", "x"), FiniteInterval{0.0, 1.0});
    const auto semi = deficiency_indices(crf("1", "x"), SemiAxis{0.0});
    const auto line = deficiency_indices(crf("1", "x"), RealLine{});
    EXPECT_EQ(finite, (DeficiencyIndices{1, 1}));
    EXPECT_EQ(semi, (DeficiencyIndices{1, 0}));
    EXPECT_EQ(line, (DeficiencyIndices{0, 0}));
    for (const auto& d : {finite, semi, line}) EXPECT_FALSE(d.inconclusive);
    EXPECT_EQ(class_from_indices(finite), ExtensionClass::Family);
    EXPECT_EQ(class_from_indices(semi), ExtensionClass::MaximalSymmetric);
    EXPECT_EQ(class_from_indices(line), ExtensionClass::EssentiallySelfAdjoint);
}

TEST(Deficiency, AgreesWithClassificationWhenConjugateDiverges) {
    struct Case {
        const char* mu;
        CoordinateRange range;
    };
    const Case cases[] = {{"1/sin(x)", FiniteInterval{0.0, pi}}, {"x^(-2)", FiniteInterval{0.0, 2.0}},
                          {"1/x", SemiAxis{0.0}},                {"x", SemiAxis{1.0}},
                          {"2", RealLine{}},                      {"1 + x^2/100", RealLine{}}};
    for (const auto& c : cases) {
        const Coordinate coord{"x", c.range, false};
        const auto report = analyze_extension(crf(c.mu, "x"), coord);
        EXPECT_TRUE(report.agrees) << c.mu << " on " << describe(c.range);
    }
}

TEST(Deficiency, ConvergentConjugateOnSemiAxisIsFlagged) {
    // 1/mu = e^{-x}: X stays bounded, so the semi-axis behaves like a finite interval in X.
    const Coordinate coord{"x", SemiAxis{0.0}, false};
    const auto report = analyze_extension(crf("exp(x)", "x"), coord);
    EXPECT_EQ(report.by_range, ExtensionClass::MaximalSymmetric);
    EXPECT_EQ(report.indices, (DeficiencyIndices{1, 1}));
    EXPECT_FALSE(report.agrees);
}

TEST(Spectrum, AngularMomentumIsTheIntegers) {
    const auto t = analytic_spectrum(crf("1", "phi"), {0.0, 2 * pi}, 0.0);
    ASSERT_EQ(t.entries.size(), 11u);
    for (const auto& e : t.entries) EXPECT_NEAR(e.eigenvalue, e.j, 1e-12);
    EXPECT_NEAR(t.normalization, 1.0 / std::sqrt(2 * pi), 1e-12);
}

TEST(Spectrum, PolarAngle) {
    for (double alpha : {0.0, pi, 1.0}) {
        const auto t = analytic_spectrum(crf("1/sin(theta)", "theta"), {0.0, pi}, alpha, -3, 3);
        for (const auto& e : t.entries) EXPECT_NEAR(e.eigenvalue, e.j * pi - alpha / 2, 1e-10);
        EXPECT_NEAR(t.normalization, 1.0 / std::sqrt(2.0), 1e-11);
    }
}

TEST(Spectrum, Radial) {
    for (double a : {1.0, 2.0}) {
        for (double beta : {0.0, pi}) {
            const auto t = analytic_spectrum(crf("r^(-2)", "r"), {0.0, a}, beta);
            for (const auto& e : t.entries) EXPECT_NEAR(e.eigenvalue, 3.0 * (2 * pi * e.j - beta) / (a * a * a), 1e-9);
        }
    }
    const auto t = analytic_spectrum(crf("r^(-2)", "r"), {0.0, 2.0}, pi, 0, 2);
    EXPECT_NEAR(t.entries[0].eigenvalue, -3 * pi / 8, 1e-10);
    EXPECT_NEAR(t.entries[2].eigenvalue, 3 * 3 * pi / 8, 1e-10);
}

TEST(Spectrum, SpacingAndShiftCovariance) {
    const auto mu = crf("1/sin(theta)", "theta");
    const auto base = analytic_spectrum(mu, {0.0, pi}, 0.0);
    const double alpha = 2.2;
    const auto shifted = analytic_spectrum(mu, {0.0, pi}, alpha);
    for (std::size_t i = 0; i < base.entries.size(); ++i) {
        if (i > 0) {
            EXPECT_NEAR(base.entries[i].eigenvalue - base.entries[i - 1].eigenvalue, 2 * pi / base.period, 1e-12);
        }
        EXPECT_NEAR(shifted.entries[i].eigenvalue, base.entries[i].eigenvalue - alpha / base.period, 1e-12);
    }
    // alpha = 0 gives integer multiples of 2 pi / L.
    for (const auto& e : base.entries) EXPECT_NEAR(e.eigenvalue / (2 * pi / base.period), e.j, 1e-12);
}

TEST(Spectrum, InfinitePeriodIsAnError) {
    EXPECT_THROW(analytic_spectrum(crf("x", "x"), {0.0, 1.0}, 0.0), NumericsError);
}

TEST(PhysicalAlphas, IdentifiedEndpointsKeepOnlyPeriodic) {
    EXPECT_EQ(physical_alphas(true), std::vector<double>{0.0});
    EXPECT_EQ(physical_alphas(false), (std::vector<double>{0.0, pi}));
}

TEST(Eigenfunction, ThetaModeMatchesClosedForm) {
    const ConjugateCoordinate cc(crf("1/sin(theta)", "theta"), FiniteInterval{0.0, pi});
    const double alpha = pi;
    const int k = 2;
    const double P = k * pi - alpha / 2;
    for (double t : {0.2, 1.0, 2.5}) {
        const complex psi = eigenfunction_value(cc, P, t, 1.0 / std::sqrt(2.0));
        // Closed form up to the constant phase e^{iP}.
        const complex oracle = std::polar(1.0 / std::sqrt(2.0), -P * std::cos(t)) * std::polar(1.0, P);
        EXPECT_LE(std::abs(psi - oracle), 1e-10);
        EXPECT_NEAR(std::abs(psi), 1.0 / std::sqrt(2.0), 1e-14);
    }
    EXPECT_EQ(eigenfunction_value(cc, 0.0, 1.234), complex(1.0, 0.0));
}

TEST(Eigenfunction, BoundaryConditionAtEndpoints) {
    const ConjugateCoordinate cc(crf("r^(-2)", "r"), FiniteInterval{0.0, 1.5});
    for (double alpha : {0.0, pi, 0.7}) {
        const auto t = analytic_spectrum(crf("r^(-2)", "r"), {0.0, 1.5}, alpha);
        for (const auto& e : t.entries) {
            const complex at_a = eigenfunction_value(cc, e.eigenvalue, 0.0);
            const complex at_b = eigenfunction_value(cc, e.eigenvalue, 1.5);
            // psi(a) = e^{i alpha} psi(b).
            EXPECT_LE(std::abs(at_a - std::polar(1.0, alpha) * at_b), 1e-8);
        }
    }
}

TEST(Eigenfunction, OrthonormalUnderXMeasure) {
    const auto mu = crf("1/sin(theta)", "theta");
    const ConjugateCoordinate cc(mu, FiniteInterval{0.0, pi});
    const auto t = analytic_spectrum(mu, {0.0, pi}, pi);
    double worst = 0.0;
    for (const auto& a : t.entries)
        for (const auto& b : t.entries) {
            auto r = quadrature::integrate_or_throw(
                [&](double x) {
                    return std::conj(eigenfunction_value(cc, a.eigenvalue, x, t.normalization)) *
                           eigenfunction_value(cc, b.eigenvalue, x, t.normalization) * cc.derivative(x);
                },
                0.0, pi, {1e-13, 10000});
            worst = std::max(worst, std::abs(r - (a.j == b.j ? 1.0 : 0.0)));
        }
    EXPECT_LE(worst, 1e-8);
}
