#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "igm/expr.hpp"

using namespace igm;

namespace {

const Expr r = Expr::variable("r");
const Expr theta = Expr::variable("theta");

// Random expression over {x, y} whose domain includes x, y in [0.5, 2].
Expr random_expr(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth > 0 ? 9 : 2);
    std::uniform_real_distribution<double> c(0.5, 2.5);
    const Expr x = Expr::variable("x"), y = Expr::variable("y");
    switch (pick(rng)) {
        case 0: return x;
        case 1: return y;
        case 2: return Expr(std::round(c(rng) * 4) / 4);
        case 3: return random_expr(rng, depth - 1) + random_expr(rng, depth - 1);
        case 4: return random_expr(rng, depth - 1) - random_expr(rng, depth - 1);
        case 5: return random_expr(rng, depth - 1) * random_expr(rng, depth - 1);
        case 6: return random_expr(rng, depth - 1) / (Expr(2.0) + pow(random_expr(rng, depth - 1), 2));
        case 7: return sin(random_expr(rng, depth - 1));
        case 8: return exp(Expr(0.25) * random_expr(rng, depth - 1));
        default: {
            const Rational exps[] = {Rational(2), Rational(-1), Rational(1, 2), Rational(-3, 2), Rational(3)};
            return pow(Expr(1.0) + pow(random_expr(rng, depth - 1), 2), exps[rng() % 5]);
        }
    }
}

double central_difference(const Expr& e, const std::string& var, Assignment at, double h) {
    Assignment up = at, down = at;
    up[var] += h;
    down[var] -= h;
    return (evaluate(e, up) - evaluate(e, down)) / (2 * h);
}

}  // namespace

TEST(Parse, Power) {
    const Expr e = parse_expression("r^2", {"r"});
    ASSERT_EQ(e.kind(), Kind::Pow);
    EXPECT_EQ(e.operand().name(), "r");
    EXPECT_EQ(e.exponent(), Rational(2));
}

TEST(Parse, FunctionCall) {
    const Expr e = parse_expression("sin(theta)", {"theta"});
    ASSERT_EQ(e.kind(), Kind::Call);
    EXPECT_EQ(e.func(), Func::Sin);
    EXPECT_EQ(e.operand().name(), "theta");
}

TEST(Parse, NestedQuotient) {
    const Expr e = parse_expression("1/(r^2 * sin(theta))", {"r", "theta"});
    EXPECT_TRUE(structurally_equal(e, Expr(1.0) / (pow(r, 2) * sin(theta))));
}

TEST(Parse, UnknownVariableNamesOffender) {
    try {
        parse_expression("r^2", {"x"});
        FAIL() << "expected an unknown-variable error";
    } catch (const UnknownVariableError& e) {
        EXPECT_EQ(e.name(), "r");
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Parse, SyntaxErrorCarriesByteOffset) {
    try {
        parse_expression("r * (1 + ", {"r"});
        FAIL() << "expected a syntax error";
    } catch (const SyntaxError& e) {
        EXPECT_EQ(e.offset(), 9u);
    }
    EXPECT_THROW(parse_expression("", {"r"}), SyntaxError);
    EXPECT_THROW(parse_expression("r^x", {"r", "x"}), SyntaxError);
    EXPECT_THROW(parse_expression("foo(r)", {"r"}), Error);
}

TEST(Parse, RationalExponentsInLowestTerms) {
    const Expr e = parse_expression("r^(2/4)", {"r"});
    ASSERT_EQ(e.kind(), Kind::Pow);
    EXPECT_EQ(e.exponent(), Rational(1, 2));
    EXPECT_TRUE(structurally_equal(parse_expression("r^1", {"r"}), r));
    EXPECT_TRUE(structurally_equal(parse_expression("r^(-2)", {"r"}), pow(r, -2)));
}

TEST(Parse, PiIsAConstant) {
    EXPECT_DOUBLE_EQ(evaluate(parse_expression("2*pi", {}), {}), 2 * std::numbers::pi);
}

TEST(Evaluate, TrivialValues) {
    EXPECT_EQ(evaluate(pow(r, 2), {{"r", 2.0}}), 4.0);
    EXPECT_NEAR(evaluate(Expr(1.0) / sin(theta), {{"theta", std::numbers::pi / 6}}), 2.0, 1e-15);
}

TEST(Evaluate, DomainErrorsCarryTheNode) {
    const Expr e = Expr(1.0) / sin(theta);
    try {
        evaluate(e, {{"theta", 0.0}});
        FAIL() << "expected a domain error";
    } catch (const DomainError& d) {
        EXPECT_EQ(d.node().kind(), Kind::Div);
    }
    EXPECT_THROW(evaluate(log(r), {{"r", -1.0}}), DomainError);
    EXPECT_THROW(evaluate(sqrt(r), {{"r", -1.0}}), DomainError);
    EXPECT_THROW(evaluate(pow(r, -1), {{"r", 0.0}}), DomainError);
}

TEST(Evaluate, MissingAssignmentIsAnError) { EXPECT_THROW(evaluate(r, {}), Error); }

TEST(Evaluate, CompiledMatchesTreeWalk) {
    std::mt19937_64 rng(7);
    const std::vector<std::string> vars{"x", "y"};
    for (int n = 0; n < 50; ++n) {
        const Expr e = random_expr(rng, 4);
        const CompiledExpr c(e, vars);
        const std::vector<double> p{1.25, 0.75};
        EXPECT_DOUBLE_EQ(c(p), evaluate(e, {{"x", 1.25}, {"y", 0.75}})) << to_string(e);
    }
}

TEST(Evaluate, IsPure) {
    const Expr e = parse_expression("exp(-r^2) * sin(theta)", {"r", "theta"});
    const Assignment at{{"r", 0.3}, {"theta", 1.1}};
    const double first = evaluate(e, at);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(evaluate(e, at), first);
}

TEST(Differentiate, Elementary) {
    EXPECT_TRUE(structurally_equal(differentiate(pow(r, 2), "r"), Expr(2.0) * r)) << to_string(differentiate(pow(r, 2), "r"));
    EXPECT_TRUE(structurally_equal(differentiate(sin(theta), "theta"), cos(theta)));
    EXPECT_TRUE(differentiate(sin(theta), "r").is_constant(0.0));
}

TEST(Differentiate, AgreesWithCentralDifferences) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.6, 1.9);
    int checked = 0;
    while (checked < 20) {
        const Expr e = random_expr(rng, 3);
        if (!depends_on(e, "x")) continue;
        const Assignment at{{"x", u(rng)}, {"y", u(rng)}};
        const double exact = evaluate(differentiate(e, "x"), at);
        const double fd = central_difference(e, "x", at, 1e-5);
        EXPECT_LE(std::abs(exact - fd), 1e-6 * std::max(1.0, std::abs(exact))) << to_string(e);
        ++checked;
    }
}

TEST(Differentiate, ErrorShrinksQuadraticallyWithStep) {
    const Expr e = parse_expression("sin(x) * exp(y*x) / (1 + x^2)", {"x", "y"});
    const Assignment at{{"x", 0.7}, {"y", 0.4}};
    const double exact = evaluate(differentiate(e, "x"), at);
    const double e1 = std::abs(central_difference(e, "x", at, 1e-2) - exact);
    const double e2 = std::abs(central_difference(e, "x", at, 5e-3) - exact);
    EXPECT_NEAR(std::log2(e1 / e2), 2.0, 0.1);
}

TEST(RoundTrip, PrintThenParseIsStructurallyEqual) {
    std::mt19937_64 rng(99);
    const std::vector<std::string> vars{"x", "y"};
    for (int n = 0; n < 300; ++n) {
        const Expr e = simplify(random_expr(rng, 5));
        const Expr back = parse_expression(to_string(e), vars);
        EXPECT_TRUE(structurally_equal(back, e)) << to_string(e) << "  vs  " << to_string(back);
    }
}

TEST(RoundTrip, NegativeConstantsAndPowers) {
    for (const char* text : {"-2 * r", "r^(-2)", "(-r)^2", "-(r^2)", "r - -1", "1 / (r * r)", "r^(1/2) / 3", "(r - 1) - (r - 2)",
                             "sin(-r)", "-(2) ^ 2", "1e-05 * r", "2.5e+20 + r"}) {
        const Expr e = parse_expression(text, {"r"});
        EXPECT_TRUE(structurally_equal(parse_expression(to_string(e), {"r"}), e)) << text << " -> " << to_string(e);
    }
}

TEST(Simplify, IdentityAndZeroFolding) {
    EXPECT_TRUE(structurally_equal(simplify(Expr(1.0) * r), r));
    EXPECT_TRUE(structurally_equal(simplify(r + Expr(0.0)), r));
    EXPECT_TRUE(simplify(Expr(0.0) * sin(r)).is_constant(0.0));
    EXPECT_TRUE(structurally_equal(simplify(pow(r, 1)), r));
    EXPECT_TRUE(simplify(pow(r, 0)).is_constant(1.0));
}

TEST(Substitute, BindsSomeVariables) {
    const Expr e = parse_expression("r^2 * sin(theta)", {"r", "theta"});
    const Expr s = substitute(e, {{"theta", std::numbers::pi / 2}});
    EXPECT_EQ(free_variables(s), std::vector<std::string>{"r"});
    EXPECT_DOUBLE_EQ(evaluate(s, {{"r", 3.0}}), 9.0);
}
