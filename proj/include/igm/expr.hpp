#pragma once

// Real-valued expressions in chart coordinates: parse, print, simplify,
// evaluate and differentiate symbolically.
//
// Expr is an immutable handle to a shared node tree. Copies are cheap and
// trees may be shared and evaluated concurrently.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "igm/error.hpp"

namespace igm {

/// Exponent of a power node, kept in lowest terms with a positive denominator.
class Rational {
public:
    constexpr Rational(std::int64_t num = 0, std::int64_t den = 1) : num_(num), den_(den) {
        if (den_ == 0) throw InputError("rational exponent with zero denominator");
        if (den_ < 0) {
            num_ = -num_;
            den_ = -den_;
        }
        const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
        if (g > 1) {
            num_ /= g;
            den_ /= g;
        }
    }

    constexpr std::int64_t num() const noexcept { return num_; }
    constexpr std::int64_t den() const noexcept { return den_; }
    constexpr double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
    constexpr bool is_integer() const noexcept { return den_ == 1; }

    friend constexpr bool operator==(const Rational&, const Rational&) = default;
    friend constexpr Rational operator-(const Rational& r) { return {-r.num_, r.den_}; }
    friend constexpr Rational operator+(const Rational& a, const Rational& b) {
        return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_};
    }
    friend constexpr Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }
    friend constexpr Rational operator*(const Rational& a, const Rational& b) {
        return {a.num_ * b.num_, a.den_ * b.den_};
    }

private:
    std::int64_t num_;
    std::int64_t den_;
};

enum class Func { Sin, Cos, Tan, Exp, Log, Sqrt };

inline std::string_view func_name(Func f) {
    switch (f) {
        case Func::Sin: return "sin";
        case Func::Cos: return "cos";
        case Func::Tan: return "tan";
        case Func::Exp: return "exp";
        case Func::Log: return "log";
        case Func::Sqrt: return "sqrt";
    }
    return "?";
}

inline std::optional<Func> func_from_name(std::string_view name) {
    for (Func f : {Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt})
        if (func_name(f) == name) return f;
    return std::nullopt;
}

enum class Kind { Constant, Variable, Add, Sub, Mul, Div, Neg, Pow, Call };

struct Node;

class Expr {
public:
    Expr() : Expr(0.0) {}
    Expr(double value);  // NOLINT: implicit constant promotion is intended

    static Expr variable(std::string name);
    static Expr binary(Kind kind, Expr lhs, Expr rhs);
    static Expr negate(Expr operand);
    static Expr power(Expr base, Rational exponent);
    static Expr call(Func f, Expr argument);

    const Node& node() const noexcept { return *node_; }
    Kind kind() const noexcept;
    bool is_constant() const noexcept { return kind() == Kind::Constant; }
    bool is_constant(double v) const noexcept;
    double constant_value() const;
    const std::string& name() const;
    const Expr& lhs() const;
    const Expr& rhs() const;
    const Expr& operand() const;
    Rational exponent() const;
    Func func() const;

    /// Identity of the shared node, used by compiled evaluation and error reports.
    const void* id() const noexcept { return node_.get(); }

private:
    explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
    std::shared_ptr<const Node> node_;
};

struct Node {
    Kind kind = Kind::Constant;
    double value = 0.0;
    std::string name;
    Rational exponent{1};
    Func func = Func::Sin;
    // lhs doubles as the operand of Neg, Pow and Call.
    std::optional<Expr> lhs;
    std::optional<Expr> rhs;
};

inline Expr::Expr(double value) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Constant;
    n->value = value;
    node_ = std::move(n);
}

inline Expr Expr::variable(std::string name) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Variable;
    n->name = std::move(name);
    return Expr(std::shared_ptr<const Node>(std::move(n)));
}

inline Expr Expr::binary(Kind kind, Expr lhs, Expr rhs) {
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    return Expr(std::shared_ptr<const Node>(std::move(n)));
}

inline Expr Expr::negate(Expr operand) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Neg;
    n->lhs = std::move(operand);
    return Expr(std::shared_ptr<const Node>(std::move(n)));
}

inline Expr Expr::power(Expr base, Rational exponent) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Pow;
    n->lhs = std::move(base);
    n->exponent = exponent;
    return Expr(std::shared_ptr<const Node>(std::move(n)));
}

inline Expr Expr::call(Func f, Expr argument) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Call;
    n->func = f;
    n->lhs = std::move(argument);
    return Expr(std::shared_ptr<const Node>(std::move(n)));
}

inline Kind Expr::kind() const noexcept { return node_->kind; }
inline bool Expr::is_constant(double v) const noexcept { return kind() == Kind::Constant && node_->value == v; }
inline double Expr::constant_value() const { return node_->value; }
inline const std::string& Expr::name() const { return node_->name; }
inline const Expr& Expr::lhs() const { return *node_->lhs; }
inline const Expr& Expr::rhs() const { return *node_->rhs; }
inline const Expr& Expr::operand() const { return *node_->lhs; }
inline Rational Expr::exponent() const { return node_->exponent; }
inline Func Expr::func() const { return node_->func; }

inline Expr operator+(Expr a, Expr b) { return Expr::binary(Kind::Add, std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return Expr::binary(Kind::Sub, std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return Expr::binary(Kind::Mul, std::move(a), std::move(b)); }
inline Expr operator/(Expr a, Expr b) { return Expr::binary(Kind::Div, std::move(a), std::move(b)); }
inline Expr operator-(Expr a) { return Expr::negate(std::move(a)); }
inline Expr pow(Expr base, Rational exponent) { return Expr::power(std::move(base), exponent); }
inline Expr sin(Expr e) { return Expr::call(Func::Sin, std::move(e)); }
inline Expr cos(Expr e) { return Expr::call(Func::Cos, std::move(e)); }
inline Expr tan(Expr e) { return Expr::call(Func::Tan, std::move(e)); }
inline Expr exp(Expr e) { return Expr::call(Func::Exp, std::move(e)); }
inline Expr log(Expr e) { return Expr::call(Func::Log, std::move(e)); }
inline Expr sqrt(Expr e) { return Expr::call(Func::Sqrt, std::move(e)); }

inline bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.id() == b.id()) return true;
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case Kind::Constant: return a.constant_value() == b.constant_value();
        case Kind::Variable: return a.name() == b.name();
        case Kind::Neg: return structurally_equal(a.operand(), b.operand());
        case Kind::Pow: return a.exponent() == b.exponent() && structurally_equal(a.operand(), b.operand());
        case Kind::Call: return a.func() == b.func() && structurally_equal(a.operand(), b.operand());
        default: return structurally_equal(a.lhs(), b.lhs()) && structurally_equal(a.rhs(), b.rhs());
    }
}

inline bool operator==(const Expr& a, const Expr& b) { return structurally_equal(a, b); }

/// Raised by evaluation when an operation leaves its real domain.
class DomainError : public Error {
public:
    DomainError(const std::string& what, Expr node) : Error(what), node_(std::move(node)) {}
    const Expr& node() const noexcept { return node_; }

private:
    Expr node_;
};

// --------------------------------------------------------------------------
// Printing

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// Binding strength used to decide where the printer needs parentheses.
inline int precedence(const Expr& e) {
    switch (e.kind()) {
        case Kind::Constant: return std::signbit(e.constant_value()) ? 3 : 5;
        case Kind::Variable:
        case Kind::Call: return 5;
        case Kind::Pow: return 4;
        case Kind::Neg: return 3;
        case Kind::Mul:
        case Kind::Div: return 2;
        default: return 1;
    }
}

inline void print_to(const Expr& e, std::string& out);

inline void print_child(const Expr& e, std::string& out, bool parens) {
    if (!parens) {
        print_to(e, out);
    } else {
        out += '(';
        print_to(e, out);
        out += ')';
    }
}

inline void print_to(const Expr& e, std::string& out) {
    switch (e.kind()) {
        case Kind::Constant: out += format_double(e.constant_value()); break;
        case Kind::Variable: out += e.name(); break;
        case Kind::Add:
        case Kind::Sub:
        case Kind::Mul:
        case Kind::Div: {
            static constexpr std::string_view ops[] = {" + ", " - ", " * ", " / "};
            const int p = precedence(e);
            print_child(e.lhs(), out, precedence(e.lhs()) < p);
            out += ops[static_cast<int>(e.kind()) - static_cast<int>(Kind::Add)];
            print_child(e.rhs(), out, precedence(e.rhs()) <= p);
            break;
        }
        case Kind::Neg:
            out += '-';
            print_child(e.operand(), out, precedence(e.operand()) < 4);
            break;
        case Kind::Pow: {
            print_child(e.operand(), out, precedence(e.operand()) < 5);
            const Rational p = e.exponent();
            out += '^';
            if (p.is_integer() && p.num() >= 0) {
                out += std::to_string(p.num());
            } else {
                out += '(' + std::to_string(p.num());
                if (!p.is_integer()) out += '/' + std::to_string(p.den());
                out += ')';
            }
            break;
        }
        case Kind::Call:
            out += func_name(e.func());
            out += '(';
            print_to(e.operand(), out);
            out += ')';
            break;
    }
}

}  // namespace detail

inline std::string to_string(const Expr& e) {
    std::string out;
    detail::print_to(e, out);
    return out;
}

// --------------------------------------------------------------------------
// Simplification: identity and zero folding plus constant folding.

inline Expr simplify(const Expr& e) {
    switch (e.kind()) {
        case Kind::Constant:
        case Kind::Variable: return e;
        case Kind::Neg: {
            Expr a = simplify(e.operand());
            if (a.is_constant()) return Expr(-a.constant_value());
            if (a.kind() == Kind::Neg) return a.operand();
            return -a;
        }
        case Kind::Pow: {
            Expr base = simplify(e.operand());
            const Rational p = e.exponent();
            if (p == Rational(1)) return base;
            if (p == Rational(0)) return Expr(1.0);
            if (base.is_constant(1.0)) return base;
            if (base.is_constant() && base.constant_value() > 0.0) return Expr(std::pow(base.constant_value(), p.value()));
            return pow(base, p);
        }
        case Kind::Call: return Expr::call(e.func(), simplify(e.operand()));
        default: break;
    }
    Expr a = simplify(e.lhs());
    Expr b = simplify(e.rhs());
    const bool ca = a.is_constant(), cb = b.is_constant();
    switch (e.kind()) {
        case Kind::Add:
            if (ca && cb) return Expr(a.constant_value() + b.constant_value());
            if (a.is_constant(0.0)) return b;
            if (b.is_constant(0.0)) return a;
            return a + b;
        case Kind::Sub:
            if (ca && cb) return Expr(a.constant_value() - b.constant_value());
            if (b.is_constant(0.0)) return a;
            if (a.is_constant(0.0)) return simplify(-b);
            return a - b;
        case Kind::Mul:
            if (ca && cb) return Expr(a.constant_value() * b.constant_value());
            if (a.is_constant(0.0) || b.is_constant(0.0)) return Expr(0.0);
            if (a.is_constant(1.0)) return b;
            if (b.is_constant(1.0)) return a;
            if (a.is_constant(-1.0)) return simplify(-b);
            if (b.is_constant(-1.0)) return simplify(-a);
            return a * b;
        case Kind::Div:
            if (ca && cb && b.constant_value() != 0.0) return Expr(a.constant_value() / b.constant_value());
            if (a.is_constant(0.0) && !b.is_constant(0.0)) return Expr(0.0);
            if (b.is_constant(1.0)) return a;
            return a / b;
        default: return e;
    }
}

// --------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
public:
    Parser(std::string_view text, std::span<const std::string> allowed) : text_(text), allowed_(allowed) {}

    Expr parse() {
        skip_ws();
        if (pos_ >= text_.size()) throw SyntaxError("empty expression", pos_);
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size()) throw SyntaxError(std::string("unexpected '") + text_[pos_] + "'", pos_);
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r'))
            ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) {
            if (pos_ >= text_.size()) throw SyntaxError(std::string("expected '") + c + "' but reached end of input", pos_);
            throw SyntaxError(std::string("expected '") + c + "'", pos_);
        }
    }

    Expr parse_sum() {
        Expr e = parse_product();
        for (;;) {
            if (accept('+')) e = e + parse_product();
            else if (accept('-')) e = e - parse_product();
            else return e;
        }
    }

    Expr parse_product() {
        Expr e = parse_unary();
        for (;;) {
            if (accept('*')) e = e * parse_unary();
            else if (accept('/')) e = e / parse_unary();
            else return e;
        }
    }

    Expr parse_unary() {
        if (accept('-')) {
            Expr operand = parse_unary();
            if (operand.is_constant()) return Expr(-operand.constant_value());
            return -operand;
        }
        if (accept('+')) return parse_unary();
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_primary();
        if (accept('^')) return pow(base, parse_exponent());
        return base;
    }

    // exponent := ['-'] number | '(' ['-'] number ['/' ['-'] number] ')'
    Rational parse_exponent() {
        skip_ws();
        const std::size_t start = pos_;
        if (accept('(')) {
            Rational r = parse_signed_rational_literal();
            if (accept('/')) {
                Rational d = parse_signed_rational_literal();
                if (d.num() == 0) throw SyntaxError("zero denominator in exponent", start);
                r = r * Rational(d.den(), d.num());
            }
            expect(')');
            return r;
        }
        return parse_signed_rational_literal();
    }

    Rational parse_signed_rational_literal() {
        bool negative = false;
        while (true) {
            if (accept('-')) negative = !negative;
            else if (!accept('+')) break;
        }
        skip_ws();
        const std::size_t start = pos_;
        std::int64_t num = 0, den = 1;
        bool digits = false;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
            num = num * 10 + (text_[pos_++] - '0');
            digits = true;
        }
        if (pos_ < text_.size() && text_[pos_] == '.') {
            ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                num = num * 10 + (text_[pos_++] - '0');
                den *= 10;
                digits = true;
            }
        }
        if (!digits) throw SyntaxError("exponent must be a rational constant", start);
        if (num > (std::int64_t{1} << 40) || den > (std::int64_t{1} << 40)) throw SyntaxError("exponent literal too long", start);
        return Rational(negative ? -num : num, den);
    }

    Expr parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) throw SyntaxError("unexpected end of input", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_sum();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            const std::size_t start = pos_;
            while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
            const std::string ident(text_.substr(start, pos_ - start));
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == '(') {
                auto f = func_from_name(ident);
                if (!f) throw SyntaxError("unknown function '" + ident + "'", start);
                ++pos_;
                Expr arg = parse_sum();
                expect(')');
                return Expr::call(*f, arg);
            }
            if (std::find(allowed_.begin(), allowed_.end(), ident) != allowed_.end()) return Expr::variable(ident);
            if (ident == "pi") return Expr(std::numbers::pi);
            if (func_from_name(ident)) throw SyntaxError("function '" + ident + "' requires an argument", start);
            throw UnknownVariableError(ident, start);
        }
        throw SyntaxError(std::string("unexpected '") + c + "'", pos_);
    }

    Expr parse_number() {
        const std::size_t start = pos_;
        std::size_t end = pos_;
        while (end < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.')) ++end;
        if (end < text_.size() && (text_[end] == 'e' || text_[end] == 'E')) {
            std::size_t k = end + 1;
            if (k < text_.size() && (text_[k] == '+' || text_[k] == '-')) ++k;
            if (k < text_.size() && std::isdigit(static_cast<unsigned char>(text_[k]))) {
                end = k;
                while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
            }
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + end, value);
        if (ec != std::errc() || ptr != text_.data() + end) throw SyntaxError("malformed number", start);
        pos_ = end;
        return Expr(value);
    }

    std::string_view text_;
    std::span<const std::string> allowed_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses infix text (`+ - * / ^`, parentheses, sin/cos/tan/exp/log/sqrt, `pi`).
/// Every identifier must be listed in `allowed_vars`. The result is simplified.
inline Expr parse_expression(std::string_view text, std::span<const std::string> allowed_vars) {
    return simplify(detail::Parser(text, allowed_vars).parse());
}

inline Expr parse_expression(std::string_view text, std::initializer_list<std::string> allowed_vars) {
    std::vector<std::string> v(allowed_vars);
    return parse_expression(text, std::span<const std::string>(v));
}

// --------------------------------------------------------------------------
// Inspection and substitution

inline void collect_variables(const Expr& e, std::vector<std::string>& out) {
    switch (e.kind()) {
        case Kind::Constant: return;
        case Kind::Variable:
            if (std::find(out.begin(), out.end(), e.name()) == out.end()) out.push_back(e.name());
            return;
        case Kind::Neg:
        case Kind::Pow:
        case Kind::Call: collect_variables(e.operand(), out); return;
        default:
            collect_variables(e.lhs(), out);
            collect_variables(e.rhs(), out);
    }
}

inline std::vector<std::string> free_variables(const Expr& e) {
    std::vector<std::string> out;
    collect_variables(e, out);
    return out;
}

inline bool depends_on(const Expr& e, const std::string& var) {
    const auto vars = free_variables(e);
    return std::find(vars.begin(), vars.end(), var) != vars.end();
}

/// Replaces variables by constants (other variables are kept) and simplifies.
inline Expr substitute(const Expr& e, const std::map<std::string, double>& values) {
    auto rec = [&](auto&& self, const Expr& x) -> Expr {
        switch (x.kind()) {
            case Kind::Constant: return x;
            case Kind::Variable: {
                auto it = values.find(x.name());
                return it == values.end() ? x : Expr(it->second);
            }
            case Kind::Neg: return -self(self, x.operand());
            case Kind::Pow: return pow(self(self, x.operand()), x.exponent());
            case Kind::Call: return Expr::call(x.func(), self(self, x.operand()));
            default: return Expr::binary(x.kind(), self(self, x.lhs()), self(self, x.rhs()));
        }
    };
    return simplify(rec(rec, e));
}

// --------------------------------------------------------------------------
// Evaluation

namespace detail {

inline double apply_func(Func f, double a, const Expr& node) {
    switch (f) {
        case Func::Sin: return std::sin(a);
        case Func::Cos: return std::cos(a);
        case Func::Tan: {
            const double c = std::cos(a);
            if (c == 0.0) throw DomainError("tan at a pole", node);
            return std::tan(a);
        }
        case Func::Exp: return std::exp(a);
        case Func::Log:
            if (!(a > 0.0)) throw DomainError("log of non-positive value " + format_double(a), node);
            return std::log(a);
        case Func::Sqrt:
            if (a < 0.0) throw DomainError("sqrt of negative value " + format_double(a), node);
            return std::sqrt(a);
    }
    return 0.0;
}

inline double apply_pow(double base, Rational p, const Expr& node) {
    if (base == 0.0 && p.num() < 0) throw DomainError("zero raised to a negative power", node);
    if (base < 0.0) {
        if (p.den() % 2 == 0) throw DomainError("negative base with even-root exponent", node);
        const double mag = std::pow(-base, p.value());
        return (p.num() % 2 == 0) ? mag : -mag;
    }
    if (p.is_integer()) return std::pow(base, static_cast<double>(p.num()));
    return std::pow(base, p.value());
}

inline double apply_div(double a, double b, const Expr& node) {
    if (b == 0.0) throw DomainError("division by zero", node);
    return a / b;
}

}  // namespace detail

using Assignment = std::map<std::string, double>;

/// Evaluates `e`; every free variable must be present in `assignment`.
inline double evaluate(const Expr& e, const Assignment& assignment) {
    switch (e.kind()) {
        case Kind::Constant: return e.constant_value();
        case Kind::Variable: {
            auto it = assignment.find(e.name());
            if (it == assignment.end()) throw InputError("variable '" + e.name() + "' is not assigned");
            return it->second;
        }
        case Kind::Add: return evaluate(e.lhs(), assignment) + evaluate(e.rhs(), assignment);
        case Kind::Sub: return evaluate(e.lhs(), assignment) - evaluate(e.rhs(), assignment);
        case Kind::Mul: return evaluate(e.lhs(), assignment) * evaluate(e.rhs(), assignment);
        case Kind::Div: return detail::apply_div(evaluate(e.lhs(), assignment), evaluate(e.rhs(), assignment), e);
        case Kind::Neg: return -evaluate(e.operand(), assignment);
        case Kind::Pow: return detail::apply_pow(evaluate(e.operand(), assignment), e.exponent(), e);
        case Kind::Call: return detail::apply_func(e.func(), evaluate(e.operand(), assignment), e);
    }
    return 0.0;
}

/// Postfix program bound to a fixed variable order; evaluation takes values by position.
class CompiledExpr {
public:
    CompiledExpr() = default;

    CompiledExpr(const Expr& e, std::span<const std::string> variables) {
        emit(e, variables);
        std::size_t depth = 0, max_depth = 0;
        for (const auto& op : ops_) {
            switch (op.kind) {
                case Kind::Constant:
                case Kind::Variable: ++depth; break;
                case Kind::Add:
                case Kind::Sub:
                case Kind::Mul:
                case Kind::Div: --depth; break;
                default: break;
            }
            max_depth = std::max(max_depth, depth);
        }
        stack_size_ = max_depth;
    }

    CompiledExpr(const Expr& e, std::initializer_list<std::string> variables)
        : CompiledExpr(e, std::span<const std::string>(std::vector<std::string>(variables))) {}

    double operator()(std::span<const double> values) const {
        constexpr std::size_t inline_capacity = 64;
        double inline_stack[inline_capacity];
        std::vector<double> heap;
        inline_stack[0] = 0.0;
        double* stack = inline_stack;
        if (stack_size_ > inline_capacity) {
            heap.resize(stack_size_);
            stack = heap.data();
        }
        std::size_t top = 0;
        for (const auto& op : ops_) {
            switch (op.kind) {
                case Kind::Constant: stack[top++] = op.value; break;
                case Kind::Variable: stack[top++] = values[op.slot]; break;
                case Kind::Add: --top; stack[top - 1] += stack[top]; break;
                case Kind::Sub: --top; stack[top - 1] -= stack[top]; break;
                case Kind::Mul: --top; stack[top - 1] *= stack[top]; break;
                case Kind::Div: --top; stack[top - 1] = detail::apply_div(stack[top - 1], stack[top], op.node); break;
                case Kind::Neg: stack[top - 1] = -stack[top - 1]; break;
                case Kind::Pow: stack[top - 1] = detail::apply_pow(stack[top - 1], op.exponent, op.node); break;
                case Kind::Call: stack[top - 1] = detail::apply_func(op.func, stack[top - 1], op.node); break;
            }
        }
        return stack[0];
    }

    double operator()(double x) const { return (*this)(std::span<const double>(&x, 1)); }

private:
    struct Op {
        Kind kind = Kind::Constant;
        double value = 0.0;
        std::size_t slot = 0;
        Rational exponent{1};
        Func func = Func::Sin;
        Expr node;
    };

    void emit(const Expr& e, std::span<const std::string> variables) {
        Op op;
        op.kind = e.kind();
        if (e.kind() == Kind::Div || e.kind() == Kind::Pow || e.kind() == Kind::Call) op.node = e;
        switch (e.kind()) {
            case Kind::Constant: op.value = e.constant_value(); break;
            case Kind::Variable: {
                auto it = std::find(variables.begin(), variables.end(), e.name());
                if (it == variables.end()) throw InputError("variable '" + e.name() + "' is not bound");
                op.slot = static_cast<std::size_t>(it - variables.begin());
                break;
            }
            case Kind::Neg: emit(e.operand(), variables); break;
            case Kind::Pow:
                emit(e.operand(), variables);
                op.exponent = e.exponent();
                break;
            case Kind::Call:
                emit(e.operand(), variables);
                op.func = e.func();
                break;
            default:
                emit(e.lhs(), variables);
                emit(e.rhs(), variables);
        }
        ops_.push_back(op);
    }

    std::vector<Op> ops_;
    std::size_t stack_size_ = 1;
};

// --------------------------------------------------------------------------
// Differentiation

inline Expr differentiate(const Expr& e, const std::string& var) {
    auto d = [&](auto&& self, const Expr& x) -> Expr {
        switch (x.kind()) {
            case Kind::Constant: return Expr(0.0);
            case Kind::Variable: return Expr(x.name() == var ? 1.0 : 0.0);
            case Kind::Add: return self(self, x.lhs()) + self(self, x.rhs());
            case Kind::Sub: return self(self, x.lhs()) - self(self, x.rhs());
            case Kind::Mul: return self(self, x.lhs()) * x.rhs() + x.lhs() * self(self, x.rhs());
            case Kind::Div:
                return (self(self, x.lhs()) * x.rhs() - x.lhs() * self(self, x.rhs())) / pow(x.rhs(), 2);
            case Kind::Neg: return -self(self, x.operand());
            case Kind::Pow: {
                const Rational p = x.exponent();
                return Expr(p.value()) * pow(x.operand(), p - Rational(1)) * self(self, x.operand());
            }
            case Kind::Call: {
                const Expr& u = x.operand();
                Expr du = self(self, u);
                switch (x.func()) {
                    case Func::Sin: return cos(u) * du;
                    case Func::Cos: return -(sin(u) * du);
                    case Func::Tan: return du / pow(cos(u), 2);
                    case Func::Exp: return x * du;
                    case Func::Log: return du / u;
                    case Func::Sqrt: return du / (Expr(2.0) * x);
                }
            }
        }
        return Expr(0.0);
    };
    return simplify(d(d, e));
}

}  // namespace igm
