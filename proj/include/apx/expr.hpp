#pragma once

// Small arithmetic expression language used for coefficient definitions.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          (right-associative)
//   primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//
// Functions: sin cos exp log abs sqrt (one argument), pow min max (two).
// Constants: pi, e. Variables are declared at parse time.

#include "apx/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace apx {

class ParseError : public ConfigError {
public:
  ParseError(const std::string& message, std::size_t offset)
      : ConfigError(message + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class EvalError : public InvariantViolation {
public:
  explicit EvalError(const std::string& what) : InvariantViolation(what) {}
};

namespace detail {

enum class NodeKind { number, variable, negate, add, sub, mul, div, power, call };
enum class Func { sin, cos, exp, log, abs, sqrt, pow, min, max };

struct FuncInfo {
  std::string_view name;
  Func func;
  int arity;
};

inline constexpr std::array<FuncInfo, 9> function_table{{
    {"sin", Func::sin, 1},
    {"cos", Func::cos, 1},
    {"exp", Func::exp, 1},
    {"log", Func::log, 1},
    {"abs", Func::abs, 1},
    {"sqrt", Func::sqrt, 1},
    {"pow", Func::pow, 2},
    {"min", Func::min, 2},
    {"max", Func::max, 2},
}};

struct Node {
  NodeKind kind = NodeKind::number;
  double value = 0.0;  // number
  int slot = -1;       // variable
  Func func = Func::sin;
  int lhs = -1;        // first operand / argument
  int rhs = -1;        // second operand / argument
};

inline double checked(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw EvalError(std::string("non-finite result in ") + what);
  }
  return v;
}

inline double real_power(double base, double exponent) {
  if (base < 0.0 && exponent != std::floor(exponent)) {
    throw EvalError("negative base with non-integer exponent in power");
  }
  if (base == 0.0 && exponent < 0.0) {
    throw EvalError("zero base with negative exponent in power");
  }
  return checked(std::pow(base, exponent), "power");
}

} // namespace detail

class Expression {
public:
  Expression() = default;

  static Expression parse(std::string_view source, std::vector<std::string> allowed_vars);

  static Expression constant(double value) {
    Expression e;
    e.nodes_.push_back({detail::NodeKind::number, value});
    e.root_ = 0;
    return e;
  }

  double evaluate(std::span<const double> slots) const {
    return eval_node(root_, slots);
  }

  double evaluate(const std::map<std::string, double>& bindings) const {
    std::vector<double> slots(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      auto it = bindings.find(vars_[i]);
      if (it == bindings.end()) {
        if (uses_variable(vars_[i])) {
          throw EvalError("missing binding for variable '" + vars_[i] + "'");
        }
        continue;
      }
      slots[i] = it->second;
    }
    return evaluate(slots);
  }

  const std::vector<std::string>& variables() const noexcept { return vars_; }

  bool uses_variable(std::string_view name) const {
    for (const auto& n : nodes_) {
      if (n.kind == detail::NodeKind::variable && vars_[n.slot] == name) return true;
    }
    return false;
  }

  bool is_constant() const {
    for (const auto& n : nodes_) {
      if (n.kind == detail::NodeKind::variable) return false;
    }
    return true;
  }

  // Fully parenthesized text form; reparses to an identically evaluating tree.
  std::string to_string() const {
    std::string out;
    print_node(root_, out);
    return out;
  }

  bool empty() const noexcept { return root_ < 0; }

private:
  friend class ExpressionParser;

  double eval_node(int index, std::span<const double> slots) const {
    using detail::NodeKind;
    const auto& n = nodes_[index];
    switch (n.kind) {
      case NodeKind::number:
        return n.value;
      case NodeKind::variable:
        return slots[n.slot];
      case NodeKind::negate:
        return -eval_node(n.lhs, slots);
      case NodeKind::add:
        return detail::checked(eval_node(n.lhs, slots) + eval_node(n.rhs, slots), "addition");
      case NodeKind::sub:
        return detail::checked(eval_node(n.lhs, slots) - eval_node(n.rhs, slots), "subtraction");
      case NodeKind::mul:
        return detail::checked(eval_node(n.lhs, slots) * eval_node(n.rhs, slots), "multiplication");
      case NodeKind::div: {
        double num = eval_node(n.lhs, slots);
        double den = eval_node(n.rhs, slots);
        if (den == 0.0) throw EvalError("division by zero");
        return detail::checked(num / den, "division");
      }
      case NodeKind::power:
        return detail::real_power(eval_node(n.lhs, slots), eval_node(n.rhs, slots));
      case NodeKind::call:
        return eval_call(n, slots);
    }
    return 0.0;
  }

  double eval_call(const detail::Node& n, std::span<const double> slots) const {
    using detail::Func;
    double a = eval_node(n.lhs, slots);
    switch (n.func) {
      case Func::sin: return std::sin(a);
      case Func::cos: return std::cos(a);
      case Func::exp: return detail::checked(std::exp(a), "exp");
      case Func::log:
        if (!(a > 0.0)) throw EvalError("log of non-positive argument");
        return std::log(a);
      case Func::abs: return std::abs(a);
      case Func::sqrt:
        if (a < 0.0) throw EvalError("sqrt of negative argument");
        return std::sqrt(a);
      case Func::pow: return detail::real_power(a, eval_node(n.rhs, slots));
      case Func::min: return std::min(a, eval_node(n.rhs, slots));
      case Func::max: return std::max(a, eval_node(n.rhs, slots));
    }
    return 0.0;
  }

  void print_node(int index, std::string& out) const {
    using detail::NodeKind;
    const auto& n = nodes_[index];
    auto binary = [&](const char* op) {
      out += '(';
      print_node(n.lhs, out);
      out += op;
      print_node(n.rhs, out);
      out += ')';
    };
    switch (n.kind) {
      case NodeKind::number: {
        std::array<char, 64> buf{};
        auto res = std::to_chars(buf.data(), buf.data() + buf.size(), n.value);
        std::string text(buf.data(), res.ptr);
        if (n.value < 0.0) {
          out += "(" + text + ")";
        } else {
          out += text;
        }
        break;
      }
      case NodeKind::variable: out += vars_[n.slot]; break;
      case NodeKind::negate:
        out += "(-";
        print_node(n.lhs, out);
        out += ')';
        break;
      case NodeKind::add: binary("+"); break;
      case NodeKind::sub: binary("-"); break;
      case NodeKind::mul: binary("*"); break;
      case NodeKind::div: binary("/"); break;
      case NodeKind::power: binary("^"); break;
      case NodeKind::call:
        for (const auto& info : detail::function_table) {
          if (info.func == n.func) {
            out += info.name;
            break;
          }
        }
        out += '(';
        print_node(n.lhs, out);
        if (n.rhs >= 0) {
          out += ',';
          print_node(n.rhs, out);
        }
        out += ')';
        break;
    }
  }

  std::vector<detail::Node> nodes_;
  std::vector<std::string> vars_;
  int root_ = -1;
};

class ExpressionParser {
public:
  ExpressionParser(std::string_view source, std::vector<std::string> vars)
      : src_(source) {
    expr_.vars_ = std::move(vars);
  }

  Expression run() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("empty expression", pos_);
    expr_.root_ = parse_sum();
    skip_ws();
    if (pos_ != src_.size()) {
      throw ParseError(std::string("unexpected character '") + src_[pos_] + "'", pos_);
    }
    return std::move(expr_);
  }

private:
  using Node = detail::Node;
  using NodeKind = detail::NodeKind;

  int add(Node n) {
    expr_.nodes_.push_back(n);
    return static_cast<int>(expr_.nodes_.size()) - 1;
  }

  void skip_ws() {
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' ||
                                  src_[pos_] == '\n' || src_[pos_] == '\r')) {
      ++pos_;
    }
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  int parse_sum() {
    int lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        lhs = add({NodeKind::add, 0.0, -1, {}, lhs, parse_product()});
      } else if (accept('-')) {
        lhs = add({NodeKind::sub, 0.0, -1, {}, lhs, parse_product()});
      } else {
        return lhs;
      }
    }
  }

  int parse_product() {
    int lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = add({NodeKind::mul, 0.0, -1, {}, lhs, parse_unary()});
      } else if (accept('/')) {
        lhs = add({NodeKind::div, 0.0, -1, {}, lhs, parse_unary()});
      } else {
        return lhs;
      }
    }
  }

  int parse_unary() {
    if (accept('-')) {
      return add({NodeKind::negate, 0.0, -1, {}, parse_unary(), -1});
    }
    return parse_power();
  }

  int parse_power() {
    int base = parse_primary();
    if (accept('^')) {
      return add({NodeKind::power, 0.0, -1, {}, base, parse_unary()});
    }
    return base;
  }

  int parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression", pos_);
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      int inner = parse_sum();
      expect(')');
      return inner;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_name();
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  int parse_number() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
      ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      } else {
        pos_ = save;  // "2e" means 2 followed by the constant e
      }
    }
    double value = 0.0;
    auto res = std::from_chars(src_.data() + start, src_.data() + pos_, value);
    if (res.ec != std::errc{} || res.ptr != src_.data() + pos_) {
      throw ParseError("malformed number", start);
    }
    return add({NodeKind::number, value});
  }

  int parse_name() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    std::string_view name = src_.substr(start, pos_ - start);
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '(') {
      for (const auto& info : detail::function_table) {
        if (info.name == name) return parse_call(info, start);
      }
      throw ParseError("unknown function '" + std::string(name) + "'", start);
    }
    for (std::size_t i = 0; i < expr_.vars_.size(); ++i) {
      if (expr_.vars_[i] == name) {
        return add({NodeKind::variable, 0.0, static_cast<int>(i)});
      }
    }
    if (name == "pi") return add({NodeKind::number, std::numbers::pi});
    if (name == "e") return add({NodeKind::number, std::numbers::e});
    for (const auto& info : detail::function_table) {
      if (info.name == name) throw ParseError("function '" + std::string(name) + "' requires arguments", start);
    }
    throw ParseError("unknown identifier '" + std::string(name) + "'", start);
  }

  int parse_call(const detail::FuncInfo& info, std::size_t start) {
    expect('(');
    std::vector<int> args;
    if (!accept(')')) {
      do {
        args.push_back(parse_sum());
      } while (accept(','));
      expect(')');
    }
    if (static_cast<int>(args.size()) != info.arity) {
      throw ParseError("function '" + std::string(info.name) + "' expects " +
                           std::to_string(info.arity) + " argument(s), got " +
                           std::to_string(args.size()),
                       start);
    }
    Node n{NodeKind::call, 0.0, -1, info.func, args[0], info.arity == 2 ? args[1] : -1};
    return add(n);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Expression expr_;
};

inline Expression Expression::parse(std::string_view source, std::vector<std::string> allowed_vars) {
  return ExpressionParser(source, std::move(allowed_vars)).run();
}

} // namespace apx
