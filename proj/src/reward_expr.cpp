#include "phasedeploy/reward_expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "phasedeploy/error.hpp"

namespace phasedeploy::rewards {

using Op = RewardExpr::Op;

namespace {

// exp() saturates here so nested candidate expressions stay finite.
constexpr double kExpArgLimit = 50.0;
constexpr int kMaxNesting = 256;

enum class Tok { kNumber, kIdent, kLParen, kRParen, kComma, kPlus, kMinus, kStar, kCmp, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::size_t offset = 0;
  std::string_view text;
  double number = 0.0;
  Op cmp = Op::kLt;
};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++i;
      continue;
    }
    Token t;
    t.offset = i;
    if (is_digit(c) || (c == '.' && i + 1 < s.size() && is_digit(s[i + 1]))) {
      std::size_t j = i;
      while (j < s.size() && is_digit(s[j])) ++j;
      if (j < s.size() && s[j] == '.') {
        ++j;
        while (j < s.size() && is_digit(s[j])) ++j;
      }
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k >= s.size() || !is_digit(s[k])) {
          throw ParseError(ParseError::Kind::kLexical, k, "malformed exponent");
        }
        while (k < s.size() && is_digit(s[k])) ++k;
        j = k;
      }
      t.kind = Tok::kNumber;
      t.text = s.substr(i, j - i);
      const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc() || !std::isfinite(t.number)) {
        throw ParseError(ParseError::Kind::kLexical, i, "numeric literal out of range");
      }
      i = j;
    } else if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < s.size() && is_ident_char(s[j])) ++j;
      t.kind = Tok::kIdent;
      t.text = s.substr(i, j - i);
      i = j;
    } else {
      const char n = i + 1 < s.size() ? s[i + 1] : '\0';
      std::size_t len = 1;
      switch (c) {
        case '(': t.kind = Tok::kLParen; break;
        case ')': t.kind = Tok::kRParen; break;
        case ',': t.kind = Tok::kComma; break;
        case '+': t.kind = Tok::kPlus; break;
        case '-': t.kind = Tok::kMinus; break;
        case '*': t.kind = Tok::kStar; break;
        case '<':
          t.kind = Tok::kCmp;
          t.cmp = n == '=' ? Op::kLe : Op::kLt;
          len = n == '=' ? 2 : 1;
          break;
        case '>':
          t.kind = Tok::kCmp;
          t.cmp = n == '=' ? Op::kGe : Op::kGt;
          len = n == '=' ? 2 : 1;
          break;
        case '=':
        case '!':
          if (n != '=') throw ParseError(ParseError::Kind::kLexical, i, std::string("unexpected character '") + c + "'");
          t.kind = Tok::kCmp;
          t.cmp = c == '=' ? Op::kEq : Op::kNe;
          len = 2;
          break;
        default:
          throw ParseError(ParseError::Kind::kLexical, i, std::string("unexpected character '") + c + "'");
      }
      t.text = s.substr(i, len);
      i += len;
    }
    out.push_back(t);
  }
  Token end;
  end.kind = Tok::kEnd;
  end.offset = s.size();
  out.push_back(end);
  return out;
}

int precedence(Op op) {
  switch (op) {
    case Op::kLt: case Op::kLe: case Op::kGt: case Op::kGe: case Op::kEq: case Op::kNe:
      return 1;
    case Op::kAdd: case Op::kSub:
      return 2;
    case Op::kMul:
      return 3;
    case Op::kNeg:
      return 4;
    default:
      return 5;
  }
}

bool is_binary(Op op) {
  switch (op) {
    case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kMin: case Op::kMax:
    case Op::kLt: case Op::kLe: case Op::kGt: case Op::kGe: case Op::kEq: case Op::kNe:
      return true;
    default:
      return false;
  }
}

bool is_unary(Op op) { return op == Op::kNeg || op == Op::kAbs || op == Op::kExp || op == Op::kTanh; }

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConst: return "const";
    case Op::kFeature: return "feature";
    case Op::kNeg: return "-";
    case Op::kAbs: return "abs";
    case Op::kExp: return "exp";
    case Op::kTanh: return "tanh";
    case Op::kAdd: return "+";
    case Op::kSub: return "-";
    case Op::kMul: return "*";
    case Op::kMin: return "min";
    case Op::kMax: return "max";
    case Op::kLt: return "<";
    case Op::kLe: return "<=";
    case Op::kGt: return ">";
    case Op::kGe: return ">=";
    case Op::kEq: return "==";
    case Op::kNe: return "!=";
  }
  return "?";
}

class ExprParser {
 public:
  ExprParser(std::string_view text, std::optional<std::span<const std::string>> features)
      : tokens_(lex(text)), features_(features) {}

  RewardExpr run() {
    const int root = parse_expr();
    if (peek().kind != Tok::kEnd) syntax("unexpected trailing input");
    out_.root_ = root;
    if (features_) out_ = out_.bound(*features_);
    return out_;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_++]; }

  [[noreturn]] void syntax(const std::string& what) const {
    throw ParseError(ParseError::Kind::kSyntax, peek().offset, what);
  }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) syntax(std::string("expected ") + what);
    ++pos_;
  }

  int make(RewardExpr::Node node, std::size_t offset) {
    int d = 1;
    if (node.lhs >= 0) d = std::max(d, 1 + depth_[node.lhs]);
    if (node.rhs >= 0) d = std::max(d, 1 + depth_[node.rhs]);
    if (d > RewardExpr::kMaxDepth) {
      throw ParseError(ParseError::Kind::kDepthOverflow, offset,
                       "expression deeper than " + std::to_string(RewardExpr::kMaxDepth));
    }
    out_.nodes_.push_back(std::move(node));
    depth_.push_back(d);
    return static_cast<int>(out_.nodes_.size()) - 1;
  }

  struct NestGuard {
    explicit NestGuard(ExprParser& p) : p(p) {
      if (++p.nesting_ > kMaxNesting) {
        throw ParseError(ParseError::Kind::kDepthOverflow, p.peek().offset, "expression nested too deeply");
      }
    }
    ~NestGuard() { --p.nesting_; }
    ExprParser& p;
  };

  int parse_expr() {
    NestGuard guard(*this);
    int lhs = parse_sum();
    if (peek().kind == Tok::kCmp) {
      const Token op = take();
      const int rhs = parse_sum();
      lhs = make({op.cmp, 0.0, {}, lhs, rhs}, op.offset);
      if (peek().kind == Tok::kCmp) syntax("comparisons do not chain; add parentheses");
    }
    return lhs;
  }

  int parse_sum() {
    int lhs = parse_product();
    while (peek().kind == Tok::kPlus || peek().kind == Tok::kMinus) {
      const Token op = take();
      const int rhs = parse_product();
      lhs = make({op.kind == Tok::kPlus ? Op::kAdd : Op::kSub, 0.0, {}, lhs, rhs}, op.offset);
    }
    return lhs;
  }

  int parse_product() {
    int lhs = parse_unary();
    while (peek().kind == Tok::kStar) {
      const Token op = take();
      const int rhs = parse_unary();
      lhs = make({Op::kMul, 0.0, {}, lhs, rhs}, op.offset);
    }
    return lhs;
  }

  int parse_unary() {
    if (peek().kind == Tok::kMinus) {
      NestGuard guard(*this);
      const Token op = take();
      const int child = parse_unary();
      return make({Op::kNeg, 0.0, {}, child, -1}, op.offset);
    }
    return parse_primary();
  }

  int parse_primary() {
    const Token t = peek();
    switch (t.kind) {
      case Tok::kNumber:
        ++pos_;
        return make({Op::kConst, t.number, {}, -1, -1}, t.offset);
      case Tok::kLParen: {
        ++pos_;
        const int inner = parse_expr();
        expect(Tok::kRParen, "')'");
        return inner;
      }
      case Tok::kIdent: {
        ++pos_;
        if (peek().kind == Tok::kLParen) return parse_call(t);
        const std::string name(t.text);
        if (features_ && std::find(features_->begin(), features_->end(), name) == features_->end()) {
          throw ParseError(ParseError::Kind::kUnknownIdentifier, t.offset, "unknown feature '" + name + "'");
        }
        return make({Op::kFeature, 0.0, name, -1, -1}, t.offset);
      }
      case Tok::kEnd:
        syntax("unexpected end of input, expected an expression");
      default:
        syntax("expected an expression");
    }
  }

  int parse_call(const Token& name) {
    Op op;
    int arity;
    if (name.text == "abs") { op = Op::kAbs; arity = 1; }
    else if (name.text == "exp") { op = Op::kExp; arity = 1; }
    else if (name.text == "tanh") { op = Op::kTanh; arity = 1; }
    else if (name.text == "min") { op = Op::kMin; arity = 2; }
    else if (name.text == "max") { op = Op::kMax; arity = 2; }
    else {
      throw ParseError(ParseError::Kind::kUnknownIdentifier, name.offset,
                       "unknown function '" + std::string(name.text) + "'");
    }
    expect(Tok::kLParen, "'('");
    std::vector<int> args;
    if (peek().kind != Tok::kRParen) {
      args.push_back(parse_expr());
      while (peek().kind == Tok::kComma) {
        ++pos_;
        args.push_back(parse_expr());
      }
    }
    if (peek().kind != Tok::kRParen) syntax("expected ',' or ')'");
    if (static_cast<int>(args.size()) != arity) {
      throw ParseError(ParseError::Kind::kArity, name.offset,
                       std::string(name.text) + " takes " + std::to_string(arity) + " argument(s), got " +
                           std::to_string(args.size()));
    }
    ++pos_;
    return make({op, 0.0, {}, args[0], arity == 2 ? args[1] : -1}, name.offset);
  }

  std::vector<Token> tokens_;
  std::optional<std::span<const std::string>> features_;
  std::size_t pos_ = 0;
  int nesting_ = 0;
  RewardExpr out_;
  std::vector<int> depth_;
};

RewardExpr RewardExpr::parse(std::string_view text, std::optional<std::span<const std::string>> features) {
  return ExprParser(text, features).run();
}

RewardExpr RewardExpr::constant(double value) {
  RewardExpr e;
  e.nodes_.push_back({Op::kConst, value, {}, -1, -1, -1});
  e.root_ = 0;
  return e;
}

RewardExpr RewardExpr::feature(std::string name) {
  RewardExpr e;
  e.nodes_.push_back({Op::kFeature, 0.0, std::move(name), -1, -1, -1});
  e.root_ = 0;
  return e;
}

int RewardExpr::append(const RewardExpr& sub) {
  const int base = static_cast<int>(nodes_.size());
  for (Node n : sub.nodes_) {
    if (n.lhs >= 0) n.lhs += base;
    if (n.rhs >= 0) n.rhs += base;
    n.slot = -1;
    nodes_.push_back(std::move(n));
  }
  return sub.root_ + base;
}

RewardExpr RewardExpr::unary(Op op, const RewardExpr& child) {
  if (!is_unary(op)) throw UsageError("not a unary operator: " + std::string(op_name(op)));
  RewardExpr e;
  const int c = e.append(child);
  e.nodes_.push_back({op, 0.0, {}, c, -1, -1});
  e.root_ = static_cast<int>(e.nodes_.size()) - 1;
  return e;
}

RewardExpr RewardExpr::binary(Op op, const RewardExpr& lhs, const RewardExpr& rhs) {
  if (!is_binary(op)) throw UsageError("not a binary operator: " + std::string(op_name(op)));
  RewardExpr e;
  const int l = e.append(lhs);
  const int r = e.append(rhs);
  e.nodes_.push_back({op, 0.0, {}, l, r, -1});
  e.root_ = static_cast<int>(e.nodes_.size()) - 1;
  return e;
}

RewardExpr RewardExpr::bound(std::span<const std::string> names) const {
  RewardExpr e = *this;
  for (Node& n : e.nodes_) {
    if (n.op != Op::kFeature) continue;
    const auto it = std::find(names.begin(), names.end(), n.name);
    if (it == names.end()) throw EvaluationError(n.name, "reward references missing feature '" + n.name + "'");
    n.slot = static_cast<int>(it - names.begin());
  }
  e.bound_ = true;
  return e;
}

double RewardExpr::eval(std::span<const double> features) const {
  if (!bound_) throw UsageError("reward expression evaluated before binding to feature names");
  const double v = eval_node(root_, features);
  if (!std::isfinite(v)) throw EvaluationError("", "reward expression produced a non-finite value");
  return v;
}

double RewardExpr::eval_node(int index, std::span<const double> f) const {
  const Node& n = nodes_[index];
  auto a = [&] { return eval_node(n.lhs, f); };
  auto b = [&] { return eval_node(n.rhs, f); };
  switch (n.op) {
    case Op::kConst: return n.value;
    case Op::kFeature:
      if (n.slot < 0 || static_cast<std::size_t>(n.slot) >= f.size()) {
        throw EvaluationError(n.name, "transition lacks feature '" + n.name + "'");
      }
      return f[n.slot];
    case Op::kNeg: return -a();
    case Op::kAbs: return std::abs(a());
    case Op::kExp: return std::exp(std::min(a(), kExpArgLimit));
    case Op::kTanh: return std::tanh(a());
    case Op::kAdd: return a() + b();
    case Op::kSub: return a() - b();
    case Op::kMul: return a() * b();
    case Op::kMin: return std::min(a(), b());
    case Op::kMax: return std::max(a(), b());
    case Op::kLt: return a() < b() ? 1.0 : 0.0;
    case Op::kLe: return a() <= b() ? 1.0 : 0.0;
    case Op::kGt: return a() > b() ? 1.0 : 0.0;
    case Op::kGe: return a() >= b() ? 1.0 : 0.0;
    case Op::kEq: return a() == b() ? 1.0 : 0.0;
    case Op::kNe: return a() != b() ? 1.0 : 0.0;
  }
  return 0.0;
}

std::string RewardExpr::print() const {
  std::string out;
  if (root_ >= 0) print_node(root_, out);
  return out;
}

void RewardExpr::print_node(int index, std::string& out) const {
  const Node& n = nodes_[index];
  auto child = [&](int c, int min_prec) {
    const bool wrap = precedence(nodes_[c].op) < min_prec;
    if (wrap) out += '(';
    print_node(c, out);
    if (wrap) out += ')';
  };
  const int p = precedence(n.op);
  switch (n.op) {
    case Op::kConst:
      out += format_number(n.value);
      return;
    case Op::kFeature:
      out += n.name;
      return;
    case Op::kNeg:
      out += '-';
      child(n.lhs, 4);
      return;
    case Op::kAbs: case Op::kExp: case Op::kTanh:
      out += op_name(n.op);
      out += '(';
      print_node(n.lhs, out);
      out += ')';
      return;
    case Op::kMin: case Op::kMax:
      out += op_name(n.op);
      out += '(';
      print_node(n.lhs, out);
      out += ", ";
      print_node(n.rhs, out);
      out += ')';
      return;
    default:
      break;
  }
  // Binary infix: sums and products are left-associative, comparisons do not chain.
  const int lhs_min = p == 1 ? 2 : p;
  const int rhs_min = p + 1;
  child(n.lhs, lhs_min);
  out += ' ';
  out += op_name(n.op);
  out += ' ';
  child(n.rhs, rhs_min);
}

std::vector<std::string> RewardExpr::feature_refs() const {
  std::vector<std::string> out;
  for (const Node& n : nodes_) {
    if (n.op == Op::kFeature && std::find(out.begin(), out.end(), n.name) == out.end()) out.push_back(n.name);
  }
  return out;
}

int RewardExpr::depth_of(int index) const {
  const Node& n = nodes_[index];
  int d = 1;
  if (n.lhs >= 0) d = std::max(d, 1 + depth_of(n.lhs));
  if (n.rhs >= 0) d = std::max(d, 1 + depth_of(n.rhs));
  return d;
}

int RewardExpr::depth() const { return root_ < 0 ? 0 : depth_of(root_); }

bool RewardExpr::same_node(int a, const RewardExpr& other, int b) const {
  const Node& x = nodes_[a];
  const Node& y = other.nodes_[b];
  if (x.op != y.op) return false;
  if (x.op == Op::kConst) return x.value == y.value;
  if (x.op == Op::kFeature) return x.name == y.name;
  if ((x.lhs >= 0) != (y.lhs >= 0) || (x.rhs >= 0) != (y.rhs >= 0)) return false;
  if (x.lhs >= 0 && !same_node(x.lhs, other, y.lhs)) return false;
  if (x.rhs >= 0 && !same_node(x.rhs, other, y.rhs)) return false;
  return true;
}

bool RewardExpr::same_tree(const RewardExpr& other) const {
  if (root_ < 0 || other.root_ < 0) return root_ == other.root_;
  return same_node(root_, other, other.root_);
}

}  // namespace phasedeploy::rewards
