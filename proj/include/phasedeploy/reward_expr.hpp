#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace phasedeploy::rewards {

// Expression language for candidate rewards loaded from pool files.
//
//   expr    := sum [cmp sum]          cmp in  <  <=  >  >=  ==  !=
//   sum     := product {(+|-) product}
//   product := unary {* unary}
//   unary   := - unary | primary
//   primary := number | feature | func ( expr {, expr} ) | ( expr )
//   func    := abs | exp | tanh (one argument) | min | max (two arguments)
//
// Comparisons evaluate to 1.0 or 0.0. There is no division and no iteration,
// so every well-formed expression over finite features is total. Numeric
// literals are nonnegative; negation is always an explicit node.
class RewardExpr {
 public:
  enum class Op {
    kConst, kFeature,
    kNeg, kAbs, kExp, kTanh,
    kAdd, kSub, kMul, kMin, kMax,
    kLt, kLe, kGt, kGe, kEq, kNe,
  };

  static constexpr int kMaxDepth = 32;

  // Parses `text`. When `features` is given every identifier must name one of
  // them (kUnknownIdentifier otherwise) and the result is bound to that order.
  // Throws ParseError carrying the byte offset of the problem.
  static RewardExpr parse(std::string_view text,
                          std::optional<std::span<const std::string>> features = std::nullopt);

  static RewardExpr constant(double value);
  static RewardExpr feature(std::string name);
  static RewardExpr unary(Op op, const RewardExpr& child);
  static RewardExpr binary(Op op, const RewardExpr& lhs, const RewardExpr& rhs);

  // Canonical text: minimal parentheses, single spaces around binary
  // operators, shortest round-trip numerals. parse(print()) reproduces the tree.
  std::string print() const;

  // Resolves feature references against `names`; throws EvaluationError
  // naming the first missing feature.
  RewardExpr bound(std::span<const std::string> names) const;
  bool is_bound() const { return bound_; }

  // Requires a bound expression; `features` aligned with the bound names.
  // Throws EvaluationError if a feature slot is missing or the value is not finite.
  double eval(std::span<const double> features) const;

  std::vector<std::string> feature_refs() const;
  int depth() const;
  std::size_t node_count() const { return nodes_.size(); }

  // Structural equality (ignores binding).
  bool same_tree(const RewardExpr& other) const;

 private:
  struct Node {
    Op op = Op::kConst;
    double value = 0.0;
    std::string name;
    int lhs = -1;
    int rhs = -1;
    int slot = -1;
  };

  friend class ExprParser;

  int append(const RewardExpr& sub);
  double eval_node(int index, std::span<const double> features) const;
  void print_node(int index, std::string& out) const;
  int depth_of(int index) const;
  bool same_node(int a, const RewardExpr& other, int b) const;

  std::vector<Node> nodes_;
  int root_ = -1;
  bool bound_ = false;
};

std::string_view op_name(RewardExpr::Op op);

}  // namespace phasedeploy::rewards
