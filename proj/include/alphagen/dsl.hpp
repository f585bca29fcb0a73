#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alphagen/core.hpp"
#include "alphagen/panel.hpp"

namespace alphagen {

// ---------------------------------------------------------------------------
// Operators

enum class Op {
  Abs, Log,
  Add, Sub, Mul, Div, Greater, Less,
  Ref, Mean, Med, Sum, Std, Var, Max, Min, Mad, Delta, WMA, EMA,
  Cov, Corr
};

enum class OpCategory { CrossSection, TimeSeries };

struct OperatorSpec {
  Op op;
  std::string_view name;
  OpCategory category;
  int arity;  // expression operands, not counting the trailing time delta

  bool time_series() const { return category == OpCategory::TimeSeries; }
};

inline constexpr std::array<OperatorSpec, 22> kOperators = {{
    {Op::Abs, "Abs", OpCategory::CrossSection, 1},
    {Op::Log, "Log", OpCategory::CrossSection, 1},
    {Op::Add, "Add", OpCategory::CrossSection, 2},
    {Op::Sub, "Sub", OpCategory::CrossSection, 2},
    {Op::Mul, "Mul", OpCategory::CrossSection, 2},
    {Op::Div, "Div", OpCategory::CrossSection, 2},
    {Op::Greater, "Greater", OpCategory::CrossSection, 2},
    {Op::Less, "Less", OpCategory::CrossSection, 2},
    {Op::Ref, "Ref", OpCategory::TimeSeries, 1},
    {Op::Mean, "Mean", OpCategory::TimeSeries, 1},
    {Op::Med, "Med", OpCategory::TimeSeries, 1},
    {Op::Sum, "Sum", OpCategory::TimeSeries, 1},
    {Op::Std, "Std", OpCategory::TimeSeries, 1},
    {Op::Var, "Var", OpCategory::TimeSeries, 1},
    {Op::Max, "Max", OpCategory::TimeSeries, 1},
    {Op::Min, "Min", OpCategory::TimeSeries, 1},
    {Op::Mad, "Mad", OpCategory::TimeSeries, 1},
    {Op::Delta, "Delta", OpCategory::TimeSeries, 1},
    {Op::WMA, "WMA", OpCategory::TimeSeries, 1},
    {Op::EMA, "EMA", OpCategory::TimeSeries, 1},
    {Op::Cov, "Cov", OpCategory::TimeSeries, 2},
    {Op::Corr, "Corr", OpCategory::TimeSeries, 2},
}};

inline const OperatorSpec& spec_of(Op op) { return kOperators[static_cast<std::size_t>(op)]; }

inline std::optional<Op> op_from_name(std::string_view name) {
  for (const auto& s : kOperators) {
    if (s.name == name) return s.op;
  }
  return std::nullopt;
}

inline constexpr std::array<double, 14> kConstants = {-30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01,
                                                      0.01,  0.5,   1.0,  2.0,  5.0,  10.0, 30.0};
inline constexpr std::array<int, 5> kTimeDeltas = {10, 20, 30, 40, 50};
inline constexpr std::size_t kMaxTokens = 20;

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind { Operator, Feature, Constant, TimeDelta, Begin, Sep };

struct Token {
  TokenKind kind = TokenKind::Begin;
  Op op = Op::Abs;
  Feature feature = Feature::Open;
  double constant = 0.0;
  int delta = 0;

  static Token begin() { return {}; }
  static Token sep() { return {TokenKind::Sep}; }
  static Token of(Op op) { return {TokenKind::Operator, op}; }
  static Token of(Feature f) { return {TokenKind::Feature, Op::Abs, f}; }
  static Token constant_of(double c) { return {TokenKind::Constant, Op::Abs, Feature::Open, c}; }
  static Token days(int d) { return {TokenKind::TimeDelta, Op::Abs, Feature::Open, 0.0, d}; }

  friend bool operator==(const Token& a, const Token& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case TokenKind::Operator: return a.op == b.op;
      case TokenKind::Feature: return a.feature == b.feature;
      case TokenKind::Constant: return a.constant == b.constant;
      case TokenKind::TimeDelta: return a.delta == b.delta;
      default: return true;
    }
  }
};

inline std::string format_constant(double c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", c);
  return buf;
}

/// Compact label used in logs and the vocabulary export.
inline std::string token_label(const Token& t) {
  switch (t.kind) {
    case TokenKind::Operator: return std::string(spec_of(t.op).name);
    case TokenKind::Feature: return "$" + std::string(feature_name(t.feature));
    case TokenKind::Constant: return format_constant(t.constant);
    case TokenKind::TimeDelta: return std::to_string(t.delta) + "d";
    case TokenKind::Begin: return "BEG";
    case TokenKind::Sep: return "SEP";
  }
  return "?";
}

/// Ordered action space. BEG is never an action; SEP always is.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(full_tokens()) {}
  explicit Vocabulary(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
    if (std::find(tokens_.begin(), tokens_.end(), Token::sep()) == tokens_.end()) tokens_.push_back(Token::sep());
  }

  static std::vector<Token> full_tokens() {
    std::vector<Token> t;
    for (const auto& s : kOperators) t.push_back(Token::of(s.op));
    for (Feature f : kAllFeatures) t.push_back(Token::of(f));
    for (double c : kConstants) t.push_back(Token::constant_of(c));
    for (int d : kTimeDeltas) t.push_back(Token::days(d));
    t.push_back(Token::sep());
    return t;
  }

  std::size_t size() const { return tokens_.size(); }
  const Token& operator[](std::size_t i) const { return tokens_[i]; }
  const std::vector<Token>& tokens() const { return tokens_; }

  std::optional<std::size_t> index_of(const Token& t) const {
    auto it = std::find(tokens_.begin(), tokens_.end(), t);
    if (it == tokens_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - tokens_.begin());
  }
  bool contains(const Token& t) const { return index_of(t).has_value(); }

 private:
  std::vector<Token> tokens_;
};

// ---------------------------------------------------------------------------
// Builder stack: type-level replay of a partial RPN sequence

enum class Slot { Expr, Const, Delta };

/// Stack of slot kinds mirroring partial RPN parsing. `Expr` always denotes a
/// feature-bearing subexpression.
class BuilderStack {
 public:
  static constexpr std::size_t kImpossible = static_cast<std::size_t>(-1);

  const std::vector<Slot>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  /// True when appending `t` respects the formal rules: time-series operators
  /// end in a delta, operand arity holds, no multi-token constant subtree,
  /// and SEP only on a single complete expression.
  bool accepts(const Token& t) const {
    const std::size_t n = items_.size();
    auto at = [&](std::size_t from_top) { return items_[n - 1 - from_top]; };
    switch (t.kind) {
      case TokenKind::Feature:
      case TokenKind::Constant:
      case TokenKind::TimeDelta: return true;
      case TokenKind::Begin: return false;
      case TokenKind::Sep: return n == 1 && items_[0] == Slot::Expr;
      case TokenKind::Operator: break;
    }
    const auto& spec = spec_of(t.op);
    if (spec.time_series()) {
      const std::size_t need = static_cast<std::size_t>(spec.arity) + 1;
      if (n < need || at(0) != Slot::Delta) return false;
      for (std::size_t k = 1; k < need; ++k) {
        if (at(k) != Slot::Expr) return false;
      }
      return true;
    }
    if (spec.arity == 1) return n >= 1 && at(0) == Slot::Expr;
    if (n < 2 || at(0) == Slot::Delta || at(1) == Slot::Delta) return false;
    return at(0) == Slot::Expr || at(1) == Slot::Expr;
  }

  /// Applies a token already checked with accepts().
  void push(const Token& t) {
    switch (t.kind) {
      case TokenKind::Feature: items_.push_back(Slot::Expr); return;
      case TokenKind::Constant: items_.push_back(Slot::Const); return;
      case TokenKind::TimeDelta: items_.push_back(Slot::Delta); return;
      case TokenKind::Sep: items_.clear(); return;
      case TokenKind::Begin: return;
      case TokenKind::Operator: break;
    }
    const auto& spec = spec_of(t.op);
    const std::size_t consumed = static_cast<std::size_t>(spec.arity) + (spec.time_series() ? 1 : 0);
    items_.resize(items_.size() - consumed);
    items_.push_back(Slot::Expr);
  }

  /// Fewest tokens (excluding SEP) that reduce this stack to a single
  /// expression, or kImpossible.
  std::size_t min_completion() const { return min_completion(items_); }

  static std::size_t min_completion(const std::vector<Slot>& s) {
    if (s.empty()) return 1;  // push any feature
    const std::size_t n = s.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (s[i] == Slot::Delta) return kImpossible;  // buried delta can never be consumed
    }
    if (s[n - 1] == Slot::Delta) {
      std::size_t best = kImpossible;
      for (std::size_t arity = 1; arity <= 2; ++arity) {
        if (n < arity + 1) continue;
        bool ok = true;
        for (std::size_t k = 1; k <= arity; ++k) ok = ok && s[n - 1 - k] == Slot::Expr;
        if (!ok) continue;
        std::vector<Slot> reduced(s.begin(), s.end() - static_cast<std::ptrdiff_t>(arity + 1));
        reduced.push_back(Slot::Expr);
        const std::size_t rest = min_completion(reduced);
        if (rest != kImpossible) best = std::min(best, 1 + rest);
      }
      return best;
    }
    // Only constants and expressions remain. Every binary merge shrinks the
    // stack by one; a constant on top of a constant (or alone) first needs a
    // feature pushed to pair with.
    if (s[n - 1] == Slot::Const && (n == 1 || s[n - 2] == Slot::Const)) return n + 1;
    return n - 1;
  }

 private:
  std::vector<Slot> items_;
};

// ---------------------------------------------------------------------------
// Expressions

struct Node {
  TokenKind kind = TokenKind::Feature;  // Operator, Feature or Constant
  Op op = Op::Abs;
  Feature feature = Feature::Open;
  double constant = 0.0;
  int window = 0;  // time-series operators only
  std::vector<std::shared_ptr<const Node>> children;
};

/// True iff the subtree contains no feature.
inline bool is_constant_expr(const Node& node) {
  if (node.kind == TokenKind::Feature) return false;
  if (node.kind == TokenKind::Constant) return true;
  return std::all_of(node.children.begin(), node.children.end(),
                     [](const auto& c) { return is_constant_expr(*c); });
}

/// A validated formula: its RPN body (no BEG/SEP) and tree view.
class Expression {
 public:
  Expression(std::vector<Token> rpn, std::shared_ptr<const Node> root)
      : rpn_(std::move(rpn)), root_(std::move(root)) {}

  const std::vector<Token>& rpn() const { return rpn_; }
  const Node& root() const { return *root_; }

  /// Full action sequence including BEG and SEP.
  std::vector<Token> tokens() const {
    std::vector<Token> t{Token::begin()};
    t.insert(t.end(), rpn_.begin(), rpn_.end());
    t.push_back(Token::sep());
    return t;
  }

  /// Space-separated RPN labels; unique per expression.
  std::string key() const {
    std::string out;
    for (const auto& t : rpn_) {
      if (!out.empty()) out += ' ';
      out += token_label(t);
    }
    return out;
  }

  friend bool operator==(const Expression& a, const Expression& b) { return a.rpn_ == b.rpn_; }

 private:
  std::vector<Token> rpn_;
  std::shared_ptr<const Node> root_;
};

/// Token-space rules: vocabulary plus the length cap (BEG and SEP included).
class Grammar {
 public:
  Grammar() = default;
  Grammar(Vocabulary vocab, std::size_t max_tokens, bool restrict_vocabulary = true)
      : vocab_(std::move(vocab)), max_tokens_(max_tokens), restrict_vocabulary_(restrict_vocabulary) {}

  /// Accepts any constant or window value and effectively any length; used to
  /// build expressions for evaluation outside the mining token space.
  static Grammar lenient() { return Grammar(Vocabulary(), static_cast<std::size_t>(1) << 20, false); }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t max_tokens() const { return max_tokens_; }

  /// Replays a prefix that starts with BEG; throws ContractError if the
  /// prefix is not reachable.
  BuilderStack replay(const std::vector<Token>& prefix) const {
    if (prefix.empty() || prefix[0].kind != TokenKind::Begin) throw ContractError("prefix must start with BEG");
    if (prefix.size() > max_tokens_) throw ContractError("prefix exceeds the token cap");
    BuilderStack stack;
    for (std::size_t i = 1; i < prefix.size(); ++i) {
      if (!stack.accepts(prefix[i]) || prefix[i].kind == TokenKind::Sep) {
        throw ContractError("unreachable prefix at token " + std::to_string(i));
      }
      stack.push(prefix[i]);
    }
    return stack;
  }

  /// Mask over the vocabulary of tokens that keep a legal completion within
  /// the cap reachable.
  std::vector<bool> valid_mask(const BuilderStack& stack, std::size_t prefix_len) const {
    std::vector<bool> mask(vocab_.size(), false);
    for (std::size_t i = 0; i < vocab_.size(); ++i) mask[i] = token_allowed(stack, prefix_len, vocab_[i]);
    return mask;
  }

  std::vector<bool> valid_mask(const std::vector<Token>& prefix) const {
    return valid_mask(replay(prefix), prefix.size());
  }

  std::vector<Token> valid_next_tokens(const std::vector<Token>& prefix) const {
    const auto mask = valid_mask(prefix);
    std::vector<Token> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) out.push_back(vocab_[i]);
    }
    return out;
  }

  bool token_allowed(const BuilderStack& stack, std::size_t prefix_len, const Token& t) const {
    if (!stack.accepts(t)) return false;
    if (prefix_len + 1 > max_tokens_) return false;
    if (t.kind == TokenKind::Sep) return true;
    BuilderStack next = stack;
    next.push(t);
    const std::size_t rest = next.min_completion();
    return rest != BuilderStack::kImpossible && prefix_len + 1 + rest + 1 <= max_tokens_;
  }

  /// Parses a BEG ... SEP sequence into an expression.
  Expression parse_rpn(const std::vector<Token>& tokens) const;

 private:
  Vocabulary vocab_;
  std::size_t max_tokens_ = kMaxTokens;
  bool restrict_vocabulary_ = true;
};

inline Expression Grammar::parse_rpn(const std::vector<Token>& tokens) const {
  auto fail = [](std::size_t index, const std::string& why) -> ParseError {
    return ParseError("token " + std::to_string(index) + ": " + why, index);
  };
  if (tokens.empty() || tokens.front().kind != TokenKind::Begin) throw fail(0, "sequence must start with BEG");
  if (tokens.size() > max_tokens_) {
    throw fail(max_tokens_, "sequence longer than " + std::to_string(max_tokens_) + " tokens");
  }
  std::vector<std::shared_ptr<const Node>> nodes;  // Delta slots hold window-only nodes
  BuilderStack stack;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (t.kind == TokenKind::Begin) throw fail(i, "unexpected BEG");
    if (restrict_vocabulary_ && t.kind != TokenKind::Sep && !vocab_.contains(t)) {
      throw fail(i, "token '" + token_label(t) + "' is not in the vocabulary");
    }
    if (t.kind == TokenKind::Sep) {
      if (i + 1 != tokens.size()) throw fail(i, "SEP before end of sequence");
      if (stack.size() == 1 && stack.items()[0] == Slot::Const) {
        throw fail(i, "expression is constant-valued");
      }
      if (!stack.accepts(t)) throw fail(i, "SEP requires exactly one complete expression, stack holds " +
                                               std::to_string(stack.size()) + " items");
      std::vector<Token> body(tokens.begin() + 1, tokens.end() - 1);
      return Expression(std::move(body), nodes.back());
    }
    if (t.kind == TokenKind::TimeDelta && t.delta < 1) throw fail(i, "time delta must be positive");
    if (!stack.accepts(t)) {
      const auto& spec = spec_of(t.op);
      const auto& items = stack.items();
      const std::size_t need = static_cast<std::size_t>(spec.arity) + (spec.time_series() ? 1 : 0);
      if (spec.time_series() && (items.empty() || items.back() != Slot::Delta)) {
        throw fail(i, std::string(spec.name) + " needs a time delta as its last operand");
      }
      if (items.size() < need) throw fail(i, std::string(spec.name) + ": not enough operands");
      throw fail(i, std::string(spec.name) + ": operands are constant-valued or mistyped");
    }
    auto node = std::make_shared<Node>();
    switch (t.kind) {
      case TokenKind::Feature:
        node->kind = TokenKind::Feature;
        node->feature = t.feature;
        break;
      case TokenKind::Constant:
        node->kind = TokenKind::Constant;
        node->constant = t.constant;
        break;
      case TokenKind::TimeDelta:
        node->kind = TokenKind::TimeDelta;
        node->window = t.delta;
        break;
      default: {
        const auto& spec = spec_of(t.op);
        node->kind = TokenKind::Operator;
        node->op = t.op;
        if (spec.time_series()) {
          node->window = nodes.back()->window;
          nodes.pop_back();
        }
        node->children.assign(nodes.end() - spec.arity, nodes.end());
        nodes.resize(nodes.size() - static_cast<std::size_t>(spec.arity));
      }
    }
    stack.push(t);
    nodes.push_back(std::move(node));
  }
  throw fail(tokens.size(), "sequence must end with SEP");
}

inline Expression parse_rpn(const std::vector<Token>& tokens) { return Grammar().parse_rpn(tokens); }

// ---------------------------------------------------------------------------
// Infix text form: $feature, constants, Name(arg,...[,window])

inline std::string to_infix_string(const Node& node) {
  switch (node.kind) {
    case TokenKind::Feature: return "$" + std::string(feature_name(node.feature));
    case TokenKind::Constant: return format_constant(node.constant);
    default: break;
  }
  const auto& spec = spec_of(node.op);
  std::string out(spec.name);
  out += '(';
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    if (i) out += ',';
    out += to_infix_string(*node.children[i]);
  }
  if (spec.time_series()) out += "," + std::to_string(node.window);
  out += ')';
  return out;
}

inline std::string to_infix_string(const Expression& e) { return to_infix_string(e.root()); }

namespace detail {

class InfixReader {
 public:
  explicit InfixReader(std::string_view text) : text_(text) {}

  std::vector<Token> read() {
    std::vector<Token> out{Token::begin()};
    expression(out);
    skip_space();
    if (pos_ != text_.size()) throw error("unexpected trailing text");
    out.push_back(Token::sep());
    return out;
  }

 private:
  ParseError error(const std::string& why) const {
    return ParseError("column " + std::to_string(pos_ + 1) + ": " + why, pos_);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool consume(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) throw error(std::string("expected '") + c + "'");
  }

  std::string_view identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  double number() {
    skip_space();
    const std::size_t start = pos_;
    if (pos_ < text_.size() && (text_[pos_] == '-' || text_[pos_] == '+')) ++pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' || text_[pos_] == 'e' ||
            text_[pos_] == 'E' ||
            ((text_[pos_] == '-' || text_[pos_] == '+') && (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))) {
      ++pos_;
    }
    const std::string literal(text_.substr(start, pos_ - start));
    if (literal.empty()) throw error("expected a number");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(literal, &used);
    } catch (const std::exception&) {
      throw error("bad number '" + literal + "'");
    }
    if (used != literal.size()) throw error("bad number '" + literal + "'");
    return v;
  }

  void expression(std::vector<Token>& out) {
    skip_space();
    if (pos_ >= text_.size()) throw error("unexpected end of input");
    const char c = text_[pos_];
    if (c == '$') {
      ++pos_;
      const auto name = identifier();
      const auto f = feature_from_name(name);
      if (!f) throw error("unknown feature '$" + std::string(name) + "'");
      out.push_back(Token::of(*f));
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
      out.push_back(Token::constant_of(number()));
      return;
    }
    const auto name = identifier();
    if (name.empty()) throw error(std::string("unexpected character '") + c + "'");
    const auto op = op_from_name(name);
    if (!op) throw error("unknown operator '" + std::string(name) + "'");
    const auto& spec = spec_of(*op);
    expect('(');
    for (int a = 0; a < spec.arity; ++a) {
      if (a) expect(',');
      expression(out);
    }
    if (spec.time_series()) {
      expect(',');
      const double w = number();
      if (w != static_cast<double>(static_cast<int>(w)) || w < 1) throw error("window must be a positive integer");
      out.push_back(Token::days(static_cast<int>(w)));
    }
    expect(')');
    out.push_back(Token::of(*op));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Tokenizes canonical infix text into a BEG ... SEP sequence.
inline std::vector<Token> tokenize_infix(std::string_view text) { return detail::InfixReader(text).read(); }

inline Expression parse_infix(std::string_view text, const Grammar& grammar = Grammar()) {
  return grammar.parse_rpn(tokenize_infix(text));
}

}  // namespace alphagen
