#include "lrmtrace/core.hpp"

#include "lrmtrace/errors.hpp"

#include <algorithm>
#include <cctype>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

namespace lrmtrace {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

constexpr std::string_view kUnicodeMinus = "\xE2\x88\x92"; // U+2212
constexpr std::string_view kTimes = "\xC3\x97";            // U+00D7
constexpr std::string_view kDivide = "\xC3\xB7";           // U+00F7
constexpr std::string_view kLeftGuillemet = "\xC2\xAB";
constexpr std::string_view kRightGuillemet = "\xC2\xBB";

std::optional<std::int64_t> parse_digits(std::string_view digits) {
    // strip leading zeros, keep at least one digit
    std::size_t i = 0;
    while (i + 1 < digits.size() && digits[i] == '0') ++i;
    digits.remove_prefix(i);
    if (digits.empty() || digits.size() > 18) return std::nullopt;
    std::int64_t v = 0;
    for (char c : digits) {
        if (!is_digit(c)) return std::nullopt;
        v = v * 10 + (c - '0');
    }
    return v;
}

bool is_thousands_grouped(std::string_view s) {
    const auto first_comma = s.find(',');
    if (first_comma == std::string_view::npos || first_comma == 0 || first_comma > 3) return false;
    for (std::size_t i = 0; i < first_comma; ++i)
        if (!is_digit(s[i])) return false;
    std::size_t i = first_comma;
    while (i < s.size()) {
        if (s[i] != ',' || i + 4 > s.size()) return false;
        for (std::size_t j = i + 1; j < i + 4; ++j)
            if (!is_digit(s[j])) return false;
        i += 4;
    }
    return true;
}

std::string strip_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != ',') out.push_back(c);
    return out;
}

} // namespace

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::optional<std::int64_t> normalize_number_token(std::string_view token) {
    std::string_view s = trim(token);
    if (!s.empty() && s.front() == '$') s.remove_prefix(1);
    if (!s.empty() && s.back() == '%') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.find('-') != std::string_view::npos || s.find('+') != std::string_view::npos ||
        s.find(kUnicodeMinus) != std::string_view::npos)
        return std::nullopt;

    if (s.find(',') != std::string_view::npos) {
        if (!is_thousands_grouped(s)) return std::nullopt;
        return parse_digits(strip_commas(s));
    }

    const auto dot = s.find('.');
    if (dot == std::string_view::npos) {
        if (!std::all_of(s.begin(), s.end(), is_digit)) return std::nullopt;
        return parse_digits(s);
    }
    if (s.find('.', dot + 1) != std::string_view::npos) return std::nullopt;
    const std::string_view whole = s.substr(0, dot);
    const std::string_view frac = s.substr(dot + 1);
    if (whole.empty() && frac.empty()) return std::nullopt;
    if (!std::all_of(whole.begin(), whole.end(), is_digit) ||
        !std::all_of(frac.begin(), frac.end(), is_digit))
        return std::nullopt;
    for (std::string_view run : {whole, frac}) {
        if (run.empty()) continue;
        auto v = parse_digits(run);
        if (!v) return std::nullopt;
        if (*v != 0) return v;
    }
    return 0;
}

std::string canonical_answer(std::string_view answer) {
    if (auto v = normalize_number_token(answer)) return std::to_string(*v);
    return std::string(trim(answer));
}

bool answers_equal(std::string_view a, std::string_view b) { return canonical_answer(a) == canonical_answer(b); }

bool token_matches_number(const ProjectionEntry& entry, std::int64_t target) {
    auto v = normalize_number_token(entry.token);
    return v && *v == target;
}

std::optional<RankedInteger> top_integer(std::span<const ProjectionEntry> position) {
    std::optional<RankedInteger> best;
    for (const auto& e : position) {
        auto v = normalize_number_token(e.token);
        if (!v) continue;
        if (!best || e.rank < best->rank) best = RankedInteger{*v, e.rank};
    }
    return best;
}

std::vector<RankedInteger> integers_in_top_k(std::span<const ProjectionEntry> position, int k) {
    std::vector<RankedInteger> out;
    for (const auto& e : position) {
        if (e.rank > k) continue;
        auto v = normalize_number_token(e.token);
        if (!v) continue;
        auto it = std::find_if(out.begin(), out.end(), [&](const RankedInteger& r) { return r.value == *v; });
        if (it == out.end()) {
            out.push_back({*v, e.rank});
        } else if (e.rank < it->rank) {
            it->rank = e.rank;
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
    return out;
}

std::optional<int> rank_of(std::span<const ProjectionEntry> position, std::int64_t value, int k) {
    std::optional<int> best;
    for (const auto& e : position) {
        if (e.rank > k || !token_matches_number(e, value)) continue;
        if (!best || e.rank < *best) best = e.rank;
    }
    return best;
}

// ----------------------------------------------------------------------------
// Rational
// ----------------------------------------------------------------------------

std::optional<Rational> Rational::make(std::int64_t n, std::int64_t d) {
    if (d == 0) return std::nullopt;
    if (d < 0) {
        if (n == INT64_MIN || d == INT64_MIN) return std::nullopt;
        n = -n;
        d = -d;
    }
    const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    Rational r;
    r.num = g ? n / g : 0;
    r.den = g ? d / g : 1;
    if (r.num == 0) r.den = 1;
    return r;
}

std::string Rational::to_string() const {
    if (den == 1) return std::to_string(num);
    // terminating decimal iff den has only factors 2 and 5
    std::int64_t d = den;
    int twos = 0, fives = 0;
    while (d % 2 == 0) { d /= 2; ++twos; }
    while (d % 5 == 0) { d /= 5; ++fives; }
    if (d != 1) return std::to_string(num) + "/" + std::to_string(den);
    const int digits = std::max(twos, fives);
    std::int64_t scale = 1;
    for (int i = 0; i < digits; ++i) scale *= 10;
    const bool negative = num < 0;
    const std::int64_t a = negative ? -num : num;
    const std::int64_t scaled = a * (scale / den);
    std::string frac = std::to_string(scaled % scale);
    frac.insert(0, static_cast<std::size_t>(digits) - frac.size(), '0');
    return (negative ? "-" : "") + std::to_string(scaled / scale) + "." + frac;
}

std::optional<Rational> Rational::parse(std::string_view text) {
    std::string_view s = trim(text);
    if (s.empty()) return std::nullopt;
    std::string cleaned;
    if (s.find(',') != std::string_view::npos) {
        const auto dot = s.find('.');
        if (!is_thousands_grouped(s.substr(0, dot))) return std::nullopt;
        cleaned = strip_commas(s);
        s = cleaned;
    }
    const auto dot = s.find('.');
    std::string_view whole = s.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
    if (whole.empty() && frac.empty()) return std::nullopt;
    if (!std::all_of(whole.begin(), whole.end(), is_digit) || !std::all_of(frac.begin(), frac.end(), is_digit))
        return std::nullopt;
    if (whole.size() + frac.size() > 18) return std::nullopt;
    std::int64_t n = 0;
    for (char c : whole) n = n * 10 + (c - '0');
    std::int64_t d = 1;
    for (char c : frac) {
        n = n * 10 + (c - '0');
        d *= 10;
    }
    return Rational::make(n, d);
}

std::optional<Rational> checked_add(Rational a, Rational b) {
    std::int64_t x, y, n, d;
    if (__builtin_mul_overflow(a.num, b.den, &x) || __builtin_mul_overflow(b.num, a.den, &y) ||
        __builtin_add_overflow(x, y, &n) || __builtin_mul_overflow(a.den, b.den, &d))
        return std::nullopt;
    return Rational::make(n, d);
}

std::optional<Rational> checked_sub(Rational a, Rational b) {
    if (b.num == INT64_MIN) return std::nullopt;
    Rational negated;
    negated.num = -b.num;
    negated.den = b.den;
    return checked_add(a, negated);
}

std::optional<Rational> checked_mul(Rational a, Rational b) {
    std::int64_t n, d;
    if (__builtin_mul_overflow(a.num, b.num, &n) || __builtin_mul_overflow(a.den, b.den, &d)) return std::nullopt;
    return Rational::make(n, d);
}

std::optional<Rational> checked_div(Rational a, Rational b) {
    if (b.num == 0) return std::nullopt;
    std::int64_t n, d;
    if (__builtin_mul_overflow(a.num, b.den, &n) || __builtin_mul_overflow(a.den, b.num, &d)) return std::nullopt;
    return Rational::make(n, d);
}

// ----------------------------------------------------------------------------
// Operators and steps
// ----------------------------------------------------------------------------

char op_symbol(Op op) { return static_cast<char>(op); }

std::optional<Op> op_from_symbol(std::string_view sym) {
    if (sym == "+") return Op::add;
    if (sym == "-" || sym == kUnicodeMinus) return Op::sub;
    if (sym == "*" || sym == "x" || sym == kTimes) return Op::mul;
    if (sym == "/" || sym == kDivide) return Op::div;
    return std::nullopt;
}

std::optional<Rational> apply_op(Op op, Rational a, Rational b) {
    switch (op) {
    case Op::add: return checked_add(a, b);
    case Op::sub: return checked_sub(a, b);
    case Op::mul: return checked_mul(a, b);
    case Op::div: return checked_div(a, b);
    }
    return std::nullopt;
}

std::string_view to_string(OperandSource s) {
    switch (s) {
    case OperandSource::question: return "question";
    case OperandSource::intermediate: return "intermediate";
    case OperandSource::topk_lattice: return "topk-lattice";
    }
    return "?";
}

std::optional<OperandSource> operand_source_from_string(std::string_view s) {
    if (s == "question") return OperandSource::question;
    if (s == "intermediate") return OperandSource::intermediate;
    if (s == "topk-lattice") return OperandSource::topk_lattice;
    return std::nullopt;
}

namespace {

const Postfix kTwoOperand = {0, 1, -1};
const Postfix kLeftFirst = {0, 1, -1, 2, -2};
const Postfix kRightFirst = {0, 1, 2, -2, -1};

int precedence(Op op) { return (op == Op::add || op == Op::sub) ? 1 : 2; }

struct ExprNode {
    int operand = -1; // leaf when >= 0
    int op_index = -1;
    std::unique_ptr<ExprNode> left, right;
};

std::unique_ptr<ExprNode> build_tree(const Postfix& order, std::size_t n_operands, std::size_t n_ops) {
    std::vector<std::unique_ptr<ExprNode>> stack;
    for (auto item : order) {
        auto node = std::make_unique<ExprNode>();
        if (item >= 0) {
            if (static_cast<std::size_t>(item) >= n_operands) return nullptr;
            node->operand = item;
        } else {
            const auto idx = static_cast<std::size_t>(-(item + 1));
            if (idx >= n_ops || stack.size() < 2) return nullptr;
            node->op_index = static_cast<int>(idx);
            node->right = std::move(stack.back());
            stack.pop_back();
            node->left = std::move(stack.back());
            stack.pop_back();
        }
        stack.push_back(std::move(node));
    }
    if (stack.size() != 1) return nullptr;
    return std::move(stack.back());
}

template <typename Value, typename Combine>
std::optional<Value> eval_postfix(const ReasoningStep& step, std::span<const Value> values, Combine combine) {
    std::vector<Value> stack;
    for (auto item : step.order) {
        if (item >= 0) {
            const auto i = static_cast<std::size_t>(item);
            if (i >= values.size()) return std::nullopt;
            stack.push_back(values[i]);
            continue;
        }
        const auto oi = static_cast<std::size_t>(-(item + 1));
        if (oi >= step.operators.size() || stack.size() < 2) return std::nullopt;
        Value b = stack.back();
        stack.pop_back();
        Value a = stack.back();
        stack.pop_back();
        auto r = combine(step.operators[oi], a, b);
        if (!r) return std::nullopt;
        stack.push_back(*r);
    }
    if (stack.size() != 1) return std::nullopt;
    return stack.back();
}

} // namespace

ReasoningStep ReasoningStep::make(std::vector<std::int64_t> operands, std::vector<Op> operators,
                                  std::int64_t result, Grouping grouping) {
    ReasoningStep s;
    if (operands.size() == 2) {
        s.order = kTwoOperand;
    } else if (operands.size() == 3) {
        s.order = grouping == Grouping::left_first ? kLeftFirst : kRightFirst;
    } else {
        throw InvalidTrace("a constructed step needs 2 or 3 operands");
    }
    if (operators.size() + 1 != operands.size()) throw InvalidTrace("operator count must be operand count - 1");
    s.exact_operands.assign(operands.begin(), operands.end());
    s.operands = std::move(operands);
    s.operators = std::move(operators);
    s.result = result;
    s.exact_result = result;
    s.operand_sources.assign(s.operands.size(), OperandSource::topk_lattice);
    return s;
}

std::optional<Grouping> ReasoningStep::grouping() const {
    if (order == kLeftFirst || order == kTwoOperand) return Grouping::left_first;
    if (order == kRightFirst) return Grouping::right_first;
    return std::nullopt;
}

std::optional<Rational> evaluate(const ReasoningStep& step) {
    return eval_postfix<Rational>(step, std::span<const Rational>(step.exact_operands),
                                  [](Op op, Rational a, Rational b) { return apply_op(op, a, b); });
}

std::optional<std::int64_t> evaluate_integral(const ReasoningStep& step, std::span<const std::int64_t> operands) {
    return eval_postfix<std::int64_t>(step, operands, [](Op op, std::int64_t a, std::int64_t b) -> std::optional<std::int64_t> {
        std::int64_t r = 0;
        switch (op) {
        case Op::add:
            if (__builtin_add_overflow(a, b, &r)) return std::nullopt;
            break;
        case Op::sub: r = a - b; break;
        case Op::mul:
            if (__builtin_mul_overflow(a, b, &r)) return std::nullopt;
            break;
        case Op::div:
            if (b == 0 || a % b != 0) return std::nullopt;
            r = a / b;
            break;
        }
        if (r < 0) return std::nullopt;
        return r;
    });
}

bool is_arithmetically_valid(const ReasoningStep& step) {
    if (step.operands.size() < 2 || step.exact_operands.size() != step.operands.size()) return false;
    for (const auto& v : step.exact_operands)
        if (v.num < 0) return false;
    if (step.exact_result.num < 0) return false;
    auto v = evaluate(step);
    return v && *v == step.exact_result;
}

namespace {

void render_node(const ExprNode& node, const ReasoningStep& step, std::string& out) {
    if (node.operand >= 0) {
        out += step.exact_operands[static_cast<std::size_t>(node.operand)].to_string();
        return;
    }
    const Op op = step.operators[static_cast<std::size_t>(node.op_index)];
    auto child_prec = [&](const ExprNode& c) {
        return c.operand >= 0 ? 3 : precedence(step.operators[static_cast<std::size_t>(c.op_index)]);
    };
    const bool paren_left = child_prec(*node.left) < precedence(op);
    const bool paren_right = child_prec(*node.right) <= precedence(op);
    if (paren_left) out += '(';
    render_node(*node.left, step, out);
    if (paren_left) out += ')';
    out += op_symbol(op);
    if (paren_right) out += '(';
    render_node(*node.right, step, out);
    if (paren_right) out += ')';
}

// Recursive-descent parser for "expr = number".
class StepParser {
public:
    explicit StepParser(std::string_view text) : text_(text) {}

    ReasoningStep parse() {
        auto tree = parse_expr();
        skip_space();
        if (!consume("=")) fail("expected '='");
        skip_space();
        const auto result_text = take_number();
        if (!result_text) fail("expected a result number");
        skip_space();
        if (pos_ != text_.size()) fail("trailing characters");

        ReasoningStep step;
        emit(*tree, step.order);
        step.operators = operators_;
        step.exact_operands = values_;
        for (const auto& lit : literals_) {
            auto key = normalize_number_token(lit);
            if (!key) fail("operand '" + lit + "' has no integer key");
            step.operands.push_back(*key);
        }
        auto rv = Rational::parse(*result_text);
        auto rk = normalize_number_token(*result_text);
        if (!rv || !rk) fail("bad result literal");
        step.exact_result = *rv;
        step.result = *rk;
        step.operand_sources.assign(step.operands.size(), OperandSource::topk_lattice);
        if (step.operands.size() < 2) fail("a step needs at least one operator");
        if (step.operands.size() > 64) fail("too many operands");
        return step;
    }

private:
    [[noreturn]] void fail(const std::string& why) const {
        throw ParseError("cannot parse step '" + std::string(text_) + "': " + why);
    }

    void skip_space() {
        while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
    }

    bool consume(std::string_view tok) {
        if (text_.substr(pos_, tok.size()) == tok) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }

    std::optional<std::string> take_number() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && (is_digit(text_[pos_]) || text_[pos_] == '.' || text_[pos_] == ',')) ++pos_;
        if (pos_ == start) return std::nullopt;
        return std::string(text_.substr(start, pos_ - start));
    }

    std::optional<Op> peek_op(bool additive) {
        skip_space();
        for (std::string_view sym : {"+", "-", "\xE2\x88\x92", "*", "x", "\xC3\x97", "/", "\xC3\xB7"}) {
            if (text_.substr(pos_, sym.size()) != sym) continue;
            auto op = op_from_symbol(sym);
            if ((precedence(*op) == 1) != additive) return std::nullopt;
            pos_ += sym.size();
            return op;
        }
        return std::nullopt;
    }

    // Operators are recorded in textual order, so binary() must run when the
    // operator is read; the right operand is parsed afterwards.
    std::unique_ptr<ExprNode> parse_expr() {
        auto lhs = parse_term();
        while (auto op = peek_op(true)) {
            const int idx = static_cast<int>(operators_.size());
            operators_.push_back(*op);
            auto rhs = parse_term();
            auto node = std::make_unique<ExprNode>();
            node->op_index = idx;
            node->left = std::move(lhs);
            node->right = std::move(rhs);
            lhs = std::move(node);
        }
        return lhs;
    }

    std::unique_ptr<ExprNode> parse_term() {
        auto lhs = parse_factor();
        while (auto op = peek_op(false)) {
            const int idx = static_cast<int>(operators_.size());
            operators_.push_back(*op);
            auto rhs = parse_factor();
            auto node = std::make_unique<ExprNode>();
            node->op_index = idx;
            node->left = std::move(lhs);
            node->right = std::move(rhs);
            lhs = std::move(node);
        }
        return lhs;
    }

    std::unique_ptr<ExprNode> parse_factor() {
        skip_space();
        if (consume("(")) {
            auto inner = parse_expr();
            skip_space();
            if (!consume(")")) fail("expected ')'");
            return inner;
        }
        auto lit = take_number();
        if (!lit) fail("expected a number");
        auto value = Rational::parse(*lit);
        if (!value) fail("bad number '" + *lit + "'");
        auto node = std::make_unique<ExprNode>();
        node->operand = static_cast<int>(values_.size());
        values_.push_back(*value);
        literals_.push_back(*lit);
        return node;
    }

    static void emit(const ExprNode& node, Postfix& out) {
        if (node.operand >= 0) {
            out.push_back(static_cast<std::int8_t>(node.operand));
            return;
        }
        emit(*node.left, out);
        emit(*node.right, out);
        out.push_back(static_cast<std::int8_t>(-(node.op_index + 1)));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::vector<Op> operators_;
    std::vector<Rational> values_;
    std::vector<std::string> literals_;
};

std::string_view strip_delimiters(std::string_view s) {
    s = trim(s);
    if (s.substr(0, kLeftGuillemet.size()) == kLeftGuillemet) s.remove_prefix(kLeftGuillemet.size());
    if (s.size() >= kRightGuillemet.size() && s.substr(s.size() - kRightGuillemet.size()) == kRightGuillemet)
        s.remove_suffix(kRightGuillemet.size());
    if (s.substr(0, 2) == "<<") s.remove_prefix(2);
    if (s.size() >= 2 && s.substr(s.size() - 2) == ">>") s.remove_suffix(2);
    return trim(s);
}

// Canonical key construction: flatten +/- and */÷ chains into sorted signed
// term lists so that regroupings and reorderings of one family coincide.
std::string canonical_node(const ExprNode& node, const ReasoningStep& step);

void collect_terms(const ExprNode& node, const ReasoningStep& step, int family, bool inverted,
                   std::vector<std::string>& pos, std::vector<std::string>& neg) {
    if (node.operand < 0) {
        const Op op = step.operators[static_cast<std::size_t>(node.op_index)];
        if (precedence(op) == family) {
            const bool inverse_op = (op == Op::sub || op == Op::div);
            collect_terms(*node.left, step, family, inverted, pos, neg);
            collect_terms(*node.right, step, family, inverted != inverse_op, pos, neg);
            return;
        }
    }
    (inverted ? neg : pos).push_back(canonical_node(node, step));
}

std::string canonical_node(const ExprNode& node, const ReasoningStep& step) {
    if (node.operand >= 0) return step.exact_operands[static_cast<std::size_t>(node.operand)].to_string();
    const int family = precedence(step.operators[static_cast<std::size_t>(node.op_index)]);
    std::vector<std::string> pos, neg;
    collect_terms(node, step, family, false, pos, neg);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    std::string out = family == 1 ? "S(" : "P(";
    for (const auto& t : pos) out += "+" + t + ",";
    for (const auto& t : neg) out += (family == 1 ? "-" : "/") + t + ",";
    out += ")";
    return out;
}

} // namespace

std::string render(const ReasoningStep& step) {
    auto tree = build_tree(step.order, step.exact_operands.size(), step.operators.size());
    if (!tree) throw InvalidTrace("malformed step structure");
    std::string out;
    render_node(*tree, step, out);
    out += '=';
    out += step.exact_result.to_string();
    return out;
}

ReasoningStep parse_step(std::string_view text) {
    return StepParser(strip_delimiters(text)).parse();
}

std::string canonical_key(const ReasoningStep& step) {
    auto tree = build_tree(step.order, step.exact_operands.size(), step.operators.size());
    if (!tree) throw InvalidTrace("malformed step structure");
    return canonical_node(*tree, step) + "=" + step.exact_result.to_string();
}

bool same_computation(const ReasoningStep& a, const ReasoningStep& b) { return canonical_key(a) == canonical_key(b); }

void annotate_sources(ReasoningTrace& trace, std::span<const std::int64_t> question_numbers) {
    std::set<std::int64_t> produced;
    for (auto& step : trace.steps) {
        step.operand_sources.resize(step.operands.size());
        for (std::size_t i = 0; i < step.operands.size(); ++i) {
            const auto v = step.operands[i];
            if (produced.count(v)) {
                step.operand_sources[i] = OperandSource::intermediate;
            } else if (std::find(question_numbers.begin(), question_numbers.end(), v) != question_numbers.end()) {
                step.operand_sources[i] = OperandSource::question;
            } else {
                step.operand_sources[i] = OperandSource::topk_lattice;
            }
        }
        produced.insert(step.result);
    }
}

ReasoningTrace parse_trace(std::span<const std::string> steps, std::span<const std::int64_t> question_numbers) {
    ReasoningTrace trace;
    for (const auto& s : steps) trace.steps.push_back(parse_step(s));
    annotate_sources(trace, question_numbers);
    return trace;
}

std::vector<std::string> render_trace(const ReasoningTrace& trace) {
    std::vector<std::string> out;
    for (const auto& s : trace.steps) out.push_back(render(s));
    return out;
}

// ----------------------------------------------------------------------------
// Question numbers
// ----------------------------------------------------------------------------

std::vector<NumberMention> find_number_mentions(std::string_view text) {
    std::vector<NumberMention> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i]) || (i > 0 && (is_digit(text[i - 1]) || text[i - 1] == '.'))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_digit(text[j])) ++j;
        // thousands groups
        if (j - i <= 3) {
            while (j + 3 < text.size() && text[j] == ',' && is_digit(text[j + 1]) && is_digit(text[j + 2]) &&
                   is_digit(text[j + 3]) && (j + 4 == text.size() || !is_digit(text[j + 4])))
                j += 4;
        }
        if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
            ++j;
            while (j < text.size() && is_digit(text[j])) ++j;
        }
        NumberMention m;
        m.surface = std::string(text.substr(i, j - i));
        auto v = Rational::parse(m.surface);
        if (j < text.size() && text[j] == '%') {
            m.percent = true;
            ++j;
        }
        if (v) {
            m.value = *v;
            out.push_back(std::move(m));
        }
        i = j;
    }
    return out;
}

std::vector<std::int64_t> extract_question_numbers(std::string_view text) {
    std::vector<std::int64_t> out;
    auto push = [&](std::int64_t v) {
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    };
    for (const auto& m : find_number_mentions(text)) {
        if (auto key = normalize_number_token(m.surface)) push(*key);
        if (m.percent) push(100);
    }
    return out;
}

// ----------------------------------------------------------------------------
// Records
// ----------------------------------------------------------------------------

const Projection& ProjectionRecord::position(int index) const {
    if (index == num_latent_positions) return answer_projections;
    if (index < 0 || index >= static_cast<int>(latent_projections.size()))
        throw InvalidRecord("position " + std::to_string(index) + " out of range in " + instance_id);
    return latent_projections[static_cast<std::size_t>(index)];
}

int ProjectionRecord::top_k() const {
    if (!latent_projections.empty()) return static_cast<int>(latent_projections.front().size());
    return static_cast<int>(answer_projections.size());
}

namespace {

void validate_projection(const Projection& p, bool normalized, const std::string& where) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].rank != static_cast<int>(i) + 1)
            throw InvalidRecord(where + ": ranks must be contiguous from 1 in order");
        if (normalized) {
            if (p[i].score < 0.0 || p[i].score > 1.0) throw InvalidRecord(where + ": normalized score outside [0,1]");
            if (i > 0 && p[i].score > p[i - 1].score) throw InvalidRecord(where + ": scores increase with rank");
        }
    }
}

} // namespace

void validate_record(const ProjectionRecord& record) {
    const std::string& id = record.instance_id;
    if (record.num_latent_positions < 0) throw InvalidRecord(id + ": negative latent count");
    if (static_cast<int>(record.latent_projections.size()) != record.num_latent_positions)
        throw InvalidRecord(id + ": latent_projections length differs from num_latent_positions");
    const std::size_t k = record.latent_projections.empty() ? 0 : record.latent_projections.front().size();
    for (std::size_t p = 0; p < record.latent_projections.size(); ++p) {
        if (record.latent_projections[p].size() != k) throw InvalidRecord(id + ": latent positions differ in k");
        validate_projection(record.latent_projections[p], record.normalized, id + " latent " + std::to_string(p));
    }
    validate_projection(record.answer_projections, record.normalized, id + " answer");
    if (record.per_budget_answers) {
        const auto& m = *record.per_budget_answers;
        for (int l = 0; l <= record.num_latent_positions; ++l)
            if (!m.count(l)) throw InvalidRecord(id + ": per_budget_answers missing budget " + std::to_string(l));
        if (m.size() != static_cast<std::size_t>(record.num_latent_positions) + 1)
            throw InvalidRecord(id + ": per_budget_answers has budgets outside 0..L");
        if (!answers_equal(m.at(record.num_latent_positions), record.predicted_answer))
            throw InvalidRecord(id + ": full-budget answer differs from predicted_answer");
    }
}

SingleTokenPredicate digits_up_to(std::int64_t max_value) {
    return [max_value](std::string_view s) {
        if (s.empty() || s.size() > 18 || !std::all_of(s.begin(), s.end(), is_digit)) return false;
        if (s.size() > 1 && s.front() == '0') return false;
        return *parse_digits(s) <= max_value;
    };
}

} // namespace lrmtrace
