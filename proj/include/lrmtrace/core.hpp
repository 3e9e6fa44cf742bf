#pragma once

// Canonical data types shared by every analysis: projection tables, arithmetic
// reasoning steps and traces, and number-token normalization.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lrmtrace {

inline constexpr int kDefaultTopK = 10;
inline constexpr int kDefaultLatentPositions = 6;

// ----------------------------------------------------------------------------
// Number tokens
// ----------------------------------------------------------------------------

/// Maps a detokenized surface string to the integer it stands for.
///
/// Rules, applied after trimming surrounding whitespace:
///   - one leading '$' and one trailing '%' are dropped;
///   - any sign character ('-', '+', U+2212) makes the token non-numeric;
///   - "1,200" style thousands groups (1-3 digits, then groups of exactly 3)
///     drop their commas; any other comma makes the token non-numeric;
///   - a pure digit string maps to its value, leading zeros ignored;
///   - a decimal ("0.5", ".5", "12.", "2.50") maps to its first non-zero
///     digit run read as an integer ("0.5" -> 5, "0.05" -> 5, "2.50" -> 2),
///     or 0 when every run is zero;
///   - everything else (letters, exponents, multiple dots, >18 digits) -> none.
std::optional<std::int64_t> normalize_number_token(std::string_view token);

/// Canonical form used for answer comparison: the normalized integer rendered
/// in decimal when the text is numeric, otherwise the trimmed text.
std::string canonical_answer(std::string_view answer);
bool answers_equal(std::string_view a, std::string_view b);

std::string_view trim(std::string_view s);

// ----------------------------------------------------------------------------
// Projections
// ----------------------------------------------------------------------------

struct ProjectionEntry {
    std::string token;
    int rank = 1;
    double score = 0.0;

    bool operator==(const ProjectionEntry&) const = default;
};

/// One position of a top-k table, ordered by rank.
using Projection = std::vector<ProjectionEntry>;

bool token_matches_number(const ProjectionEntry& entry, std::int64_t target);

struct RankedInteger {
    std::int64_t value = 0;
    int rank = 0;

    bool operator==(const RankedInteger&) const = default;
};

/// Lowest-rank entry whose token normalizes to an integer.
std::optional<RankedInteger> top_integer(std::span<const ProjectionEntry> position);

/// Every integer among the first k ranks, in rank order (duplicates kept once).
std::vector<RankedInteger> integers_in_top_k(std::span<const ProjectionEntry> position, int k);

/// Rank of the first entry within the top k matching value, if any.
std::optional<int> rank_of(std::span<const ProjectionEntry> position, std::int64_t value, int k);

// ----------------------------------------------------------------------------
// Exact arithmetic
// ----------------------------------------------------------------------------

/// Normalized fraction over int64; arithmetic reports overflow as nullopt.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n) : num(n), den(1) {} // NOLINT(google-explicit-constructor)
    static std::optional<Rational> make(std::int64_t n, std::int64_t d);

    bool is_integer() const { return den == 1; }
    bool operator==(const Rational&) const = default;

    /// Decimal rendering; terminating decimals only ("0.5"), else "n/d".
    std::string to_string() const;
    /// Parses "600", "0.5", "1,200", ".25".
    static std::optional<Rational> parse(std::string_view text);
};

std::optional<Rational> checked_add(Rational a, Rational b);
std::optional<Rational> checked_sub(Rational a, Rational b);
std::optional<Rational> checked_mul(Rational a, Rational b);
std::optional<Rational> checked_div(Rational a, Rational b);

// ----------------------------------------------------------------------------
// Reasoning steps
// ----------------------------------------------------------------------------

enum class Op : char { add = '+', sub = '-', mul = '*', div = '/' };

inline constexpr Op kAllOps[] = {Op::add, Op::sub, Op::mul, Op::div};

char op_symbol(Op op);
std::optional<Op> op_from_symbol(std::string_view sym);
std::optional<Rational> apply_op(Op op, Rational a, Rational b);

enum class OperandSource { question, intermediate, topk_lattice };

std::string_view to_string(OperandSource s);
std::optional<OperandSource> operand_source_from_string(std::string_view s);

/// Evaluation order of a step in postfix form. A non-negative entry is an
/// operand index; entry -(i+1) applies operators[i].
using Postfix = std::vector<std::int8_t>;

/// For three-operand steps: which pair is combined first.
enum class Grouping { left_first, right_first };

/// One arithmetic equation of a trace.
///
/// `operands` / `result` are the integer match keys used against projections
/// (normalize_number_token of each literal); `exact_operands` /
/// `exact_result` keep the literal values so that gold steps such as
/// "0.5*10=5" still evaluate exactly.
struct ReasoningStep {
    std::vector<std::int64_t> operands;
    std::vector<Op> operators;
    Postfix order;
    std::int64_t result = 0;
    std::vector<OperandSource> operand_sources;
    std::vector<Rational> exact_operands;
    Rational exact_result;

    /// Integer step evaluated left to right (two operands, or three operands
    /// with the given grouping).
    static ReasoningStep make(std::vector<std::int64_t> operands, std::vector<Op> operators,
                              std::int64_t result, Grouping grouping = Grouping::left_first);

    std::optional<Grouping> grouping() const;

    bool operator==(const ReasoningStep&) const = default;
};

/// Exact value of the step's expression, nullopt on division by zero/overflow.
std::optional<Rational> evaluate(const ReasoningStep& step);

/// Evaluates the expression with substituted integer operand values; every
/// intermediate must stay a non-negative integer (divisions exact).
std::optional<std::int64_t> evaluate_integral(const ReasoningStep& step,
                                              std::span<const std::int64_t> operands);

/// True when the expression evaluates to the stated result and no literal is
/// negative.
bool is_arithmetically_valid(const ReasoningStep& step);

/// "22-5=17", "600*30/100=180", "22-(5+10)=7".
std::string render(const ReasoningStep& step);

/// Parses a step string. Accepts the bare form "a*b=c" and the delimited
/// forms "«a*b=c»" and "<<a*b=c>>"; operators may be ASCII or the Unicode
/// symbols × ÷ − and the expression may use parentheses.
ReasoningStep parse_step(std::string_view text);

/// Order-insensitive identity of the computation: commutative operands and
/// associative regroupings of the same operator family compare equal.
std::string canonical_key(const ReasoningStep& step);
bool same_computation(const ReasoningStep& a, const ReasoningStep& b);

struct ReasoningTrace {
    std::vector<ReasoningStep> steps;

    std::int64_t final_result() const { return steps.empty() ? 0 : steps.back().result; }
    bool operator==(const ReasoningTrace&) const = default;
};

/// Tags every operand: intermediate when it equals an earlier step's result,
/// question when it occurs in the question numbers, topk_lattice otherwise.
void annotate_sources(ReasoningTrace& trace, std::span<const std::int64_t> question_numbers);

ReasoningTrace parse_trace(std::span<const std::string> steps,
                           std::span<const std::int64_t> question_numbers);
std::vector<std::string> render_trace(const ReasoningTrace& trace);

// ----------------------------------------------------------------------------
// Question numbers
// ----------------------------------------------------------------------------

struct NumberMention {
    std::string surface;   ///< literal as written, without '$' / '%'
    Rational value;
    bool percent = false;
};

/// Numeric literals in free text, in order of appearance.
std::vector<NumberMention> find_number_mentions(std::string_view text);

/// Integer keys of the literals in a prompt, deduplicated in order of first
/// appearance. A percentage "30%" contributes both 30 and 100.
std::vector<std::int64_t> extract_question_numbers(std::string_view text);

// ----------------------------------------------------------------------------
// Projection records
// ----------------------------------------------------------------------------

struct ProjectionRecord {
    std::string instance_id;
    std::string prompt_text;
    std::vector<std::int64_t> question_numbers;
    int num_latent_positions = kDefaultLatentPositions;
    std::vector<Projection> latent_projections;
    Projection answer_projections;
    bool normalized = true;
    std::string predicted_answer;
    std::optional<std::map<int, std::string>> per_budget_answers;
    std::vector<ReasoningTrace> gold_traces;
    std::string correct_answer;

    /// Index of the answer position when addressing positions uniformly.
    int answer_position() const { return num_latent_positions; }
    const Projection& position(int index) const;
    int top_k() const;
    bool prediction_correct() const { return answers_equal(predicted_answer, correct_answer); }

    bool operator==(const ProjectionRecord&) const = default;
};

/// Throws InvalidRecord when a table or budget map breaks its invariants.
void validate_record(const ProjectionRecord& record);

/// Predicate deciding whether a number surface form is a single token.
using SingleTokenPredicate = std::function<bool(std::string_view)>;

/// Plain digit strings without leading zeros up to max_value.
SingleTokenPredicate digits_up_to(std::int64_t max_value);

} // namespace lrmtrace
