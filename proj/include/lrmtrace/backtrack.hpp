#pragma once

// Backtracking search for a known reasoning trace inside the projection
// lattice of one instance, plus the random-trace baseline and the suite that
// aggregates found-rates over many instances.

#include "lrmtrace/core.hpp"
#include "lrmtrace/trace_graph.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace lrmtrace {

struct BacktrackOptions {
    int k = kDefaultTopK;
    /// Leaves whose value is a question number need no position.
    bool allow_question_tokens = false;
    /// Keep the unchanged branch even when a position has matches.
    bool exhaustive = false;
    std::size_t max_partial = 10'000;
};

struct NodePlacement {
    std::int64_t value = 0;
    int position = 0; ///< latent position; the root sits at the answer position
    int rank = 0;
    bool collapsed = false;

    bool operator==(const NodePlacement&) const = default;
};

struct TreeScore {
    int rank_sum = 0;
    int position_sum = 0;
    std::vector<int> positions; ///< per DAG node in node order, -1 when unplaced

    auto operator<=>(const TreeScore&) const = default;
};

struct FoundTree {
    int trace_index = 0; ///< 0 is the primary trace
    /// Placed nodes ordered by position, root last.
    std::vector<NodePlacement> placements;
    /// Question-number leaves satisfied without a position.
    std::vector<std::int64_t> question_leaves;
    bool allow_question_tokens = false;
    TreeScore score;

    std::optional<NodePlacement> placement_at(int position) const;
    bool operator==(const FoundTree&) const = default;
};

struct SearchResult {
    std::optional<FoundTree> tree;
    bool truncated = false;
    int invalid_traces = 0;

    bool found() const { return tree.has_value(); }
};

/// Search one trace. `trace_index` is copied into the returned tree.
SearchResult search_trace(const ProjectionRecord& record, const ReasoningTrace& trace, int trace_index,
                          const BacktrackOptions& options);

/// Primary trace first; returns the primary's best tree when it has one, else
/// the best tree among the alternates. Traces that fail build_dag are skipped
/// and counted.
SearchResult search_traces(const ProjectionRecord& record, std::span<const ReasoningTrace> traces,
                           const BacktrackOptions& options);

std::optional<FoundTree> backtrack_search(const ProjectionRecord& record, std::span<const ReasoningTrace> traces,
                                          const BacktrackOptions& options);

/// True when the value is among the top-k of the answer position under the
/// gate rule: a correct prediction passes a trace ending at the correct answer
/// trivially; otherwise the trace's final result must be in the answer top-k.
bool answer_gate(const ProjectionRecord& record, std::int64_t final_result, int k);

/// Whether the correct answer appears in the answer position's top-k.
bool correct_answer_in_top_k(const ProjectionRecord& record, int k);

// ----------------------------------------------------------------------------
// Random-trace baseline
// ----------------------------------------------------------------------------

struct PoolTrace {
    std::string instance_id;
    ReasoningTrace trace;
};

/// Primary traces of every record, one entry per record with a gold trace.
std::vector<PoolTrace> baseline_pool(std::span<const ProjectionRecord> records);

/// n distinct traces (by rendering) from other instances with the same number
/// of steps, uniformly sampled and fixed by (seed, instance_id). Throws
/// InsufficientPool when fewer than n exist.
std::vector<ReasoningTrace> sample_baseline_traces(const std::string& instance_id, std::size_t step_count,
                                                   std::span<const PoolTrace> pool, std::size_t n,
                                                   std::uint64_t seed);

// ----------------------------------------------------------------------------
// Suite
// ----------------------------------------------------------------------------

enum class Bucket { correct, incorrect };
enum class Condition { primary, any_gold, baseline };
enum class Variant { verbatim, exhaustive };

std::string_view to_string(Bucket b);
std::string_view to_string(Condition c);
std::string_view to_string(Variant v);

struct SuiteConfig {
    int k = kDefaultTopK;
    std::size_t baseline_n = 5;
    std::uint64_t seed = 0;
    std::size_t max_partial = 10'000;
    std::vector<Variant> variants{Variant::verbatim, Variant::exhaustive};
    int jobs = 1;
};

struct RateCell {
    std::int64_t n = 0;
    std::int64_t found = 0;

    std::optional<double> rate() const;
    void add(bool hit) {
        ++n;
        found += hit ? 1 : 0;
    }
    RateCell& operator+=(const RateCell& o) {
        n += o.n;
        found += o.found;
        return *this;
    }
    bool operator==(const RateCell&) const = default;
};

/// Outcome of every condition for one record.
struct InstanceOutcome {
    std::string instance_id;
    bool has_gold = false;
    Bucket bucket = Bucket::correct;
    int step_count = 0;
    bool answer_in_top_k = false;
    bool baseline_available = false;
    int invalid_traces = 0;
    bool truncated = false;
    /// (condition, question tokens, variant) -> found
    std::map<std::tuple<Condition, bool, Variant>, bool> found;
    /// Best any-gold tree, verbatim variant, question tokens off then on.
    std::optional<FoundTree> tree_without_question;
    std::optional<FoundTree> tree_with_question;
};

using RowKey = std::tuple<Bucket, Condition, bool, Variant>;
using StepRowKey = std::tuple<Bucket, int, bool, Variant>;

struct BacktrackReport {
    std::map<RowKey, RateCell> rows;
    /// Any-gold found-rates by primary trace step count.
    std::map<StepRowKey, RateCell> by_steps;
    /// Incorrect predictions whose correct answer is in the answer top-k.
    RateCell incorrect_answer_in_top_k;
    std::int64_t records = 0;
    std::int64_t skipped_no_gold = 0;
    std::int64_t baseline_unavailable = 0;
    std::int64_t truncated = 0;
    std::int64_t invalid_traces = 0;
    int k = kDefaultTopK;
    std::size_t baseline_n = 0;

    void add(const InstanceOutcome& outcome);
    BacktrackReport& merge(const BacktrackReport& other);

    std::string to_csv() const;
    std::string by_steps_csv() const;
    nlohmann::json to_json() const;
};

InstanceOutcome evaluate_instance(const ProjectionRecord& record, std::span<const PoolTrace> pool,
                                  const SuiteConfig& config);

struct SuiteResult {
    BacktrackReport report;
    std::vector<InstanceOutcome> instances; ///< sorted by instance_id
};

/// Report with every row of the configured variants present at n = 0.
BacktrackReport empty_report(const SuiteConfig& config);

SuiteResult backtrack_suite(std::span<const ProjectionRecord> records, const SuiteConfig& config);

/// "369/793=46.5%" style percentage with one decimal; "n/a" when n is zero.
std::string format_rate(const RateCell& cell);

/// Markdown projection table, one row per rank and one column per position.
/// Cells holding placed nodes are bold.
std::string render_markdown(const ProjectionRecord& record, const FoundTree* tree, int k);

} // namespace lrmtrace
