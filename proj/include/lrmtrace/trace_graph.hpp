#pragma once

#include "lrmtrace/core.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lrmtrace {

// ----------------------------------------------------------------------------
// Operand -> result DAG
// ----------------------------------------------------------------------------

struct DagNode {
    std::int64_t value = 0;
    /// Steps producing this value. Empty for a leaf; more than one when two
    /// steps produce the same value and were merged.
    std::vector<int> producing_steps;
    bool question_leaf = false;

    bool is_leaf() const { return producing_steps.empty(); }
    bool collapsed() const { return producing_steps.size() > 1; }
};

struct DagEdge {
    int operand = 0; ///< node index
    int result = 0;  ///< node index
    int step = 0;
};

/// Value-keyed DAG: every distinct integer in the trace is one node. Edges
/// run operand -> result, one per operand slot (so "5+5=10" yields two).
struct TraceDag {
    std::vector<DagNode> nodes;
    std::vector<DagEdge> edges;
    int root = -1;

    std::optional<int> find(std::int64_t value) const;
    /// Distinct operand nodes of a node (union over its producing steps).
    std::vector<int> operands_of(int node) const;
    /// Distinct result nodes consuming a node.
    std::vector<int> consumers_of(int node) const;
    std::vector<int> leaves() const;
    /// Nodes reachable from the root by following edges backwards.
    std::vector<int> required_nodes() const;
};

/// Throws InvalidTrace when a step does not evaluate to its result, a value is
/// negative, or the merged graph has a cycle. Nodes are created in order of
/// first appearance (operands left to right, then the result).
TraceDag build_dag(const ReasoningTrace& trace, std::span<const std::int64_t> question_numbers);

// ----------------------------------------------------------------------------
// Dataset instances
// ----------------------------------------------------------------------------

/// One problem of a dataset file:
///   {"id":"0","question":"...","steps":["«600*30/100=180»",...],
///    "answer":"360","alternates":[["..."],...]}
struct DatasetInstance {
    std::string id;
    std::string question;
    std::vector<std::string> steps;
    std::vector<std::vector<std::string>> alternates;
    std::string answer;
};

std::vector<DatasetInstance> read_dataset(std::istream& in, const std::string& source);
std::vector<DatasetInstance> read_dataset_file(const std::string& path);
void write_dataset(std::ostream& out, const std::vector<DatasetInstance>& instances);
std::string dataset_line(const DatasetInstance& instance);

/// Primary trace followed by alternates; steps that fail to parse throw.
std::vector<ReasoningTrace> gold_traces_of(const DatasetInstance& instance);

/// Keeps instances whose primary trace's last-step result equals the answer.
/// Instances whose steps do not parse are dropped.
std::vector<DatasetInstance> filter_valid_gold(std::span<const DatasetInstance> instances);

/// Why an instance is not usable for projection-based extraction.
enum class VpViolation {
    none,
    unparseable,
    invalid_arithmetic,
    multi_token_prompt_number,
    repeated_prompt_number,
    multi_token_trace_number,
    non_integer_or_negative,
    repeated_result,
    result_equals_base_operand,
    no_prompt_base_operand,
};

std::string_view to_string(VpViolation v);

VpViolation vp_friendly_violation(const DatasetInstance& instance, const SingleTokenPredicate& single_token);

/// Keeps instances whose prompt numbers and primary-trace numbers are single
/// tokens and mutually distinguishable:
///   - every prompt literal is single-token and no value is mentioned twice;
///   - every operand / result is a single-token non-negative integer;
///   - step results are pairwise distinct and differ from every base operand
///     and prompt number;
///   - every step has at least one base operand mentioned in the prompt
///     (following intermediate operands back to the steps producing them).
std::vector<DatasetInstance> filter_vp_friendly(std::span<const DatasetInstance> instances,
                                                const SingleTokenPredicate& single_token);

/// Reads a reference list of single-token number strings, one per line.
SingleTokenPredicate token_list_predicate(std::istream& in);

} // namespace lrmtrace
