#pragma once

// Forward chaining: propose the step encoded at each position from the
// projections alone, check it with counterfactual prompts, and assemble the
// accepted steps into a trace ending at the predicted answer.

#include "lrmtrace/core.hpp"
#include "lrmtrace/oracle.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lrmtrace {

/// Operand provenance, best first.
enum class Provenance { verified_intermediate, question, topk_lattice, unverified_intermediate };

std::string_view to_string(Provenance p);

struct ChainConfig {
    /// Lattice offset: operands of the step at position p are read from p-d.
    int d = 1;
    int k = kDefaultTopK;
    int n_attempts = 3;
    int r_passes = 2;
    std::int64_t range_lo = 2;
    std::int64_t range_hi = 50;
    int max_resamples = 20;
    std::size_t max_candidates = 500;
    std::uint64_t seed = 0;
    /// Counterfactual values (replacement and recomputed results) must pass.
    SingleTokenPredicate single_token = digits_up_to(999);

    /// Throws Error when the fields break their invariants.
    void validate() const;
};

struct PoolEntry {
    std::int64_t value = 0;
    Provenance provenance = Provenance::topk_lattice;
    /// Accepted step producing the value, for intermediates.
    int producer = -1;
};

struct CandidateStep {
    int position = 0;
    ReasoningStep step;
    std::vector<Provenance> operand_provenance;
    /// Per operand: index of the accepted step it is linked to, or -1.
    std::vector<int> producers;
    int verify_passes = 0;
    int attempts = 0;
    bool traceable = true;
    bool verified = false;

    Provenance weakest() const;
};

/// Operand pool of a position given the steps accepted so far, ordered:
/// question numbers, lattice values (position, rank), prior results.
std::vector<PoolEntry> operand_pool(const ProjectionRecord& record, int position,
                                    const std::vector<CandidateStep>& accepted, const ChainConfig& config);

/// Candidates for the top integer of `position`, at most config.max_candidates,
/// ordered by weakest operand provenance, operand count, operand provenances
/// best first, pool indices, operators and grouping. Equivalent computations are listed once. A
/// position whose top integer is a prompt number has none.
std::vector<CandidateStep> generate_candidates(const ProjectionRecord& record, int position,
                                               const std::vector<CandidateStep>& accepted,
                                               const ChainConfig& config);

/// Prompt numbers the candidate depends on, in order of first use. Lattice
/// operands contribute none.
std::vector<std::int64_t> base_operands(const CandidateStep& candidate, const std::vector<CandidateStep>& accepted,
                                        std::span<const std::int64_t> question_numbers);

/// Value of the candidate with `original` replaced by `replacement` among
/// its base operands, recomputed through the linked accepted steps. nullopt
/// when any recomputed value is not a positive single-token integer.
std::optional<std::int64_t> recompute(const CandidateStep& candidate, const std::vector<CandidateStep>& accepted,
                                      std::int64_t original, std::int64_t replacement,
                                      const SingleTokenPredicate& single_token);

std::string attempt_id(const CandidateStep& candidate, int attempt);

/// Runs the counterfactual attempts; sets verify_passes, attempts, verified
/// and traceable. OracleUnavailable propagates.
CandidateStep verify_step(CandidateStep candidate, const std::vector<CandidateStep>& accepted,
                          const ProjectionRecord& record, ProjectionOracle& oracle, const ChainConfig& config);

struct PositionLog {
    int position = 0;
    std::optional<std::int64_t> target;
    std::size_t candidates = 0;
    /// Candidates checked, in order, with their pass counts.
    std::vector<CandidateStep> tried;
    std::optional<std::size_t> accepted; ///< index into ChainResult::accepted
};

struct ChainResult {
    std::string instance_id;
    /// One step per position that had a candidate, ascending.
    std::vector<CandidateStep> accepted;
    std::vector<PositionLog> log;
    /// Assembled trace, ascending by position; empty when there is no root.
    std::vector<CandidateStep> trace;
    bool has_root = false;
    bool tree_verified = false;

    ReasoningTrace reasoning_trace() const;
};

/// Phases 1 and 2 plus assembly. Never throws NoRoot; has_root reports it.
ChainResult run_forward_chain(const ProjectionRecord& record, ProjectionOracle& oracle, const ChainConfig& config);

/// The assembled trace and whether every step in it verified. Throws NoRoot
/// when no accepted step produces the predicted answer.
std::pair<std::vector<CandidateStep>, bool> forward_chain(const ProjectionRecord& record, ProjectionOracle& oracle,
                                                          const ChainConfig& config);

/// Markdown projection table with the cell of every trace step in bold and
/// suffixed by its pass count, e.g. "**17** (3/3)".
std::string render_chain_markdown(const ProjectionRecord& record, const ChainResult& result, int k);

// ----------------------------------------------------------------------------
// Suite
// ----------------------------------------------------------------------------

struct ChainCell {
    std::size_t n = 0;
    std::size_t root_found = 0;
    std::size_t verified = 0;

    double verified_rate() const { return n == 0 ? 0.0 : 100.0 * static_cast<double>(verified) / static_cast<double>(n); }
    ChainCell& operator+=(const ChainCell& o);
};

struct ChainReport {
    /// (r_passes, prediction correct) -> counts
    std::map<std::pair<int, bool>, ChainCell> rows;
    std::map<int, std::vector<ChainResult>> results; ///< by r_passes

    std::string to_csv() const;
    /// One line per instance and r_passes: root, verified, trace with passes.
    std::string traces_csv() const;
};

/// Runs every record for each r_passes value; instances in id order.
ChainReport forward_chain_suite(std::span<const ProjectionRecord> records, ProjectionOracle& oracle,
                                const ChainConfig& config, std::span<const int> r_passes_values, int jobs);

} // namespace lrmtrace
