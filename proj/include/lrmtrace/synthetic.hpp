#pragma once

// Synthetic latent-reasoning model. Each instance has a hidden arithmetic
// trace over its prompt numbers and a layout of "slots" saying which hidden
// value sits at which (position, rank). Counterfactual queries recompute the
// hidden trace with one prompt number replaced and rewrite the slot tokens,
// so the ground truth of every analysis is known.

#include "lrmtrace/core.hpp"
#include "lrmtrace/oracle.hpp"
#include "lrmtrace/trace_graph.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace lrmtrace {

inline constexpr const char* kSynthModelFormat = "synthmodel/1";

/// operands_and_results encodes prompt operands and intermediate results,
/// one value per latent position while the 2S values of an S-step trace fit;
/// beyond that prompt numbers share positions with results at other ranks.
/// results_only encodes the intermediate results alone.
enum class EncodingStyle { operands_and_results, results_only };
enum class RankLaw { always_top, geometric };

std::string_view to_string(EncodingStyle s);
std::string_view to_string(RankLaw r);
std::optional<EncodingStyle> encoding_style_from_string(std::string_view s);
std::optional<RankLaw> rank_law_from_string(std::string_view s);

struct EncodingPolicy {
    EncodingStyle style = EncodingStyle::operands_and_results;
    /// Offset a reader should use for operand lookup; stored with the model,
    /// emission does not depend on it.
    int d = 1;
    int k = kDefaultTopK;
    int latent_positions = kDefaultLatentPositions;
    double fidelity = 1.0;
    RankLaw rank_law = RankLaw::geometric;
    double rank_p = 0.6;
    /// Chance that a filler slot below an encoded value holds an integer.
    double distractor_probability = 0.3;
    /// Chance that a non-final step is skipped: not encoded, and its result
    /// does not react to counterfactual prompts.
    double skip_probability = 0.0;
    std::optional<int> skip_step;
    double incorrect_probability = 0.0;
    /// Budget from which the early-stopping answer equals the final one;
    /// uniform over 0..L when unset.
    std::optional<int> stop_budget;
    /// Per encoded slot and query, chance that the slot ignores the
    /// substitution.
    double counterfactual_error_probability = 0.0;
};

/// Operand reference inside the hidden trace: prompt number i ("p<i>") or
/// result of step j ("s<j>").
struct ValueRef {
    enum class Kind { prompt, step } kind = Kind::prompt;
    int index = 0;

    std::string to_string() const;
    static ValueRef parse(std::string_view s);
    bool operator==(const ValueRef&) const = default;
    auto operator<=>(const ValueRef&) const = default;
};

struct HiddenStep {
    std::vector<ValueRef> operands;
    std::vector<Op> operators;
    Grouping grouping = Grouping::left_first;
    bool frozen = false; ///< skipped step

    bool operator==(const HiddenStep&) const = default;
};

struct Slot {
    int position = 0; ///< L means the answer position
    int rank = 1;
    /// nullopt: the predicted answer (final result plus answer_offset).
    std::optional<ValueRef> ref;

    bool operator==(const Slot&) const = default;
};

/// A substitution of `value` leaves the tokens at `position` unchanged.
struct Fault {
    std::int64_t value = 0;
    int position = 0;

    bool operator==(const Fault&) const = default;
};

struct SyntheticEntry {
    ProjectionRecord record;
    std::vector<std::int64_t> prompt_numbers;
    std::vector<HiddenStep> steps;
    std::vector<Slot> slots;
    std::vector<Fault> faults;
    std::int64_t answer_offset = 0;
    double noise = 0.0;
    std::uint64_t seed = 0;
    int stop_budget = 0;
    int d = 1;

    /// Hidden step values with the given prompt numbers; frozen steps keep
    /// their original results. nullopt for a value that is not a positive
    /// integer.
    std::vector<std::optional<std::int64_t>> step_values(std::span<const std::int64_t> prompt) const;
    std::optional<std::int64_t> value_of(const ValueRef& ref, std::span<const std::int64_t> prompt,
                                         const std::vector<std::optional<std::int64_t>>& steps) const;
    /// Hidden trace as plain steps over the original prompt.
    ReasoningTrace hidden_trace() const;
    DatasetInstance dataset_instance() const;

    bool operator==(const SyntheticEntry&) const = default;
};

class SyntheticModel {
public:
    SyntheticModel() = default;
    explicit SyntheticModel(std::vector<SyntheticEntry> entries);

    const std::vector<SyntheticEntry>& entries() const { return entries_; }
    const SyntheticEntry& at(const std::string& instance_id) const;
    std::vector<ProjectionRecord> records() const;
    std::vector<DatasetInstance> dataset() const;

    /// Projections for the prompt with `substitution` applied. Throws
    /// UnknownRequest for an unknown instance and InvalidSubstitution when
    /// the original value is not a prompt number or the replacement is not
    /// positive.
    ProjectionRecord respond(const std::string& instance_id, const Substitution& substitution) const;

private:
    std::vector<SyntheticEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

class SyntheticOracle : public ProjectionOracle {
public:
    explicit SyntheticOracle(const SyntheticModel& model) : model_(model) {}
    ProjectionRecord query(const OracleRequest& request) override {
        return model_.respond(request.instance_id, request.substitution);
    }

private:
    const SyntheticModel& model_;
};

struct CorpusSpec {
    std::size_t count = 100;
    int min_steps = 2;
    int max_steps = 4;
    EncodingPolicy policy;
    std::uint64_t seed = 0;
    /// Every prompt number a step depends on must have this many
    /// replacements in 2..50 keeping the steps up to it positive integers
    /// up to 999; 0 accepts any trace.
    int min_counterfactuals = 8;
};

/// Deterministic corpus; every instance passes filter_vp_friendly with
/// digits_up_to(999).
SyntheticModel generate_corpus(const CorpusSpec& spec);

nlohmann::json entry_to_json(const SyntheticEntry& e);
SyntheticEntry entry_from_json(const nlohmann::json& j);
void write_model(std::ostream& out, const SyntheticModel& model);
SyntheticModel read_model(std::istream& in, const std::string& source);
SyntheticModel read_model_file(const std::string& path);

} // namespace lrmtrace
