#pragma once

// PrOntoQA-style ontology questions: parser, the descend-to-the-busiest-child
// heuristic, an exhaustive reachability check, and an instance generator.

#include "lrmtrace/rng.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace lrmtrace {

struct Ontology {
    /// node -> category children, in order of appearance. The entity is a node.
    std::map<std::string, std::vector<std::string>> children;
    /// node -> property -> holds
    std::map<std::string, std::map<std::string, bool>> properties;
    /// node -> number of sentences mentioning it
    std::map<std::string, int> mentions;

    int child_count(const std::string& node) const;
    int mention_count(const std::string& node) const;
};

struct ProntoQuery {
    std::string entity;
    std::string property;
    bool negated = false; ///< "Max is not wooden"
};

struct ProntoInstance {
    Ontology ontology;
    ProntoQuery query;
};

/// Parses the sentences of a question ending in "True or false: <query>.".
/// Throws ParseError on a sentence it does not understand.
ProntoInstance parse_prontoqa(std::string_view question);

/// Singular form of a category word: "numpuses" -> "numpus", "cats" -> "cat".
std::string singular(std::string_view word);

enum class HeuristicOrder { mentions_first, children_first };

struct HeuristicResult {
    bool answer = false;
    std::vector<std::string> path; ///< entity first, property carrier last
};

/// From the entity, repeatedly step to the child ranked highest (mentions,
/// then child count, then name; or child count first) until a node carries
/// the queried property. Throws NoPath at a dead end or a cycle.
HeuristicResult prontoqa_heuristic(const ProntoInstance& instance,
                                   HeuristicOrder order = HeuristicOrder::mentions_first);

/// Every node reachable from the entity; the answer when the carriers of the
/// queried property agree, nullopt when none is reachable or they disagree.
std::optional<bool> prontoqa_exhaustive(const ProntoInstance& instance);

struct GeneratedPronto {
    std::string question;
    bool answer = false;
    std::vector<std::string> gold_path; ///< entity, categories...
};

struct ProntoSpec {
    int min_hops = 3;
    int max_hops = 5;
};

GeneratedPronto generate_prontoqa(Rng& rng, const ProntoSpec& spec = {});

} // namespace lrmtrace
