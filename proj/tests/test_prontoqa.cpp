#include "lrmtrace/errors.hpp"
#include "lrmtrace/prontoqa.hpp"
#include "lrmtrace/rng.hpp"

#include "support/max_ontology.hpp"

#include <doctest.h>

#include <set>

using namespace lrmtrace;

namespace {

// Fixed point of "entity is a X" over the category edges, then every
// property fact that applies.
std::optional<bool> closure_answer(const ProntoInstance& inst) {
    std::set<std::string> is{inst.query.entity};
    for (bool grew = true; grew;) {
        grew = false;
        for (const auto& [parent, kids] : inst.ontology.children)
            if (is.count(parent))
                for (const auto& c : kids) grew |= is.insert(c).second;
    }
    std::set<bool> values;
    for (const auto& [node, props] : inst.ontology.properties)
        if (is.count(node))
            if (auto it = props.find(inst.query.property); it != props.end()) values.insert(it->second);
    if (values.size() != 1) return std::nullopt;
    return inst.query.negated ? !*values.begin() : *values.begin();
}

} // namespace

TEST_CASE("singular forms") {
    CHECK(singular("numpuses") == "numpus");
    CHECK(singular("Vumpuses") == "vumpus");
    CHECK(singular("impuses") == "impus");
    CHECK(singular("cats") == "cat");
}

TEST_CASE("Max ontology instance answers True along the vumpus branch") {
    const auto inst = parse_prontoqa(testing::kMaxOntologyQuestion);
    CHECK(inst.query.entity == "Max");
    CHECK(inst.query.property == "wooden");
    CHECK(inst.query.negated);
    CHECK(inst.ontology.children.at("Max") == std::vector<std::string>{"vumpus", "lorpus"});
    CHECK(inst.ontology.mention_count("vumpus") == 4);
    CHECK(inst.ontology.mention_count("lorpus") == 3);
    CHECK(inst.ontology.properties.at("numpus").at("wooden") == false);
    CHECK(inst.ontology.properties.at("yumpus").at("wooden") == true);

    const auto r = prontoqa_heuristic(inst);
    CHECK(r.answer);
    CHECK(r.path == testing::kMaxOntologyPath);
    const auto by_children = prontoqa_heuristic(inst, HeuristicOrder::children_first);
    CHECK(by_children.answer);
    CHECK(by_children.path == testing::kMaxOntologyPath);
    CHECK(prontoqa_exhaustive(inst) == std::optional<bool>(true));
    CHECK(closure_answer(inst) == std::optional<bool>(true));
}

TEST_CASE("ties fall back to child count, then name") {
    // bumpus and ampus both have 2 mentions and no children: ampus wins by name.
    auto inst = parse_prontoqa("Max is a bumpus. Max is an ampus. Bumpuses are cold. Ampuses are not cold. "
                               "True or false: Max is cold.");
    auto r = prontoqa_heuristic(inst);
    CHECK(r.path == std::vector<std::string>{"Max", "ampus"});
    CHECK_FALSE(r.answer);
    CHECK_FALSE(prontoqa_exhaustive(inst).has_value()); // conflicting facts

    // equal mentions, zumpus has a child
    inst = parse_prontoqa("Max is a bumpus. Max is a zumpus. Bumpuses are cold. Zumpuses are dumpuses. "
                          "Dumpuses are not cold. True or false: Max is cold.");
    r = prontoqa_heuristic(inst);
    CHECK(r.path == std::vector<std::string>{"Max", "zumpus", "dumpus"});
    CHECK_FALSE(r.answer);
}

TEST_CASE("single chain answers with the property at its end") {
    const auto inst = parse_prontoqa("Max is a wumpus. Each wumpus is a tumpus. Every tumpus is a jompus. "
                                     "Jompuses are not red. True or false: Max is red.");
    const auto r = prontoqa_heuristic(inst);
    CHECK(r.path.back() == "jompus");
    CHECK_FALSE(r.answer);
}

TEST_CASE("dead ends and cycles raise NoPath") {
    CHECK_THROWS_AS(prontoqa_heuristic(parse_prontoqa("Max is a wumpus. Wumpuses are red. True or false: Max is hot.")),
                    NoPath);
    CHECK_THROWS_AS(prontoqa_heuristic(parse_prontoqa("Max is a wumpus. Wumpuses are tumpuses. Tumpuses are wumpuses. "
                                                      "True or false: Max is hot.")),
                    NoPath);
}

TEST_CASE("malformed questions raise ParseError") {
    CHECK_THROWS_AS(parse_prontoqa("Max is a wumpus."), ParseError);
    CHECK_THROWS_AS(parse_prontoqa("Max likes wumpuses. True or false: Max is red."), ParseError);
    CHECK_THROWS_AS(parse_prontoqa("Max is a wumpus. True or false: Max is a tumpus."), ParseError);
}

TEST_CASE("generated instances: heuristic, exhaustive search and the generator agree") {
    Rng rng(SeedMixer(7).add("prontoqa").value());
    int mention_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto g = generate_prontoqa(rng);
        const auto inst = parse_prontoqa(g.question);
        const auto h = prontoqa_heuristic(inst);
        REQUIRE(prontoqa_exhaustive(inst) == std::optional<bool>(g.answer));
        REQUIRE(closure_answer(inst) == std::optional<bool>(g.answer));
        REQUIRE(h.answer == g.answer);
        REQUIRE(h.path == g.gold_path);
        const auto c = prontoqa_heuristic(inst, HeuristicOrder::children_first);
        mention_mismatch += c.answer != h.answer;
    }
    CHECK(mention_mismatch == 0);
}

TEST_CASE("generator is deterministic and validates hops") {
    Rng a(3), b(3);
    for (int i = 0; i < 20; ++i) CHECK(generate_prontoqa(a).question == generate_prontoqa(b).question);
    CHECK_THROWS_AS(generate_prontoqa(a, {4, 3}), Error);
    CHECK_THROWS_AS(generate_prontoqa(a, {1, 9}), Error);
}
