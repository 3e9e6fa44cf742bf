#include "lrmtrace/backtrack.hpp"
#include "lrmtrace/rng.hpp"
#include "lrmtrace/synthetic.hpp"
#include "lrmtrace/errors.hpp"

#include "support/fixture_290.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace lrmtrace;

namespace {

// Independent recomputation of a two-operand hidden trace.
std::vector<std::optional<std::int64_t>> recompute(const SyntheticEntry& e, const std::vector<std::int64_t>& prompt) {
    std::vector<std::optional<std::int64_t>> original;
    std::vector<std::optional<std::int64_t>> out;
    auto run = [&](const std::vector<std::int64_t>& p, std::vector<std::optional<std::int64_t>>& vals,
                   const std::vector<std::optional<std::int64_t>>* frozen) {
        for (std::size_t j = 0; j < e.steps.size(); ++j) {
            const auto& s = e.steps[j];
            if (frozen && s.frozen) {
                vals.push_back((*frozen)[j]);
                continue;
            }
            REQUIRE(s.operands.size() == 2);
            auto get = [&](const ValueRef& r) -> std::optional<std::int64_t> {
                return r.kind == ValueRef::Kind::prompt ? std::optional(p[static_cast<std::size_t>(r.index)])
                                                        : vals[static_cast<std::size_t>(r.index)];
            };
            auto a = get(s.operands[0]);
            auto b = get(s.operands[1]);
            std::optional<std::int64_t> v;
            if (a && b) {
                switch (s.operators[0]) {
                case Op::add: v = *a + *b; break;
                case Op::sub: v = *a - *b; break;
                case Op::mul: v = *a * *b; break;
                case Op::div:
                    if (*b != 0 && *a % *b == 0) v = *a / *b;
                    break;
                }
            }
            if (v && *v <= 0) v.reset();
            vals.push_back(v);
        }
    };
    run(e.prompt_numbers, original, nullptr);
    run(prompt, out, &original);
    return out;
}

CorpusSpec spec_with(EncodingStyle style, double fidelity, std::uint64_t seed, std::size_t count = 100) {
    CorpusSpec s;
    s.count = count;
    s.min_steps = 2;
    s.max_steps = 5;
    s.seed = seed;
    s.policy.style = style;
    s.policy.fidelity = fidelity;
    return s;
}

std::string dump(const SyntheticModel& m) {
    std::ostringstream out;
    write_model(out, m);
    return out.str();
}

} // namespace

TEST_CASE("value references round trip") {
    CHECK(ValueRef::parse("p3") == ValueRef{ValueRef::Kind::prompt, 3});
    CHECK(ValueRef::parse("s12").to_string() == "s12");
    CHECK_THROWS_AS(ValueRef::parse("x1"), ParseError);
    CHECK_THROWS_AS(ValueRef::parse("p"), ParseError);
    CHECK_THROWS_AS(ValueRef::parse("s1a"), ParseError);
}

TEST_CASE("fixture 290 hidden trace and counterfactual") {
    const auto e = testing::instance_290();
    CHECK(render_trace(e.hidden_trace()) == std::vector<std::string>{"22-5=17", "22+17=39", "39*10=390"});
    SyntheticModel model({e});

    const auto r = model.respond("290", {5, 3});
    REQUIRE(top_integer(r.position(2)));
    CHECK(top_integer(r.position(2))->value == 19);
    CHECK(top_integer(r.position(4))->value == 41);
    CHECK(top_integer(r.answer_projections)->value == 410);
    CHECK(r.predicted_answer == "410");
    CHECK(r.prompt_text.find("sold 3 of them") != std::string::npos);
    CHECK(r.question_numbers == std::vector<std::int64_t>{22, 3, 10});
    CHECK_FALSE(r.per_budget_answers);

    // the answer position ignores 10
    const auto f = model.respond("290", {10, 7});
    CHECK(top_integer(f.answer_projections)->value == 390);
    CHECK(top_integer(f.position(4))->value == 39);

    CHECK_THROWS_AS(model.respond("290", {7, 3}), InvalidSubstitution);
    CHECK_THROWS_AS(model.respond("290", {5, 0}), InvalidSubstitution);
    CHECK_THROWS_AS(model.respond("291", {5, 3}), UnknownRequest);
}

TEST_CASE("substitution that breaks integrality marks values unknown") {
    SyntheticModel model({testing::instance_290()});
    const auto r = model.respond("290", {5, 30}); // 22-30 < 0
    CHECK(r.position(2)[0].token == "?");
    CHECK(r.predicted_answer == "?");
    CHECK_FALSE(top_integer(r.answer_projections));
}

TEST_CASE("corpus generation is deterministic") {
    const auto spec = spec_with(EncodingStyle::operands_and_results, 0.9, 11);
    const auto a = dump(generate_corpus(spec));
    CHECK(a == dump(generate_corpus(spec)));
    auto other = spec;
    other.seed = 12;
    CHECK(a != dump(generate_corpus(other)));
}

TEST_CASE("corpus instances are VP-friendly and well formed") {
    for (auto style : {EncodingStyle::operands_and_results, EncodingStyle::results_only}) {
        const auto model = generate_corpus(spec_with(style, 1.0, 5));
        REQUIRE(model.entries().size() == 100);
        const auto ds = model.dataset();
        CHECK(filter_valid_gold(ds).size() == 100);
        for (const auto& inst : ds)
            CHECK_MESSAGE(vp_friendly_violation(inst, digits_up_to(999)) == VpViolation::none, inst.id);
        std::set<std::string> ids;
        for (const auto& e : model.entries()) {
            ids.insert(e.record.instance_id);
            CHECK_NOTHROW(validate_record(e.record));
            CHECK(e.steps.size() >= 2);
            CHECK(e.steps.size() <= 5);
            CHECK(e.record.correct_answer == std::to_string(e.hidden_trace().final_result()));
            CHECK(extract_question_numbers(e.record.prompt_text) == e.prompt_numbers);
        }
        CHECK(ids.size() == 100);
    }
}

TEST_CASE("always-top fidelity 1 places every encoded value at rank 1") {
    auto spec = spec_with(EncodingStyle::results_only, 1.0, 3);
    spec.policy.rank_law = RankLaw::always_top;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        const auto values = e.step_values(e.prompt_numbers);
        for (std::size_t j = 0; j + 1 < e.steps.size(); ++j) {
            bool seen = false;
            for (int p = 0; p < e.record.num_latent_positions; ++p)
                seen |= e.record.position(p)[0].token == std::to_string(*values[j]);
            CHECK(seen);
        }
        CHECK(e.record.answer_projections[0].token == e.record.predicted_answer);
    }
}

TEST_CASE("counterfactual responses match recomputed hidden values slot by slot") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 21, 60);
    spec.policy.skip_probability = 0.3;
    spec.policy.incorrect_probability = 0.3;
    const auto model = generate_corpus(spec);
    Rng rng(99);
    for (const auto& e : model.entries()) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(e.prompt_numbers.size()) - 1));
            const Substitution sub{e.prompt_numbers[i], rng.uniform_int(2, 50)};
            auto prompt = e.prompt_numbers;
            prompt[i] = sub.replacement;
            const auto expected = recompute(e, prompt);
            const auto r = model.respond(e.record.instance_id, sub);
            for (const auto& slot : e.slots) {
                std::optional<std::int64_t> v;
                if (!slot.ref) {
                    if (expected.back()) v = *expected.back() + e.answer_offset;
                } else if (slot.ref->kind == ValueRef::Kind::prompt) {
                    v = prompt[static_cast<std::size_t>(slot.ref->index)];
                } else {
                    v = expected[static_cast<std::size_t>(slot.ref->index)];
                }
                const auto& tok = r.position(slot.position)[static_cast<std::size_t>(slot.rank - 1)].token;
                CHECK(tok == (v && *v > 0 ? std::to_string(*v) : std::string("?")));
            }
        }
    }
}

TEST_CASE("operands-and-results corpus is fully found by backtracking") {
    // 2S values for S steps: three steps fill the six latent positions
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 8);
    spec.max_steps = 3;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        BacktrackOptions opts;
        CHECK_MESSAGE(search_traces(e.record, e.record.gold_traces, opts).found(), e.record.instance_id);
    }
}

TEST_CASE("results-only corpus needs question tokens") {
    const auto model = generate_corpus(spec_with(EncodingStyle::results_only, 1.0, 8));
    int with = 0;
    int without = 0;
    for (const auto& e : model.entries()) {
        BacktrackOptions opts;
        without += search_traces(e.record, e.record.gold_traces, opts).found();
        opts.allow_question_tokens = true;
        with += search_traces(e.record, e.record.gold_traces, opts).found();
    }
    CHECK(with == 100);
    CHECK(without <= 5);
}

TEST_CASE("long traces share positions and need question tokens") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 8);
    spec.min_steps = 5;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        BacktrackOptions opts;
        CHECK_FALSE(search_traces(e.record, e.record.gold_traces, opts).found());
        opts.allow_question_tokens = true;
        CHECK(search_traces(e.record, e.record.gold_traces, opts).found());
    }
}

TEST_CASE("skipping a designated step hides the trace from backtracking") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 4);
    spec.policy.skip_step = 0;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        CHECK(e.steps[0].frozen);
        BacktrackOptions opts;
        opts.allow_question_tokens = true;
        CHECK_FALSE(search_traces(e.record, e.record.gold_traces, opts).found());
    }
}

TEST_CASE("found-rate is monotone in fidelity") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        std::vector<std::vector<bool>> found;
        for (double fidelity : {0.5, 0.8, 1.0}) {
            const auto model = generate_corpus(spec_with(EncodingStyle::operands_and_results, fidelity, seed));
            std::vector<bool> f;
            for (const auto& e : model.entries())
                f.push_back(search_traces(e.record, e.record.gold_traces, BacktrackOptions{}).found());
            found.push_back(f);
        }
        for (std::size_t i = 0; i < found[0].size(); ++i) {
            CHECK(found[0][i] <= found[1][i]);
            CHECK(found[1][i] <= found[2][i]);
        }
        auto count = [](const std::vector<bool>& v) { return std::count(v.begin(), v.end(), true); };
        CHECK(count(found[0]) < count(found[2]));
    }
}

TEST_CASE("incorrect predictions keep the correct answer out of rank 1") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 6);
    spec.policy.incorrect_probability = 1.0;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        CHECK_FALSE(e.record.prediction_correct());
        CHECK(e.answer_offset != 0);
        CHECK(e.record.answer_projections[0].token == e.record.predicted_answer);
    }
}

TEST_CASE("budget answers settle at the policy budget") {
    auto spec = spec_with(EncodingStyle::results_only, 1.0, 2, 30);
    spec.policy.stop_budget = 3;
    const auto model = generate_corpus(spec);
    for (const auto& e : model.entries()) {
        const auto& b = *e.record.per_budget_answers;
        CHECK(e.stop_budget == 3);
        for (int l = 0; l <= 6; ++l) CHECK((b.at(l) == e.record.predicted_answer) == (l >= 3));
    }
}

TEST_CASE("synthmodel round trip") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 0.8, 9, 20);
    spec.policy.counterfactual_error_probability = 0.1;
    const auto model = generate_corpus(spec);
    std::istringstream in(dump(model));
    const auto back = read_model(in, "mem");
    CHECK(back.entries() == model.entries());

    SyntheticModel fixture({testing::instance_290()});
    std::istringstream fin(dump(fixture));
    CHECK(read_model(fin, "mem").entries() == fixture.entries());

    std::istringstream bad(R"({"format":"synthmodel/2"})");
    CHECK_THROWS_AS(read_model(bad, "mem"), ParseError);
}

TEST_CASE("counterfactual noise is a function of the query") {
    auto spec = spec_with(EncodingStyle::operands_and_results, 1.0, 13, 20);
    spec.policy.counterfactual_error_probability = 0.5;
    const auto model = generate_corpus(spec);
    int unchanged = 0;
    for (const auto& e : model.entries()) {
        const Substitution sub{e.prompt_numbers[0], e.prompt_numbers[0] == 2 ? 3 : 2};
        const auto a = model.respond(e.record.instance_id, sub);
        CHECK(a == model.respond(e.record.instance_id, sub));
        unchanged += a.latent_projections == e.record.latent_projections;
    }
    CHECK(unchanged < 20);
}

TEST_CASE("generator rejects impossible step ranges") {
    CorpusSpec s;
    s.max_steps = 8;
    CHECK_THROWS_AS(generate_corpus(s), Error);
    s.max_steps = 1;
    s.min_steps = 2;
    CHECK_THROWS_AS(generate_corpus(s), Error);
}
