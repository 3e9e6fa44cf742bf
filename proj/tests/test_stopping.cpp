#include "lrmtrace/backtrack.hpp"
#include "lrmtrace/errors.hpp"
#include "lrmtrace/rng.hpp"
#include "lrmtrace/stopping.hpp"
#include "lrmtrace/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace lrmtrace;

namespace {

BudgetAnswers budget(std::vector<std::string> answers) {
    std::map<int, std::string> m;
    for (std::size_t i = 0; i < answers.size(); ++i) m[static_cast<int>(i)] = answers[i];
    return BudgetAnswers::make(m);
}

// Two-pass population statistics.
std::pair<double, double> two_pass(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

} // namespace

TEST_CASE("first and stable match on the figure sequence") {
    const auto b = budget({"7", "9", "12", "10", "12", "12", "12"});
    CHECK(b.full_budget == 6);
    CHECK(first_match(b) == 2);
    CHECK(stable_match(b) == 4);
}

TEST_CASE("match edge cases") {
    CHECK(first_match(budget({"5", "5", "5"})) == 0);
    CHECK(stable_match(budget({"5", "5", "5"})) == 0);
    CHECK(first_match(budget({"1", "2", "3", "4"})) == 3);
    CHECK(stable_match(budget({"1", "2", "3", "4"})) == 3);
    CHECK(first_match(budget({"12.0", "3", "12"})) == 0);
    CHECK(stable_match(budget({"12.0", "3", "12"})) == 2);
    CHECK(first_match(budget({"x"})) == 0);
    CHECK_THROWS_AS(BudgetAnswers::make({{0, "1"}, {2, "1"}}), InvalidRecord);
    CHECK_THROWS_AS(BudgetAnswers::make({{1, "1"}}), InvalidRecord);
    CHECK_THROWS_AS(BudgetAnswers::make({}), InvalidRecord);
}

TEST_CASE("first <= stable <= L on random budgets") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const int L = static_cast<int>(rng.uniform_int(0, 8));
        std::vector<std::string> a;
        for (int l = 0; l <= L; ++l) a.push_back(std::to_string(rng.uniform_int(0, 3)));
        const auto b = budget(a);
        const int f = first_match(b);
        const int s = stable_match(b);
        CHECK(0 <= f);
        CHECK(f <= s);
        CHECK(s <= L);
        CHECK(a[static_cast<std::size_t>(f)] == a.back());
        for (int l = s; l <= L; ++l) CHECK(a[static_cast<std::size_t>(l)] == a.back());
        if (s > 0) CHECK(a[static_cast<std::size_t>(s - 1)] != a.back());
        for (int l = 0; l < f; ++l) CHECK(a[static_cast<std::size_t>(l)] != a.back());
    }
}

TEST_CASE("percent normalization") {
    StoppingStats s;
    s.add(budget({"1", "2", "3", "9", "9", "9", "9"}));
    CHECK(s.first_percent.mean() == doctest::Approx(50.0));
    CHECK(s.first.mean() == 3.0);
    CHECK(s.first.stddev() == 0.0);
    CHECK(s.first.format() == "3.0±0.0");
    CHECK(s.pooled_first_percent() == "50.0±0.0");
}

TEST_CASE("streaming statistics match two-pass and merge in any grouping") {
    Rng rng(17);
    std::vector<double> xs;
    for (int i = 0; i < 1000; ++i) xs.push_back(static_cast<double>(rng.uniform_int(0, 6)));
    const auto [mean, std] = two_pass(xs);

    MeanStd all;
    for (double x : xs) all.add(x);
    CHECK(all.mean() == doctest::Approx(mean).epsilon(1e-12));
    CHECK(all.stddev() == doctest::Approx(std).epsilon(1e-12));

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<MeanStd> shards(static_cast<std::size_t>(rng.uniform_int(1, 9)));
        for (double x : xs) shards[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(shards.size()) - 1))].add(x);
        MeanStd merged;
        for (std::size_t i = shards.size(); i-- > 0;) merged.merge(shards[i]);
        CHECK(merged.count() == xs.size());
        CHECK(merged.mean() == doctest::Approx(mean).epsilon(1e-9));
        CHECK(merged.stddev() == doctest::Approx(std).epsilon(1e-9));
    }
    MeanStd empty;
    CHECK(empty.format() == "n/a");
    empty.merge(all);
    CHECK(empty.mean() == all.mean());
}

TEST_CASE("synthetic stop budgets are recovered exactly") {
    CorpusSpec spec;
    spec.count = 200;
    spec.seed = 3;
    const auto model = generate_corpus(spec);
    const auto records = model.records();
    const auto report = aggregate("synthetic", records);
    const auto& rows = report.rows.at("synthetic");
    REQUIRE(rows.size() == 200);
    for (const auto& row : rows) {
        const auto& e = model.at(row.instance_id);
        CHECK(row.stable == e.stop_budget);
        CHECK(row.first == e.stop_budget);
    }
}

TEST_CASE("stop budget 0 everywhere gives 0.0±0.0") {
    CorpusSpec spec;
    spec.count = 50;
    spec.policy.stop_budget = 0;
    const auto records = generate_corpus(spec).records();
    const auto report = aggregate("lrm", records);
    const auto& s = report.methods.at("lrm");
    CHECK(s.stable_percent.format() == "0.0±0.0");
    CHECK(s.first_percent.format() == "0.0±0.0");
    const auto csv = report.to_csv();
    CHECK(csv.find("metric,lrm\n") == 0);
    CHECK(csv.find("stable_match_percent,0.0±0.0\n") != std::string::npos);
}

TEST_CASE("aggregate is permutation invariant") {
    CorpusSpec spec;
    spec.count = 80;
    spec.seed = 9;
    auto records = generate_corpus(spec).records();
    const auto a = aggregate("m", records);
    std::reverse(records.begin(), records.end());
    const auto b = aggregate("m", records);
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.rows_csv() == b.rows_csv());
}

TEST_CASE("records without budgets are rejected") {
    ProjectionRecord r;
    r.instance_id = "x";
    StoppingReport report;
    CHECK_THROWS_AS(report.add("m", r), InvalidRecord);
}

TEST_CASE("rate arithmetic") {
    RateCell c;
    c.n = 793;
    c.found = 369;
    CHECK(format_rate(c) == "369/793=46.5%");
}
