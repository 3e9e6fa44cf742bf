#include "lrmtrace/stopping.hpp"

#include "lrmtrace/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lrmtrace {

BudgetAnswers BudgetAnswers::make(std::map<int, std::string> answers) {
    if (answers.empty()) throw InvalidRecord("no budget answers");
    int expected = 0;
    for (const auto& [l, a] : answers) {
        if (l != expected) throw InvalidRecord("budget answers must cover 0..L without gaps");
        ++expected;
    }
    BudgetAnswers b;
    b.full_budget = expected - 1;
    b.answers = std::move(answers);
    return b;
}

BudgetAnswers BudgetAnswers::of(const ProjectionRecord& record) {
    if (!record.per_budget_answers) throw InvalidRecord(record.instance_id + ": no per_budget_answers");
    return make(*record.per_budget_answers);
}

int first_match(const BudgetAnswers& b) {
    const auto& full = b.answers.at(b.full_budget);
    for (const auto& [l, a] : b.answers)
        if (answers_equal(a, full)) return l;
    return b.full_budget;
}

int stable_match(const BudgetAnswers& b) {
    const auto& full = b.answers.at(b.full_budget);
    int l = b.full_budget;
    while (l > 0 && answers_equal(b.answers.at(l - 1), full)) --l;
    return l;
}

void MeanStd::add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void MeanStd::merge(const MeanStd& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
        *this = o;
        return;
    }
    const double n = static_cast<double>(n_ + o.n_);
    const double delta = o.mean_ - mean_;
    mean_ += delta * static_cast<double>(o.n_) / n;
    m2_ += o.m2_ + delta * delta * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
    n_ += o.n_;
}

double MeanStd::stddev() const { return n_ == 0 ? 0.0 : std::sqrt(std::max(0.0, m2_ / static_cast<double>(n_))); }

namespace {

std::string mean_std(double mean, double std, int decimals) {
    char buf[64];
    // avoid "-0.0"
    if (std::fabs(mean) < 0.5 * std::pow(10.0, -decimals)) mean = 0.0;
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, mean, decimals, std);
    return buf;
}

} // namespace

std::string MeanStd::format(int decimals) const {
    if (n_ == 0) return "n/a";
    return mean_std(mean_, stddev(), decimals);
}

void StoppingStats::add(const BudgetAnswers& b) {
    const int f = first_match(b);
    const int s = stable_match(b);
    first.add(f);
    stable.add(s);
    // L = 0 means there is nothing to stop early; count it as 0%
    first_percent.add(b.full_budget == 0 ? 0.0 : 100.0 * f / b.full_budget);
    stable_percent.add(b.full_budget == 0 ? 0.0 : 100.0 * s / b.full_budget);
    full_budget.add(b.full_budget);
}

void StoppingStats::merge(const StoppingStats& o) {
    first.merge(o.first);
    stable.merge(o.stable);
    first_percent.merge(o.first_percent);
    stable_percent.merge(o.stable_percent);
    full_budget.merge(o.full_budget);
}

std::string StoppingStats::pooled_first_percent() const {
    if (count() == 0 || full_budget.mean() == 0.0) return "n/a";
    const double scale = 100.0 / full_budget.mean();
    return mean_std(first.mean() * scale, first.stddev() * scale, 1);
}

std::string StoppingStats::pooled_stable_percent() const {
    if (count() == 0 || full_budget.mean() == 0.0) return "n/a";
    const double scale = 100.0 / full_budget.mean();
    return mean_std(stable.mean() * scale, stable.stddev() * scale, 1);
}

void StoppingReport::add(const std::string& method, const ProjectionRecord& record) {
    const auto b = BudgetAnswers::of(record);
    methods[method].add(b);
    rows[method].push_back({record.instance_id, b.full_budget, first_match(b), stable_match(b)});
}

std::string StoppingReport::to_csv() const {
    std::ostringstream out;
    out << "metric";
    for (const auto& [m, s] : methods) out << ',' << m;
    out << '\n';
    auto line = [&](const char* name, auto cell) {
        out << name;
        for (const auto& [m, s] : methods) out << ',' << cell(s);
        out << '\n';
    };
    line("n", [](const StoppingStats& s) { return std::to_string(s.count()); });
    line("first_match", [](const StoppingStats& s) { return s.first.format(); });
    line("stable_match", [](const StoppingStats& s) { return s.stable.format(); });
    line("first_match_percent", [](const StoppingStats& s) { return s.first_percent.format(); });
    line("stable_match_percent", [](const StoppingStats& s) { return s.stable_percent.format(); });
    line("first_match_percent_pooled", [](const StoppingStats& s) { return s.pooled_first_percent(); });
    line("stable_match_percent_pooled", [](const StoppingStats& s) { return s.pooled_stable_percent(); });
    return out.str();
}

std::string StoppingReport::rows_csv() const {
    std::ostringstream out;
    out << "instance_id,method,full_budget,first_match,stable_match\n";
    for (const auto& [m, rs] : rows)
        for (const auto& r : rs)
            out << r.instance_id << ',' << m << ',' << r.full_budget << ',' << r.first << ',' << r.stable << '\n';
    return out.str();
}

StoppingReport aggregate(const std::string& method, std::span<const ProjectionRecord> records) {
    std::vector<const ProjectionRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->instance_id < b->instance_id; });
    StoppingReport report;
    report.methods[method];
    for (const auto* r : sorted) report.add(method, *r);
    return report;
}

} // namespace lrmtrace
