#include "lrmtrace/backtrack.hpp"

#include "lrmtrace/errors.hpp"
#include "lrmtrace/parallel.hpp"
#include "lrmtrace/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace lrmtrace {

std::optional<NodePlacement> FoundTree::placement_at(int position) const {
    for (const auto& p : placements)
        if (p.position == position) return p;
    return std::nullopt;
}

bool correct_answer_in_top_k(const ProjectionRecord& record, int k) {
    const auto correct = normalize_number_token(record.correct_answer);
    return correct && rank_of(record.answer_projections, *correct, k).has_value();
}

bool answer_gate(const ProjectionRecord& record, std::int64_t final_result, int k) {
    const auto correct = normalize_number_token(record.correct_answer);
    if (correct && *correct == final_result && record.prediction_correct()) return true;
    return rank_of(record.answer_projections, final_result, k).has_value();
}

namespace {

using State = std::vector<std::int8_t>; // per DAG node: assigned position or -1

struct SearchSpace {
    const TraceDag& dag;
    std::vector<bool> need;                    // must be placed at a latent position
    std::vector<std::vector<int>> consumers;   // required consumers only
    int root = 0;
    int answer_position = 0;
};

bool available(const SearchSpace& sp, const State& s, int node) {
    if (!sp.need[static_cast<std::size_t>(node)] || s[static_cast<std::size_t>(node)] >= 0) return false;
    for (int c : sp.consumers[static_cast<std::size_t>(node)])
        if (s[static_cast<std::size_t>(c)] < 0) return false;
    return true;
}

bool complete(const SearchSpace& sp, const State& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (sp.need[i] && s[i] < 0) return false;
    return true;
}

TreeScore score_of(const ProjectionRecord& record, const SearchSpace& sp, const State& s, int k) {
    TreeScore score;
    for (std::size_t i = 0; i < s.size(); ++i) {
        score.positions.push_back(s[i]);
        if (!sp.need[i] || s[i] < 0) continue;
        score.rank_sum += *rank_of(record.position(s[i]), sp.dag.nodes[i].value, k);
        score.position_sum += s[i];
    }
    return score;
}

} // namespace

SearchResult search_trace(const ProjectionRecord& record, const ReasoningTrace& trace, int trace_index,
                          const BacktrackOptions& options) {
    SearchResult result;
    TraceDag dag;
    try {
        dag = build_dag(trace, record.question_numbers);
    } catch (const InvalidTrace&) {
        result.invalid_traces = 1;
        return result;
    }
    if (!answer_gate(record, trace.final_result(), options.k)) return result;

    const std::size_t n = dag.nodes.size();
    if (n > 127) {
        result.invalid_traces = 1;
        return result;
    }
    SearchSpace sp{dag, std::vector<bool>(n, false), std::vector<std::vector<int>>(n), dag.root,
                   record.answer_position()};
    const auto required = dag.required_nodes();
    std::vector<bool> is_required(n, false);
    for (int r : required) is_required[static_cast<std::size_t>(r)] = true;
    for (int r : required) {
        const auto& node = dag.nodes[static_cast<std::size_t>(r)];
        sp.need[static_cast<std::size_t>(r)] =
            r != dag.root && !(options.allow_question_tokens && node.question_leaf);
        for (int c : dag.consumers_of(r))
            if (is_required[static_cast<std::size_t>(c)]) sp.consumers[static_cast<std::size_t>(r)].push_back(c);
    }

    State initial(n, -1);
    initial[static_cast<std::size_t>(dag.root)] = static_cast<std::int8_t>(sp.answer_position);
    std::set<State> partial{initial};
    std::set<State> found;
    if (complete(sp, initial)) found.insert(initial);

    for (int pos = record.num_latent_positions - 1; pos >= 0; --pos) {
        const auto& proj = record.latent_projections[static_cast<std::size_t>(pos)];
        std::set<State> next;
        for (const auto& s : partial) {
            std::vector<int> matches;
            for (std::size_t i = 0; i < n; ++i)
                if (available(sp, s, static_cast<int>(i)) && rank_of(proj, dag.nodes[i].value, options.k))
                    matches.push_back(static_cast<int>(i));
            if (matches.empty() || options.exhaustive) next.insert(s);
            for (int m : matches) {
                State t = s;
                t[static_cast<std::size_t>(m)] = static_cast<std::int8_t>(pos);
                next.insert(std::move(t));
            }
        }
        if (next.size() > options.max_partial) {
            result.truncated = true;
            next.erase(std::next(next.begin(), static_cast<std::ptrdiff_t>(options.max_partial)), next.end());
        }
        partial = std::move(next);
        for (const auto& s : partial)
            if (complete(sp, s)) found.insert(s);
    }
    if (found.empty()) return result;

    const State* best = nullptr;
    TreeScore best_score;
    for (const auto& s : found) {
        auto sc = score_of(record, sp, s, options.k);
        if (!best || sc < best_score) {
            best = &s;
            best_score = std::move(sc);
        }
    }

    FoundTree tree;
    tree.trace_index = trace_index;
    tree.allow_question_tokens = options.allow_question_tokens;
    tree.score = best_score;
    for (int r : required) {
        const auto i = static_cast<std::size_t>(r);
        const auto& node = dag.nodes[i];
        if (r == dag.root) {
            tree.placements.push_back(NodePlacement{
                node.value, sp.answer_position,
                rank_of(record.answer_projections, node.value, options.k).value_or(0), node.collapsed()});
        } else if (!sp.need[i]) {
            tree.question_leaves.push_back(node.value);
        } else {
            const int pos = (*best)[i];
            tree.placements.push_back(NodePlacement{node.value, pos,
                                                    *rank_of(record.position(pos), node.value, options.k),
                                                    node.collapsed()});
        }
    }
    std::stable_sort(tree.placements.begin(), tree.placements.end(),
                     [](const NodePlacement& a, const NodePlacement& b) { return a.position < b.position; });
    std::sort(tree.question_leaves.begin(), tree.question_leaves.end());
    result.tree = std::move(tree);
    return result;
}

SearchResult search_traces(const ProjectionRecord& record, std::span<const ReasoningTrace> traces,
                           const BacktrackOptions& options) {
    SearchResult out;
    std::optional<FoundTree> best_alt;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        auto r = search_trace(record, traces[i], static_cast<int>(i), options);
        out.truncated = out.truncated || r.truncated;
        out.invalid_traces += r.invalid_traces;
        if (!r.tree) continue;
        if (i == 0) {
            out.tree = std::move(r.tree);
        } else if (!out.tree && (!best_alt || r.tree->score < best_alt->score)) {
            best_alt = std::move(r.tree);
        }
    }
    if (!out.tree) out.tree = std::move(best_alt);
    return out;
}

std::optional<FoundTree> backtrack_search(const ProjectionRecord& record, std::span<const ReasoningTrace> traces,
                                          const BacktrackOptions& options) {
    return search_traces(record, traces, options).tree;
}

// ----------------------------------------------------------------------------
// Baseline
// ----------------------------------------------------------------------------

std::vector<PoolTrace> baseline_pool(std::span<const ProjectionRecord> records) {
    std::vector<PoolTrace> pool;
    for (const auto& r : records)
        if (!r.gold_traces.empty()) pool.push_back(PoolTrace{r.instance_id, r.gold_traces.front()});
    return pool;
}

namespace {

std::string joined(const ReasoningTrace& t) {
    std::string s;
    for (const auto& step : render_trace(t)) s += step + ';';
    return s;
}

} // namespace

std::vector<ReasoningTrace> sample_baseline_traces(const std::string& instance_id, std::size_t step_count,
                                                   std::span<const PoolTrace> pool, std::size_t n,
                                                   std::uint64_t seed) {
    if (n == 0) return {};
    std::map<std::string, const ReasoningTrace*> distinct;
    for (const auto& p : pool)
        if (p.instance_id != instance_id && p.trace.steps.size() == step_count)
            distinct.emplace(joined(p.trace), &p.trace);
    if (distinct.size() < n)
        throw InsufficientPool("instance " + instance_id + ": " + std::to_string(distinct.size()) + " " +
                               std::to_string(step_count) + "-step traces in pool, need " + std::to_string(n));
    std::vector<const ReasoningTrace*> items;
    for (const auto& [key, t] : distinct) items.push_back(t);
    Rng rng(SeedMixer(seed).add("baseline").add(instance_id).value());
    std::vector<ReasoningTrace> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(items.size() - 1)));
        std::swap(items[i], items[j]);
        out.push_back(*items[i]);
    }
    return out;
}

// ----------------------------------------------------------------------------
// Suite
// ----------------------------------------------------------------------------

std::string_view to_string(Bucket b) { return b == Bucket::correct ? "correct" : "incorrect"; }

std::string_view to_string(Condition c) {
    switch (c) {
    case Condition::primary: return "primary";
    case Condition::any_gold: return "any-gold";
    case Condition::baseline: return "baseline";
    }
    return "?";
}

std::string_view to_string(Variant v) { return v == Variant::verbatim ? "verbatim" : "exhaustive"; }

std::optional<double> RateCell::rate() const {
    if (n == 0) return std::nullopt;
    return 100.0 * static_cast<double>(found) / static_cast<double>(n);
}

std::string format_rate(const RateCell& cell) {
    auto r = cell.rate();
    if (!r) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%lld/%lld=%.1f%%", static_cast<long long>(cell.found),
                  static_cast<long long>(cell.n), *r);
    return buf;
}

namespace {

std::string percent_cell(const RateCell& c) {
    auto r = c.rate();
    if (!r) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", *r);
    return buf;
}

} // namespace

void BacktrackReport::add(const InstanceOutcome& o) {
    ++records;
    if (!o.has_gold) {
        ++skipped_no_gold;
        return;
    }
    if (o.bucket == Bucket::incorrect) incorrect_answer_in_top_k.add(o.answer_in_top_k);
    if (!o.baseline_available && baseline_n > 0) ++baseline_unavailable;
    truncated += o.truncated ? 1 : 0;
    invalid_traces += o.invalid_traces;
    for (const auto& [key, hit] : o.found) {
        const auto& [cond, q, variant] = key;
        rows[{o.bucket, cond, q, variant}].add(hit);
        if (cond == Condition::any_gold) by_steps[{o.bucket, o.step_count, q, variant}].add(hit);
    }
}

BacktrackReport& BacktrackReport::merge(const BacktrackReport& other) {
    for (const auto& [k2, c] : other.rows) rows[k2] += c;
    for (const auto& [k2, c] : other.by_steps) by_steps[k2] += c;
    incorrect_answer_in_top_k += other.incorrect_answer_in_top_k;
    records += other.records;
    skipped_no_gold += other.skipped_no_gold;
    baseline_unavailable += other.baseline_unavailable;
    truncated += other.truncated;
    invalid_traces += other.invalid_traces;
    return *this;
}

std::string BacktrackReport::to_csv() const {
    std::ostringstream out;
    out << "bucket,condition,question_tokens,variant,n,found,rate_percent\n";
    for (const auto& [key, c] : rows) {
        const auto& [b, cond, q, v] = key;
        out << to_string(b) << ',' << to_string(cond) << ',' << (q ? "with" : "without") << ',' << to_string(v)
            << ',' << c.n << ',' << c.found << ',' << percent_cell(c) << '\n';
    }
    return out.str();
}

std::string BacktrackReport::by_steps_csv() const {
    std::ostringstream out;
    out << "bucket,steps,question_tokens,variant,n,found,rate_percent\n";
    for (const auto& [key, c] : by_steps) {
        const auto& [b, steps, q, v] = key;
        out << to_string(b) << ',' << steps << ',' << (q ? "with" : "without") << ',' << to_string(v) << ','
            << c.n << ',' << c.found << ',' << percent_cell(c) << '\n';
    }
    return out.str();
}

nlohmann::json BacktrackReport::to_json() const {
    using nlohmann::json;
    auto cell = [](const RateCell& c) {
        json j{{"n", c.n}, {"found", c.found}};
        if (auto r = c.rate()) j["rate_percent"] = *r;
        else j["rate_percent"] = nullptr;
        return j;
    };
    json j;
    j["format"] = "backtrack-report/1";
    j["k"] = k;
    j["baseline_n"] = baseline_n;
    j["records"] = records;
    j["skipped_no_gold"] = skipped_no_gold;
    j["baseline_unavailable"] = baseline_unavailable;
    j["truncated"] = truncated;
    j["invalid_traces"] = invalid_traces;
    auto top = cell(incorrect_answer_in_top_k);
    top["summary"] = format_rate(incorrect_answer_in_top_k);
    j["incorrect_answer_in_top_k"] = top;
    json rows_j = json::array();
    for (const auto& [key, c] : rows) {
        const auto& [b, cond, q, v] = key;
        auto r = cell(c);
        r["bucket"] = to_string(b);
        r["condition"] = to_string(cond);
        r["question_tokens"] = q;
        r["variant"] = to_string(v);
        rows_j.push_back(std::move(r));
    }
    j["rows"] = std::move(rows_j);
    json steps_j = json::array();
    for (const auto& [key, c] : by_steps) {
        const auto& [b, steps, q, v] = key;
        auto r = cell(c);
        r["bucket"] = to_string(b);
        r["steps"] = steps;
        r["question_tokens"] = q;
        r["variant"] = to_string(v);
        steps_j.push_back(std::move(r));
    }
    j["by_steps"] = std::move(steps_j);
    return j;
}

InstanceOutcome evaluate_instance(const ProjectionRecord& record, std::span<const PoolTrace> pool,
                                  const SuiteConfig& config) {
    InstanceOutcome o;
    o.instance_id = record.instance_id;
    if (record.gold_traces.empty()) return o;
    o.has_gold = true;
    o.bucket = record.prediction_correct() ? Bucket::correct : Bucket::incorrect;
    o.step_count = static_cast<int>(record.gold_traces.front().steps.size());
    o.answer_in_top_k = correct_answer_in_top_k(record, config.k);

    std::vector<ReasoningTrace> baseline;
    if (config.baseline_n > 0) {
        try {
            baseline = sample_baseline_traces(record.instance_id, record.gold_traces.front().steps.size(), pool,
                                              config.baseline_n, config.seed);
            o.baseline_available = true;
        } catch (const InsufficientPool&) {
        }
    }

    const std::span<const ReasoningTrace> gold(record.gold_traces);
    bool first_variant = true;
    for (Variant v : config.variants) {
        for (bool q : {false, true}) {
            BacktrackOptions opts{config.k, q, v == Variant::exhaustive, config.max_partial};
            auto primary = search_traces(record, gold.first(1), opts);
            auto any = search_traces(record, gold, opts);
            o.found[{Condition::primary, q, v}] = primary.found();
            o.found[{Condition::any_gold, q, v}] = any.found();
            o.truncated = o.truncated || primary.truncated || any.truncated;
            if (first_variant && !q) o.invalid_traces = any.invalid_traces;
            if (o.baseline_available) {
                bool hit = false;
                for (std::size_t i = 0; i < baseline.size() && !hit; ++i) {
                    auto r = search_trace(record, baseline[i], static_cast<int>(i), opts);
                    hit = r.found();
                    o.truncated = o.truncated || r.truncated;
                }
                o.found[{Condition::baseline, q, v}] = hit;
            }
            if (first_variant) (q ? o.tree_with_question : o.tree_without_question) = any.tree;
        }
        first_variant = false;
    }
    return o;
}

BacktrackReport empty_report(const SuiteConfig& config) {
    BacktrackReport report;
    report.k = config.k;
    report.baseline_n = config.baseline_n;
    for (Bucket b : {Bucket::correct, Bucket::incorrect})
        for (Condition c : {Condition::primary, Condition::any_gold, Condition::baseline})
            for (bool q : {false, true})
                for (Variant v : config.variants) {
                    if (c == Condition::baseline && config.baseline_n == 0) continue;
                    report.rows[{b, c, q, v}];
                }
    return report;
}

SuiteResult backtrack_suite(std::span<const ProjectionRecord> records, const SuiteConfig& config) {
    const auto pool = baseline_pool(records);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].instance_id < records[b].instance_id;
    });
    SuiteResult out;
    out.instances = parallel_map(order.size(), config.jobs,
                                 [&](std::size_t i) { return evaluate_instance(records[order[i]], pool, config); });
    out.report = empty_report(config);
    for (const auto& o : out.instances) out.report.add(o);
    return out;
}

// ----------------------------------------------------------------------------
// Markdown
// ----------------------------------------------------------------------------

namespace {

std::string md_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '|' || c == '*' || c == '_' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out.empty() ? std::string(" ") : out;
}

} // namespace

std::string render_markdown(const ProjectionRecord& record, const FoundTree* tree, int k) {
    std::ostringstream out;
    const int positions = record.num_latent_positions + 1;
    out << "| rank |";
    for (int p = 0; p < record.num_latent_positions; ++p) out << " LT" << p << " |";
    out << " Answer |\n|---|";
    for (int p = 0; p < positions; ++p) out << "---|";
    out << '\n';
    for (int r = 1; r <= k; ++r) {
        out << "| " << r << " |";
        for (int p = 0; p < positions; ++p) {
            const auto& proj = record.position(p);
            const ProjectionEntry* entry = nullptr;
            for (const auto& e : proj)
                if (e.rank == r) entry = &e;
            if (!entry) {
                out << "   |";
                continue;
            }
            bool mark = false;
            if (tree) {
                auto pl = tree->placement_at(p);
                mark = pl && pl->rank == r;
            }
            const auto text = md_escape(entry->token);
            out << ' ' << (mark ? "**" + text + "**" : text) << " |";
        }
        out << '\n';
    }
    if (tree) {
        out << "\nTrace " << tree->trace_index << ", question tokens "
            << (tree->allow_question_tokens ? "allowed" : "excluded");
        if (!tree->question_leaves.empty()) {
            out << "; from question:";
            for (auto v : tree->question_leaves) out << ' ' << v;
        }
        out << '\n';
    }
    return out.str();
}

} // namespace lrmtrace
