#include "lrmtrace/forward_chain.hpp"

#include "lrmtrace/errors.hpp"
#include "lrmtrace/parallel.hpp"
#include "lrmtrace/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

namespace lrmtrace {

std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::verified_intermediate: return "verified-intermediate";
    case Provenance::question: return "question";
    case Provenance::topk_lattice: return "topk-lattice";
    case Provenance::unverified_intermediate: return "unverified-intermediate";
    }
    return "?";
}

void ChainConfig::validate() const {
    if (d < 1) throw Error("d must be at least 1");
    if (k < 1) throw Error("k must be at least 1");
    if (n_attempts < 1) throw Error("n_attempts must be at least 1");
    if (r_passes < 1 || r_passes > n_attempts)
        throw Error("r_passes must lie in 1.." + std::to_string(n_attempts));
    if (range_lo < 1 || range_hi < range_lo) throw Error("invalid counterfactual range");
    if (max_resamples < 1) throw Error("max_resamples must be at least 1");
    if (!single_token) throw Error("missing single-token predicate");
}

Provenance CandidateStep::weakest() const {
    Provenance w = Provenance::verified_intermediate;
    for (auto p : operand_provenance) w = std::max(w, p);
    return w;
}

namespace {

std::optional<std::int64_t> target_at(const ProjectionRecord& record, int position, int k) {
    const auto ints = integers_in_top_k(record.position(position), k);
    if (ints.empty()) return std::nullopt;
    return ints.front().value;
}

OperandSource source_of(Provenance p) {
    switch (p) {
    case Provenance::question: return OperandSource::question;
    case Provenance::topk_lattice: return OperandSource::topk_lattice;
    default: return OperandSource::intermediate;
    }
}

bool is_intermediate(Provenance p) {
    return p == Provenance::verified_intermediate || p == Provenance::unverified_intermediate;
}

// Non-negative integer result of a op b, as in evaluate_integral.
std::optional<std::int64_t> apply(Op op, std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    switch (op) {
    case Op::add:
        if (__builtin_add_overflow(a, b, &r)) return std::nullopt;
        break;
    case Op::sub: r = a - b; break;
    case Op::mul:
        if (__builtin_mul_overflow(a, b, &r)) return std::nullopt;
        break;
    case Op::div:
        if (b == 0 || a % b != 0) return std::nullopt;
        r = a / b;
        break;
    }
    if (r < 0) return std::nullopt;
    return r;
}

struct Match {
    std::vector<int> idx;
    std::vector<Op> ops;
    Grouping grouping = Grouping::left_first;
    Provenance weakest = Provenance::verified_intermediate;
    std::vector<Provenance> profile; ///< operand provenances, best first
};

} // namespace

std::vector<PoolEntry> operand_pool(const ProjectionRecord& record, int position,
                                    const std::vector<CandidateStep>& accepted, const ChainConfig& config) {
    std::vector<PoolEntry> pool;
    auto add = [&](std::int64_t v, Provenance p, int producer) {
        if (v < 0) return;
        auto it = std::find_if(pool.begin(), pool.end(), [&](const PoolEntry& e) { return e.value == v; });
        if (it == pool.end()) {
            pool.push_back({v, p, producer});
            return;
        }
        // better provenance wins; between intermediates of equal standing the
        // latest producer wins
        if (p < it->provenance || (p == it->provenance && is_intermediate(p))) {
            it->provenance = p;
            it->producer = producer;
        }
    };
    for (auto q : record.question_numbers) add(q, Provenance::question, -1);
    const int lattice = position - config.d;
    if (lattice >= 0 && lattice < record.num_latent_positions)
        for (const auto& ri : integers_in_top_k(record.position(lattice), config.k))
            add(ri.value, Provenance::topk_lattice, -1);
    for (int p = 0; p < std::min(position, record.num_latent_positions); ++p)
        if (auto t = target_at(record, p, config.k)) add(*t, Provenance::topk_lattice, -1);
    for (std::size_t i = 0; i < accepted.size(); ++i)
        add(accepted[i].step.result,
            accepted[i].verified ? Provenance::verified_intermediate : Provenance::unverified_intermediate,
            static_cast<int>(i));
    return pool;
}

std::vector<CandidateStep> generate_candidates(const ProjectionRecord& record, int position,
                                               const std::vector<CandidateStep>& accepted,
                                               const ChainConfig& config) {
    const auto target = target_at(record, position, config.k);
    // a prompt number at the top is read as an operand, not a step result
    if (!target || std::count(record.question_numbers.begin(), record.question_numbers.end(), *target) > 0)
        return {};
    const auto pool = operand_pool(record, position, accepted, config);
    const int n = static_cast<int>(pool.size());
    const std::int64_t t = *target;

    std::vector<Match> matches;
    auto weakest = [&](std::initializer_list<int> idx) {
        Provenance w = Provenance::verified_intermediate;
        for (int i : idx) w = std::max(w, pool[static_cast<std::size_t>(i)].provenance);
        return w;
    };
    auto profile = [&](std::initializer_list<int> idx) {
        std::vector<Provenance> p;
        for (int i : idx) p.push_back(pool[static_cast<std::size_t>(i)].provenance);
        std::sort(p.begin(), p.end());
        return p;
    };
    for (int a = 0; a < n; ++a) {
        const auto va = pool[static_cast<std::size_t>(a)].value;
        for (int b = 0; b < n; ++b) {
            if (b == a) continue;
            const auto vb = pool[static_cast<std::size_t>(b)].value;
            for (Op o1 : kAllOps) {
                const auto ab = apply(o1, va, vb);
                if (ab && *ab == t) matches.push_back({{a, b}, {o1}, Grouping::left_first, weakest({a, b}), profile({a, b})});
                for (int c = 0; c < n; ++c) {
                    if (c == a || c == b) continue;
                    const auto vc = pool[static_cast<std::size_t>(c)].value;
                    for (Op o2 : kAllOps) {
                        if (ab) {
                            const auto r = apply(o2, *ab, vc);
                            if (r && *r == t)
                                matches.push_back({{a, b, c}, {o1, o2}, Grouping::left_first, weakest({a, b, c}),
                                                    profile({a, b, c})});
                        }
                        const auto bc = apply(o2, vb, vc);
                        if (bc) {
                            const auto r = apply(o1, va, *bc);
                            if (r && *r == t)
                                matches.push_back({{a, b, c}, {o1, o2}, Grouping::right_first, weakest({a, b, c}),
                                                    profile({a, b, c})});
                        }
                    }
                }
            }
        }
    }
    std::stable_sort(matches.begin(), matches.end(), [](const Match& x, const Match& y) {
        if (x.weakest != y.weakest) return x.weakest < y.weakest;
        if (x.idx.size() != y.idx.size()) return x.idx.size() < y.idx.size();
        if (x.profile != y.profile) return x.profile < y.profile;
        if (x.idx != y.idx) return x.idx < y.idx;
        if (x.ops != y.ops) return x.ops < y.ops;
        return x.grouping < y.grouping;
    });

    std::vector<CandidateStep> out;
    std::set<std::string> seen;
    for (const auto& m : matches) {
        if (out.size() >= config.max_candidates) break;
        CandidateStep c;
        c.position = position;
        std::vector<std::int64_t> values;
        for (int i : m.idx) {
            const auto& e = pool[static_cast<std::size_t>(i)];
            values.push_back(e.value);
            c.operand_provenance.push_back(e.provenance);
            c.producers.push_back(is_intermediate(e.provenance) ? e.producer : -1);
        }
        c.step = ReasoningStep::make(values, m.ops, t, m.grouping);
        c.step.operand_sources.clear();
        for (auto p : c.operand_provenance) c.step.operand_sources.push_back(source_of(p));
        if (!seen.insert(canonical_key(c.step)).second) continue;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<std::int64_t> base_operands(const CandidateStep& candidate, const std::vector<CandidateStep>& accepted,
                                        std::span<const std::int64_t> question_numbers) {
    std::vector<std::int64_t> out;
    std::function<void(const CandidateStep&)> walk = [&](const CandidateStep& c) {
        for (std::size_t i = 0; i < c.step.operands.size(); ++i) {
            if (c.producers[i] >= 0) {
                walk(accepted.at(static_cast<std::size_t>(c.producers[i])));
                continue;
            }
            const auto v = c.step.operands[i];
            if (c.operand_provenance[i] != Provenance::question) continue;
            if (std::count(question_numbers.begin(), question_numbers.end(), v) != 1) continue;
            if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        }
    };
    walk(candidate);
    return out;
}

std::optional<std::int64_t> recompute(const CandidateStep& candidate, const std::vector<CandidateStep>& accepted,
                                      std::int64_t original, std::int64_t replacement,
                                      const SingleTokenPredicate& single_token) {
    std::function<std::optional<std::int64_t>(const CandidateStep&)> eval =
        [&](const CandidateStep& c) -> std::optional<std::int64_t> {
        std::vector<std::int64_t> values;
        for (std::size_t i = 0; i < c.step.operands.size(); ++i) {
            if (c.producers[i] >= 0) {
                auto v = eval(accepted.at(static_cast<std::size_t>(c.producers[i])));
                if (!v) return std::nullopt;
                values.push_back(*v);
            } else if (c.operand_provenance[i] == Provenance::question && c.step.operands[i] == original) {
                values.push_back(replacement);
            } else {
                values.push_back(c.step.operands[i]);
            }
        }
        auto r = evaluate_integral(c.step, values);
        if (!r || *r <= 0 || !single_token(std::to_string(*r))) return std::nullopt;
        return r;
    };
    return eval(candidate);
}

std::string attempt_id(const CandidateStep& candidate, int attempt) {
    return "p" + std::to_string(candidate.position) + ":" + render(candidate.step) + ":" + std::to_string(attempt);
}

CandidateStep verify_step(CandidateStep candidate, const std::vector<CandidateStep>& accepted,
                          const ProjectionRecord& record, ProjectionOracle& oracle, const ChainConfig& config) {
    candidate.verify_passes = 0;
    candidate.attempts = 0;
    candidate.verified = false;
    const auto& q = record.question_numbers;
    const auto bases = base_operands(candidate, accepted, q);
    candidate.traceable = !bases.empty();
    if (!candidate.traceable) return candidate;

    for (int i = 0; i < config.n_attempts; ++i) {
        ++candidate.attempts;
        const auto original = bases[static_cast<std::size_t>(i) % bases.size()];
        const auto id = attempt_id(candidate, i);
        Rng rng(SeedMixer(config.seed).add(record.instance_id).add(id).value());
        std::optional<std::int64_t> replacement;
        std::optional<std::int64_t> expected;
        for (int tries = 0; tries < config.max_resamples; ++tries) {
            const auto x = rng.uniform_int(config.range_lo, config.range_hi);
            if (x == original || std::find(q.begin(), q.end(), x) != q.end()) continue;
            if (!config.single_token(std::to_string(x))) continue;
            expected = recompute(candidate, accepted, original, x, config.single_token);
            if (expected) {
                replacement = x;
                break;
            }
        }
        if (!replacement) continue;
        const auto response = oracle.query(OracleRequest{record.instance_id, id, {original, *replacement}});
        if (response.num_latent_positions != record.num_latent_positions)
            throw OracleUnavailable("response for " + id + " has " + std::to_string(response.num_latent_positions) +
                                    " latent positions, expected " + std::to_string(record.num_latent_positions));
        if (target_at(response, candidate.position, config.k) == expected) ++candidate.verify_passes;
    }
    candidate.verified = candidate.verify_passes >= config.r_passes;
    return candidate;
}

ReasoningTrace ChainResult::reasoning_trace() const {
    ReasoningTrace t;
    for (const auto& c : trace) t.steps.push_back(c.step);
    return t;
}

ChainResult run_forward_chain(const ProjectionRecord& record, ProjectionOracle& oracle, const ChainConfig& config) {
    config.validate();
    ChainResult out;
    out.instance_id = record.instance_id;
    for (int p = 0; p <= record.num_latent_positions; ++p) {
        PositionLog log;
        log.position = p;
        log.target = target_at(record, p, config.k);
        if (log.target) {
            const auto candidates = generate_candidates(record, p, out.accepted, config);
            log.candidates = candidates.size();
            std::optional<CandidateStep> chosen;
            std::optional<CandidateStep> fallback;
            for (const auto& c : candidates) {
                auto v = verify_step(c, out.accepted, record, oracle, config);
                log.tried.push_back(v);
                if (!v.traceable) continue;
                if (v.verified) {
                    chosen = std::move(v);
                    break;
                }
                if (!fallback) fallback = std::move(v);
            }
            if (!chosen) chosen = std::move(fallback);
            if (chosen) {
                log.accepted = out.accepted.size();
                out.accepted.push_back(std::move(*chosen));
            }
        }
        out.log.push_back(std::move(log));
    }

    std::optional<std::int64_t> predicted;
    if (auto v = Rational::parse(canonical_answer(record.predicted_answer)); v && v->is_integer()) predicted = v->num;
    std::optional<std::size_t> root;
    for (std::size_t i = 0; i < out.accepted.size() && predicted; ++i)
        if (out.accepted[i].step.result == *predicted) {
            root = i;
            break;
        }
    if (!root) return out;

    std::set<std::size_t> included{*root};
    std::vector<std::size_t> stack{*root};
    while (!stack.empty()) {
        const auto i = stack.back();
        stack.pop_back();
        for (int p : out.accepted[i].producers)
            if (p >= 0 && included.insert(static_cast<std::size_t>(p)).second) stack.push_back(static_cast<std::size_t>(p));
    }
    out.has_root = true;
    out.tree_verified = true;
    for (auto i : included) {
        out.trace.push_back(out.accepted[i]);
        out.tree_verified = out.tree_verified && out.accepted[i].verified;
    }
    return out;
}

std::pair<std::vector<CandidateStep>, bool> forward_chain(const ProjectionRecord& record, ProjectionOracle& oracle,
                                                          const ChainConfig& config) {
    auto r = run_forward_chain(record, oracle, config);
    if (!r.has_root) throw NoRoot(record.instance_id + ": no accepted step produces " + record.predicted_answer);
    return {std::move(r.trace), r.tree_verified};
}

// ----------------------------------------------------------------------------
// Suite
// ----------------------------------------------------------------------------

ChainCell& ChainCell::operator+=(const ChainCell& o) {
    n += o.n;
    root_found += o.root_found;
    verified += o.verified;
    return *this;
}

ChainReport forward_chain_suite(std::span<const ProjectionRecord> records, ProjectionOracle& oracle,
                                const ChainConfig& config, std::span<const int> r_passes_values, int jobs) {
    std::vector<const ProjectionRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->instance_id < b->instance_id; });
    ChainReport report;
    for (int r : r_passes_values) {
        auto cfg = config;
        cfg.r_passes = r;
        cfg.validate();
        for (bool correct : {true, false}) report.rows[{r, correct}];
        auto results = parallel_map(sorted.size(), jobs,
                                    [&](std::size_t i) { return run_forward_chain(*sorted[i], oracle, cfg); });
        for (std::size_t i = 0; i < results.size(); ++i) {
            auto& cell = report.rows[{r, sorted[i]->prediction_correct()}];
            ++cell.n;
            cell.root_found += results[i].has_root;
            cell.verified += results[i].has_root && results[i].tree_verified;
        }
        report.results[r] = std::move(results);
    }
    return report;
}

std::string ChainReport::to_csv() const {
    std::ostringstream out;
    out << "r_passes,bucket,n,root_found,verified,verified_rate_percent\n";
    for (const auto& [key, cell] : rows) {
        char rate[32] = "n/a";
        if (cell.n > 0) std::snprintf(rate, sizeof rate, "%.1f", cell.verified_rate());
        out << key.first << ',' << (key.second ? "correct" : "incorrect") << ',' << cell.n << ','
            << cell.root_found << ',' << cell.verified << ',' << rate << '\n';
    }
    return out.str();
}

std::string ChainReport::traces_csv() const {
    std::ostringstream out;
    out << "instance_id,r_passes,root,verified,trace\n";
    for (const auto& [r, results] : this->results) {
        for (const auto& res : results) {
            out << res.instance_id << ',' << r << ',' << (res.has_root ? "yes" : "no") << ','
                << (res.tree_verified ? "yes" : "no") << ',';
            for (std::size_t i = 0; i < res.trace.size(); ++i) {
                const auto& c = res.trace[i];
                if (i > 0) out << ' ';
                out << 'p' << c.position << ':' << render(c.step) << '[' << c.verify_passes << '/' << c.attempts
                    << ']';
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string render_chain_markdown(const ProjectionRecord& record, const ChainResult& result, int k) {
    std::map<int, const CandidateStep*> at;
    for (const auto& c : result.trace) at[c.position] = &c;
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
            const ProjectionEntry* entry = nullptr;
            for (const auto& e : record.position(p))
                if (e.rank == r) entry = &e;
            if (!entry) {
                out << "   |";
                continue;
            }
            std::string text;
            for (char ch : entry->token) {
                if (ch == '|' || ch == '*' || ch == '\\') text += '\\';
                text += ch;
            }
            const auto it = at.find(p);
            const auto top = top_integer(record.position(p));
            if (it != at.end() && top && top->rank == r)
                text = "**" + text + "** (" + std::to_string(it->second->verify_passes) + "/" +
                       std::to_string(it->second->attempts) + ")";
            out << ' ' << text << " |";
        }
        out << '\n';
    }
    out << "\nTrace:";
    if (result.trace.empty()) out << " none";
    for (const auto& c : result.trace) out << ' ' << render(c.step);
    out << (result.tree_verified ? " (verified)" : result.has_root ? " (unverified)" : "") << '\n';
    return out.str();
}

} // namespace lrmtrace
