#include "lrmtrace/synthetic.hpp"

#include "lrmtrace/errors.hpp"
#include "lrmtrace/projdump.hpp"
#include "lrmtrace/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <tuple>

namespace lrmtrace {

using nlohmann::json;

std::string_view to_string(EncodingStyle s) {
    return s == EncodingStyle::operands_and_results ? "operands-and-results" : "results-only";
}

std::string_view to_string(RankLaw r) { return r == RankLaw::always_top ? "always-top" : "geometric"; }

std::optional<EncodingStyle> encoding_style_from_string(std::string_view s) {
    if (s == "operands-and-results") return EncodingStyle::operands_and_results;
    if (s == "results-only") return EncodingStyle::results_only;
    return std::nullopt;
}

std::optional<RankLaw> rank_law_from_string(std::string_view s) {
    if (s == "always-top") return RankLaw::always_top;
    if (s == "geometric") return RankLaw::geometric;
    return std::nullopt;
}

std::string ValueRef::to_string() const {
    return (kind == Kind::prompt ? "p" : "s") + std::to_string(index);
}

ValueRef ValueRef::parse(std::string_view s) {
    if (s.size() < 2 || (s[0] != 'p' && s[0] != 's')) throw ParseError("bad value reference '" + std::string(s) + "'");
    int index = 0;
    for (char c : s.substr(1)) {
        if (c < '0' || c > '9') throw ParseError("bad value reference '" + std::string(s) + "'");
        index = index * 10 + (c - '0');
    }
    return ValueRef{s[0] == 'p' ? Kind::prompt : Kind::step, index};
}

// ----------------------------------------------------------------------------
// Entry evaluation
// ----------------------------------------------------------------------------

namespace {

std::vector<std::optional<std::int64_t>> evaluate_steps(const SyntheticEntry& e, std::span<const std::int64_t> prompt,
                                                        const std::vector<std::optional<std::int64_t>>* frozen_values) {
    std::vector<std::optional<std::int64_t>> values;
    for (std::size_t j = 0; j < e.steps.size(); ++j) {
        const auto& step = e.steps[j];
        if (step.frozen && frozen_values) {
            values.push_back((*frozen_values)[j]);
            continue;
        }
        std::vector<std::int64_t> operands;
        bool ok = true;
        for (const auto& ref : step.operands) {
            auto v = e.value_of(ref, prompt, values);
            if (!v) {
                ok = false;
                break;
            }
            operands.push_back(*v);
        }
        std::optional<std::int64_t> r;
        if (ok) {
            auto probe = ReasoningStep::make(operands, step.operators, 0, step.grouping);
            r = evaluate_integral(probe, operands);
            if (r && *r <= 0) r.reset();
        }
        values.push_back(r);
    }
    return values;
}

} // namespace

std::optional<std::int64_t> SyntheticEntry::value_of(const ValueRef& ref, std::span<const std::int64_t> prompt,
                                                     const std::vector<std::optional<std::int64_t>>& steps) const {
    const auto i = static_cast<std::size_t>(ref.index);
    if (ref.kind == ValueRef::Kind::prompt) {
        if (i >= prompt.size()) throw InvalidRecord("prompt reference out of range");
        return prompt[i];
    }
    if (i >= steps.size()) throw InvalidRecord("step reference " + ref.to_string() + " used before it is computed");
    return steps[i];
}

std::vector<std::optional<std::int64_t>> SyntheticEntry::step_values(std::span<const std::int64_t> prompt) const {
    const auto original = evaluate_steps(*this, prompt_numbers, nullptr);
    return evaluate_steps(*this, prompt, &original);
}

ReasoningTrace SyntheticEntry::hidden_trace() const {
    const auto values = step_values(prompt_numbers);
    ReasoningTrace t;
    for (std::size_t j = 0; j < steps.size(); ++j) {
        std::vector<std::int64_t> operands;
        for (const auto& ref : steps[j].operands) operands.push_back(*value_of(ref, prompt_numbers, values));
        t.steps.push_back(ReasoningStep::make(operands, steps[j].operators, *values[j], steps[j].grouping));
    }
    annotate_sources(t, prompt_numbers);
    return t;
}

DatasetInstance SyntheticEntry::dataset_instance() const {
    return DatasetInstance{record.instance_id, record.prompt_text, render_trace(hidden_trace()), {},
                           record.correct_answer};
}

// ----------------------------------------------------------------------------
// Model
// ----------------------------------------------------------------------------

SyntheticModel::SyntheticModel(std::vector<SyntheticEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!index_.emplace(entries_[i].record.instance_id, i).second)
            throw ParseError("duplicate synthetic instance " + entries_[i].record.instance_id);
    }
}

const SyntheticEntry& SyntheticModel::at(const std::string& instance_id) const {
    auto it = index_.find(instance_id);
    if (it == index_.end()) throw UnknownRequest("unknown instance " + instance_id);
    return entries_[it->second];
}

std::vector<ProjectionRecord> SyntheticModel::records() const {
    std::vector<ProjectionRecord> out;
    for (const auto& e : entries_) out.push_back(e.record);
    return out;
}

std::vector<DatasetInstance> SyntheticModel::dataset() const {
    std::vector<DatasetInstance> out;
    for (const auto& e : entries_) out.push_back(e.dataset_instance());
    return out;
}

ProjectionRecord SyntheticModel::respond(const std::string& instance_id, const Substitution& sub) const {
    const auto& e = at(instance_id);
    auto it = std::find(e.prompt_numbers.begin(), e.prompt_numbers.end(), sub.original);
    if (it == e.prompt_numbers.end())
        throw InvalidSubstitution(std::to_string(sub.original) + " is not a number of the prompt of " + instance_id);
    if (sub.replacement <= 0) throw InvalidSubstitution("replacement must be positive");

    auto prompt = e.prompt_numbers;
    prompt[static_cast<std::size_t>(it - e.prompt_numbers.begin())] = sub.replacement;
    const auto values = e.step_values(prompt);
    std::optional<std::int64_t> predicted;
    if (!values.empty() && values.back()) {
        predicted = *values.back() + e.answer_offset;
        if (*predicted <= 0) predicted.reset();
    }

    ProjectionRecord r = e.record;
    r.prompt_text = substitute_prompt(e.record.prompt_text, sub.original, sub.replacement);
    for (auto& q : r.question_numbers)
        if (q == sub.original) q = sub.replacement;
    r.per_budget_answers.reset();
    r.gold_traces.clear();
    r.predicted_answer = predicted ? std::to_string(*predicted) : "?";
    r.correct_answer = values.empty() || !values.back() ? "?" : std::to_string(*values.back());

    for (const auto& slot : e.slots) {
        const bool faulted = std::any_of(e.faults.begin(), e.faults.end(), [&](const Fault& f) {
            return f.value == sub.original && f.position == slot.position;
        });
        if (faulted) continue;
        if (e.noise > 0.0) {
            Rng noise(SeedMixer(e.seed)
                          .add("noise")
                          .add(static_cast<std::uint64_t>(sub.original))
                          .add(static_cast<std::uint64_t>(sub.replacement))
                          .add(static_cast<std::uint64_t>(slot.position))
                          .add(static_cast<std::uint64_t>(slot.rank))
                          .value());
            if (noise.bernoulli(e.noise)) continue;
        }
        const auto v = slot.ref ? e.value_of(*slot.ref, prompt, values) : predicted;
        auto& proj = slot.position == r.num_latent_positions
                         ? r.answer_projections
                         : r.latent_projections.at(static_cast<std::size_t>(slot.position));
        proj.at(static_cast<std::size_t>(slot.rank - 1)).token = v ? std::to_string(*v) : "?";
    }
    return r;
}

// ----------------------------------------------------------------------------
// Generator
// ----------------------------------------------------------------------------

namespace {

constexpr const char* kWords[] = {"the", "of", "and", "to", "so", "then", "is", "it", "we", "total",
                                  "each", "per", "that", "which", "more", "left", "has", "for"};

bool valid_result(std::optional<std::int64_t> r, const std::set<std::int64_t>& used) {
    return r && *r > 0 && *r <= 999 && !used.count(*r);
}

struct Draft {
    std::vector<std::int64_t> prompt;
    std::vector<HiddenStep> steps;
    std::vector<std::int64_t> results;
};

std::optional<Draft> draft_trace(Rng& rng, int step_count) {
    Draft d;
    std::set<std::int64_t> used;
    auto new_prompt = [&]() -> int {
        for (int tries = 0; tries < 200; ++tries) {
            auto v = rng.uniform_int(2, 50);
            if (!used.count(v)) {
                used.insert(v);
                d.prompt.push_back(v);
                return static_cast<int>(d.prompt.size()) - 1;
            }
        }
        return -1;
    };
    std::vector<int> open; // step indices whose result is not consumed yet
    for (int j = 0; j < step_count; ++j) {
        const int remaining = step_count - j;
        bool placed = false;
        for (int tries = 0; tries < 60 && !placed; ++tries) {
            const auto prompt_mark = d.prompt.size();
            const auto used_mark = used;
            std::vector<ValueRef> refs;
            std::vector<int> consumed;
            if (open.empty() || (open.size() == 1 && remaining >= 2 && rng.bernoulli(0.25))) {
                const int a = new_prompt();
                const int b = new_prompt();
                if (a < 0 || b < 0) return std::nullopt;
                refs = {{ValueRef::Kind::prompt, a}, {ValueRef::Kind::prompt, b}};
            } else if (open.size() == 2 && (remaining == 1 || rng.bernoulli(0.5))) {
                refs = {{ValueRef::Kind::step, open[0]}, {ValueRef::Kind::step, open[1]}};
                consumed = {open[0], open[1]};
            } else {
                const int pick = open.size() == 2 ? static_cast<int>(rng.uniform_int(0, 1)) : 0;
                const int b = new_prompt();
                if (b < 0) return std::nullopt;
                refs = {{ValueRef::Kind::step, open[static_cast<std::size_t>(pick)]}, {ValueRef::Kind::prompt, b}};
                consumed = {open[static_cast<std::size_t>(pick)]};
            }
            if (rng.bernoulli(0.5)) std::swap(refs[0], refs[1]);
            const Op op = kAllOps[rng.uniform_int(0, 3)];
            std::vector<std::int64_t> operands;
            for (const auto& r : refs)
                operands.push_back(r.kind == ValueRef::Kind::prompt ? d.prompt[static_cast<std::size_t>(r.index)]
                                                                     : d.results[static_cast<std::size_t>(r.index)]);
            auto probe = ReasoningStep::make(operands, {op}, 0);
            auto result = evaluate_integral(probe, operands);
            if (!valid_result(result, used)) {
                d.prompt.resize(prompt_mark);
                used = used_mark;
                continue;
            }
            used.insert(*result);
            d.results.push_back(*result);
            d.steps.push_back(HiddenStep{refs, {op}, Grouping::left_first, false});
            for (int c : consumed) open.erase(std::find(open.begin(), open.end(), c));
            open.push_back(j);
            placed = true;
        }
        if (!placed) return std::nullopt;
    }
    if (open.size() != 1) return std::nullopt;
    return d;
}

// Values of steps 0..last with prompt number `index` set to x; nullopt when
// one of them is not a positive integer up to 999.
bool chain_valid(const Draft& d, std::size_t index, std::int64_t x, std::size_t last) {
    auto prompt = d.prompt;
    prompt[index] = x;
    std::vector<std::int64_t> results;
    for (std::size_t j = 0; j <= last; ++j) {
        std::vector<std::int64_t> operands;
        for (const auto& r : d.steps[j].operands)
            operands.push_back(r.kind == ValueRef::Kind::prompt ? prompt[static_cast<std::size_t>(r.index)]
                                                                : results[static_cast<std::size_t>(r.index)]);
        const auto v = evaluate_integral(ReasoningStep::make(operands, d.steps[j].operators, 0), operands);
        if (!v || *v <= 0 || *v > 999) return false;
        results.push_back(*v);
    }
    return true;
}

// Every prompt number a step depends on has at least `min_valid` replacements
// in 2..50 that keep the step chain valid.
bool counterfactually_verifiable(const Draft& d, int min_valid) {
    if (min_valid <= 0) return true;
    std::vector<std::set<int>> bases(d.steps.size());
    for (std::size_t j = 0; j < d.steps.size(); ++j) {
        for (const auto& r : d.steps[j].operands) {
            if (r.kind == ValueRef::Kind::prompt) bases[j].insert(r.index);
            else bases[j].insert(bases[static_cast<std::size_t>(r.index)].begin(),
                                 bases[static_cast<std::size_t>(r.index)].end());
        }
        for (int b : bases[j]) {
            int valid = 0;
            for (std::int64_t x = 2; x <= 50; ++x) {
                if (std::find(d.prompt.begin(), d.prompt.end(), x) != d.prompt.end()) continue;
                valid += chain_valid(d, static_cast<std::size_t>(b), x, j);
            }
            if (valid < min_valid) return false;
        }
    }
    return true;
}

std::string join_numbers(const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) s += (i + 1 == v.size()) ? " and " : ", ";
        s += std::to_string(v[i]);
    }
    return s;
}

int draw_rank(Rng& rng, const EncodingPolicy& policy) {
    int rank = 1;
    if (policy.rank_law == RankLaw::geometric)
        while (rank < policy.k && !rng.bernoulli(policy.rank_p)) ++rank;
    return rank;
}

double score_for(int rank, int k) { return 2.0 * (k - rank + 1) / (static_cast<double>(k) * (k + 1)); }

} // namespace

SyntheticModel generate_corpus(const CorpusSpec& spec) {
    const auto& policy = spec.policy;
    const int L = policy.latent_positions;
    const int k = policy.k;
    if (L < 1 || k < 1) throw Error("corpus needs at least one latent position and k >= 1");
    if (spec.min_steps < 1 || spec.max_steps < spec.min_steps)
        throw Error("invalid step range " + std::to_string(spec.min_steps) + ".." + std::to_string(spec.max_steps));
    if (spec.max_steps > L + 1) throw Error("at most L+1 steps fit the latent positions");
    const int width = std::max<int>(5, static_cast<int>(std::to_string(spec.count).size()));

    std::vector<SyntheticEntry> entries;
    for (std::size_t n = 0; n < spec.count; ++n) {
        const std::uint64_t inst_seed = SeedMixer(spec.seed).add("instance").add(n).value();
        Rng rng(inst_seed);
        const int S = static_cast<int>(rng.uniform_int(spec.min_steps, spec.max_steps));
        std::optional<Draft> draft;
        while (!(draft = draft_trace(rng, S)) || !counterfactually_verifiable(*draft, spec.min_counterfactuals)) {
        }

        SyntheticEntry e;
        e.seed = inst_seed;
        e.d = policy.d;
        e.noise = policy.counterfactual_error_probability;
        e.prompt_numbers = draft->prompt;
        e.steps = draft->steps;
        for (int j = 0; j + 1 < S; ++j)
            e.steps[static_cast<std::size_t>(j)].frozen =
                (policy.skip_step && *policy.skip_step == j) || rng.bernoulli(policy.skip_probability);

        char id[32];
        std::snprintf(id, sizeof id, "syn-%0*zu", width, n);
        auto& rec = e.record;
        rec.instance_id = id;
        rec.prompt_text = "Start with " + join_numbers(e.prompt_numbers) +
                          ". Combine them step by step. What is the final amount?";
        rec.question_numbers = e.prompt_numbers;
        rec.num_latent_positions = L;
        rec.normalized = true;

        const std::int64_t root = draft->results.back();
        std::set<std::int64_t> hidden(draft->prompt.begin(), draft->prompt.end());
        hidden.insert(draft->results.begin(), draft->results.end());
        std::int64_t predicted = root;
        const bool incorrect = rng.bernoulli(policy.incorrect_probability);
        if (incorrect) {
            for (int tries = 0; tries < 100; ++tries) {
                const auto delta = rng.uniform_int(1, 9);
                const auto p = root + delta <= 999 ? root + delta : root - delta;
                if (p > 0 && !hidden.count(p)) {
                    predicted = p;
                    break;
                }
            }
        }
        e.answer_offset = predicted - root;
        hidden.insert(predicted);
        rec.correct_answer = std::to_string(root);
        rec.predicted_answer = std::to_string(predicted);

        // Layout: positions for the encoded values. With more values than
        // latent positions, results keep their own positions and prompt
        // numbers share positions with results at other ranks.
        std::vector<std::pair<int, ValueRef>> placed; // position, ref
        if (policy.style == EncodingStyle::results_only) {
            for (int j = 0; j + 1 < S; ++j)
                placed.emplace_back((j + 1) * L / S, ValueRef{ValueRef::Kind::step, j});
        } else {
            std::vector<std::vector<ValueRef>> groups(static_cast<std::size_t>(S)); // new prompt refs per step
            std::set<int> listed;
            std::size_t total = static_cast<std::size_t>(S - 1);
            for (int j = 0; j < S; ++j)
                for (const auto& r : e.steps[static_cast<std::size_t>(j)].operands)
                    if (r.kind == ValueRef::Kind::prompt && listed.insert(r.index).second) {
                        groups[static_cast<std::size_t>(j)].push_back(r);
                        ++total;
                    }
            if (static_cast<int>(total) <= L) {
                int n = 0;
                const int N = static_cast<int>(total);
                for (int j = 0; j < S; ++j) {
                    for (const auto& r : groups[static_cast<std::size_t>(j)]) placed.emplace_back(n++ * L / N, r);
                    if (j + 1 < S) placed.emplace_back(n++ * L / N, ValueRef{ValueRef::Kind::step, j});
                }
            } else {
                // result j at (j+1)*L/S (needs S <= L to leave room before the
                // first result); prompts of step j spread over the positions
                // between the previous result and this one
                int prev = 0;
                for (int j = 0; j < S; ++j) {
                    const bool last = j + 1 == S;
                    const int at = last ? L : (j + 1) * L / S;
                    const auto& g = groups[static_cast<std::size_t>(j)];
                    const int span = at - prev;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (span > 0) placed.emplace_back(prev + static_cast<int>(i) * span / static_cast<int>(g.size()), g[i]);
                    if (!last) placed.emplace_back(at, ValueRef{ValueRef::Kind::step, j});
                    prev = at;
                }
            }
        }

        // Ranks are drawn for every planned value, then made distinct per
        // position (results first); presence is decided afterwards so that
        // lowering the fidelity only removes values.
        struct Draw {
            int position;
            ValueRef ref;
            int rank;
            bool present;
        };
        std::vector<Draw> draws;
        for (const auto& [pos, ref] : placed) {
            const double u = rng.uniform01();
            const int rank = draw_rank(rng, policy);
            const bool frozen = ref.kind == ValueRef::Kind::step && e.steps[static_cast<std::size_t>(ref.index)].frozen;
            draws.push_back({pos, ref, rank, u < policy.fidelity && !frozen});
        }
        std::stable_sort(draws.begin(), draws.end(), [](const Draw& a, const Draw& b) {
            if (a.position != b.position) return a.position < b.position;
            return (a.ref.kind == ValueRef::Kind::step) > (b.ref.kind == ValueRef::Kind::step);
        });
        std::vector<std::map<int, std::string>> encoded(static_cast<std::size_t>(L + 1));
        std::vector<std::set<int>> taken(static_cast<std::size_t>(L + 1));
        for (auto& d : draws) {
            auto& used_ranks = taken[static_cast<std::size_t>(d.position)];
            while (used_ranks.count(d.rank)) ++d.rank;
            used_ranks.insert(d.rank);
            if (!d.present || d.rank > k) continue;
            e.slots.push_back(Slot{d.position, d.rank, d.ref});
            encoded[static_cast<std::size_t>(d.position)][d.rank] =
                std::to_string(d.ref.kind == ValueRef::Kind::prompt
                                   ? e.prompt_numbers[static_cast<std::size_t>(d.ref.index)]
                                   : draft->results[static_cast<std::size_t>(d.ref.index)]);
        }
        std::sort(e.slots.begin(), e.slots.end(),
                  [](const Slot& a, const Slot& b) { return std::tie(a.position, a.rank) < std::tie(b.position, b.rank); });
        e.slots.push_back(Slot{L, 1, std::nullopt});
        encoded[static_cast<std::size_t>(L)][1] = rec.predicted_answer;
        if (incorrect && k >= 2 && rng.bernoulli(0.5)) {
            e.slots.push_back(Slot{L, 2, ValueRef{ValueRef::Kind::step, S - 1}});
            encoded[static_cast<std::size_t>(L)][2] = rec.correct_answer;
        }

        auto word = [&] { return std::string(kWords[rng.uniform_int(0, std::size(kWords) - 1)]); };
        auto distractor = [&] {
            for (;;) {
                auto v = rng.uniform_int(2, 999);
                if (!hidden.count(v)) return std::to_string(v);
            }
        };
        for (int pos = 0; pos <= L; ++pos) {
            Projection p;
            const auto& enc = encoded[static_cast<std::size_t>(pos)];
            const int deepest = enc.empty() ? 0 : enc.rbegin()->first;
            for (int r = 1; r <= k; ++r) {
                std::string tok;
                if (auto it = enc.find(r); it != enc.end()) tok = it->second;
                else if (r < deepest) tok = word();
                else tok = rng.bernoulli(policy.distractor_probability) ? distractor() : word();
                p.push_back(ProjectionEntry{tok, r, score_for(r, k)});
            }
            if (pos == L) rec.answer_projections = std::move(p);
            else rec.latent_projections.push_back(std::move(p));
        }

        e.stop_budget = policy.stop_budget ? std::clamp(*policy.stop_budget, 0, L)
                                           : static_cast<int>(rng.uniform_int(0, L));
        std::map<int, std::string> budgets;
        for (int l = 0; l <= L; ++l)
            budgets[l] = l >= e.stop_budget ? rec.predicted_answer : std::to_string(predicted + 1 + l);
        rec.per_budget_answers = std::move(budgets);
        rec.gold_traces.push_back(e.hidden_trace());
        validate_record(rec);
        entries.push_back(std::move(e));
    }
    return SyntheticModel(std::move(entries));
}

// ----------------------------------------------------------------------------
// synthmodel/1
// ----------------------------------------------------------------------------

json entry_to_json(const SyntheticEntry& e) {
    json steps = json::array();
    for (const auto& s : e.steps) {
        json ops = json::array();
        for (const auto& r : s.operands) ops.push_back(r.to_string());
        json syms = json::array();
        for (Op op : s.operators) syms.push_back(std::string(1, op_symbol(op)));
        steps.push_back({{"operands", ops},
                         {"operators", syms},
                         {"grouping", s.grouping == Grouping::left_first ? "left" : "right"},
                         {"frozen", s.frozen}});
    }
    json slots = json::array();
    for (const auto& s : e.slots)
        slots.push_back({{"position", s.position},
                         {"rank", s.rank},
                         {"ref", s.ref ? json(s.ref->to_string()) : json(nullptr)}});
    json faults = json::array();
    for (const auto& f : e.faults) faults.push_back({{"value", f.value}, {"position", f.position}});
    return json{{"format", kSynthModelFormat},
                {"record", record_to_json(e.record)},
                {"prompt_numbers", e.prompt_numbers},
                {"steps", steps},
                {"slots", slots},
                {"faults", faults},
                {"answer_offset", e.answer_offset},
                {"noise", e.noise},
                {"seed", e.seed},
                {"stop_budget", e.stop_budget},
                {"d", e.d}};
}

SyntheticEntry entry_from_json(const json& j) {
    if (j.value("format", std::string{}) != kSynthModelFormat)
        throw ParseError("expected format " + std::string(kSynthModelFormat));
    SyntheticEntry e;
    try {
        e.record = record_from_json(j.at("record"));
        e.prompt_numbers = j.at("prompt_numbers").get<std::vector<std::int64_t>>();
        for (const auto& s : j.at("steps")) {
            HiddenStep h;
            for (const auto& r : s.at("operands")) h.operands.push_back(ValueRef::parse(r.get<std::string>()));
            for (const auto& o : s.at("operators")) {
                auto op = op_from_symbol(o.get<std::string>());
                if (!op) throw ParseError("unknown operator " + o.dump());
                h.operators.push_back(*op);
            }
            h.grouping = s.value("grouping", std::string("left")) == "right" ? Grouping::right_first
                                                                              : Grouping::left_first;
            h.frozen = s.value("frozen", false);
            if (h.operands.size() != h.operators.size() + 1 || h.operands.size() < 2 || h.operands.size() > 3)
                throw ParseError("hidden step needs 2 or 3 operands and one fewer operator");
            e.steps.push_back(std::move(h));
        }
        for (const auto& s : j.at("slots")) {
            Slot slot{s.at("position").get<int>(), s.at("rank").get<int>(), std::nullopt};
            if (!s.at("ref").is_null()) slot.ref = ValueRef::parse(s["ref"].get<std::string>());
            e.slots.push_back(slot);
        }
        if (j.contains("faults"))
            for (const auto& f : j["faults"]) e.faults.push_back({f.at("value").get<std::int64_t>(), f.at("position").get<int>()});
        e.answer_offset = j.value("answer_offset", std::int64_t{0});
        e.noise = j.value("noise", 0.0);
        e.seed = j.value("seed", std::uint64_t{0});
        e.stop_budget = j.value("stop_budget", 0);
        e.d = j.value("d", 1);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("synthmodel entry: ") + ex.what());
    }
    const int L = e.record.num_latent_positions;
    for (const auto& s : e.slots) {
        if (s.position < 0 || s.position > L || s.rank < 1 ||
            s.rank > static_cast<int>(e.record.position(s.position).size()))
            throw ParseError(e.record.instance_id + ": slot outside the table");
    }
    for (std::size_t j = 0; j < e.steps.size(); ++j)
        for (const auto& r : e.steps[j].operands)
            if ((r.kind == ValueRef::Kind::step && r.index >= static_cast<int>(j)) ||
                (r.kind == ValueRef::Kind::prompt && r.index >= static_cast<int>(e.prompt_numbers.size())))
                throw ParseError(e.record.instance_id + ": step " + std::to_string(j) + " has a bad reference");
    return e;
}

void write_model(std::ostream& out, const SyntheticModel& model) {
    for (const auto& e : model.entries()) out << entry_to_json(e).dump() << '\n';
}

SyntheticModel read_model(std::istream& in, const std::string& source) {
    std::vector<SyntheticEntry> entries;
    int n = 0;
    for (const auto& j : read_json_lines(in, source)) {
        ++n;
        try {
            entries.push_back(entry_from_json(j));
        } catch (const Error& e) {
            throw ParseError(source + ": entry " + std::to_string(n) + ": " + e.what());
        }
    }
    return SyntheticModel(std::move(entries));
}

SyntheticModel read_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model '" + path + "'");
    return read_model(in, path);
}

} // namespace lrmtrace
