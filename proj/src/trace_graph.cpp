#include "lrmtrace/trace_graph.hpp"

#include "lrmtrace/errors.hpp"
#include "lrmtrace/projdump.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace lrmtrace {

std::optional<int> TraceDag::find(std::int64_t value) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].value == value) return static_cast<int>(i);
    return std::nullopt;
}

std::vector<int> TraceDag::operands_of(int node) const {
    std::vector<int> out;
    for (const auto& e : edges)
        if (e.result == node && std::find(out.begin(), out.end(), e.operand) == out.end()) out.push_back(e.operand);
    return out;
}

std::vector<int> TraceDag::consumers_of(int node) const {
    std::vector<int> out;
    for (const auto& e : edges)
        if (e.operand == node && std::find(out.begin(), out.end(), e.result) == out.end()) out.push_back(e.result);
    return out;
}

std::vector<int> TraceDag::leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].is_leaf()) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> TraceDag::required_nodes() const {
    std::vector<int> out;
    if (root < 0) return out;
    std::vector<bool> seen(nodes.size(), false);
    std::vector<int> stack{root};
    seen[static_cast<std::size_t>(root)] = true;
    while (!stack.empty()) {
        const int n = stack.back();
        stack.pop_back();
        out.push_back(n);
        for (int o : operands_of(n)) {
            if (!seen[static_cast<std::size_t>(o)]) {
                seen[static_cast<std::size_t>(o)] = true;
                stack.push_back(o);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

TraceDag build_dag(const ReasoningTrace& trace, std::span<const std::int64_t> question_numbers) {
    if (trace.steps.empty()) throw InvalidTrace("empty trace");
    TraceDag dag;
    auto node_for = [&](std::int64_t v) {
        if (auto i = dag.find(v)) return *i;
        dag.nodes.push_back(DagNode{v, {}, false});
        return static_cast<int>(dag.nodes.size()) - 1;
    };
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const auto& step = trace.steps[s];
        if (!is_arithmetically_valid(step))
            throw InvalidTrace("step " + std::to_string(s) + " '" + render(step) + "' does not evaluate to its result");
        for (auto v : step.operands)
            if (v < 0) throw InvalidTrace("negative operand in step " + std::to_string(s));
        std::vector<int> operand_nodes;
        for (auto v : step.operands) operand_nodes.push_back(node_for(v));
        const int result_node = node_for(step.result);
        dag.nodes[static_cast<std::size_t>(result_node)].producing_steps.push_back(static_cast<int>(s));
        for (int o : operand_nodes) dag.edges.push_back(DagEdge{o, result_node, static_cast<int>(s)});
    }
    dag.root = *dag.find(trace.final_result());

    // cycle check (iterative three-colour DFS over operand -> result edges)
    const std::size_t n = dag.nodes.size();
    std::vector<std::vector<int>> out(n);
    for (const auto& e : dag.edges) out[static_cast<std::size_t>(e.operand)].push_back(e.result);
    std::vector<int> colour(n, 0);
    for (std::size_t start = 0; start < n; ++start) {
        if (colour[start]) continue;
        std::vector<std::pair<int, std::size_t>> stack{{static_cast<int>(start), 0}};
        colour[start] = 1;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            const auto& succ = out[static_cast<std::size_t>(node)];
            if (next < succ.size()) {
                const int m = succ[next++];
                if (colour[static_cast<std::size_t>(m)] == 1) throw InvalidTrace("trace graph has a cycle");
                if (colour[static_cast<std::size_t>(m)] == 0) {
                    colour[static_cast<std::size_t>(m)] = 1;
                    stack.emplace_back(m, 0);
                }
            } else {
                colour[static_cast<std::size_t>(node)] = 2;
                stack.pop_back();
            }
        }
    }

    for (auto& node : dag.nodes) {
        node.question_leaf = node.is_leaf() && std::find(question_numbers.begin(), question_numbers.end(),
                                                         node.value) != question_numbers.end();
    }
    return dag;
}

// ----------------------------------------------------------------------------
// Dataset files
// ----------------------------------------------------------------------------

namespace {

std::string answer_field(const nlohmann::json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
    if (j.is_number()) return j.dump();
    throw ParseError("answer must be a string or a number");
}

} // namespace

std::vector<DatasetInstance> read_dataset(std::istream& in, const std::string& source) {
    std::vector<DatasetInstance> out;
    int index = 0;
    for (const auto& j : read_json_lines(in, source)) {
        ++index;
        try {
            DatasetInstance d;
            d.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                    : std::to_string(index - 1);
            d.question = j.at("question").get<std::string>();
            d.steps = j.at("steps").get<std::vector<std::string>>();
            if (j.contains("alternates")) d.alternates = j["alternates"].get<std::vector<std::vector<std::string>>>();
            d.answer = answer_field(j.at("answer"));
            out.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source + ": instance " + std::to_string(index) + ": " + e.what());
        }
    }
    return out;
}

std::vector<DatasetInstance> read_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset '" + path + "'");
    return read_dataset(in, path);
}

std::string dataset_line(const DatasetInstance& d) {
    nlohmann::json j{{"id", d.id}, {"question", d.question}, {"steps", d.steps}, {"answer", d.answer}};
    if (!d.alternates.empty()) j["alternates"] = d.alternates;
    return j.dump();
}

void write_dataset(std::ostream& out, const std::vector<DatasetInstance>& instances) {
    for (const auto& d : instances) out << dataset_line(d) << '\n';
}

std::vector<ReasoningTrace> gold_traces_of(const DatasetInstance& instance) {
    const auto q = extract_question_numbers(instance.question);
    std::vector<ReasoningTrace> traces;
    traces.push_back(parse_trace(instance.steps, q));
    for (const auto& alt : instance.alternates) traces.push_back(parse_trace(alt, q));
    return traces;
}

std::vector<DatasetInstance> filter_valid_gold(std::span<const DatasetInstance> instances) {
    std::vector<DatasetInstance> out;
    for (const auto& d : instances) {
        if (d.steps.empty()) continue;
        ReasoningStep last;
        try {
            last = parse_step(d.steps.back());
        } catch (const ParseError&) {
            continue;
        }
        const auto answer = Rational::parse(d.answer);
        const bool match = answer ? *answer == last.exact_result
                                  : answers_equal(last.exact_result.to_string(), d.answer);
        if (match) out.push_back(d);
    }
    return out;
}

std::string_view to_string(VpViolation v) {
    switch (v) {
    case VpViolation::none: return "none";
    case VpViolation::unparseable: return "unparseable";
    case VpViolation::invalid_arithmetic: return "invalid-arithmetic";
    case VpViolation::multi_token_prompt_number: return "multi-token-prompt-number";
    case VpViolation::repeated_prompt_number: return "repeated-prompt-number";
    case VpViolation::multi_token_trace_number: return "multi-token-trace-number";
    case VpViolation::non_integer_or_negative: return "non-integer-or-negative";
    case VpViolation::repeated_result: return "repeated-result";
    case VpViolation::result_equals_base_operand: return "result-equals-base-operand";
    case VpViolation::no_prompt_base_operand: return "no-prompt-base-operand";
    }
    return "?";
}

VpViolation vp_friendly_violation(const DatasetInstance& instance, const SingleTokenPredicate& single_token) {
    ReasoningTrace trace;
    try {
        for (const auto& s : instance.steps) trace.steps.push_back(parse_step(s));
    } catch (const ParseError&) {
        return VpViolation::unparseable;
    }
    if (trace.steps.empty()) return VpViolation::unparseable;

    std::vector<Rational> prompt_values;
    for (const auto& m : find_number_mentions(instance.question)) {
        if (!single_token(m.surface)) return VpViolation::multi_token_prompt_number;
        if (std::find(prompt_values.begin(), prompt_values.end(), m.value) != prompt_values.end())
            return VpViolation::repeated_prompt_number;
        prompt_values.push_back(m.value);
    }
    std::set<std::int64_t> prompt_set;
    for (const auto& v : prompt_values) prompt_set.insert(v.num);

    for (const auto& step : trace.steps) {
        if (!is_arithmetically_valid(step)) return VpViolation::invalid_arithmetic;
        std::vector<Rational> literals = step.exact_operands;
        literals.push_back(step.exact_result);
        for (const auto& v : literals) {
            if (!v.is_integer() || v.num < 0) return VpViolation::non_integer_or_negative;
            if (!single_token(v.to_string())) return VpViolation::multi_token_trace_number;
        }
    }

    // result value -> producing step
    std::map<std::int64_t, std::size_t> producer;
    std::set<std::int64_t> base_operands;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& step = trace.steps[i];
        for (auto v : step.operands)
            if (!producer.count(v)) base_operands.insert(v);
        if (producer.count(step.result)) return VpViolation::repeated_result;
        producer[step.result] = i;
    }
    for (const auto& [value, step] : producer) {
        (void)step;
        if (base_operands.count(value) || prompt_set.count(value)) return VpViolation::result_equals_base_operand;
    }

    // every step needs a base operand mentioned in the prompt
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        bool found = false;
        std::vector<std::size_t> stack{i};
        std::set<std::size_t> seen;
        while (!stack.empty() && !found) {
            const std::size_t s = stack.back();
            stack.pop_back();
            if (!seen.insert(s).second) continue;
            for (auto v : trace.steps[s].operands) {
                auto it = producer.find(v);
                if (it != producer.end() && it->second < s) {
                    stack.push_back(it->second);
                } else if (prompt_set.count(v)) {
                    found = true;
                    break;
                }
            }
        }
        if (!found) return VpViolation::no_prompt_base_operand;
    }
    return VpViolation::none;
}

std::vector<DatasetInstance> filter_vp_friendly(std::span<const DatasetInstance> instances,
                                                const SingleTokenPredicate& single_token) {
    std::vector<DatasetInstance> out;
    for (const auto& d : instances)
        if (vp_friendly_violation(d, single_token) == VpViolation::none) out.push_back(d);
    return out;
}

SingleTokenPredicate token_list_predicate(std::istream& in) {
    auto tokens = std::make_shared<std::unordered_set<std::string>>();
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) tokens->insert(std::string(t));
    }
    return [tokens](std::string_view s) { return tokens->count(std::string(trim(s))) > 0; };
}

} // namespace lrmtrace
