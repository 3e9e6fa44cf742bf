#include "lrmtrace/projdump.hpp"

#include "lrmtrace/errors.hpp"

#include <fstream>
#include <istream>
#include <ostream>

namespace lrmtrace {

using nlohmann::json;

namespace {

template <typename T>
T required(const json& j, const char* key) {
    if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("field '") + key + "': " + e.what());
    }
}

// Answers may be written as JSON numbers or strings.
std::string answer_text(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
    if (j.is_number()) return j.dump();
    throw ParseError("answer must be a string or a number");
}

} // namespace

json projection_to_json(const Projection& p) {
    json arr = json::array();
    for (const auto& e : p) arr.push_back({{"token", e.token}, {"rank", e.rank}, {"score", e.score}});
    return arr;
}

Projection projection_from_json(const json& j) {
    if (!j.is_array()) throw ParseError("projection must be an array");
    Projection p;
    p.reserve(j.size());
    for (const auto& e : j) {
        ProjectionEntry entry;
        entry.token = required<std::string>(e, "token");
        entry.rank = required<int>(e, "rank");
        entry.score = e.value("score", 0.0);
        p.push_back(std::move(entry));
    }
    return p;
}

json record_to_json(const ProjectionRecord& r) {
    json j;
    j["version"] = kProjdumpVersion;
    j["instance_id"] = r.instance_id;
    j["prompt_text"] = r.prompt_text;
    j["question_numbers"] = r.question_numbers;
    j["num_latent_positions"] = r.num_latent_positions;
    j["normalized"] = r.normalized;
    json latents = json::array();
    for (const auto& p : r.latent_projections) latents.push_back(projection_to_json(p));
    j["latent_projections"] = std::move(latents);
    j["answer_projections"] = projection_to_json(r.answer_projections);
    j["predicted_answer"] = r.predicted_answer;
    if (r.per_budget_answers) {
        json budgets = json::object();
        for (const auto& [l, a] : *r.per_budget_answers) budgets[std::to_string(l)] = a;
        j["per_budget_answers"] = std::move(budgets);
    }
    json traces = json::array();
    for (const auto& t : r.gold_traces) traces.push_back(render_trace(t));
    j["gold_traces"] = std::move(traces);
    j["correct_answer"] = r.correct_answer;
    return j;
}

ProjectionRecord record_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("record must be an object");
    const auto version = required<std::string>(j, "version");
    if (version != kProjdumpVersion) throw ParseError("unsupported version '" + version + "'");
    ProjectionRecord r;
    r.instance_id = required<std::string>(j, "instance_id");
    r.prompt_text = j.value("prompt_text", std::string{});
    if (j.contains("question_numbers")) {
        r.question_numbers = required<std::vector<std::int64_t>>(j, "question_numbers");
    } else {
        r.question_numbers = extract_question_numbers(r.prompt_text);
    }
    r.num_latent_positions = required<int>(j, "num_latent_positions");
    r.normalized = j.value("normalized", true);
    if (!j.contains("latent_projections") || !j["latent_projections"].is_array())
        throw ParseError("missing field 'latent_projections'");
    for (const auto& p : j["latent_projections"]) r.latent_projections.push_back(projection_from_json(p));
    if (!j.contains("answer_projections")) throw ParseError("missing field 'answer_projections'");
    r.answer_projections = projection_from_json(j["answer_projections"]);
    if (!j.contains("predicted_answer")) throw ParseError("missing field 'predicted_answer'");
    r.predicted_answer = answer_text(j["predicted_answer"]);
    if (j.contains("per_budget_answers") && !j["per_budget_answers"].is_null()) {
        std::map<int, std::string> budgets;
        for (const auto& [key, value] : j["per_budget_answers"].items()) {
            try {
                budgets[std::stoi(key)] = answer_text(value);
            } catch (const std::logic_error&) {
                throw ParseError("per_budget_answers key '" + key + "' is not an integer");
            }
        }
        r.per_budget_answers = std::move(budgets);
    }
    if (j.contains("gold_traces")) {
        for (const auto& t : j["gold_traces"]) {
            auto steps = t.get<std::vector<std::string>>();
            r.gold_traces.push_back(parse_trace(steps, r.question_numbers));
        }
    }
    if (!j.contains("correct_answer")) throw ParseError("missing field 'correct_answer'");
    r.correct_answer = answer_text(j["correct_answer"]);
    try {
        validate_record(r);
    } catch (const InvalidRecord& e) {
        throw ParseError(e.what());
    }
    return r;
}

std::string record_to_line(const ProjectionRecord& record) { return record_to_json(record).dump(); }

ProjectionRecord record_from_line(const std::string& line) {
    try {
        return record_from_json(json::parse(line));
    } catch (const json::parse_error& e) {
        throw ParseError(e.what());
    }
}

std::vector<json> read_json_lines(std::istream& in, const std::string& source) {
    std::vector<json> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<ProjectionRecord> read_projdump(std::istream& in) {
    std::vector<ProjectionRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(record_from_line(line));
        } catch (const Error& e) {
            throw ParseError("projdump line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<ProjectionRecord> read_projdump_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open projdump '" + path + "'");
    return read_projdump(in);
}

void write_projdump(std::ostream& out, const std::vector<ProjectionRecord>& records) {
    for (const auto& r : records) out << record_to_line(r) << '\n';
}

void write_projdump_file(const std::string& path, const std::vector<ProjectionRecord>& records) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    write_projdump(out, records);
}

} // namespace lrmtrace
