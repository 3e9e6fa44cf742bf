#pragma once

// projdump/1: one JSON object per line, one ProjectionRecord per object.
//
//   {"version":"projdump/1","instance_id":"290","prompt_text":"...",
//    "question_numbers":[22,5,10],"num_latent_positions":6,"normalized":true,
//    "latent_projections":[[{"token":"17","rank":1,"score":0.41},...],...],
//    "answer_projections":[...],"predicted_answer":"390",
//    "per_budget_answers":{"0":"7",...,"6":"390"},
//    "gold_traces":[["22-5=17","22+17=39","39*10=390"]],"correct_answer":"390"}
//
// Unknown keys are ignored. question_numbers, when absent, are extracted from
// prompt_text.

#include "lrmtrace/core.hpp"

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace lrmtrace {

inline constexpr const char* kProjdumpVersion = "projdump/1";

nlohmann::json projection_to_json(const Projection& p);
Projection projection_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const ProjectionRecord& record);
/// Throws ParseError on a missing field or a wrong version tag.
ProjectionRecord record_from_json(const nlohmann::json& j);

std::string record_to_line(const ProjectionRecord& record);
ProjectionRecord record_from_line(const std::string& line);

std::vector<ProjectionRecord> read_projdump(std::istream& in);
std::vector<ProjectionRecord> read_projdump_file(const std::string& path);
void write_projdump(std::ostream& out, const std::vector<ProjectionRecord>& records);
void write_projdump_file(const std::string& path, const std::vector<ProjectionRecord>& records);

/// Reads non-empty lines of a JSON-lines file; line numbers appear in errors.
std::vector<nlohmann::json> read_json_lines(std::istream& in, const std::string& source);

} // namespace lrmtrace
