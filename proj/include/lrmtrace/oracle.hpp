#pragma once

// Projection oracles: given an instance and a one-number substitution in its
// prompt, return the projection table of the modified prompt.
//
// Wire format (oracle/1), one JSON object per line:
//   request   {"protocol":"oracle/1","instance_id":"290","attempt_id":"p2:22-5=17:0",
//              "substitution":[22,31]}
//   response  {"protocol":"oracle/1","instance_id":"290","attempt_id":"...","substitution":[22,31],
//              "record":{...projdump record or fragment...}}
//   failure   {"protocol":"oracle/1","instance_id":"290","attempt_id":"...",
//              "error":{"kind":"unknown_request"|"invalid_substitution"|"unavailable",
//                       "message":"..."}}
//
// The batch form uses the same objects: a request file is a list of request
// lines, a response file a list of response lines.

#include "lrmtrace/core.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

namespace lrmtrace {

inline constexpr const char* kOracleProtocol = "oracle/1";

struct Substitution {
    std::int64_t original = 0;
    std::int64_t replacement = 0;

    bool operator==(const Substitution&) const = default;
};

struct OracleRequest {
    std::string instance_id;
    std::string attempt_id;
    Substitution substitution;

    bool operator==(const OracleRequest&) const = default;
};

nlohmann::json request_to_json(const OracleRequest& r);
OracleRequest request_from_json(const nlohmann::json& j);

/// A response record may be a full projdump record or a fragment carrying at
/// least latent_projections and answer_projections; fragments are laid over
/// `base` (prompt and question numbers follow the substitution).
ProjectionRecord response_record_from_json(const nlohmann::json& record, const ProjectionRecord* base,
                                           const Substitution& substitution);

/// Replaces every standalone literal of `original` in the prompt.
std::string substitute_prompt(const std::string& prompt, std::int64_t original, std::int64_t replacement);

class ProjectionOracle {
public:
    virtual ~ProjectionOracle() = default;
    /// Must be safe to call concurrently.
    virtual ProjectionRecord query(const OracleRequest& request) = 0;
};

/// Replays a response file. Responses are keyed by instance, attempt and
/// substitution; one stored without a substitution matches any. Misses throw
/// UnknownRequest, or, in recording mode, are remembered and answered with
/// the unmodified base record so that a run can enumerate the requests it
/// needs.
class BatchOracle : public ProjectionOracle {
public:
    BatchOracle(std::vector<ProjectionRecord> base_records, bool record_misses = false);

    void load_responses(std::istream& in, const std::string& source);
    void load_response_file(const std::string& path);
    void add_response(const OracleRequest& request, ProjectionRecord record);

    ProjectionRecord query(const OracleRequest& request) override;

    /// Misses in first-seen order, without duplicates.
    std::vector<OracleRequest> misses() const;
    std::size_t size() const { return responses_.size(); }

private:
    std::map<std::string, ProjectionRecord> base_;
    using Key = std::tuple<std::string, std::string, std::int64_t, std::int64_t>;
    std::map<Key, ProjectionRecord> responses_;
    bool record_misses_;
    mutable std::mutex mutex_;
    std::vector<OracleRequest> misses_;
};

void write_requests(std::ostream& out, const std::vector<OracleRequest>& requests);
std::vector<OracleRequest> read_requests(std::istream& in, const std::string& source);

/// Response line for a request.
std::string response_line(const OracleRequest& request, const ProjectionRecord& record);
std::string error_line(const OracleRequest& request, std::string_view kind, std::string_view message);

/// Wraps a callback; used for hand-built fixtures.
class ScriptedOracle : public ProjectionOracle {
public:
    using Fn = std::function<ProjectionRecord(const OracleRequest&)>;
    explicit ScriptedOracle(Fn fn) : fn_(std::move(fn)) {}
    ProjectionRecord query(const OracleRequest& request) override { return fn_(request); }

private:
    Fn fn_;
};

/// Runs `sh -c command` and speaks oracle/1 over its stdin/stdout. Queries
/// are serialized.
class SubprocessOracle : public ProjectionOracle {
public:
    SubprocessOracle(std::string command, std::vector<ProjectionRecord> base_records);
    ~SubprocessOracle() override;
    SubprocessOracle(const SubprocessOracle&) = delete;
    SubprocessOracle& operator=(const SubprocessOracle&) = delete;

    ProjectionRecord query(const OracleRequest& request) override;

private:
    void start();
    void stop();

    std::string command_;
    std::map<std::string, ProjectionRecord> base_;
    std::mutex mutex_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

/// Serves oracle/1 on a stream pair with the given oracle: one response line
/// per request line until EOF. Returns the number of requests answered.
std::size_t serve_oracle(ProjectionOracle& oracle, std::istream& in, std::ostream& out);

} // namespace lrmtrace
