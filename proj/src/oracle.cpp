#include "lrmtrace/oracle.hpp"

#include "lrmtrace/errors.hpp"
#include "lrmtrace/projdump.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

namespace lrmtrace {

using nlohmann::json;

json request_to_json(const OracleRequest& r) {
    return json{{"protocol", kOracleProtocol},
                {"instance_id", r.instance_id},
                {"attempt_id", r.attempt_id},
                {"substitution", {r.substitution.original, r.substitution.replacement}}};
}

OracleRequest request_from_json(const json& j) {
    try {
        if (j.value("protocol", std::string{}) != kOracleProtocol)
            throw ParseError("expected protocol " + std::string(kOracleProtocol));
        OracleRequest r;
        r.instance_id = j.at("instance_id").get<std::string>();
        r.attempt_id = j.at("attempt_id").get<std::string>();
        const auto& s = j.at("substitution");
        if (!s.is_array() || s.size() != 2) throw ParseError("substitution must be [original, replacement]");
        r.substitution = {s[0].get<std::int64_t>(), s[1].get<std::int64_t>()};
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("oracle request: ") + e.what());
    }
}

std::string substitute_prompt(const std::string& prompt, std::int64_t original, std::int64_t replacement) {
    auto digit = [](char c) { return c >= '0' && c <= '9'; };
    std::string out;
    std::size_t i = 0;
    while (i < prompt.size()) {
        if (!digit(prompt[i])) {
            out += prompt[i++];
            continue;
        }
        std::size_t j = i;
        while (j < prompt.size() && (digit(prompt[j]) || prompt[j] == ',' || prompt[j] == '.')) ++j;
        std::size_t end = j;
        while (end > i && (prompt[end - 1] == ',' || prompt[end - 1] == '.')) --end;
        const std::string literal = prompt.substr(i, end - i);
        const auto value = Rational::parse(literal);
        if (value && *value == Rational(original)) out += std::to_string(replacement);
        else out += literal;
        out += prompt.substr(end, j - end);
        i = j;
    }
    return out;
}

ProjectionRecord response_record_from_json(const json& record, const ProjectionRecord* base,
                                           const Substitution& substitution) {
    if (record.contains("version")) return record_from_json(record);
    if (!base) throw ParseError("response fragment without a base record");
    ProjectionRecord r = *base;
    r.prompt_text = substitute_prompt(base->prompt_text, substitution.original, substitution.replacement);
    for (auto& q : r.question_numbers)
        if (q == substitution.original) q = substitution.replacement;
    r.per_budget_answers.reset();
    r.latent_projections.clear();
    try {
        for (const auto& p : record.at("latent_projections")) r.latent_projections.push_back(projection_from_json(p));
        r.answer_projections = projection_from_json(record.at("answer_projections"));
        if (record.contains("predicted_answer")) {
            const auto& a = record["predicted_answer"];
            r.predicted_answer = a.is_string() ? a.get<std::string>() : a.dump();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("response fragment: ") + e.what());
    }
    r.num_latent_positions = static_cast<int>(r.latent_projections.size());
    try {
        validate_record(r);
    } catch (const InvalidRecord& e) {
        throw ParseError(e.what());
    }
    return r;
}

std::string response_line(const OracleRequest& request, const ProjectionRecord& record) {
    json j{{"protocol", kOracleProtocol},
           {"instance_id", request.instance_id},
           {"attempt_id", request.attempt_id},
           {"substitution", {request.substitution.original, request.substitution.replacement}},
           {"record", record_to_json(record)}};
    return j.dump();
}

std::string error_line(const OracleRequest& request, std::string_view kind, std::string_view message) {
    json j{{"protocol", kOracleProtocol},
           {"instance_id", request.instance_id},
           {"attempt_id", request.attempt_id},
           {"error", {{"kind", kind}, {"message", message}}}};
    return j.dump();
}

namespace {

[[noreturn]] void throw_error_object(const json& err) {
    const auto kind = err.value("kind", std::string("unavailable"));
    const auto message = err.value("message", std::string("oracle error"));
    if (kind == "unknown_request") throw UnknownRequest(message);
    if (kind == "invalid_substitution") throw InvalidSubstitution(message);
    throw OracleUnavailable(message);
}

} // namespace

// ----------------------------------------------------------------------------
// Batch
// ----------------------------------------------------------------------------

BatchOracle::BatchOracle(std::vector<ProjectionRecord> base_records, bool record_misses)
    : record_misses_(record_misses) {
    for (auto& r : base_records) {
        auto id = r.instance_id;
        base_.emplace(std::move(id), std::move(r));
    }
}

void BatchOracle::add_response(const OracleRequest& request, ProjectionRecord record) {
    responses_[{request.instance_id, request.attempt_id, request.substitution.original,
                request.substitution.replacement}] = std::move(record);
}

void BatchOracle::load_responses(std::istream& in, const std::string& source) {
    for (const auto& j : read_json_lines(in, source)) {
        if (j.value("protocol", std::string{}) != kOracleProtocol)
            throw ParseError(source + ": response without protocol " + kOracleProtocol);
        if (j.contains("error")) continue;
        OracleRequest req;
        try {
            req.instance_id = j.at("instance_id").get<std::string>();
            req.attempt_id = j.at("attempt_id").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(source + ": " + e.what());
        }
        const auto it = base_.find(req.instance_id);
        const ProjectionRecord* base = it == base_.end() ? nullptr : &it->second;
        if (j.contains("substitution")) {
            const auto& s = j["substitution"];
            req.substitution = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>()};
        }
        if (!j.contains("record")) throw ParseError(source + ": response without record");
        add_response(req, response_record_from_json(j["record"], base, req.substitution));
    }
}

void BatchOracle::load_response_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open response file '" + path + "'");
    load_responses(in, path);
}

ProjectionRecord BatchOracle::query(const OracleRequest& request) {
    auto it = responses_.find(
        {request.instance_id, request.attempt_id, request.substitution.original, request.substitution.replacement});
    if (it == responses_.end()) it = responses_.find({request.instance_id, request.attempt_id, 0, 0});
    if (it != responses_.end()) return it->second;
    if (!record_misses_)
        throw UnknownRequest("no response for " + request.instance_id + "/" + request.attempt_id);
    auto base = base_.find(request.instance_id);
    if (base == base_.end()) throw UnknownRequest("unknown instance " + request.instance_id);
    std::lock_guard lock(mutex_);
    if (std::find(misses_.begin(), misses_.end(), request) == misses_.end()) misses_.push_back(request);
    return base->second;
}

std::vector<OracleRequest> BatchOracle::misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
}

void write_requests(std::ostream& out, const std::vector<OracleRequest>& requests) {
    for (const auto& r : requests) out << request_to_json(r).dump() << '\n';
}

std::vector<OracleRequest> read_requests(std::istream& in, const std::string& source) {
    std::vector<OracleRequest> out;
    for (const auto& j : read_json_lines(in, source)) out.push_back(request_from_json(j));
    return out;
}

// ----------------------------------------------------------------------------
// Subprocess
// ----------------------------------------------------------------------------

SubprocessOracle::SubprocessOracle(std::string command, std::vector<ProjectionRecord> base_records)
    : command_(std::move(command)) {
    for (auto& r : base_records) {
        auto id = r.instance_id;
        base_.emplace(std::move(id), std::move(r));
    }
}

SubprocessOracle::~SubprocessOracle() { stop(); }

void SubprocessOracle::start() {
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0) throw OracleUnavailable(std::string("pipe: ") + std::strerror(errno));
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw OracleUnavailable(std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = fork();
    if (pid < 0) throw OracleUnavailable(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    fcntl(from_child_, F_SETFD, FD_CLOEXEC);
    // a dead child must surface as an error, not SIGPIPE
    std::signal(SIGPIPE, SIG_IGN);
}

void SubprocessOracle::stop() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
    pid_ = -1;
    buffer_.clear();
}

ProjectionRecord SubprocessOracle::query(const OracleRequest& request) {
    std::lock_guard lock(mutex_);
    if (pid_ < 0) start();
    const std::string line = request_to_json(request).dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const auto n = write(to_child_, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            stop();
            throw OracleUnavailable("oracle process closed its input");
        }
        written += static_cast<std::size_t>(n);
    }
    std::size_t nl;
    while ((nl = buffer_.find('\n')) == std::string::npos) {
        char chunk[65536];
        const auto n = read(from_child_, chunk, sizeof chunk);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            stop();
            throw OracleUnavailable("oracle process exited without answering " + request.attempt_id);
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
    const std::string reply = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    json j;
    try {
        j = json::parse(reply);
    } catch (const json::parse_error& e) {
        throw OracleUnavailable(std::string("malformed oracle reply: ") + e.what());
    }
    if (j.value("protocol", std::string{}) != kOracleProtocol)
        throw OracleUnavailable("oracle reply without protocol " + std::string(kOracleProtocol));
    if (j.value("instance_id", std::string{}) != request.instance_id ||
        j.value("attempt_id", std::string{}) != request.attempt_id)
        throw OracleUnavailable("oracle reply does not match request " + request.attempt_id);
    if (j.contains("error")) throw_error_object(j["error"]);
    if (!j.contains("record")) throw OracleUnavailable("oracle reply without record");
    auto base = base_.find(request.instance_id);
    try {
        return response_record_from_json(j["record"], base == base_.end() ? nullptr : &base->second,
                                         request.substitution);
    } catch (const ParseError& e) {
        throw OracleUnavailable(std::string("oracle reply: ") + e.what());
    }
}

std::size_t serve_oracle(ProjectionOracle& oracle, std::istream& in, std::ostream& out) {
    std::size_t answered = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        OracleRequest req;
        try {
            req = request_from_json(json::parse(line));
        } catch (const std::exception& e) {
            out << error_line(req, "unavailable", std::string("bad request: ") + e.what()) << std::endl;
            continue;
        }
        try {
            out << response_line(req, oracle.query(req)) << std::endl;
        } catch (const UnknownRequest& e) {
            out << error_line(req, "unknown_request", e.what()) << std::endl;
        } catch (const InvalidSubstitution& e) {
            out << error_line(req, "invalid_substitution", e.what()) << std::endl;
        } catch (const Error& e) {
            out << error_line(req, "unavailable", e.what()) << std::endl;
        }
        ++answered;
    }
    return answered;
}

} // namespace lrmtrace
