#include "lrmtrace/errors.hpp"
#include "lrmtrace/oracle.hpp"
#include "lrmtrace/projdump.hpp"
#include "lrmtrace/synthetic.hpp"

#include "support/fixture_290.hpp"

#include <doctest.h>

#include <sstream>

using namespace lrmtrace;

TEST_CASE("prompt substitution replaces whole literals only") {
    CHECK(substitute_prompt("had 22 lamps, sold 5.", 5, 3) == "had 22 lamps, sold 3.");
    CHECK(substitute_prompt("had 22 lamps, sold 5.", 2, 9) == "had 22 lamps, sold 5.");
    CHECK(substitute_prompt("5 and 5 and 15", 5, 7) == "7 and 7 and 15");
    CHECK(substitute_prompt("costs $1,200 each", 1200, 800) == "costs $800 each");
    CHECK(substitute_prompt("a 2.5 rate and 2 cars", 2, 4) == "a 2.5 rate and 4 cars");
    CHECK(substitute_prompt("ends with 10.", 10, 12) == "ends with 12.");
}

TEST_CASE("requests round trip through JSON") {
    const OracleRequest r{"290", "p2:22-5=17:0", {22, 31}};
    const auto j = request_to_json(r);
    CHECK(j.dump() ==
          R"({"attempt_id":"p2:22-5=17:0","instance_id":"290","protocol":"oracle/1","substitution":[22,31]})");
    CHECK(request_from_json(j) == r);
    auto bad = j;
    bad["protocol"] = "oracle/2";
    CHECK_THROWS_AS(request_from_json(bad), ParseError);
    bad = j;
    bad.erase("substitution");
    CHECK_THROWS_AS(request_from_json(bad), ParseError);

    std::stringstream io;
    write_requests(io, {r, OracleRequest{"7", "a", {1, 2}}});
    const auto back = read_requests(io, "mem");
    REQUIRE(back.size() == 2);
    CHECK(back[0] == r);
}

TEST_CASE("response fragments are laid over the base record") {
    const auto base = testing::instance_290().record;
    nlohmann::json frag = record_to_json(base);
    frag.erase("version");
    frag["latent_projections"][2][0]["token"] = "19";
    frag["predicted_answer"] = 410;
    const auto r = response_record_from_json(frag, &base, {5, 3});
    CHECK(r.position(2)[0].token == "19");
    CHECK(r.predicted_answer == "410");
    CHECK(r.question_numbers == std::vector<std::int64_t>{22, 3, 10});
    CHECK_FALSE(r.per_budget_answers);
    CHECK_THROWS_AS(response_record_from_json(frag, nullptr, {5, 3}), ParseError);

    nlohmann::json broken = frag;
    broken["latent_projections"][1].erase(0);
    CHECK_THROWS_AS(response_record_from_json(broken, &base, {5, 3}), ParseError);
}

TEST_CASE("batch oracle replays recorded responses") {
    const SyntheticModel model({testing::instance_290()});
    SyntheticOracle synth(model);
    const std::vector<OracleRequest> requests = {
        {"290", "p2:22-5=17:0", {22, 31}},
        {"290", "p2:22-5=17:1", {5, 3}},
        {"290", "p6:39*10=390:2", {10, 4}},
    };

    // recording pass enumerates the requests
    BatchOracle recorder(model.records(), true);
    for (const auto& r : requests) CHECK(recorder.query(r) == model.at("290").record);
    recorder.query(requests[0]);
    CHECK(recorder.misses() == requests);

    std::ostringstream responses;
    for (const auto& r : recorder.misses()) responses << response_line(r, synth.query(r)) << '\n';

    BatchOracle replay(model.records());
    std::istringstream in(responses.str());
    replay.load_responses(in, "mem");
    CHECK(replay.size() == 3);
    for (const auto& r : requests) CHECK(replay.query(r) == synth.query(r));

    // bit-stable: regenerating the response file gives the same bytes
    std::ostringstream again;
    for (const auto& r : requests) again << response_line(r, replay.query(r)) << '\n';
    CHECK(again.str() == responses.str());

    CHECK_THROWS_AS(replay.query({"290", "missing", {5, 3}}), UnknownRequest);
    CHECK_THROWS_AS(replay.query({"290", "p2:22-5=17:0", {22, 30}}), UnknownRequest);
    BatchOracle strict(model.records());
    CHECK_THROWS_AS(strict.query(requests[0]), UnknownRequest);
}

TEST_CASE("batch responses skip error lines and reject foreign protocols") {
    const SyntheticModel model({testing::instance_290()});
    BatchOracle replay(model.records());
    const OracleRequest r{"290", "x", {5, 3}};
    std::istringstream in(error_line(r, "invalid_substitution", "no") + "\n");
    replay.load_responses(in, "mem");
    CHECK(replay.size() == 0);
    std::istringstream bad(R"({"protocol":"oracle/0","instance_id":"290","attempt_id":"x","record":{}})");
    CHECK_THROWS_AS(replay.load_responses(bad, "mem"), ParseError);
}

TEST_CASE("serve_oracle answers each request line") {
    const SyntheticModel model({testing::instance_290()});
    SyntheticOracle synth(model);
    std::istringstream in(request_to_json({"290", "a", {5, 3}}).dump() + "\n\n" +
                          request_to_json({"290", "b", {7, 3}}).dump() + "\n" +
                          request_to_json({"999", "c", {5, 3}}).dump() + "\nnot json\n");
    std::ostringstream out;
    CHECK(serve_oracle(synth, in, out) == 3);
    std::istringstream lines(out.str());
    std::string line;
    std::vector<nlohmann::json> replies;
    while (std::getline(lines, line)) replies.push_back(nlohmann::json::parse(line));
    REQUIRE(replies.size() == 4);
    CHECK(replies[0]["attempt_id"] == "a");
    CHECK(response_record_from_json(replies[0]["record"], nullptr, {5, 3}) == synth.query({"290", "a", {5, 3}}));
    CHECK(replies[1]["error"]["kind"] == "invalid_substitution");
    CHECK(replies[2]["error"]["kind"] == "unknown_request");
    CHECK(replies[3]["error"]["kind"] == "unavailable");
}

TEST_CASE("subprocess oracle speaks the line protocol") {
    const SyntheticModel model({testing::instance_290()});
    SyntheticOracle synth(model);
    const OracleRequest req{"290", "a", {5, 3}};
    const auto reply = response_line(req, synth.query(req));

    // a child that answers one request with a canned line
    std::string quoted;
    for (char c : reply) {
        if (c == '\'') quoted += "'\\''";
        else quoted += c;
    }
    SubprocessOracle one("read line; printf '%s\\n' '" + quoted + "'", model.records());
    CHECK(one.query(req) == synth.query(req));

    SubprocessOracle mismatched("read line; printf '%s\\n' '" + quoted + "'", model.records());
    CHECK_THROWS_AS(mismatched.query({"290", "b", {5, 3}}), OracleUnavailable);

    SubprocessOracle silent("read line", model.records());
    CHECK_THROWS_AS(silent.query(req), OracleUnavailable);

    const auto err = error_line(req, "invalid_substitution", "nope");
    SubprocessOracle refusing("read line; printf '%s\\n' '" + err + "'", model.records());
    CHECK_THROWS_AS(refusing.query(req), InvalidSubstitution);

    SubprocessOracle garbage("read line; echo nonsense", model.records());
    CHECK_THROWS_AS(garbage.query(req), OracleUnavailable);
}
