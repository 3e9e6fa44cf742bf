// lrmtrace: command-line front end.
//
// Exit codes: 0 success, 2 input error, 3 oracle error.

#include "lrmtrace/backtrack.hpp"
#include "lrmtrace/errors.hpp"
#include "lrmtrace/forward_chain.hpp"
#include "lrmtrace/oracle.hpp"
#include "lrmtrace/projdump.hpp"
#include "lrmtrace/prontoqa.hpp"
#include "lrmtrace/stopping.hpp"
#include "lrmtrace/synthetic.hpp"
#include "lrmtrace/trace_graph.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

using namespace lrmtrace;
namespace fs = std::filesystem;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitOracle = 3;
constexpr const char* kOracleEnv = "LRMTRACE_ORACLE";

void write_text(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return in;
}

int default_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// Records from a projdump, with gold traces and correct answers taken from a
// dataset file when one is given.
std::vector<ProjectionRecord> load_records(const std::string& projdump, const std::string& dataset) {
    auto records = read_projdump_file(projdump);
    if (dataset.empty()) return records;
    std::map<std::string, DatasetInstance> by_id;
    for (auto& d : read_dataset_file(dataset)) {
        auto id = d.id;
        by_id.emplace(std::move(id), std::move(d));
    }
    for (auto& r : records) {
        auto it = by_id.find(r.instance_id);
        if (it == by_id.end()) continue;
        r.gold_traces = gold_traces_of(it->second);
        if (r.correct_answer.empty()) r.correct_answer = it->second.answer;
        validate_record(r);
    }
    return records;
}

// Oracle spec forms:
//   synth:<synthmodel file>     answer from a synthetic model
//   batch:<responses file>      replay recorded responses
//   record:<requests file>[,<responses file>...]
//                               answer from the response files, write the
//                               requests they lack; rerun with the answers
//                               appended until none are missing
//   cmd:<shell command>         oracle/1 over a subprocess
struct OracleHandle {
    std::unique_ptr<SyntheticModel> model;
    std::unique_ptr<ProjectionOracle> oracle;
    BatchOracle* recorder = nullptr;
    std::string record_path;

    void finish() const {
        if (!recorder) return;
        auto misses = recorder->misses();
        std::sort(misses.begin(), misses.end(), [](const OracleRequest& a, const OracleRequest& b) {
            return std::tie(a.instance_id, a.attempt_id) < std::tie(b.instance_id, b.attempt_id);
        });
        std::ostringstream out;
        write_requests(out, misses);
        write_text(record_path, out.str());
        std::cerr << "wrote " << misses.size() << " requests to " << record_path;
        if (!misses.empty()) std::cerr << "; results above used unmodified projections for them";
        std::cerr << '\n';
    }
};

OracleHandle make_oracle(std::string spec, const std::vector<ProjectionRecord>& records) {
    if (spec.empty()) {
        if (const char* env = std::getenv(kOracleEnv)) spec = env;
    }
    if (spec.empty()) throw ParseError(std::string("no oracle: pass --oracle or set ") + kOracleEnv);
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ParseError("oracle spec '" + spec + "' lacks a kind prefix");
    const auto kind = spec.substr(0, colon);
    const auto arg = spec.substr(colon + 1);
    OracleHandle h;
    if (kind == "synth") {
        h.model = std::make_unique<SyntheticModel>(read_model_file(arg));
        h.oracle = std::make_unique<SyntheticOracle>(*h.model);
    } else if (kind == "batch") {
        auto batch = std::make_unique<BatchOracle>(records);
        batch->load_response_file(arg);
        h.oracle = std::move(batch);
    } else if (kind == "record") {
        auto batch = std::make_unique<BatchOracle>(records, true);
        std::istringstream parts(arg);
        std::getline(parts, h.record_path, ',');
        for (std::string resp; std::getline(parts, resp, ',');) batch->load_response_file(resp);
        h.recorder = batch.get();
        h.oracle = std::move(batch);
    } else if (kind == "cmd") {
        h.oracle = std::make_unique<SubprocessOracle>(arg, records);
    } else {
        throw ParseError("unknown oracle kind '" + kind + "'");
    }
    return h;
}

std::string keep_question_rows(const std::string& csv, const std::string& mode) {
    if (mode == "both") return csv;
    const std::string want = mode == "on" ? ",with," : ",without,";
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header || line.find(want) != std::string::npos) out << line << '\n';
        header = false;
    }
    return out.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    CorpusSpec spec;
    std::string style = "operands-and-results";
    std::string rank_law = "geometric";
    int skip_step = -1;
    int stop_budget = -1;
    std::string model_out, projdump_out, dataset_out;
};

void run_synth(const SynthArgs& a) {
    auto spec = a.spec;
    auto style = encoding_style_from_string(a.style);
    if (!style) throw ParseError("unknown --style " + a.style);
    auto law = rank_law_from_string(a.rank_law);
    if (!law) throw ParseError("unknown --rank-law " + a.rank_law);
    spec.policy.style = *style;
    spec.policy.rank_law = *law;
    if (a.skip_step >= 0) spec.policy.skip_step = a.skip_step;
    if (a.stop_budget >= 0) spec.policy.stop_budget = a.stop_budget;
    if (a.model_out.empty() && a.projdump_out.empty() && a.dataset_out.empty())
        throw ParseError("synth needs at least one of --model, --projdump, --dataset");
    const auto model = generate_corpus(spec);
    if (!a.model_out.empty()) {
        std::ostringstream out;
        write_model(out, model);
        write_text(a.model_out, out.str());
    }
    if (!a.projdump_out.empty()) {
        std::ostringstream out;
        write_projdump(out, model.records());
        write_text(a.projdump_out, out.str());
    }
    if (!a.dataset_out.empty()) {
        std::ostringstream out;
        write_dataset(out, model.dataset());
        write_text(a.dataset_out, out.str());
    }
    std::cerr << "generated " << model.entries().size() << " instances\n";
}

struct FilterArgs {
    std::string dataset;
    std::string filter = "valid-gold";
    std::string tokens;
    std::int64_t max_single_token = 999;
    std::string out;
};

void run_filter(const FilterArgs& a) {
    auto in = open_input(a.dataset);
    const auto instances = read_dataset(in, a.dataset);
    SingleTokenPredicate single = digits_up_to(a.max_single_token);
    if (!a.tokens.empty()) {
        auto tin = open_input(a.tokens);
        single = token_list_predicate(tin);
    }
    std::vector<DatasetInstance> kept;
    std::ostringstream summary;
    summary << instances.size();
    if (a.filter == "valid-gold") {
        kept = filter_valid_gold(instances);
        summary << " -> " << kept.size();
    } else if (a.filter == "vp-friendly") {
        kept = filter_vp_friendly(instances, single);
        summary << " -> " << kept.size();
    } else if (a.filter == "both") {
        const auto valid = filter_valid_gold(instances);
        kept = filter_vp_friendly(valid, single);
        summary << " -> " << valid.size() << " -> " << kept.size();
    } else {
        throw ParseError("unknown filter '" + a.filter + "'");
    }
    std::cout << a.filter << ": " << summary.str() << '\n';
    if (!a.out.empty()) {
        std::ostringstream out;
        write_dataset(out, kept);
        write_text(a.out, out.str());
    }
}

struct BacktrackArgs {
    std::string projdump, dataset, out_dir;
    SuiteConfig config;
    std::string question_tokens = "both";
    std::vector<std::string> variants{"verbatim", "exhaustive"};
};

void run_backtrack(BacktrackArgs a) {
    if (a.question_tokens != "on" && a.question_tokens != "off" && a.question_tokens != "both")
        throw ParseError("--question-tokens must be on, off or both");
    a.config.variants.clear();
    for (const auto& v : a.variants) {
        if (v == "verbatim") a.config.variants.push_back(Variant::verbatim);
        else if (v == "exhaustive") a.config.variants.push_back(Variant::exhaustive);
        else throw ParseError("unknown variant '" + v + "'");
    }
    const auto records = load_records(a.projdump, a.dataset);
    const auto result = backtrack_suite(records, a.config);
    const auto csv = keep_question_rows(result.report.to_csv(), a.question_tokens);
    std::cout << csv;
    if (!a.out_dir.empty()) {
        write_text(a.out_dir + "/backtrack.csv", csv);
        write_text(a.out_dir + "/backtrack_by_steps.csv",
                   keep_question_rows(result.report.by_steps_csv(), a.question_tokens));
        write_text(a.out_dir + "/backtrack.json", result.report.to_json().dump(2) + "\n");
    }
}

struct ChainArgs {
    std::string projdump, dataset, oracle, out_dir, model_family = "coconut";
    ChainConfig config;
    std::vector<int> r_passes{1, 2, 3};
    int jobs = 1;
    CLI::Option* d_option = nullptr;
};

ChainConfig resolve_chain_config(const ChainArgs& a) {
    auto c = a.config;
    if (a.model_family != "coconut" && a.model_family != "codi")
        throw ParseError("--model-family must be coconut or codi");
    if (a.model_family == "codi" && a.d_option && a.d_option->count() == 0) c.d = 2;
    c.validate();
    return c;
}

void run_forward_chain(const ChainArgs& a) {
    const auto config = resolve_chain_config(a);
    const auto records = load_records(a.projdump, a.dataset);
    auto oracle = make_oracle(a.oracle, records);
    const auto report = forward_chain_suite(records, *oracle.oracle, config, a.r_passes, a.jobs);
    std::cout << report.to_csv();
    if (!a.out_dir.empty()) {
        write_text(a.out_dir + "/forward_chain.csv", report.to_csv());
        write_text(a.out_dir + "/forward_chain_traces.csv", report.traces_csv());
    }
    oracle.finish();
}

struct EarlystopArgs {
    std::vector<std::string> inputs;
    std::string rows;
};

void run_earlystop(const EarlystopArgs& a) {
    StoppingReport report;
    for (const auto& input : a.inputs) {
        std::string label, path;
        if (auto eq = input.find('='); eq != std::string::npos) {
            label = input.substr(0, eq);
            path = input.substr(eq + 1);
        } else {
            path = input;
            label = fs::path(input).stem().string();
        }
        const auto records = read_projdump_file(path);
        const auto part = aggregate(label, records);
        for (const auto& [m, stats] : part.methods) report.methods[m].merge(stats);
        for (const auto& [m, rows] : part.rows) {
            auto& dst = report.rows[m];
            dst.insert(dst.end(), rows.begin(), rows.end());
        }
    }
    std::cout << report.to_csv();
    if (!a.rows.empty()) write_text(a.rows, report.rows_csv());
}

struct RenderArgs {
    std::string projdump, dataset, id, oracle;
    int k = kDefaultTopK;
    bool question_tokens = false;
    ChainArgs chain;
};

void run_render(const RenderArgs& a) {
    const auto records = load_records(a.projdump, a.dataset);
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const ProjectionRecord& r) { return r.instance_id == a.id; });
    if (it == records.end()) throw ParseError("instance '" + a.id + "' not in " + a.projdump);
    if (!a.oracle.empty()) {
        auto config = resolve_chain_config(a.chain);
        config.k = a.k;
        if (a.chain.r_passes.size() != 1) throw ParseError("render takes a single --r-passes value");
        config.r_passes = a.chain.r_passes.front();
        auto oracle = make_oracle(a.oracle, records);
        const auto result = lrmtrace::run_forward_chain(*it, *oracle.oracle, config);
        std::cout << render_chain_markdown(*it, result, a.k);
        oracle.finish();
        return;
    }
    BacktrackOptions options;
    options.k = a.k;
    options.allow_question_tokens = a.question_tokens;
    const auto tree = backtrack_search(*it, it->gold_traces, options);
    std::cout << render_markdown(*it, tree ? &*tree : nullptr, a.k);
}

struct ServeArgs {
    std::string oracle;
    std::string projdump;
};

void run_serve(const ServeArgs& a) {
    std::vector<ProjectionRecord> records;
    if (!a.projdump.empty()) records = read_projdump_file(a.projdump);
    auto oracle = make_oracle(a.oracle, records);
    const auto n = serve_oracle(*oracle.oracle, std::cin, std::cout);
    std::cerr << "served " << n << " requests\n";
}

struct ProntoArgs {
    std::string input;
    std::size_t count = 1000;
    std::uint64_t seed = 0;
    ProntoSpec spec;
    std::string order = "mentions";
};

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void run_prontoqa(const ProntoArgs& a) {
    HeuristicOrder order;
    if (a.order == "mentions") order = HeuristicOrder::mentions_first;
    else if (a.order == "children") order = HeuristicOrder::children_first;
    else throw ParseError("--order must be mentions or children");

    struct Item {
        std::string id, question;
        std::optional<bool> expected;
    };
    std::vector<Item> items;
    if (!a.input.empty()) {
        auto in = open_input(a.input);
        for (const auto& j : read_json_lines(in, a.input)) {
            Item item;
            item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            item.question = j.at("question").get<std::string>();
            if (j.contains("answer")) item.expected = j.at("answer").get<bool>();
            items.push_back(std::move(item));
        }
    } else {
        Rng rng(SeedMixer(a.seed).add("prontoqa").value());
        for (std::size_t i = 0; i < a.count; ++i) {
            auto g = generate_prontoqa(rng, a.spec);
            items.push_back({std::to_string(i), std::move(g.question), g.answer});
        }
    }
    std::size_t agree = 0;
    std::cout << "id,heuristic,exhaustive,expected,path\n";
    for (const auto& item : items) {
        const auto inst = parse_prontoqa(item.question);
        std::string heuristic = "no-path";
        std::string path;
        try {
            const auto h = prontoqa_heuristic(inst, order);
            heuristic = h.answer ? "true" : "false";
            for (const auto& n : h.path) path += (path.empty() ? "" : ">") + n;
        } catch (const NoPath&) {
        }
        const auto ex = prontoqa_exhaustive(inst);
        const std::string exhaustive = ex ? (*ex ? "true" : "false") : "undetermined";
        agree += heuristic == exhaustive;
        const std::string expected = item.expected ? (*item.expected ? "true" : "false") : "";
        std::cout << csv_field(item.id) << ',' << heuristic << ',' << exhaustive << ',' << expected << ',' << path
                  << '\n';
    }
    std::cerr << "agreement " << agree << '/' << items.size() << '\n';
}

void add_chain_options(CLI::App* cmd, ChainArgs& a) {
    a.d_option = cmd->add_option("--d", a.config.d, "lattice offset for operand lookup")->capture_default_str();
    cmd->add_option("--model-family", a.model_family, "coconut or codi; codi defaults --d to 2")
        ->capture_default_str();
    cmd->add_option("--r-passes", a.r_passes, "required verification passes, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--n-attempts", a.config.n_attempts, "counterfactual prompts per candidate")
        ->capture_default_str();
    cmd->add_option("--seed", a.config.seed, "seed for replacement values")->capture_default_str();
    cmd->add_option("--range-lo", a.config.range_lo)->capture_default_str();
    cmd->add_option("--range-hi", a.config.range_hi)->capture_default_str();
    cmd->add_option("--max-candidates", a.config.max_candidates)->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trace analysis for latent reasoning models"};
    app.set_config("--config", "", "keyed text config file; flags override it");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    auto& sp = synth.spec;
    synth_cmd->add_option("--count", sp.count)->capture_default_str();
    synth_cmd->add_option("--min-steps", sp.min_steps)->capture_default_str();
    synth_cmd->add_option("--max-steps", sp.max_steps)->capture_default_str();
    synth_cmd->add_option("--seed", sp.seed)->capture_default_str();
    synth_cmd->add_option("--style", synth.style, "operands-and-results or results-only")->capture_default_str();
    synth_cmd->add_option("--k", sp.policy.k)->capture_default_str();
    synth_cmd->add_option("--latent-positions", sp.policy.latent_positions)->capture_default_str();
    synth_cmd->add_option("--d", sp.policy.d)->capture_default_str();
    synth_cmd->add_option("--fidelity", sp.policy.fidelity)->capture_default_str();
    synth_cmd->add_option("--rank-law", synth.rank_law, "always-top or geometric")->capture_default_str();
    synth_cmd->add_option("--rank-p", sp.policy.rank_p)->capture_default_str();
    synth_cmd->add_option("--distractor-p", sp.policy.distractor_probability)->capture_default_str();
    synth_cmd->add_option("--skip-p", sp.policy.skip_probability)->capture_default_str();
    synth_cmd->add_option("--skip-step", synth.skip_step, "always skip this step index")->capture_default_str();
    synth_cmd->add_option("--incorrect-p", sp.policy.incorrect_probability)->capture_default_str();
    synth_cmd->add_option("--stop-budget", synth.stop_budget, "fixed early-stopping budget")->capture_default_str();
    synth_cmd->add_option("--cf-error-p", sp.policy.counterfactual_error_probability)->capture_default_str();
    synth_cmd->add_option("--min-counterfactuals", sp.min_counterfactuals,
                          "valid replacements required per prompt number a step uses; 0 disables")
        ->capture_default_str();
    synth_cmd->add_option("--model", synth.model_out, "synthmodel/1 output");
    synth_cmd->add_option("--projdump", synth.projdump_out, "projdump/1 output");
    synth_cmd->add_option("--dataset", synth.dataset_out, "dataset output");

    FilterArgs filter;
    auto* filter_cmd = app.add_subcommand("filter", "apply dataset filters and print counts");
    filter_cmd->add_option("dataset", filter.dataset)->required();
    filter_cmd->add_option("--filter", filter.filter, "valid-gold, vp-friendly or both")->capture_default_str();
    filter_cmd->add_option("--tokens", filter.tokens, "single-token number list, one per line");
    filter_cmd->add_option("--max-single-token", filter.max_single_token,
                           "without --tokens, digit strings up to this value are single tokens")
        ->capture_default_str();
    filter_cmd->add_option("--out", filter.out, "write the kept instances");

    BacktrackArgs bt;
    auto* bt_cmd = app.add_subcommand("backtrack", "search gold traces in the projections");
    bt_cmd->add_option("--projdump", bt.projdump)->required();
    bt_cmd->add_option("--dataset", bt.dataset, "gold traces by instance id");
    bt_cmd->add_option("--k", bt.config.k)->capture_default_str();
    bt_cmd->add_option("--question-tokens", bt.question_tokens, "on, off or both")->capture_default_str();
    bt_cmd->add_option("--baseline-n", bt.config.baseline_n)->capture_default_str();
    bt_cmd->add_option("--seed", bt.config.seed)->capture_default_str();
    bt_cmd->add_option("--max-partial", bt.config.max_partial)->capture_default_str();
    bt_cmd->add_option("--variants", bt.variants)->delimiter(',')->capture_default_str();
    bt_cmd->add_option("--jobs", bt.config.jobs)->default_val(default_jobs());
    bt_cmd->add_option("--out-dir", bt.out_dir);

    ChainArgs fc;
    auto* fc_cmd = app.add_subcommand("forward-chain", "propose and verify steps with counterfactual prompts");
    fc_cmd->add_option("--projdump", fc.projdump)->required();
    fc_cmd->add_option("--dataset", fc.dataset);
    fc_cmd->add_option("--oracle", fc.oracle, "synth:FILE, batch:FILE, record:FILE or cmd:COMMAND");
    fc_cmd->add_option("--k", fc.config.k)->capture_default_str();
    add_chain_options(fc_cmd, fc);
    fc_cmd->add_option("--jobs", fc.jobs)->default_val(default_jobs());
    fc_cmd->add_option("--out-dir", fc.out_dir);

    EarlystopArgs es;
    auto* es_cmd = app.add_subcommand("earlystop", "first and stable match statistics");
    es_cmd->add_option("inputs", es.inputs, "projdump files, optionally LABEL=PATH")->required();
    es_cmd->add_option("--rows", es.rows, "per-instance CSV output");

    RenderArgs rd;
    rd.chain.r_passes = {2};
    auto* rd_cmd = app.add_subcommand("render", "markdown projection table for one instance");
    rd_cmd->add_option("--projdump", rd.projdump)->required();
    rd_cmd->add_option("--dataset", rd.dataset);
    rd_cmd->add_option("--id", rd.id)->required();
    rd_cmd->add_option("--k", rd.k)->capture_default_str();
    rd_cmd->add_flag("--question-tokens", rd.question_tokens, "allow question-number leaves");
    rd_cmd->add_option("--oracle", rd.oracle, "render the forward-chaining trace instead");
    add_chain_options(rd_cmd, rd.chain);

    ServeArgs sv;
    auto* sv_cmd = app.add_subcommand("serve-oracle", "answer oracle/1 requests on stdin");
    sv_cmd->add_option("--oracle", sv.oracle, "backing oracle spec");
    sv_cmd->add_option("--projdump", sv.projdump, "base records for batch oracles");

    ProntoArgs pq;
    auto* pq_cmd = app.add_subcommand("prontoqa", "answer ontology questions with the child-counting heuristic");
    pq_cmd->add_option("--input", pq.input, "JSON lines with id, question and optional answer");
    pq_cmd->add_option("--count", pq.count, "generated instances without --input")->capture_default_str();
    pq_cmd->add_option("--seed", pq.seed)->capture_default_str();
    pq_cmd->add_option("--min-hops", pq.spec.min_hops)->capture_default_str();
    pq_cmd->add_option("--max-hops", pq.spec.max_hops)->capture_default_str();
    pq_cmd->add_option("--order", pq.order, "mentions or children")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*synth_cmd) run_synth(synth);
        else if (*filter_cmd) run_filter(filter);
        else if (*bt_cmd) run_backtrack(bt);
        else if (*fc_cmd) run_forward_chain(fc);
        else if (*es_cmd) run_earlystop(es);
        else if (*rd_cmd) run_render(rd);
        else if (*sv_cmd) run_serve(sv);
        else if (*pq_cmd) run_prontoqa(pq);
    } catch (const OracleUnavailable& e) {
        std::cerr << "oracle error: " << e.what() << '\n';
        return kExitOracle;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return 0;
}
