// ram2c command-line entry points. Every failure prints one JSON line
// {"error": <code>, "message": <text>} on stderr and exits nonzero.

#include "ram2c/config.hpp"
#include "ram2c/error.hpp"
#include "ram2c/eval_harness.hpp"
#include "ram2c/service.hpp"
#include "ram2c/util.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace ram2c;
using nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int report_error(const std::string& code, const std::string& message, int exit_code = kExitFailure) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
    return exit_code;
}

struct GlobalOptions {
    std::string config_path;
    std::string data_dir;
    bool mock = false;
};

AppConfig load_config(const GlobalOptions& g) {
    auto cfg = g.config_path.empty() ? AppConfig::defaults() : AppConfig::load(g.config_path);
    if (g.mock) cfg.use_mock_backends();
    if (!g.data_dir.empty()) cfg.data_dir = g.data_dir;
    cfg.validate();
    return cfg;
}

// Shortest round-trip form, always with a decimal point ("1.0", not "1").
std::string format_double(double v) {
    auto s = fmt::format("{}", v);
    if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

std::vector<std::array<int, 3>> read_count_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::unreadable_file, "cannot read " + path);
    std::vector<std::array<int, 3>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::array<int, 3> row{};
        std::string extra;
        if (!(ss >> row[0] >> row[1] >> row[2]) || (ss >> extra))
            fail(Errc::malformed_file, fmt::format("{}:{}: expected three integer counts", path, line_no));
        rows.push_back(row);
    }
    return rows;
}

int cmd_ingest(const GlobalOptions& g, const std::string& manifest, std::string root) {
    Runtime rt(load_config(g));
    rt.load_knowledge_store();
    if (root.empty()) root = std::filesystem::path(manifest).parent_path().string();
    auto docs = load_manifest(manifest, root);
    auto report = rt.store().ingest(docs, rt.config().chunking);
    rt.save_knowledge_store();
    std::cout << "chunks_added=" << report.chunks_added << "\n";
    for (const auto& [kind, n] : report.per_source_counts) std::cout << to_string(kind) << "=" << n << "\n";
    return 0;
}

int cmd_generate(const GlobalOptions& g, std::size_t count, std::optional<std::uint64_t> seed,
                 std::string out, const std::string& ablation) {
    auto cfg = load_config(g);
    if (!ablation.empty()) {
        auto a = PipelineConfig::ablation(ablation);
        cfg.pipeline.stages = a.stages;
        cfg.pipeline.experts_per_group = a.experts_per_group;
    }
    Runtime rt(cfg);
    rt.load_knowledge_store();
    auto job = rt.make_job(count, seed.value_or(rt.config().dataset_seed));
    if (out.empty())
        out = (rt.config().datasets_dir() / fmt::format("dataset-{}.jsonl", job.seed)).string();
    auto report = rt.factory().run_job(job, out);
    std::cout << "produced=" << report.produced << "\n"
              << "failed=" << report.failed << "\n"
              << "output=" << report.output_path.string() << "\n";
    if (report.failed > 0)
        return report_error("partial-job", fmt::format("{} of {} records failed", report.failed, report.requested));
    return 0;
}

int cmd_serve(const GlobalOptions& g, std::string bind) {
    Runtime rt(load_config(g));
    rt.load_knowledge_store();
    if (bind.empty()) bind = rt.config().http_bind;
    auto [host, port] = parse_bind(bind);
    HttpService service(rt);
    int bound = service.bind(host, port);
    std::cout << "listening=" << host << ":" << bound << std::endl;
    service.listen();
    return 0;
}

int cmd_eval_build(const GlobalOptions& g, const std::string& dataset, std::optional<std::uint64_t> seed) {
    Runtime rt(load_config(g));
    auto items = build_eval_set(load_eval_pairs(dataset), seed.value_or(rt.config().eval_seed));
    const auto n = items.size();
    rt.eval().set_items(std::move(items));
    std::cout << "item_count=" << n << "\n";
    return 0;
}

// Roster file: one "volunteer<TAB or space>dimension" per line.
std::vector<std::pair<std::string, HtsDimension>> read_roster(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::unreadable_file, "cannot read " + path);
    std::vector<std::pair<std::string, HtsDimension>> out;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string volunteer, dim;
        if (!(ss >> volunteer >> dim)) fail(Errc::malformed_file, "bad roster line: " + t);
        out.emplace_back(volunteer, dimension_from_string(dim));
    }
    return out;
}

int cmd_eval_assign(const GlobalOptions& g, const std::string& volunteer, const std::string& dimension,
                    const std::string& roster, std::optional<std::uint64_t> seed) {
    Runtime rt(load_config(g));
    std::vector<std::pair<std::string, HtsDimension>> wanted;
    if (!roster.empty()) {
        wanted = read_roster(roster);
    } else {
        if (volunteer.empty() || dimension.empty())
            return report_error("invalid-flag", "--volunteer and --dimension (or --roster) are required",
                                kExitUsage);
        wanted.emplace_back(volunteer, dimension_from_string(dimension));
    }
    for (const auto& [v, d] : wanted) {
        auto a = rt.eval().assignment(v, d, seed.value_or(rt.config().eval_seed));
        std::cout << json{{"volunteer_id", a.volunteer_id},
                          {"dimension", to_string(a.dimension)},
                          {"item_ids", a.item_ids}}
                         .dump()
                  << "\n";
    }
    return 0;
}

int cmd_score(const GlobalOptions& g, const std::string& dimension, bool per_volunteer) {
    Runtime rt(load_config(g));
    auto report = rt.eval().report(dimension_from_string(dimension), per_volunteer);
    std::cout << report.row() << "\n" << to_json(report).dump() << "\n";
    return 0;
}

int cmd_kappa(const std::string& path) {
    auto rows = read_count_matrix(path);
    if (rows.empty()) fail(Errc::malformed_file, path + " has no rows");
    const int n = rows[0][0] + rows[0][1] + rows[0][2];
    bool uniform = true;
    for (const auto& r : rows) uniform = uniform && (r[0] + r[1] + r[2] == n);
    auto k = uniform ? fleiss_kappa(rows, n) : fleiss_kappa_variable(rows);
    std::cout << format_double(k.kappa) << "\n";
    return 0;
}

int cmd_validate(const GlobalOptions& g, const std::string& path, bool check_traces) {
    std::optional<TraceStore> traces;
    if (check_traces) traces.emplace(load_config(g).traces_dir());
    auto report = validate_dataset(path, traces ? &*traces : nullptr);
    std::cout << "valid_count=" << report.valid_count << "\n";
    for (const auto& e : report.errors) {
        std::cerr << json{{"error", "invalid-record"}, {"line", e.line}, {"reason", e.reason}}.dump() << "\n";
    }
    return report.errors.empty() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ram2c: multi-expert response refinement, preference datasets, and blinded evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--config", g.config_path, "INI config file");
    app.add_option("--data-dir", g.data_dir, "Override [general] data_dir");
    app.add_flag("--mock", g.mock, "Replace every backend with a scripted mock");

    std::string manifest, root;
    auto* ingest = app.add_subcommand("ingest", "Chunk, embed, and store the documents listed in a manifest");
    ingest->add_option("manifest", manifest, "TSV manifest: path, source kind, title")->required();
    ingest->add_option("--root", root, "Directory manifest paths are relative to (default: manifest's dir)");

    std::size_t count = 0;
    std::optional<std::uint64_t> seed;
    std::string out, ablation;
    auto* generate = app.add_subcommand("generate", "Produce preference records into a JSONL dataset");
    generate->add_option("--count", count, "Number of records")->required()->check(CLI::PositiveNumber);
    generate->add_option("--seed", seed, "Job seed (default: [general] dataset_seed)");
    generate->add_option("--out", out, "Output path (default: <data_dir>/datasets/dataset-<seed>.jsonl)");
    generate->add_option("--ablation", ablation, "full, no-P, no-E, no-PE, or single-expert");

    std::string bind;
    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    serve->add_option("--bind", bind, "host:port (default: [general] http_bind)");

    std::string dataset;
    auto* eval_build = app.add_subcommand("eval-build", "Build the blinded evaluation set from a dataset");
    eval_build->add_option("--dataset", dataset, "JSONL with Q, A, and candidate/baseline or chosen/rejected")
        ->required();
    eval_build->add_option("--seed", seed, "Blinding seed (default: [general] eval_seed)");

    std::string volunteer, dimension, roster;
    auto* eval_assign = app.add_subcommand("eval-assign", "Create or show volunteer assignments");
    eval_assign->add_option("--volunteer", volunteer, "Volunteer id");
    eval_assign->add_option("--dimension", dimension, "H, T, or S");
    eval_assign->add_option("--roster", roster, "File of 'volunteer dimension' lines");
    eval_assign->add_option("--seed", seed, "Sampling seed (default: [general] eval_seed)");

    bool per_volunteer = false;
    auto* score_cmd = app.add_subcommand("score", "Score and agreement for one dimension");
    score_cmd->add_option("--dimension", dimension, "H, T, or S")->required();
    score_cmd->add_flag("--per-volunteer", per_volunteer, "Average per-volunteer scores instead of pooling");

    std::string path;
    auto* kappa = app.add_subcommand("kappa", "Fleiss' kappa of a count matrix (rows of better equal worse)");
    kappa->add_option("matrix", path, "Whitespace-separated count rows")->required();

    bool check_traces = false;
    auto* validate = app.add_subcommand("validate", "Check a dataset file");
    validate->add_option("path", path, "JSONL dataset")->required();
    validate->add_flag("--traces", check_traces, "Also check each record against its stored trace");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("invalid-flag", e.what(), kExitUsage);
    }

    try {
        if (!g.config_path.empty()) (void)load_config(g);
        if (*ingest) return cmd_ingest(g, manifest, root);
        if (*generate) return cmd_generate(g, count, seed, out, ablation);
        if (*serve) return cmd_serve(g, bind);
        if (*eval_build) return cmd_eval_build(g, dataset, seed);
        if (*eval_assign) return cmd_eval_assign(g, volunteer, dimension, roster, seed);
        if (*score_cmd) return cmd_score(g, dimension, per_volunteer);
        if (*kappa) return cmd_kappa(path);
        if (*validate) return cmd_validate(g, path, check_traces);
    } catch (const Error& e) {
        return report_error(std::string(to_string(e.code())), e.what());
    } catch (const std::exception& e) {
        return report_error("internal", e.what());
    }
    return kExitUsage;
}
