// Acceptance gate: one PASS/FAIL line per primary criterion, each under its
// wall-clock limit. Exits non-zero if any criterion fails.

#include "ram2c/dialogue_factory.hpp"
#include "ram2c/eval_harness.hpp"
#include "support.hpp"

#include <fmt/core.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>

using namespace ram2c;
using namespace ram2c::testing;
using nlohmann::json;

namespace {

struct Check : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Check(what);
}

// ---------------------------------------------------------------------------

void check_chain(const RefinementTrace& t, const std::vector<Role>& roles, int experts) {
    require(t.complete, "trace incomplete");
    require(t.stages.size() == roles.size(), "wrong stage count");
    for (std::size_t i = 0; i < roles.size(); ++i) {
        const auto& s = t.stages[i];
        require(s.role == roles[i], "wrong stage role at " + std::to_string(i));
        require(s.input_draft == (i == 0 ? t.raw_draft : t.stages[i - 1].output_draft), "chain broken");
        require(s.output_draft == s.synthesis, "output is not the synthesis");
        require(static_cast<int>(s.per_expert.size()) == experts, "wrong expert count");
    }
    require(t.final == t.stages.back().output_draft, "final is not last output");
}

void pipeline_order() {
    MockStack stack;
    stack.ingest_fixture_corpus();
    const auto student = sample_student();
    M2CPipeline full(stack.gateway, stack.store, personas(), PipelineConfig{});
    for (int i = 0; i < 100; ++i) {
        auto t = full.run_pipeline("raw draft " + std::to_string(i), "Why build a wall?", "Fear.", student);
        check_chain(t, {Role::T, Role::P, Role::E}, 3);
    }
    const std::vector<std::tuple<std::string, std::vector<Role>, int>> ablations = {
        {"no-P", {Role::T, Role::E}, 3},
        {"no-E", {Role::T, Role::P}, 3},
        {"no-PE", {Role::T}, 3},
        {"single-expert", {Role::T, Role::P, Role::E}, 1}};
    for (const auto& [name, roles, experts] : ablations) {
        M2CPipeline p(stack.gateway, stack.store, personas(), PipelineConfig::ablation(name));
        check_chain(p.run_pipeline("raw", "Why build a wall?", "Fear.", student), roles, experts);
    }
}

void reference_value() {
    auto experts = personas().make_group(Role::T, 3, default_source_scope(Role::T));
    ReflectionOptions opts;
    opts.backend_id = "strong";
    auto run = [&](std::size_t quota) {
        MockStack stack(panel_rules());
        std::vector<std::string> ids;
        for (const auto& r : filter_references(stack.gateway, panel_candidates(), experts,
                                               "Why does Robinson build a wall?", "Because he is afraid.",
                                               quota, opts))
            ids.push_back(r.chunk.doc_id);
        return ids;
    };
    const auto top3 = run(3);
    require(top3 == std::vector<std::string>{"doc-15", "doc-02", "doc-09"},
            "quota-3 order: " + fmt::format("{}", fmt::join(top3, ",")));
    const auto all = run(18);
    require(all == std::vector<std::string>{"doc-15", "doc-02", "doc-09", "doc-11"},
            "full order: " + fmt::format("{}", fmt::join(all, ",")));
    require(run(18) == all, "not deterministic");
}

void retrieval_oracle() {
    Gateway gateway;
    gateway.add_backend(mock_descriptor("embed", 4));
    KnowledgeStore store(gateway, "embed");
    std::vector<RawDocument> docs;
    for (int i = 0; i < 1000; ++i) {
        static constexpr SourceKind kinds[] = {SourceKind::class_records, SourceKind::teaching_theory,
                                               SourceKind::edu_psych_theory, SourceKind::literature_works};
        const auto kind = kinds[i % 4];
        docs.push_back(RawDocument::make(fmt::format("doc-{:04d}", i), kind, "t",
                                         fmt::format("passage {} about islands and courage", i)));
    }
    store.ingest(docs, {4096, 0});
    require(store.chunk_count() == 1000, "expected 1000 chunks");
    const auto chunks = store.chunks();

    ScriptedMockBackend embedder(4, 64);
    std::mt19937_64 rng(2024);
    for (int q = 0; q < 200; ++q) {
        const auto query = fmt::format("query {} {}", q, rng());
        const auto qv = embedder.embed_one(query);
        std::vector<std::pair<double, std::string>> all;
        for (const auto& c : chunks) {
            double dot = 0, nq = 0, nc = 0;
            for (std::size_t i = 0; i < qv.values.size(); ++i) {
                dot += qv.values[i] * c.vector->values[i];
                nq += qv.values[i] * qv.values[i];
                nc += c.vector->values[i] * c.vector->values[i];
            }
            all.emplace_back(dot / (std::sqrt(nq) * std::sqrt(nc)), c.chunk_id);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        auto got = store.search(query, 18);
        require(got.size() == 18, "search returned " + std::to_string(got.size()));
        for (std::size_t i = 0; i < 18; ++i)
            require(got[i].chunk.chunk_id == all[i].second,
                    fmt::format("query {} rank {}: {} vs {}", q, i + 1, got[i].chunk.chunk_id, all[i].second));
    }
}

void scoring_arithmetic() {
    HiddenMaps hidden;
    auto make = [&](int better, int equal, int worse) {
        std::vector<Choice> cs;
        int i = 0;
        auto add = [&](ChoiceVerdict v, int n) {
            for (int k = 0; k < n; ++k, ++i) {
                const auto id = fmt::format("item-{:03d}", i);
                hidden[id] = i % 2 ? Side::candidate : Side::baseline;
                // Express the intended outcome through whichever side the candidate is on.
                auto verdict = v;
                if (v != ChoiceVerdict::equal && hidden[id] == Side::baseline)
                    verdict = v == ChoiceVerdict::left_better ? ChoiceVerdict::right_better : ChoiceVerdict::left_better;
                cs.push_back({"vol", id, HtsDimension::H, verdict, ""});
            }
        };
        add(ChoiceVerdict::left_better, better);
        add(ChoiceVerdict::equal, equal);
        add(ChoiceVerdict::right_better, worse);
        return cs;
    };
    require(score(make(25, 0, 0), hidden) == 100.0, "all better != 100.0");
    require(score(make(0, 25, 0), hidden) == 50.0, "all equal != 50.0");
    require(score(make(15, 5, 5), hidden) == 70.0, "15/5/5 != 70.0");

    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        HiddenMaps h, swapped;
        std::vector<Choice> cs;
        const int n = 1 + static_cast<int>(rng() % 50);
        for (int i = 0; i < n; ++i) {
            const auto id = "i" + std::to_string(i);
            h[id] = rng() % 2 ? Side::candidate : Side::baseline;
            swapped[id] = h[id] == Side::candidate ? Side::baseline : Side::candidate;
            cs.push_back({"v" + std::to_string(rng() % 4), id, HtsDimension::T,
                          static_cast<ChoiceVerdict>(rng() % 3), ""});
        }
        require(std::abs(score(cs, h) + score(cs, swapped) - 100.0) < 1e-9,
                "antisymmetry violated in trial " + std::to_string(trial));
    }
}

double kappa_oracle(const std::vector<std::vector<int>>& ratings) {
    double p_bar = 0.0;
    std::vector<int> pooled;
    for (const auto& item : ratings) {
        int agree = 0;
        const int n = static_cast<int>(item.size());
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                if (a != b && item[a] == item[b]) ++agree;
        p_bar += static_cast<double>(agree) / (n * (n - 1));
        pooled.insert(pooled.end(), item.begin(), item.end());
    }
    p_bar /= static_cast<double>(ratings.size());
    double same = 0;
    for (int x : pooled)
        for (int y : pooled) same += x == y;
    const double total = static_cast<double>(pooled.size()) * static_cast<double>(pooled.size());
    if (same == total) return 1.0;
    const double p_e = same / total;
    return (p_bar - p_e) / (1.0 - p_e);
}

void fleiss_kappa_sweep() {
    for (int raters : {2, 3}) {
        const int per_item = raters == 2 ? 9 : 27;
        for (int items = 1; items <= 3; ++items) {
            int combos = 1;
            for (int i = 0; i < items; ++i) combos *= per_item;
            for (int code = 0; code < combos; ++code) {
                std::vector<std::vector<int>> ratings(items, std::vector<int>(raters));
                std::vector<std::array<int, 3>> counts(items);
                int rest = code;
                for (int i = 0; i < items; ++i)
                    for (auto& r : ratings[i]) {
                        r = rest % 3;
                        rest /= 3;
                        ++counts[i][r];
                    }
                const double got = fleiss_kappa(counts, raters).kappa;
                require(std::abs(got - kappa_oracle(ratings)) <= 1e-9,
                        fmt::format("n={} N={} case {}", raters, items, code));
            }
        }
    }
    require(fleiss_kappa({{3, 0, 0}, {0, 3, 0}}, 3).kappa == 1.0, "perfect-agreement fixture");
    require(fleiss_kappa({{1, 1, 0}, {1, 1, 0}}, 2).kappa == -1.0, "split fixture");
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
}

GenerationJob job_for(const M2CPipeline& pipeline, std::size_t count, std::uint64_t seed) {
    GenerationJob j;
    j.count = count;
    j.seed = seed;
    j.scenario = {"Robinson Crusoe", "grade 5-6", "zh"};
    j.pipeline = pipeline.config();
    j.roster = default_roster();
    j.parallelism = 4;
    return j;
}

void dataset_round_trip() {
    TempDir dir;
    MockStack stack;
    stack.ingest_fixture_corpus();
    M2CPipeline pipeline(stack.gateway, stack.store, personas(), PipelineConfig{});
    DialogueFactory factory(stack.gateway, pipeline, TraceStore(dir / "traces"));
    const auto out = dir / "dataset.jsonl";
    auto report = factory.run_job(job_for(pipeline, 50, 7), out);
    require(report.produced == 50 && report.failed == 0,
            fmt::format("produced {} failed {}", report.produced, report.failed));
    TraceStore traces(dir / "traces");
    auto v = validate_dataset(out, &traces);
    require(v.valid_count == 50 && v.errors.empty(),
            fmt::format("valid {} errors {}", v.valid_count, v.errors.size()));
    auto records = read_jsonl(out);
    require(records.size() == 50, "line count");
    for (const auto& r : records)
        require(traces.load(r["trace_id"].get<std::string>()).final == r["chosen"].get<std::string>(),
                "chosen differs from trace final");
}

void blinding_balance() {
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 10'000; ++i)
        pairs.push_back({"q", "a", "candidate text " + std::to_string(i), "baseline text " + std::to_string(i)});
    auto items = build_eval_set(pairs, 7);
    std::size_t left = 0;
    for (const auto& it : items) {
        left += it.left_is == Side::candidate;
        const auto payload = to_annotator_json(it);
        require(!payload.contains("hidden_map") && !payload.contains("left_is"),
                "annotator payload leaks the mapping for " + it.item_id);
        require(payload.dump().find("hidden_map") == std::string::npos, "hidden_map in serialized payload");
    }
    const double frac = static_cast<double>(left) / static_cast<double>(items.size());
    require(frac >= 0.47 && frac <= 0.53, fmt::format("candidate-left frequency {:.4f}", frac));
}

void determinism() {
    auto run = [](std::uint64_t seed, std::size_t parallelism) {
        TempDir dir;
        MockStack stack;
        stack.ingest_fixture_corpus();
        M2CPipeline pipeline(stack.gateway, stack.store, personas(), PipelineConfig{});
        DialogueFactory factory(stack.gateway, pipeline, TraceStore(dir / "traces"));
        auto job = job_for(pipeline, 12, seed);
        job.parallelism = parallelism;
        factory.run_job(job, dir / "d.jsonl");
        std::string content;
        for (auto r : read_jsonl(dir / "d.jsonl")) {
            r.erase("record_id");
            r.erase("trace_id");
            r.erase("created_at");
            content += r.dump() + "\n";
        }
        return content;
    };
    const auto a = run(31, 1), b = run(31, 1), c = run(31, 6);
    require(!a.empty(), "no records");
    require(a == b, "same seed produced different content");
    require(a == c, "parallel run differs from serial run");
    require(a != run(32, 1), "seed has no effect");
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        double limit_s;
        std::function<void()> run;
    };
    const std::vector<Criterion> criteria = {
        {"pipeline-order", 5, pipeline_order},
        {"reference-value-filter", 1, reference_value},
        {"retrieval-oracle", 30, retrieval_oracle},
        {"scoring-arithmetic", 5, scoring_arithmetic},
        {"fleiss-kappa", 60, fleiss_kappa_sweep},
        {"dataset-round-trip", 30, dataset_round_trip},
        {"blinding-balance", 10, blinding_balance},
        {"determinism", 60, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty() && elapsed > c.limit_s)
            error = fmt::format("took {:.2f}s, limit {:.0f}s", elapsed, c.limit_s);
        if (error.empty()) {
            fmt::print("PASS {} ({:.2f}s)\n", c.name, elapsed);
        } else {
            ++failures;
            fmt::print("FAIL {} ({:.2f}s): {}\n", c.name, elapsed, error);
        }
    }
    std::fflush(stdout);
    return failures == 0 ? 0 : 1;
}
