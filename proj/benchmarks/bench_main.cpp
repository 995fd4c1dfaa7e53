#include "ram2c/eval_harness.hpp"
#include "ram2c/expert.hpp"
#include "ram2c/knowledge_base.hpp"
#include "ram2c/pipeline.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>

using namespace ram2c;

namespace {

BackendDescriptor mock(const std::string& id, std::uint64_t seed) {
    BackendDescriptor d;
    d.id = id;
    d.mock_seed = seed;
    d.retry = {1, 1};
    return d;
}

void fill(KnowledgeStore& store, int docs) {
    std::vector<RawDocument> batch;
    for (int i = 0; i < docs; ++i)
        batch.push_back(RawDocument::make("doc-" + std::to_string(i), kAllSourceKinds[i % 3], "t",
                                          "passage " + std::to_string(i) + " about islands"));
    store.ingest(batch, {4096, 0});
}

void BM_Search(benchmark::State& state) {
    Gateway gateway;
    gateway.add_backend(mock("embed", 4));
    KnowledgeStore store(gateway, "embed");
    fill(store, static_cast<int>(state.range(0)));
    int q = 0;
    for (auto _ : state) benchmark::DoNotOptimize(store.search("query " + std::to_string(q++), 18));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Search)->Arg(1000)->Arg(10000);

void BM_FleissKappa(benchmark::State& state) {
    std::mt19937_64 rng(1);
    std::vector<std::array<int, 3>> rows(static_cast<std::size_t>(state.range(0)));
    for (auto& r : rows) {
        r = {0, 0, 0};
        for (int k = 0; k < 5; ++k) ++r[rng() % 3];
    }
    for (auto _ : state) benchmark::DoNotOptimize(fleiss_kappa(rows, 5));
}
BENCHMARK(BM_FleissKappa)->Arg(100)->Arg(10000);

void BM_MockPipeline(benchmark::State& state) {
    Gateway gateway{8};
    for (auto [id, seed] : {std::pair{"strong", 1}, {"embed", 4}}) gateway.add_backend(mock(id, seed));
    KnowledgeStore store(gateway, "embed");
    fill(store, 200);
    PipelineConfig cfg;
    cfg.parallelism = static_cast<std::size_t>(state.range(0));
    M2CPipeline pipeline(gateway, store, PersonaLibrary::load(std::string(RAM2C_BENCH_ASSET_DIR) + "/personas"),
                         cfg);
    StudentContext student{"Grade 5 student who enjoys adventure stories.", {}};
    for (auto _ : state)
        benchmark::DoNotOptimize(pipeline.run_pipeline("raw draft", "Why build a wall?", "Fear.", student));
}
BENCHMARK(BM_MockPipeline)->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
