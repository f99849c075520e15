#include <benchmark/benchmark.h>

#include "vlab/intervene.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace {

struct Fixture {
  vlab::Tokenizer tokenizer = vlab::Tokenizer::build();
  std::vector<vlab::PromptRecord> corpus = vlab::build_corpus(vlab::probe_corpus_spec(), tokenizer);
  vlab::Model model = vlab::build_model(vlab::ModelConfig{.rng_seed = 1});
  vlab::ReadoutContext ctx{vlab::digit_token_pool(tokenizer), {}};
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_ForwardCached(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.model.forward_cached(f.corpus[0].tokens));
  state.counters["tokens"] = static_cast<double>(f.corpus[0].tokens.size());
}
BENCHMARK(BM_ForwardCached)->Unit(benchmark::kMillisecond);

void BM_ForwardHookedSteer(benchmark::State& state) {
  const Fixture& f = fixture();
  const vlab::HookSite site{5, vlab::Stream::resid_post, 1, std::nullopt};
  const vlab::Vector dir(64, 0.125);
  const std::vector<vlab::HookEdit> edits{vlab::HookEdit::add(site, dir, 2.0)};
  for (auto _ : state) benchmark::DoNotOptimize(f.model.forward_hooked(f.corpus[0].tokens, edits, false));
}
BENCHMARK(BM_ForwardHookedSteer)->Unit(benchmark::kMillisecond);

void BM_DecoderStep(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) {
    vlab::Model::Decoder d(f.model);
    for (vlab::TokenId t : f.corpus[0].tokens) d.step(t, false);
    benchmark::DoNotOptimize(d.step(f.corpus[0].tokens.back()));
  }
}
BENCHMARK(BM_DecoderStep)->Unit(benchmark::kMillisecond);

}  // namespace
