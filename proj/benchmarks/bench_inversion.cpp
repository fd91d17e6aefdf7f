#include "enkf/inversion.hpp"
#include "enkf/transport_maps.hpp"

#include <benchmark/benchmark.h>

using namespace enkf;

namespace {

InverseProblem cubic_problem()
{
    InverseProblem p;
    p.G = [](const Vector& u) -> Vector { return u.array().cube() / 10.0 + u.array(); };
    p.w = Vector::Constant(1, 4.0);
    p.gamma = Matrix::Constant(1, 1, 0.25);
    p.prior = {Vector::Zero(1), Matrix::Identity(1, 1)};
    return p;
}

void BM_EkiTransportStep(benchmark::State& state)
{
    const InverseProblem p = cubic_problem();
    const SeededStream st(5);
    const Ensemble e = sample(p.prior, state.range(0), st);
    std::uint64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(eki_transport_step(p, e, 0.05, st, n++));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EkiTransportStep)->Arg(1000)->Arg(10000);

void BM_EksStep(benchmark::State& state)
{
    const InverseProblem p = cubic_problem();
    const SeededStream st(6);
    const Ensemble e = sample(p.prior, state.range(0), st);
    std::uint64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(eks_step(p, e, 1e-3, st, n++));
}
BENCHMARK(BM_EksStep)->Arg(1000)->Arg(10000);

void BM_GridPosterior(benchmark::State& state)
{
    const InverseProblem p = cubic_problem();
    const auto n = static_cast<int>(state.range(0));
    const GridSpec grid{Vector::Constant(1, -2.0), Vector::Constant(1, 5.0), {n}};
    for (auto _ : state) benchmark::DoNotOptimize(grid_posterior(p, 1.0, grid).moments());
}
BENCHMARK(BM_GridPosterior)->Arg(51)->Arg(201);

void BM_TimeAveragedMap(benchmark::State& state)
{
    TimeAveragedMapConfig cfg;
    cfg.T = static_cast<double>(state.range(0));
    Rng rng(7);
    for (auto _ : state) benchmark::DoNotOptimize(time_averaged_forward_map(cfg, 10.0, rng));
}
BENCHMARK(BM_TimeAveragedMap)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_StochasticTransportBuild(benchmark::State& state)
{
    Rng rng(8);
    const JointGaussian j = random_joint(state.range(0), state.range(0) / 2 + 1, rng);
    const Vector y = Vector::Ones(j.dim_y());
    const FamilySelector sel = random_stochastic_selector(j, rng);
    for (auto _ : state) benchmark::DoNotOptimize(build_stochastic(j, y, sel));
}
BENCHMARK(BM_StochasticTransportBuild)->Arg(3)->Arg(20);

}  // namespace
