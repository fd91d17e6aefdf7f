#include "enkf/filters_continuous.hpp"
#include "enkf/filters_discrete.hpp"
#include "enkf/models.hpp"

#include <benchmark/benchmark.h>

using namespace enkf;

namespace {

struct L96Setup {
    DynamicsModel dyn = l96_dynamics(L96Params{}, 1e-3, 0.01);
    L96ObservationOperators ops = l96_observation();
    ObservationModel obs = linear_observation(ops.H, 0.1 * Matrix::Identity(6, 6));
    SeededStream stream{3};
    Vector y = Vector::Ones(6);

    Ensemble initial(Eigen::Index J) const
    {
        return sample({Vector::Constant(9, 2.0), Matrix::Identity(9, 9)}, J, stream, Phase::FilterInit);
    }
};

void BM_L96Forecast(benchmark::State& state)
{
    const L96Setup s;
    const Ensemble e = s.initial(state.range(0));
    std::uint64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(forecast(s.dyn, e, s.stream, n++));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_L96Forecast)->Arg(100)->Arg(1000);

void BM_EnkfAnalysis(benchmark::State& state)
{
    const L96Setup s;
    const Ensemble e = s.initial(state.range(0));
    std::uint64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(enkf_analysis(s.obs, e, s.y, s.stream, n++));
}
BENCHMARK(BM_EnkfAnalysis)->Arg(100)->Arg(1000)->Arg(10000);

void BM_EakfStateAnalysis(benchmark::State& state)
{
    const L96Setup s;
    const Ensemble e = s.initial(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(eakf_state_analysis(s.obs, e, s.y));
}
BENCHMARK(BM_EakfStateAnalysis)->Arg(100)->Arg(1000)->Arg(10000);

void BM_EakfObsAnalysis(benchmark::State& state)
{
    const L96Setup s;
    const Ensemble e = s.initial(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(eakf_obs_analysis(s.obs, e, s.y));
}
BENCHMARK(BM_EakfObsAnalysis)->Arg(100)->Arg(1000)->Arg(10000);

void BM_EtkfAnalysis(benchmark::State& state)
{
    const L96Setup s;
    const Ensemble e = s.initial(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(etkf_analysis(s.obs, e, s.y));
}
BENCHMARK(BM_EtkfAnalysis)->Arg(100)->Arg(1000)->Arg(10000);

void BM_KalmanStep(benchmark::State& state)
{
    const auto d = state.range(0);
    const Matrix M = 0.9 * Matrix::Identity(d, d);
    const Matrix H = Matrix::Identity(d / 2, d);
    const Gaussian g{Vector::Zero(d), Matrix::Identity(d, d)};
    const Vector y = Vector::Ones(d / 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(kalman_step(M, H, 0.1 * Matrix::Identity(d, d), Matrix::Identity(d / 2, d / 2), g, y));
}
BENCHMARK(BM_KalmanStep)->Arg(10)->Arg(100);

void BM_EnkbfStep(benchmark::State& state)
{
    const Matrix F{{-0.5, 1.0}, {-1.0, -0.5}};
    const ContinuousModel cm = linear_continuous(F, Matrix{{1.0, 0.0}}, 0.2 * Matrix::Identity(2, 2),
                                                 Matrix::Constant(1, 1, 0.3));
    const SeededStream st(4);
    const Ensemble e = sample({Vector::Zero(2), Matrix::Identity(2, 2)}, state.range(0), st);
    const Vector dz = Vector::Constant(1, 1e-3);
    std::uint64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(enkbf_stochastic_step(cm, e, dz, 1e-3, st, n++));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EnkbfStep)->Arg(1000)->Arg(10000);

}  // namespace
