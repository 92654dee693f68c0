// Microbenchmarks for the hot paths: convolution, windowed attention, a full
// transformer block, and one optimizer-driven training step.

#include <benchmark/benchmark.h>

#include "csunet/csunet.hpp"

using namespace csunet;

namespace {

Tensor<float> rand_f32(Shape shape, Rng& rng, float scale = 1.0f) {
    Tensor<float> t = Tensor<float>::zeros(shape);
    for (auto& v : t.data()) v = float(rng.uniform(-scale, scale));
    return t;
}

void BM_conv2d(benchmark::State& state) {
    const int64_t c = state.range(0);
    Rng rng(1);
    Tensor<float> x = rand_f32({1, c, 56, 56}, rng);
    Tensor<float> w = rand_f32({c, c, 3, 3}, rng, 0.1f);
    Tensor<float> b = rand_f32({c}, rng, 0.1f);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1).ptr());
    state.SetItemsProcessed(int64_t(state.iterations()) * 56 * 56 * c);
}
BENCHMARK(BM_conv2d)->Arg(32)->Arg(96);

void BM_w_cmsa(benchmark::State& state) {
    const int64_t d = state.range(0), M = 7, H = 56;
    Rng rng(2);
    WindowGrid grid{M, 0, H, H};
    CmsaParams<float> p;
    p.heads = std::max<int64_t>(1, d / 32);
    p.qkv_kind = QkvKind::ConvWindowed;
    p.refine_kind = RefineKind::Depthwise;
    p.q_kernel = rand_f32({d, 1, 3, 3}, rng, 0.3f);
    p.k_kernel = rand_f32({d, 1, 3, 3}, rng, 0.3f);
    p.v_kernel = rand_f32({d, 1, 3, 3}, rng, 0.3f);
    p.q_norm = {Tensor<float>::full({d}, 1.0f), Tensor<float>::zeros({d})};
    p.k_norm = {Tensor<float>::full({d}, 1.0f), Tensor<float>::zeros({d})};
    p.v_norm = {Tensor<float>::full({d}, 1.0f), Tensor<float>::zeros({d})};
    p.refine_kernel = rand_f32({d, 1, 3, 3}, rng, 0.3f);
    Tensor<float> x = rand_f32({1, H, H, d}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(w_cmsa(x, p, grid).ptr());
}
BENCHMARK(BM_w_cmsa)->Arg(32)->Arg(96);

void BM_model_forward(benchmark::State& state) {
    ModelConfig cfg = ablation_config(6);
    cfg.base_dim = 16;
    cfg.input_h = cfg.input_w = 128;
    cfg.window = 4;
    cfg.num_classes = 4;
    Model<float> model(cfg);
    model.init_weights(0);
    Rng rng(3);
    Tensor<float> img = rand_f32({1, 3, 128, 128}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(img).ptr());
}
BENCHMARK(BM_model_forward);

void BM_train_step(benchmark::State& state) {
    ModelConfig cfg = ablation_config(6);
    cfg.base_dim = 16;
    cfg.input_h = cfg.input_w = 128;
    cfg.window = 4;
    cfg.num_classes = 4;
    Model<float> model(cfg);
    model.init_weights(0);
    AdamW<float> opt(model.params(), {});
    Rng rng(4);
    Tensor<float> img = rand_f32({2, 3, 128, 128}, rng);
    std::vector<int32_t> labels;
    for (int64_t i = 0; i < 2 * 128 * 128; ++i)
        labels.push_back(int32_t(rng.uniform_int(0, 3)));
    for (auto _ : state) {
        TapeScope<float> scope;
        Tensor<float> loss = combined_loss(model.forward(img), labels);
        model.params().zero_grads();
        scope.tape.backward(loss);
        opt.step(1e-4);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_train_step);

}  // namespace

int main(int argc, char** argv) {
    pin_blas_threads();
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    return 0;
}
