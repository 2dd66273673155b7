// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "segdistill/model.hpp"
#include "segdistill/presets.hpp"
#include "segdistill/synthfaces.hpp"
#include "segdistill/trainer.hpp"

using namespace segdistill;

namespace {

struct Batch {
  Tensor images;
  OneHotTarget seg;
  OneHotTarget id;
};

Batch make_batch(int n, int res, int identities) {
  const synth::Dataset ds = synth::generate_dataset(identities, 10, res, 0);
  Tensor images(Shape{n, res, res, 3});
  std::vector<std::int32_t> mask, ids;
  const std::size_t per = static_cast<std::size_t>(res) * res * 3;
  for (int i = 0; i < n; ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i) % ds.samples.size()];
    std::copy(s.image.data().begin(), s.image.data().end(), images.data().begin() + i * per);
    mask.insert(mask.end(), s.mask.begin(), s.mask.end());
    ids.push_back(s.identity);
  }
  return {images, OneHotTarget::from_indices({n, res, res}, mask, synth::kFaceClassCount),
          OneHotTarget::from_indices({n}, ids, identities)};
}

// Forward and backward of the joint loss on one desk-sized batch of 16.
void BM_DeskJointStep(benchmark::State& state) {
  const bool decoder = state.range(0) != 0;
  zoo::Network net = zoo::build_network(zoo::desk_mobilenet_config(48, 20, decoder), 0);
  const Batch b = make_batch(16, 48, 20);
  for (auto _ : state) {
    Tape tape;
    const auto params = net.bind(tape);
    const auto out = net.forward(tape, params, tape.constant(b.images), Mode::kTrain, decoder);
    train::JointBatchOutputs outs{out.seg, *out.id};
    train::JointBatchTargets targets{decoder ? std::optional(b.seg) : std::nullopt, b.id};
    tape.backward(train::joint_loss(outs, targets, train::LossWeights{}));
    const Tensor g = tape.gradient(params.front());
    benchmark::DoNotOptimize(g.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DeskJointStep)->Arg(0)->Arg(1)->ArgNames({"decoder"})->Unit(benchmark::kMillisecond);

void BM_RenderFace(benchmark::State& state) {
  const int res = state.range(0);
  const auto g = synth::sample_identity(0, 0);
  int view = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synth::render(g, synth::stratified_pose(0, 0, view++ % 40, 40), res).mask.data());
  }
}
BENCHMARK(BM_RenderFace)->Arg(48)->Arg(128);

}  // namespace
