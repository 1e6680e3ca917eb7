#include <vector>

#include "contrastgeo/errors.hpp"
#include "contrastgeo/fusion.hpp"
#include "contrastgeo/tensor.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

using namespace contrastgeo;
using testutil::random_tensor;

namespace {

constexpr std::size_t kDim = 8;

std::vector<FusionConfig> all_nine_configs() {
  std::vector<FusionConfig> configs;
  FusionConfig ca;
  ca.type = FusionType::CA;
  ca.heads = 2;
  configs.push_back(ca);
  for (const FusionType type : {FusionType::SUM, FusionType::CONCAT}) {
    for (const FusionEncoderKind kind :
         {FusionEncoderKind::MHA, FusionEncoderKind::BNA, FusionEncoderKind::MLP,
          FusionEncoderKind::TE}) {
      FusionConfig cfg;
      cfg.type = type;
      cfg.encoder = kind;
      cfg.heads = 2;
      cfg.bottleneck_ratio = 4;
      configs.push_back(cfg);
    }
  }
  return configs;
}

}  // namespace

TEST_SUITE_BEGIN("fusion");

TEST_CASE("BNA with zero-initialized up projection is the identity") {
  FusionConfig cfg;
  cfg.type = FusionType::SUM;
  cfg.encoder = FusionEncoderKind::BNA;
  Rng rng(3);
  const ParamMap weights = init_fusion(cfg, kDim, rng);

  const Tensor x = random_tensor(rng, {kDim});
  const Tensor out = encoder_forward(x, FusionEncoderKind::BNA, weights, "fe.", cfg.heads);
  CHECK(out.values == x.values);

  // Hence SUM+BNA fusion initially reduces to the plain element-wise sum.
  const Tensor t = random_tensor(rng, {kDim});
  const Tensor l = random_tensor(rng, {kDim});
  const Tensor fused = fuse(t, l, cfg, weights);
  const Tensor expected = add(t, l);
  CHECK(fused.values == expected.values);
}

TEST_CASE("MHA on a length-1 sequence applies attention weight exactly 1") {
  FusionConfig cfg;
  cfg.type = FusionType::SUM;
  cfg.encoder = FusionEncoderKind::MHA;
  cfg.heads = 2;
  Rng rng(5);
  ParamMap weights = init_fusion(cfg, kDim, rng);
  testutil::perturb_params(weights, rng);

  const Tensor x = random_tensor(rng, {kDim});
  const Tensor out = encoder_forward(x, FusionEncoderKind::MHA, weights, "fe.", cfg.heads);

  // With a single token the softmax weight is exactly 1.0, so the output is
  // the residual plus the value/output projection path, attention dropped out.
  const Tensor xm = reshape(x, {1, kDim});
  const Tensor v = add_rowvec(matmul(xm, weights.at("fe.wv")), weights.at("fe.bv"));
  const Tensor o = add_rowvec(matmul(v, weights.at("fe.wo")), weights.at("fe.bo"));
  const Tensor expected = add(xm, o);
  for (std::size_t j = 0; j < kDim; ++j) {
    CHECK(out.values[j] == doctest::Approx(expected.values[j]).epsilon(1e-15));
  }
}

TEST_CASE("TE keeps sequence shape for lengths 1 and 2") {
  FusionConfig cfg;
  cfg.type = FusionType::SUM;
  cfg.encoder = FusionEncoderKind::TE;
  cfg.heads = 2;
  Rng rng(7);
  const ParamMap weights = init_fusion(cfg, kDim, rng);

  const Tensor one = random_tensor(rng, {1, kDim});
  CHECK(encoder_forward(one, cfg.encoder, weights, "fe.", cfg.heads).shape ==
        Shape{1, kDim});
  const Tensor two = random_tensor(rng, {2, kDim});
  CHECK(encoder_forward(two, cfg.encoder, weights, "fe.", cfg.heads).shape ==
        Shape{2, kDim});
}

TEST_CASE("every configuration emits a d-vector and is deterministic") {
  Rng rng(11);
  const Tensor t = random_tensor(rng, {kDim});
  const Tensor l = random_tensor(rng, {kDim});
  for (const FusionConfig& cfg : all_nine_configs()) {
    CAPTURE(cfg.label());
    Rng init(17);
    const ParamMap weights = init_fusion(cfg, kDim, init);
    const Tensor a = fuse(t, l, cfg, weights);
    const Tensor b = fuse(t, l, cfg, weights);
    CHECK(a.shape == Shape{kDim});
    CHECK(a.values == b.values);
  }
}

TEST_CASE("fuse with a zero location reduces SUM to the bare encoder path") {
  FusionConfig cfg;
  cfg.type = FusionType::SUM;
  cfg.encoder = FusionEncoderKind::MLP;
  Rng rng(13);
  const ParamMap weights = init_fusion(cfg, kDim, rng);
  const Tensor t = random_tensor(rng, {kDim});
  const Tensor zero = Tensor::zeros({kDim});
  const Tensor fused = fuse(t, zero, cfg, weights);
  const Tensor direct = encoder_forward(t, cfg.encoder, weights, "fe.", cfg.heads);
  CHECK(fused.values == direct.values);
}

TEST_CASE("fuse rejects mismatched embedding shapes") {
  FusionConfig cfg;
  Rng rng(15);
  const ParamMap weights = init_fusion(cfg, kDim, rng);
  CHECK_THROWS_AS(fuse(Tensor::zeros({kDim}), Tensor::zeros({kDim + 1}), cfg, weights),
                  ShapeError);
}

TEST_CASE("gradients flow through all nine configurations") {
  Rng rng(19);
  for (const FusionConfig& cfg : all_nine_configs()) {
    CAPTURE(cfg.label());
    Rng init(23);
    ParamMap params = init_fusion(cfg, kDim, init);
    testutil::perturb_params(params, rng);
    params["input.t"] = random_tensor(rng, {kDim});
    params["input.l"] = random_tensor(rng, {kDim});
    const Tensor w = random_tensor(rng, {kDim});

    const auto report = gradcheck::compare(params, [&](const ParamMap& p, Tape*) {
      ParamMap weights;
      for (const auto& [name, tensor] : p) {
        if (name.rfind("input.", 0) != 0) weights.emplace(name, tensor);
      }
      return sum(mul(fuse(p.at("input.t"), p.at("input.l"), cfg, weights), w));
    });
    INFO("config ", cfg.label(), " worst ", report.worst_param, " analytic ",
         report.analytic, " numeric ", report.numeric);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_SUITE_END();
