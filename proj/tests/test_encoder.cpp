#include <cstring>

#include "contrastgeo/encoder.hpp"
#include "contrastgeo/errors.hpp"
#include "contrastgeo/vocab.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

using namespace contrastgeo;

namespace {

EncoderConfig micro_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_len = 8;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("encoder");

TEST_CASE("build_vocab ranks by frequency with lexicographic ties") {
  const Vocabulary vocab = build_vocab({"a b", "b c"});
  CHECK(vocab.size() == 7);  // 4 specials + a, b, c
  CHECK(vocab.token_to_id.count("a") == 1);
  CHECK(vocab.token_to_id.count("b") == 1);
  CHECK(vocab.token_to_id.count("c") == 1);
  // b occurs twice, so it takes the first non-special id.
  CHECK(vocab.token_to_id.at("b") == Vocabulary::kSpecialCount);
  // a and c tie at one occurrence; lexicographic order breaks the tie.
  CHECK(vocab.token_to_id.at("a") < vocab.token_to_id.at("c"));

  const Vocabulary empty = build_vocab({""});
  CHECK(empty.size() == Vocabulary::kSpecialCount);

  const Vocabulary again = build_vocab({"a b", "b c"});
  CHECK(vocab == again);

  CHECK_THROWS_AS(build_vocab({}), DataError);
}

TEST_CASE("build_vocab truncates to max size and lowercases") {
  const Vocabulary vocab = build_vocab({"Apple BANANA cherry date egg"}, 6);
  CHECK(vocab.size() == 6);
  CHECK(vocab.token_to_id.count("apple") == 1);
  CHECK(vocab.token_to_id.count("banana") == 1);
  // Only two slots past the specials; later alphabetical ties fall off.
  CHECK(vocab.token_to_id.count("egg") == 0);
}

TEST_CASE("tokenize prepends CLS, maps unknowns, truncates") {
  const Vocabulary vocab = build_vocab({"a b c"});
  CHECK(tokenize("", vocab, 64) == std::vector<std::size_t>{Vocabulary::kCls});

  const auto ids = tokenize("a zzz", vocab, 64);
  CHECK(ids == std::vector<std::size_t>{Vocabulary::kCls, vocab.token_to_id.at("a"),
                                        Vocabulary::kUnk});

  std::string long_text;
  for (int i = 0; i < 200; ++i) long_text += "a ";
  CHECK(tokenize(long_text, vocab, 64).size() == 64);

  // Punctuation separates; "[SEP]" in composed text becomes the word "sep".
  const Vocabulary with_sep = build_vocab({"x [SEP] y"});
  const auto seps = tokenize("x [SEP] y", with_sep, 64);
  CHECK(seps.size() == 4);
  CHECK(seps[2] == with_sep.token_to_id.at("sep"));
}

TEST_CASE("encoder init is seeded-deterministic and counts parameters exactly") {
  const EncoderConfig cfg = micro_config();
  Rng rng_a(42), rng_b(42);
  const EncoderState a = init_encoder(cfg, 10, rng_a);
  const EncoderState b = init_encoder(cfg, 10, rng_b);
  std::size_t total = 0;
  for (const auto& [name, tensor] : a.params) {
    total += tensor.size();
    const Tensor& other = b.params.at(name);
    REQUIRE(other.size() == tensor.size());
    CHECK(std::memcmp(tensor.values.data(), other.values.data(),
                      tensor.size() * sizeof(double)) == 0);
  }
  CHECK(total == encoder_param_count(cfg, 10));
}

TEST_CASE("encoder config invariants are enforced") {
  EncoderConfig cfg = micro_config();
  cfg.heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = micro_config();
  cfg.max_len = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encode shapes, position sensitivity, and id range checks") {
  const EncoderConfig cfg = micro_config();
  Rng rng(7);
  const EncoderState state = init_encoder(cfg, 10, rng);

  const auto layers = encode({Vocabulary::kCls}, state.params, cfg);
  CHECK(layers.size() == cfg.layers + 1);
  for (const Tensor& t : layers) CHECK(t.shape == Shape{1, cfg.dim});

  // Swapping two non-CLS tokens must change the output: positions matter.
  const auto ab = encode({Vocabulary::kCls, 5, 6}, state.params, cfg);
  const auto ba = encode({Vocabulary::kCls, 6, 5}, state.params, cfg);
  CHECK(ab.back().values != ba.back().values);

  CHECK_THROWS_AS(encode({10}, state.params, cfg), ContractError);
  CHECK_THROWS_AS(encode({}, state.params, cfg), ContractError);
}

TEST_CASE("encode is deterministic for a fixed state") {
  const EncoderConfig cfg = micro_config();
  Rng rng(9);
  const EncoderState state = init_encoder(cfg, 12, rng);
  const std::vector<std::size_t> ids{2, 4, 7, 7, 5};
  const auto first = encode(ids, state.params, cfg);
  const auto second = encode(ids, state.params, cfg);
  CHECK(std::memcmp(first.back().values.data(), second.back().values.data(),
                    first.back().size() * sizeof(double)) == 0);
}

TEST_CASE("pooling methods agree with their definitions") {
  const EncoderConfig cfg = micro_config();
  Rng rng(11);
  const EncoderState state = init_encoder(cfg, 10, rng);
  const std::vector<std::size_t> ids{Vocabulary::kCls, 4, 9, 3};
  const auto layers = encode(ids, state.params, cfg);
  const std::size_t d = cfg.dim;

  for (const PoolingMethod m :
       {PoolingMethod::CLS, PoolingMethod::CLS_WOM, PoolingMethod::FIRST_LAST_AVG,
        PoolingMethod::TOP2_AVG, PoolingMethod::AVG}) {
    CHECK(pool(layers, m, state.params).shape == Shape{d});
  }

  // A single-token sequence averaged is that token's last-layer vector.
  const auto solo = encode({Vocabulary::kCls}, state.params, cfg);
  CHECK(pool(solo, PoolingMethod::AVG, state.params).values ==
        row(solo.back(), 0).values);

  // Raw-CLS pooling reads exactly row 0 of the last layer.
  CHECK(pool(layers, PoolingMethod::CLS_WOM, state.params).values ==
        row(layers.back(), 0).values);

  // First-last average against a direct recomputation.
  const Tensor pooled = pool(layers, PoolingMethod::FIRST_LAST_AVG, state.params);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      acc += 0.5 * (layers.front()(t, j) + layers.back()(t, j));
    }
    CHECK(pooled.values[j] ==
          doctest::Approx(acc / static_cast<double>(ids.size())).epsilon(1e-12));
  }

  // Top-2 average uses the two last layers.
  const Tensor top2 = pool(layers, PoolingMethod::TOP2_AVG, state.params);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      acc += 0.5 * (layers[layers.size() - 2](t, j) + layers.back()(t, j));
    }
    CHECK(top2.values[j] ==
          doctest::Approx(acc / static_cast<double>(ids.size())).epsilon(1e-12));
  }

  CHECK_THROWS_AS(pooling_from_name("bogus"), ConfigError);
}

TEST_CASE("gradients flow through a 2-layer encode and CLS pooling") {
  const EncoderConfig cfg = micro_config();
  Rng rng(13);
  EncoderState state = init_encoder(cfg, 10, rng);
  testutil::perturb_params(state.params, rng);
  const std::vector<std::size_t> ids{Vocabulary::kCls, 4, 9};
  const Tensor w = testutil::random_tensor(rng, {cfg.dim});

  const auto report = gradcheck::compare(state.params, [&](const ParamMap& p, Tape*) {
    const auto layers = encode(ids, p, cfg);
    return sum(mul(pool(layers, PoolingMethod::CLS, p), w));
  });
  INFO("worst ", report.worst_param, " analytic ", report.analytic, " numeric ",
       report.numeric);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("dropout masks activations only when enabled") {
  EncoderConfig cfg = micro_config();
  Rng rng(17);
  const EncoderState state = init_encoder(cfg, 10, rng);
  const std::vector<std::size_t> ids{Vocabulary::kCls, 3, 4};

  const auto plain = encode(ids, state.params, cfg);
  Rng unused(1);
  // Zero rate: supplying a generator must not change anything.
  const auto still_plain = encode(ids, state.params, cfg, "", &unused);
  CHECK(plain.back().values == still_plain.back().values);

  cfg.dropout = 0.5;
  Rng mask_rng(1);
  const auto dropped = encode(ids, state.params, cfg, "", &mask_rng);
  CHECK(plain.back().values != dropped.back().values);
}

TEST_SUITE_END();
