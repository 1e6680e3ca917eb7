#include "contrastgeo/fusion.hpp"

#include "contrastgeo/encoder.hpp"
#include "contrastgeo/errors.hpp"

namespace contrastgeo {

namespace {

constexpr double kInitStd = 0.02;

Tensor gaussian(Rng& rng, const Shape& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values) v = rng.normal(0.0, kInitStd);
  return t;
}

void init_attention(ParamMap& p, const std::string& at, std::size_t dim, Rng& rng) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) p[at + w] = gaussian(rng, {dim, dim});
  for (const char* b : {"bq", "bv", "bo"}) p[at + b] = Tensor::zeros({dim});
}

/// True when the fusion encoder consumes the flattened 2*dim concatenation
/// instead of a 2-token sequence.
bool flat_concat(const FusionConfig& cfg) {
  return cfg.type == FusionType::CONCAT &&
         (cfg.encoder == FusionEncoderKind::BNA || cfg.encoder == FusionEncoderKind::MLP);
}

}  // namespace

FusionType fusion_type_from_name(const std::string& name) {
  if (name == "ca") return FusionType::CA;
  if (name == "sum") return FusionType::SUM;
  if (name == "concat") return FusionType::CONCAT;
  throw ConfigError("unknown fusion type '" + name + "'");
}

std::string fusion_type_name(FusionType type) {
  switch (type) {
    case FusionType::CA: return "ca";
    case FusionType::SUM: return "sum";
    case FusionType::CONCAT: return "concat";
  }
  throw ConfigError("unknown fusion type value");
}

FusionEncoderKind fusion_encoder_from_name(const std::string& name) {
  if (name == "mha") return FusionEncoderKind::MHA;
  if (name == "bna") return FusionEncoderKind::BNA;
  if (name == "mlp") return FusionEncoderKind::MLP;
  if (name == "te") return FusionEncoderKind::TE;
  throw ConfigError("unknown fusion encoder '" + name + "'");
}

std::string fusion_encoder_name(FusionEncoderKind kind) {
  switch (kind) {
    case FusionEncoderKind::MHA: return "mha";
    case FusionEncoderKind::BNA: return "bna";
    case FusionEncoderKind::MLP: return "mlp";
    case FusionEncoderKind::TE: return "te";
  }
  throw ConfigError("unknown fusion encoder value");
}

std::string FusionConfig::label() const {
  if (type == FusionType::CA) return "ca";
  return fusion_type_name(type) + ":" + fusion_encoder_name(encoder);
}

void FusionConfig::validate(std::size_t dim) const {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("fusion: dim " + std::to_string(dim) +
                      " must be divisible by heads " + std::to_string(heads));
  }
  if (bottleneck_ratio == 0 || dim % bottleneck_ratio != 0) {
    throw ConfigError("fusion: dim " + std::to_string(dim) +
                      " must be divisible by bottleneck ratio " +
                      std::to_string(bottleneck_ratio));
  }
}

ParamMap init_fusion(const FusionConfig& config, std::size_t dim, Rng& rng) {
  config.validate(dim);
  ParamMap p;
  if (config.type == FusionType::CA) {
    init_attention(p, "ca.", dim, rng);
    return p;
  }
  const std::size_t ed = flat_concat(config) ? 2 * dim : dim;
  switch (config.encoder) {
    case FusionEncoderKind::MHA:
      init_attention(p, "fe.", ed, rng);
      break;
    case FusionEncoderKind::BNA: {
      const std::size_t bottleneck = ed / config.bottleneck_ratio;
      p["fe.down.w"] = gaussian(rng, {ed, bottleneck});
      p["fe.down.b"] = Tensor::zeros({bottleneck});
      // Zero up-projection: the adapter starts as the identity map.
      p["fe.up.w"] = Tensor::zeros({bottleneck, ed});
      p["fe.up.b"] = Tensor::zeros({ed});
      break;
    }
    case FusionEncoderKind::MLP:
      p["fe.w1"] = gaussian(rng, {ed, ed});
      p["fe.b1"] = Tensor::zeros({ed});
      p["fe.w2"] = gaussian(rng, {ed, ed});
      p["fe.b2"] = Tensor::zeros({ed});
      break;
    case FusionEncoderKind::TE: {
      init_attention(p, "fe.attn.", ed, rng);
      p["fe.ln1.g"] = Tensor::full({ed}, 1.0);
      p["fe.ln1.b"] = Tensor::zeros({ed});
      const std::size_t ffn = 4 * ed;
      p["fe.ffn.w1"] = gaussian(rng, {ed, ffn});
      p["fe.ffn.b1"] = Tensor::zeros({ffn});
      p["fe.ffn.w2"] = gaussian(rng, {ffn, ed});
      p["fe.ffn.b2"] = Tensor::zeros({ed});
      p["fe.ln2.g"] = Tensor::full({ed}, 1.0);
      p["fe.ln2.b"] = Tensor::zeros({ed});
      break;
    }
  }
  if (config.type == FusionType::CONCAT) {
    p["restore.w"] = gaussian(rng, {2 * dim, dim});
    p["restore.b"] = Tensor::zeros({dim});
  }
  return p;
}

Tensor encoder_forward(const Tensor& x, FusionEncoderKind kind, const ParamMap& weights,
                       const std::string& prefix, std::size_t heads) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("encoder_forward: expected a vector or token sequence, got " +
                     shape_str(x.shape));
  }
  const std::size_t dim = x.shape.back();
  const Tensor seq = x.rank() == 1 ? reshape(x, {1, dim}) : x;

  Tensor out;
  switch (kind) {
    case FusionEncoderKind::MHA:
      out = add(seq, multi_head_attention(seq, seq, weights, prefix, heads));
      break;
    case FusionEncoderKind::BNA: {
      Tensor h = add_rowvec(matmul(seq, param(weights, prefix + "down.w")),
                            param(weights, prefix + "down.b"));
      h = gelu(h);
      h = add_rowvec(matmul(h, param(weights, prefix + "up.w")),
                     param(weights, prefix + "up.b"));
      out = add(seq, h);
      break;
    }
    case FusionEncoderKind::MLP: {
      Tensor h = add_rowvec(matmul(seq, param(weights, prefix + "w1")),
                            param(weights, prefix + "b1"));
      h = gelu(h);
      out = add_rowvec(matmul(h, param(weights, prefix + "w2")),
                       param(weights, prefix + "b2"));
      break;
    }
    case FusionEncoderKind::TE:
      out = transformer_layer(seq, weights, prefix, heads, 4 * dim);
      break;
  }
  return x.rank() == 1 ? reshape(out, {dim}) : out;
}

Tensor fuse(const Tensor& tweet_emb, const Tensor& loc_emb, const FusionConfig& config,
            const ParamMap& weights, const std::string& prefix) {
  if (tweet_emb.rank() != 1 || tweet_emb.shape != loc_emb.shape) {
    throw ShapeError("fuse: embeddings must be equal-length vectors, got " +
                     shape_str(tweet_emb.shape) + " and " + shape_str(loc_emb.shape));
  }
  const std::size_t dim = tweet_emb.shape[0];
  config.validate(dim);

  switch (config.type) {
    case FusionType::CA: {
      // Tweet embedding is the query; the pooled location embedding is the
      // single key/value token. Residual keeps the tweet signal.
      const Tensor q = reshape(tweet_emb, {1, dim});
      const Tensor kv = reshape(loc_emb, {1, dim});
      const Tensor attended =
          multi_head_attention(q, kv, weights, prefix + "ca.", config.heads);
      return reshape(add(q, attended), {dim});
    }
    case FusionType::SUM:
      return encoder_forward(add(tweet_emb, loc_emb), config.encoder, weights,
                             prefix + "fe.", config.heads);
    case FusionType::CONCAT: {
      Tensor flat;
      if (flat_concat(config)) {
        flat = encoder_forward(concat_last(tweet_emb, loc_emb), config.encoder, weights,
                               prefix + "fe.", config.heads);
      } else {
        // 2-token sequence through the encoder, then flattened to 2*dim.
        const Tensor seq = stack({tweet_emb, loc_emb});
        flat = reshape(encoder_forward(seq, config.encoder, weights, prefix + "fe.",
                                       config.heads),
                       {2 * dim});
      }
      const Tensor restored =
          add_rowvec(matmul(reshape(flat, {1, 2 * dim}), param(weights, prefix + "restore.w")),
                     param(weights, prefix + "restore.b"));
      return reshape(restored, {dim});
    }
  }
  throw ConfigError("fuse: unknown fusion type value");
}

}  // namespace contrastgeo
