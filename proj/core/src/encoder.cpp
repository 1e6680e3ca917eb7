#include "contrastgeo/encoder.hpp"

#include <cmath>

#include "contrastgeo/errors.hpp"

namespace contrastgeo {

namespace {

constexpr double kInitStd = 0.02;

Tensor gaussian(Rng& rng, const Shape& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values) v = rng.normal(0.0, kInitStd);
  return t;
}

/// Inverted dropout: zero with probability `rate`, survivors scaled by
/// 1/(1-rate). No-op when rate is zero or no generator is supplied.
Tensor maybe_dropout(const Tensor& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  Tensor mask = Tensor::zeros(x.shape);
  const double keep = 1.0 - rate;
  for (double& v : mask.values) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, mask);
}

}  // namespace

Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in,
                            const ParamMap& p, const std::string& at,
                            std::size_t heads) {
  const std::size_t d = query_in.shape[1];
  if (d % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const Tensor q = add_rowvec(matmul(query_in, param(p, at + "wq")), param(p, at + "bq"));
  // No key bias: a constant key offset shifts all logits of a softmax row
  // equally and cancels, leaving a dead parameter.
  const Tensor k = matmul(kv_in, param(p, at + "wk"));
  const Tensor v = add_rowvec(matmul(kv_in, param(p, at + "wv")), param(p, at + "bv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor merged;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    const Tensor oh = matmul(weights, vh);
    merged = h == 0 ? oh : concat_last(merged, oh);
  }
  return add_rowvec(matmul(merged, param(p, at + "wo")), param(p, at + "bo"));
}

Tensor transformer_layer(const Tensor& x, const ParamMap& params,
                         const std::string& prefix, std::size_t heads,
                         std::size_t ffn_dim, double dropout, Rng* dropout_rng) {
  (void)ffn_dim;  // implied by the stored weight shapes; kept for clarity at call sites
  Tensor attn = multi_head_attention(x, x, params, prefix + "attn.", heads);
  attn = maybe_dropout(attn, dropout, dropout_rng);
  Tensor y = layer_norm(add(x, attn), param(params, prefix + "ln1.g"),
                        param(params, prefix + "ln1.b"));

  Tensor h = add_rowvec(matmul(y, param(params, prefix + "ffn.w1")),
                        param(params, prefix + "ffn.b1"));
  h = gelu(h);
  h = add_rowvec(matmul(h, param(params, prefix + "ffn.w2")),
                 param(params, prefix + "ffn.b2"));
  h = maybe_dropout(h, dropout, dropout_rng);
  return layer_norm(add(y, h), param(params, prefix + "ln2.g"),
                    param(params, prefix + "ln2.b"));
}

PoolingMethod pooling_from_name(const std::string& name) {
  if (name == "cls") return PoolingMethod::CLS;
  if (name == "cls_wom") return PoolingMethod::CLS_WOM;
  if (name == "first_last_avg") return PoolingMethod::FIRST_LAST_AVG;
  if (name == "top2_avg") return PoolingMethod::TOP2_AVG;
  if (name == "avg") return PoolingMethod::AVG;
  throw ConfigError("unknown pooling method '" + name + "'");
}

std::string pooling_name(PoolingMethod method) {
  switch (method) {
    case PoolingMethod::CLS: return "cls";
    case PoolingMethod::CLS_WOM: return "cls_wom";
    case PoolingMethod::FIRST_LAST_AVG: return "first_last_avg";
    case PoolingMethod::TOP2_AVG: return "top2_avg";
    case PoolingMethod::AVG: return "avg";
  }
  throw ConfigError("unknown pooling method value");
}

void EncoderConfig::validate() const {
  if (layers == 0) throw ConfigError("encoder: need at least one layer");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("encoder: dim " + std::to_string(dim) +
                      " must be divisible by heads " + std::to_string(heads));
  }
  if (ffn_dim == 0) throw ConfigError("encoder: ffn_dim must be positive");
  if (max_len < 3) throw ConfigError("encoder: max_len must be at least 3");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("encoder: dropout must lie in [0, 1)");
  }
}

EncoderState init_encoder(const EncoderConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  EncoderState state;
  state.config = config;
  ParamMap& p = state.params;

  p["tok_emb"] = gaussian(rng, {vocab_size, d});
  p["pos_emb"] = gaussian(rng, {config.max_len, d});
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string at = "l" + std::to_string(l) + ".";
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      p[at + w] = gaussian(rng, {d, d});
    for (const char* b : {"attn.bq", "attn.bv", "attn.bo"})
      p[at + b] = Tensor::zeros({d});
    p[at + "ln1.g"] = Tensor::full({d}, 1.0);
    p[at + "ln1.b"] = Tensor::zeros({d});
    p[at + "ffn.w1"] = gaussian(rng, {d, config.ffn_dim});
    p[at + "ffn.b1"] = Tensor::zeros({config.ffn_dim});
    p[at + "ffn.w2"] = gaussian(rng, {config.ffn_dim, d});
    p[at + "ffn.b2"] = Tensor::zeros({d});
    p[at + "ln2.g"] = Tensor::full({d}, 1.0);
    p[at + "ln2.b"] = Tensor::zeros({d});
  }
  p["pooler.w"] = gaussian(rng, {d, d});
  p["pooler.b"] = Tensor::zeros({d});
  return state;
}

std::size_t encoder_param_count(const EncoderConfig& config, std::size_t vocab_size) {
  const std::size_t d = config.dim, f = config.ffn_dim;
  const std::size_t per_layer = 4 * d * d + 3 * d  // attention, no key bias
                                + 2 * d            // ln1
                                + d * f + f + f * d + d  // ffn
                                + 2 * d;           // ln2
  return vocab_size * d + config.max_len * d + config.layers * per_layer + d * d + d;
}

std::vector<Tensor> encode(const std::vector<std::size_t>& ids, const ParamMap& params,
                           const EncoderConfig& config, const std::string& prefix,
                           Rng* dropout_rng) {
  config.validate();
  if (ids.empty()) throw ContractError("encode: empty id sequence");
  if (ids.size() > config.max_len) {
    throw ContractError("encode: sequence length " + std::to_string(ids.size()) +
                        " exceeds max_len " + std::to_string(config.max_len));
  }
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = i;

  std::vector<Tensor> layers;
  layers.reserve(config.layers + 1);
  Tensor x = add(embedding_lookup(param(params, prefix + "tok_emb"), ids),
                 embedding_lookup(param(params, prefix + "pos_emb"), positions));
  layers.push_back(x);

  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string at = prefix + "l" + std::to_string(l) + ".";
    x = transformer_layer(x, params, at, config.heads, config.ffn_dim, config.dropout,
                          dropout_rng);
    layers.push_back(x);
  }
  return layers;
}

Tensor pool(const std::vector<Tensor>& layer_outputs, PoolingMethod method,
            const ParamMap& params, const std::string& prefix) {
  if (layer_outputs.empty()) throw ContractError("pool: no layer outputs");
  const Tensor& last = layer_outputs.back();
  const std::size_t d = last.shape[1];

  switch (method) {
    case PoolingMethod::CLS: {
      const Tensor e_cls = reshape(row(last, 0), {1, d});
      const Tensor mapped = add_rowvec(matmul(e_cls, param(params, prefix + "pooler.w")),
                                       param(params, prefix + "pooler.b"));
      return reshape(tanh(mapped), {d});
    }
    case PoolingMethod::CLS_WOM:
      return row(last, 0);
    case PoolingMethod::FIRST_LAST_AVG:
      return mean_axis(scale(add(layer_outputs.front(), last), 0.5), 0);
    case PoolingMethod::TOP2_AVG: {
      if (layer_outputs.size() < 2) {
        throw ConfigError("pool: top2_avg needs at least two retained layers");
      }
      const Tensor& prev = layer_outputs[layer_outputs.size() - 2];
      return mean_axis(scale(add(prev, last), 0.5), 0);
    }
    case PoolingMethod::AVG:
      return mean_axis(last, 0);
  }
  throw ConfigError("pool: unknown pooling method value");
}

}  // namespace contrastgeo
