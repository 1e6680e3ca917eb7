#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contrastgeo/rng.hpp"
#include "contrastgeo/tensor.hpp"

namespace contrastgeo {

/// Sentence-embedding pooling rules over the retained per-layer outputs.
enum class PoolingMethod { CLS, CLS_WOM, FIRST_LAST_AVG, TOP2_AVG, AVG };

PoolingMethod pooling_from_name(const std::string& name);
std::string pooling_name(PoolingMethod method);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 64;
  double dropout = 0.0;

  void validate() const;
};

/// Transformer parameters keyed by role ("tok_emb", "l0.attn.wq", ...).
/// Initialization is seeded Gaussian(0, 0.02) with unit layer-norm gains,
/// so the parameter set is a pure function of (config, vocab size, seed).
struct EncoderState {
  EncoderConfig config;
  ParamMap params;
};

EncoderState init_encoder(const EncoderConfig& config, std::size_t vocab_size, Rng& rng);

/// Number of scalar parameters implied by (config, vocab size).
std::size_t encoder_param_count(const EncoderConfig& config, std::size_t vocab_size);

/// Run the encoder over a token id sequence. Returns all layers.size()+1
/// activation matrices [len x dim] (embedding output first), which the
/// layer-averaging pooling methods need. `prefix` selects the parameter
/// namespace inside `params`. When `dropout_rng` is given and the config has
/// a positive dropout rate, inverted-dropout masks are drawn from it.
std::vector<Tensor> encode(const std::vector<std::size_t>& ids, const ParamMap& params,
                           const EncoderConfig& config, const std::string& prefix = "",
                           Rng* dropout_rng = nullptr);

/// Reduce per-layer token activations to one sentence embedding [dim].
Tensor pool(const std::vector<Tensor>& layer_outputs, PoolingMethod method,
            const ParamMap& params, const std::string& prefix = "");

/// Multi-head scaled-dot-product attention with queries from `query_in` and
/// keys/values from `kv_in`, both [len x dim]. Parameter keys under `prefix`:
/// wq, bq, wk, wv, bv, wo, bo (keys carry no bias; it cancels in softmax).
Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in,
                            const ParamMap& params, const std::string& prefix,
                            std::size_t heads);

/// One post-norm transformer layer (attention + FFN, residuals, layer norms).
/// Parameter keys under `prefix`: attn.*, ln1.*, ffn.*, ln2.*.
Tensor transformer_layer(const Tensor& x, const ParamMap& params,
                         const std::string& prefix, std::size_t heads,
                         std::size_t ffn_dim, double dropout = 0.0,
                         Rng* dropout_rng = nullptr);

}  // namespace contrastgeo
