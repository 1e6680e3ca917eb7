#pragma once

#include <string>

#include "contrastgeo/rng.hpp"
#include "contrastgeo/tensor.hpp"

namespace contrastgeo {

enum class FusionType { CA, SUM, CONCAT };
enum class FusionEncoderKind { MHA, BNA, MLP, TE };

FusionType fusion_type_from_name(const std::string& name);
std::string fusion_type_name(FusionType type);
FusionEncoderKind fusion_encoder_from_name(const std::string& name);
std::string fusion_encoder_name(FusionEncoderKind kind);

/// One of the nine fusion configurations: CA alone, or SUM/CONCAT paired
/// with a fusion encoder. The encoder kind is ignored for CA.
struct FusionConfig {
  FusionType type = FusionType::SUM;
  FusionEncoderKind encoder = FusionEncoderKind::MLP;
  std::size_t bottleneck_ratio = 4;  // BNA down-projects to dim / ratio
  std::size_t heads = 4;             // MHA / TE

  std::string label() const;
  void validate(std::size_t dim) const;
};

/// Seeded parameter construction. The BNA up-projection starts at zero so the
/// adapter is initially the identity; everything else is Gaussian(0, 0.02).
/// For CONCAT, BNA/MLP weights operate on the 2*dim concatenation and a
/// restoring map brings the output back to dim.
ParamMap init_fusion(const FusionConfig& config, std::size_t dim, Rng& rng);

/// Dimension-preserving fusion encoder. Accepts a single vector [dim] or a
/// token sequence [n x dim]; MHA/TE treat the input as a sequence, BNA/MLP
/// apply per token.
Tensor encoder_forward(const Tensor& x, FusionEncoderKind kind, const ParamMap& weights,
                       const std::string& prefix, std::size_t heads);

/// Joint representation of a tweet/location embedding pair, always [dim].
Tensor fuse(const Tensor& tweet_emb, const Tensor& loc_emb, const FusionConfig& config,
            const ParamMap& weights, const std::string& prefix = "");

}  // namespace contrastgeo
