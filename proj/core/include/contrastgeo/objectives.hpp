#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contrastgeo/fusion.hpp"
#include "contrastgeo/rng.hpp"
#include "contrastgeo/tensor.hpp"

namespace contrastgeo {

struct TLCConfig {
  double temperature = 0.05;
  double smoothing_eps = 0.1;
  bool smoothing = true;

  void validate() const;
};

/// Temperature-scaled, row-normalized tweet-location probabilities together
/// with the raw cosine similarities they came from.
struct SimilarityMatrix {
  Tensor raw;    // [N x K] cosine similarities
  Tensor probs;  // [N x K] rows sum to one
  std::size_t tweets = 0;
  std::size_t locations = 0;

  /// Detached copy of one probability row, for mining.
  std::vector<double> prob_row(std::size_t i) const;
};

enum class NegativePolicy { MULTINOMIAL, TOP };

NegativePolicy negative_policy_from_name(const std::string& name);
std::string negative_policy_name(NegativePolicy policy);

struct HardNegativeSpec {
  std::size_t count = 7;
  NegativePolicy policy = NegativePolicy::TOP;
  std::uint64_t seed = 0;
};

/// Per-tweet pair layout fed to the match head: ground truth first, then the
/// mined negatives, all distinct.
struct MatchBatch {
  std::vector<std::vector<std::size_t>> pair_locations;
};

/// Scoring head: shared affine map [d -> 1] applied to each joint vector,
/// softmax across the (M+1) pair scores.
ParamMap init_match_head(std::size_t dim, Rng& rng);

/// Eq.-style softmax over cosine similarity / temperature, normalized across
/// the K locations of each row.
SimilarityMatrix tlc_probabilities(const Tensor& tweet_embs, const Tensor& loc_embs,
                                   const TLCConfig& config);

/// Mean cross-entropy of the probability rows against (optionally
/// label-smoothed) one-hot targets.
Tensor tlc_loss(const SimilarityMatrix& sim, const std::vector<std::size_t>& labels,
                const TLCConfig& config);

/// Pick M distinct non-truth location indices from one row of non-negative
/// weights. TOP sorts by weight (ties to the lower index); MULTINOMIAL draws
/// without replacement from the truth-masked, re-normalized distribution.
std::vector<std::size_t> mine_hard_negatives(std::span<const double> weights,
                                             std::size_t truth_index,
                                             const HardNegativeSpec& spec, Rng& rng);

struct TlmResult {
  Tensor loss;
  MatchBatch batch;
};

/// Matching loss: fuse each tweet with its true location and M mined
/// negatives, score every joint vector with the head, softmax over the M+1
/// pairs, cross-entropy against position 0. Mining uses the detached
/// similarity rows, so no gradient flows through negative selection.
TlmResult tlm_loss(const std::vector<Tensor>& tweet_embs,
                   const std::vector<Tensor>& loc_embs,
                   const std::vector<std::size_t>& labels, const SimilarityMatrix& sim,
                   const HardNegativeSpec& spec, Rng& rng, const FusionConfig& fusion_cfg,
                   const ParamMap& fusion_weights, const std::string& fusion_prefix,
                   const ParamMap& head, const std::string& head_prefix);

/// L = L_tlc + L_tlm, unweighted.
Tensor total_loss(const Tensor& l_tlc, const Tensor& l_tlm);

}  // namespace contrastgeo
