#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "contrastgeo/rng.hpp"
#include "contrastgeo/tensor.hpp"

namespace testutil {

inline contrastgeo::Tensor random_tensor(contrastgeo::Rng& rng,
                                         const contrastgeo::Shape& shape,
                                         double lo = -1.0, double hi = 1.0) {
  contrastgeo::Tensor t = contrastgeo::Tensor::zeros(shape);
  for (double& v : t.values) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Random tensor with |v| >= margin, for kernels with a kink at zero.
inline contrastgeo::Tensor random_tensor_away_from_zero(contrastgeo::Rng& rng,
                                                        const contrastgeo::Shape& shape,
                                                        double margin = 0.1) {
  contrastgeo::Tensor t = random_tensor(rng, shape);
  for (double& v : t.values) v += (v >= 0.0 ? margin : -margin);
  return t;
}

/// Nudge every parameter away from its structured init (zeros, tiny
/// Gaussians) so gradient checks run at a generic point where no gradient
/// is structurally near the finite-difference noise floor.
inline void perturb_params(contrastgeo::ParamMap& params, contrastgeo::Rng& rng,
                           double amplitude = 0.25) {
  for (auto& [name, tensor] : params) {
    for (double& v : tensor.values) v += amplitude * (2.0 * rng.uniform() - 1.0);
  }
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("contrastgeo_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
