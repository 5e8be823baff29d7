#include "nadex/negsample.hpp"

#include <vector>

#include "nadex/errors.hpp"

namespace nadex {

NegativePrototypeBatch negative_prototypes(const Tensor& targets,
                                           std::span<const std::size_t> gold_ids,
                                           NegativeSamplingOptions options) {
  if (targets.rank() != 2 || targets.dim(0) == 0) {
    throw DimensionError("negative_prototypes needs a non-empty [N x h] "
                         "tensor, got " +
                         shape_to_string(targets.shape()));
  }
  const std::size_t n = targets.dim(0);
  const std::size_t h = targets.dim(1);
  if (options.exclude_same_gold && gold_ids.size() != n) {
    throw DimensionError("negative_prototypes: " +
                         std::to_string(gold_ids.size()) + " gold ids for " +
                         std::to_string(n) + " targets");
  }

  // include[i * n + j]: whether row j contributes to prototype i.
  std::vector<std::uint8_t> include(n * n, 0);
  std::vector<double> divisor(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (options.exclude_same_gold && gold_ids[j] == gold_ids[i]) continue;
      include[i * n + j] = 1;
      divisor[i] += 1.0;
    }
  }

  std::vector<double> out(n * h, 0.0);
  const double* e = targets.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (divisor[i] == 0.0) continue;
    double* row = out.data() + i * h;
    for (std::size_t j = 0; j < n; ++j) {
      if (!include[i * n + j]) continue;
      for (std::size_t c = 0; c < h; ++c) row[c] += e[j * h + c];
    }
    for (std::size_t c = 0; c < h; ++c) row[c] /= divisor[i];
  }

  NegativePrototypeBatch batch;
  batch.valid = n >= 2;
  batch.prototypes = autograd::make_result(
      {n, h}, std::move(out), {targets}, [=](TensorImpl* self) {
        return [=]() {
          std::vector<double> g(n * h, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            if (divisor[i] == 0.0) continue;
            const double* up = self->grad.data() + i * h;
            for (std::size_t j = 0; j < n; ++j) {
              if (!include[i * n + j]) continue;
              for (std::size_t c = 0; c < h; ++c) {
                g[j * h + c] += up[c] / divisor[i];
              }
            }
          }
          autograd::accumulate(targets.impl(), g);
        };
      });
  return batch;
}

}  // namespace nadex
