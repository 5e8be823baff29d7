#include "nadex/diffusion.hpp"

#include <cmath>
#include <string>

#include "nadex/errors.hpp"
#include "nadex/ops.hpp"

namespace nadex {

NoiseSchedule NoiseSchedule::build(const ScheduleConfig& c) {
  if (c.steps < 2) {
    throw ConfigError("schedule needs at least 2 steps, got " +
                      std::to_string(c.steps));
  }
  if (!(c.alpha_min > 0.0) || !(c.alpha_max >= c.alpha_min)) {
    throw ConfigError("schedule bounds must satisfy 0 < alpha_min <= "
                      "alpha_max, got " +
                      std::to_string(c.alpha_min) + ", " +
                      std::to_string(c.alpha_max));
  }
  if (!(c.scale > 0.0)) {
    throw ConfigError("schedule scale must be positive, got " +
                      std::to_string(c.scale));
  }
  if (!(c.scale * c.alpha_max < 1.0)) {
    throw ConfigError("schedule scale * alpha_max = " +
                      std::to_string(c.scale * c.alpha_max) +
                      " >= 1: signal coefficient would be non-positive");
  }
  NoiseSchedule s;
  s.config_ = c;
  const std::size_t M = c.steps;
  s.one_minus_alpha_bar_.resize(M);
  const double span = static_cast<double>(M - 1);
  for (std::size_t m = 1; m <= M; ++m) {
    // Weighted form keeps interior points on the decimal grid when the
    // bounds are; endpoints are pinned exactly.
    double level;
    if (m == 1) {
      level = c.alpha_min;
    } else if (m == M) {
      level = c.alpha_max;
    } else {
      level = (static_cast<double>(M - m) * c.alpha_min +
               static_cast<double>(m - 1) * c.alpha_max) /
              span;
    }
    s.one_minus_alpha_bar_[m - 1] = c.scale * level;
  }
  return s;
}

void NoiseSchedule::check_step(std::size_t m) const {
  if (m < 1 || m > config_.steps) {
    throw IndexError("diffusion step " + std::to_string(m) +
                     " outside [1, " + std::to_string(config_.steps) + "]");
  }
}

double NoiseSchedule::one_minus_alpha_bar(std::size_t m) const {
  check_step(m);
  return one_minus_alpha_bar_[m - 1];
}

double NoiseSchedule::alpha_bar(std::size_t m) const {
  return 1.0 - one_minus_alpha_bar(m);
}

double NoiseSchedule::signal_coefficient(std::size_t m) const {
  return std::sqrt(alpha_bar(m));
}

double NoiseSchedule::noise_coefficient(std::size_t m) const {
  return std::sqrt(one_minus_alpha_bar(m));
}

NoiseSchedule build_schedule(std::size_t steps, double scale, double alpha_min,
                             double alpha_max) {
  return NoiseSchedule::build({steps, scale, alpha_min, alpha_max});
}

std::size_t sample_step(Rng& rng, std::size_t steps) {
  if (steps < 1) throw ConfigError("sample_step needs at least one step");
  return static_cast<std::size_t>(
      rng.uniform_int(1, static_cast<std::int64_t>(steps)));
}

Tensor gaussian_like(const Shape& shape, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal();
  return Tensor::from(shape, std::move(values));
}

Tensor diffuse(const Tensor& clean, const Tensor& noise, std::size_t m,
               const NoiseSchedule& schedule) {
  if (clean.shape() != noise.shape()) {
    throw DimensionError("diffuse: clean " + shape_to_string(clean.shape()) +
                         " vs noise " + shape_to_string(noise.shape()));
  }
  const double a = schedule.signal_coefficient(m);
  const double b = schedule.noise_coefficient(m);
  return ops::add(ops::scale(clean, a), ops::scale(noise, b));
}

DiffusedTarget forward_diffuse(const Tensor& clean_positive,
                               const Tensor& clean_negative, std::size_t m,
                               const NoiseSchedule& schedule, Rng& rng) {
  DiffusedTarget out;
  out.step = m;
  schedule.one_minus_alpha_bar(m);  // range check before drawing
  out.positive_noise = gaussian_like(clean_positive.shape(), rng);
  out.negative_noise = gaussian_like(clean_negative.shape(), rng);
  out.positive = diffuse(clean_positive, out.positive_noise, m, schedule);
  out.negative = diffuse(clean_negative, out.negative_noise, m, schedule);
  return out;
}

Tensor assemble_sequence(const Tensor& history, const Tensor& target,
                         const Tensor& conditioning, std::size_t window) {
  if (target.rank() != 2) {
    throw DimensionError("assemble_sequence: target must be [N x h], got " +
                         shape_to_string(target.shape()));
  }
  const std::size_t n = target.dim(0);
  const std::size_t h = target.dim(1);
  const std::size_t seq = window + 1;
  if (history.numel() != n * window * h ||
      (window > 0 && history.inner() != h)) {
    throw DimensionError("assemble_sequence: history " +
                         shape_to_string(history.shape()) + " for " +
                         std::to_string(n) + " items of window " +
                         std::to_string(window) + " and width " +
                         std::to_string(h));
  }
  if (conditioning.shape() != Shape{n * seq, h}) {
    throw DimensionError("assemble_sequence: conditioning " +
                         shape_to_string(conditioning.shape()) + ", need " +
                         shape_to_string({n * seq, h}));
  }
  std::vector<double> out(n * seq * h);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < seq; ++p) {
      const double* src = p < window
                              ? history.data().data() + (i * window + p) * h
                              : target.data().data() + i * h;
      const double* cond = conditioning.data().data() + (i * seq + p) * h;
      double* dst = out.data() + (i * seq + p) * h;
      for (std::size_t c = 0; c < h; ++c) dst[c] = src[c] + cond[c];
    }
  }
  return autograd::make_result(
      {n * seq, h}, std::move(out), {history, target, conditioning},
      [=](TensorImpl* self) {
        return [=]() {
          const auto& g = self->grad;
          autograd::accumulate(conditioning.impl(), g);
          if (history.requires_grad()) {
            std::vector<double> gh(n * window * h);
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t p = 0; p < window; ++p) {
                std::copy_n(g.data() + (i * seq + p) * h, h,
                            gh.data() + (i * window + p) * h);
              }
            }
            autograd::accumulate(history.impl(), gh);
          }
          if (target.requires_grad()) {
            std::vector<double> gt(n * h);
            for (std::size_t i = 0; i < n; ++i) {
              std::copy_n(g.data() + (i * seq + window) * h, h,
                          gt.data() + i * h);
            }
            autograd::accumulate(target.impl(), gt);
          }
        };
      });
}

Tensor make_inference_input(const Tensor& history, const Tensor& conditioning,
                            std::size_t window, std::size_t width, Rng& rng) {
  if (conditioning.rank() != 2 || conditioning.dim(0) % (window + 1) != 0) {
    throw DimensionError("make_inference_input: conditioning " +
                         shape_to_string(conditioning.shape()) +
                         " is not a whole number of sequences of length " +
                         std::to_string(window + 1));
  }
  const std::size_t n = conditioning.dim(0) / (window + 1);
  Tensor noise = gaussian_like({n, width}, rng);
  return assemble_sequence(history, noise, conditioning, window);
}

}  // namespace nadex
