#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/model/autoencoder.hpp"
#include "m3v/model/loss.hpp"

namespace m3v::model {

// One batch element with its targets, used to probe the loss surface.
struct GradCheckCase {
  ModelConfig cfg;
  Mat<double> tokens;
  std::vector<std::size_t> visible, masked;
  std::vector<std::vector<float>> targets;
  std::vector<std::vector<std::uint8_t>> include;

  std::vector<LossItem> items() const {
    std::vector<LossItem> out;
    for (std::size_t i = 0; i < targets.size(); ++i) out.push_back({targets[i], include[i], 0});
    return out;
  }
};

// Random tokens, a random half mask, standard-normal targets and about a
// quarter of the target components excluded. `zero` gives zero tokens and
// zero targets with every component included.
inline GradCheckCase make_gradcheck_case(const ModelConfig& cfg, std::uint64_t seed,
                                         bool zero = false) {
  cfg.validate();
  GradCheckCase c;
  c.cfg = cfg;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const int n = cfg.tokens();
  c.tokens = Mat<double>(n, cfg.patch_dim);
  if (!zero)
    for (auto& v : c.tokens.d) v = nd(rng);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t nm = std::max<std::size_t>(1, static_cast<std::size_t>(n) / 2);
  c.masked.assign(order.begin(), order.begin() + nm);
  c.visible.assign(order.begin() + nm, order.end());
  std::bernoulli_distribution keep(0.75);
  for (std::size_t m = 0; m < nm; ++m) {
    std::vector<float> t(cfg.prediction_dim, 0.0f);
    std::vector<std::uint8_t> inc(cfg.prediction_dim, 1);
    if (!zero) {
      for (auto& v : t) v = static_cast<float>(nd(rng));
      for (auto& f : inc) f = keep(rng) ? 1 : 0;
    }
    c.targets.push_back(std::move(t));
    c.include.push_back(std::move(inc));
  }
  return c;
}

template <typename T>
double case_loss(MaskedAutoencoder<T>& m, const GradCheckCase& c, bool with_grad) {
  Mat<T> tokens(c.tokens.rows, c.tokens.cols);
  for (std::size_t i = 0; i < tokens.d.size(); ++i) tokens.d[i] = static_cast<T>(c.tokens.d[i]);
  const Mat<T> pred = m.forward(tokens, c.visible, c.masked);
  const auto items = c.items();
  Mat<T> grad;
  const auto report = masked_motion_loss<T>(pred, items, with_grad ? &grad : nullptr);
  if (with_grad) m.backward(grad);
  return report.loss;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t parameters = 0;
};

// Relative difference with a floor on the denominator, so entries whose
// true gradient is ~0 are judged on absolute error instead of amplifying
// f32 rounding noise.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Adds N(0, scale) noise to every parameter, moving the model away from
// the near-uniform attention of a fresh initialization.
template <typename T>
void perturb_parameters(MaskedAutoencoder<T>& m, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  m.visit([&](Param<T>& p) {
    for (auto& v : p.value) v = static_cast<T>(static_cast<double>(v) + nd(rng));
  });
}

// Analytic gradients of a T-precision model against central differences
// of the same parameters evaluated in double precision, step
// rel_step * max(1, |theta|).
template <typename T = float>
GradCheckReport gradient_check(const GradCheckCase& c, double rel_step = 1e-3,
                               double floor = 1e-6, double perturb = 0.0) {
  MaskedAutoencoder<T> model(c.cfg);
  if (perturb > 0.0) perturb_parameters(model, perturb, c.cfg.seed + 1);
  MaskedAutoencoder<double> probe(c.cfg);
  copy_parameters(probe, model);
  model.zero_grad();
  case_loss(model, c, true);

  auto analytic = model.params();
  auto params = probe.params();
  GradCheckReport rep;
  rep.parameters = probe.parameter_count();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double theta = p.value[i];
      const double h = rel_step * std::max(1.0, std::abs(theta));
      p.value[i] = theta + h;
      const double up = case_loss(probe, c, false);
      p.value[i] = theta - h;
      const double down = case_loss(probe, c, false);
      p.value[i] = theta;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[k]->grad[i]);
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        throw DivergenceError("non-finite gradient for " + p.name);
      }
      const double e = relative_error(a, numeric, floor);
      ++rep.checked;
      if (e >= rep.max_relative_error) {
        rep.max_relative_error = e;
        rep.worst_parameter = p.name;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

// Sum over all parameters of |analytic - central difference| in double
// precision at a fixed absolute step h. Dominated by truncation error for
// moderate h, so it should scale like h^2.
inline double finite_difference_error(const GradCheckCase& c, double h, double perturb = 0.0) {
  MaskedAutoencoder<double> model(c.cfg);
  if (perturb > 0.0) perturb_parameters(model, perturb, c.cfg.seed + 1);
  model.zero_grad();
  case_loss(model, c, true);
  double total = 0.0;
  for (auto* p : model.params()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double theta = p->value[i];
      p->value[i] = theta + h;
      const double up = case_loss(model, c, false);
      p->value[i] = theta - h;
      const double down = case_loss(model, c, false);
      p->value[i] = theta;
      total += std::abs(p->grad[i] - (up - down) / (2.0 * h));
    }
  }
  return total;
}

}  // namespace m3v::model
