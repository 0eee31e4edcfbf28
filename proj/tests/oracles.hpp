#pragma once

// Straightforward reference implementations used to check the library. They
// share no code with src/ beyond the plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "samfed/agreement.hpp"
#include "samfed/image.hpp"
#include "samfed/prob_map.hpp"
#include "samfed/tensor.hpp"

namespace oracle {

using samfed::Mask;
using samfed::ProbMap;
using samfed::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, samfed::Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(samfed::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Softmax of random logits, computed here in double so the map does not
// depend on the library's softmax.
inline ProbMap random_prob_map(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t n, float spread = 3.0f,
                               samfed::Source source = samfed::Source::Client) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<float> v(h * w * n);
  std::vector<double> z(n);
  for (std::size_t p = 0; p < h * w; ++p) {
    double total = 0.0;
    for (auto& x : z) {
      x = std::exp(u(rng));
      total += x;
    }
    for (std::size_t c = 0; c < n; ++c) v[p * n + c] = static_cast<float>(z[c] / total);
  }
  return ProbMap{Tensor({h, w, n}, std::move(v)), source};
}

inline std::size_t first_argmax(const float* p, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

struct FusedPixel {
  std::uint8_t label;
  double weight;
  bool agree;
};

// Agreement rule, one pixel at a time.
inline FusedPixel fuse_pixel(const float* t, const float* c, std::size_t n) {
  const std::size_t yt = first_argmax(t, n), yc = first_argmax(c, n);
  const double st = t[yt], sc = c[yc];
  if (yt == yc) return {static_cast<std::uint8_t>(yt), 1.0, true};
  if (st > sc) return {static_cast<std::uint8_t>(yt), st, false};
  return {static_cast<std::uint8_t>(yc), sc, false};
}

inline double log_softmax_at(const float* logits, std::size_t n, std::size_t k) {
  double m = logits[0];
  for (std::size_t c = 1; c < n; ++c) m = std::max(m, static_cast<double>(logits[c]));
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) s += std::exp(static_cast<double>(logits[c]) - m);
  return std::max(static_cast<double>(logits[k]) - m - std::log(s), std::log(1e-12));
}

// (1/HW) sum_p w(p) * -log softmax(logits)(p)[label(p)]
inline double weighted_ce(const Tensor& logits, const std::vector<std::uint8_t>& labels, const Tensor& weights) {
  const std::size_t h = logits.dim(0), w = logits.dim(1), n = logits.dim(2);
  double total = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) {
    total += static_cast<double>(weights[p]) * -log_softmax_at(logits.ptr() + p * n, n, labels[p]);
  }
  return total / static_cast<double>(h * w);
}

// Mean per-pixel KL(server || client) with 0 log 0 = 0.
inline double kl(const Tensor& server, const Tensor& client) {
  const std::size_t n = server.dim(2), pixels = server.dim(0) * server.dim(1);
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < n; ++c) {
      const double s = server[p * n + c];
      if (s == 0.0) continue;
      total += s * (std::log(s) - std::log(std::max(static_cast<double>(client[p * n + c]), 1e-12)));
    }
  }
  return total / static_cast<double>(pixels);
}

inline double dice(const Mask& a, const Mask& b, std::uint8_t cls) {
  double na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a.labels[i] == cls;
    nb += b.labels[i] == cls;
    both += a.labels[i] == cls && b.labels[i] == cls;
  }
  return na + nb == 0 ? 1.0 : 2.0 * both / (na + nb);
}

// All-pairs nearest boundary distances, pooled from both directions, then
// the nearest-rank 95th percentile.
inline double hd95(const Mask& a, const Mask& b, std::uint8_t cls) {
  const long h = static_cast<long>(a.height), w = static_cast<long>(a.width);
  auto in = [&](const Mask& m, long y, long x) {
    return y >= 0 && x >= 0 && y < h && x < w && m.labels[static_cast<std::size_t>(y * w + x)] == cls;
  };
  auto border_points = [&](const Mask& m) {
    std::vector<std::pair<long, long>> pts;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        if (in(m, y, x) && (!in(m, y - 1, x) || !in(m, y + 1, x) || !in(m, y, x - 1) || !in(m, y, x + 1)))
          pts.emplace_back(y, x);
    return pts;
  };
  const auto pa = border_points(a), pb = border_points(b);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::sqrt(static_cast<double>(h * h + w * w));
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (const auto& [y0, x0] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [y1, x1] : to) best = std::min(best, std::hypot(double(y0 - y1), double(x0 - x1)));
      d.push_back(best);
    }
  };
  directed(pa, pb);
  directed(pb, pa);
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(95.0 * static_cast<double>(d.size()) / 100.0));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<double> rel_errors;

  std::size_t count_within(double tol) const {
    return static_cast<std::size_t>(std::count_if(rel_errors.begin(), rel_errors.end(), [&](double e) { return e <= tol; }));
  }
};

// Compares tape gradients of a scalar loss against central differences.
// `build` records the loss from variables bound to `inputs`. Up to
// `max_coords` coordinates per input are sampled; `floor` bounds the
// denominator of the relative error.
inline GradCheck check_gradients(std::vector<Tensor> inputs,
                                 const std::function<samfed::Var(samfed::Tape&, std::vector<samfed::Var>&)>& build,
                                 std::mt19937_64& rng, std::size_t max_coords = 20, double eps = 1e-2,
                                 double floor = 1e-3) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    samfed::Tape tape;
    std::vector<samfed::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    return static_cast<double>(build(tape, vars).value().item());
  };
  samfed::Tape tape;
  std::vector<samfed::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  tape.backward(build(tape, vars));

  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.gradient(vars[i]);
    std::vector<std::size_t> coords(inputs[i].numel());
    for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(coords.size(), max_coords));
    for (auto k : coords) {
      auto plus = inputs, minus = inputs;
      plus[i][k] += static_cast<float>(eps);
      minus[i][k] -= static_cast<float>(eps);
      // Use the perturbation actually representable in float.
      const double step = static_cast<double>(plus[i][k]) - static_cast<double>(minus[i][k]);
      const double numeric = (evaluate(plus) - evaluate(minus)) / step;
      const double a = analytic[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.rel_errors.push_back(std::abs(a - numeric) / denom);
      out.max_rel_error = std::max(out.max_rel_error, out.rel_errors.back());
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
