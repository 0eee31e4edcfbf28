#include "samfed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "samfed/error.hpp"

namespace samfed {

namespace {

void require_same(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw Error(Errc::ShapeMismatch, "mask sizes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                         " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

constexpr double kFar = 1e20;

// 1-D squared distance transform of sampled function f (Felzenszwalb &
// Huttenlocher lower envelope of parabolas).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](std::size_t q, std::size_t p) {
    const double dq = static_cast<double>(q), dp = static_cast<double>(p);
    return ((f[q] + dq * dq) - (f[p] + dp * dp)) / (2.0 * dq - 2.0 * dp);
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance from every pixel to the nearest site.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& sites, std::size_t h, std::size_t w) {
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites[i] ? 0.0 : kFar;
  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  f.resize(h);
  d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    dt1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    dt1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = d[x];
  }
  return grid;
}

bool any_of_class(const Mask& m, std::uint8_t cls) {
  return std::find(m.labels.begin(), m.labels.end(), cls) != m.labels.end();
}

}  // namespace

double dice(const Mask& pred, const Mask& gt, std::uint8_t cls) {
  require_same(pred, gt);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.labels[i] == cls, b = gt.labels[i] == cls;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::uint8_t> boundary(const Mask& mask, std::uint8_t cls) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<std::uint8_t> out(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask.at(y, x) != cls) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
      out[y * w + x] = edge || mask.at(y - 1, x) != cls || mask.at(y + 1, x) != cls || mask.at(y, x - 1) != cls ||
                       mask.at(y, x + 1) != cls;
    }
  }
  return out;
}

double hd95(const Mask& pred, const Mask& gt, std::uint8_t cls) {
  require_same(pred, gt);
  const bool has_p = any_of_class(pred, cls), has_g = any_of_class(gt, cls);
  if (!has_p && !has_g) return 0.0;
  if (has_p != has_g) {
    return std::sqrt(static_cast<double>(pred.height * pred.height + pred.width * pred.width));
  }
  const auto bp = boundary(pred, cls);
  const auto bg = boundary(gt, cls);
  const auto dist_to_g = squared_edt(bg, gt.height, gt.width);
  const auto dist_to_p = squared_edt(bp, pred.height, pred.width);
  std::vector<double> d;
  for (std::size_t i = 0; i < bp.size(); ++i)
    if (bp[i]) d.push_back(std::sqrt(dist_to_g[i]));
  for (std::size_t i = 0; i < bg.size(); ++i)
    if (bg[i]) d.push_back(std::sqrt(dist_to_p[i]));
  std::sort(d.begin(), d.end());
  // Nearest rank: ceil(0.95 n), in integers.
  const std::size_t rank = (95 * d.size() + 99) / 100;
  return d[std::max<std::size_t>(rank, 1) - 1];
}

MetricResult evaluate(const Mask& pred, const Mask& gt, std::size_t num_classes) {
  MetricResult r;
  for (std::size_t c = 1; c < num_classes; ++c) {
    r.dice += dice(pred, gt, static_cast<std::uint8_t>(c));
    r.hd95 += hd95(pred, gt, static_cast<std::uint8_t>(c));
  }
  const double k = static_cast<double>(num_classes - 1);
  r.dice /= k;
  r.hd95 /= k;
  return r;
}

}  // namespace samfed
