#include <algorithm>
#include <cmath>
#include <limits>

#include "blas.hpp"
#include "samfed/error.hpp"
#include "samfed/tensor.hpp"

namespace samfed {

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error(Errc::NotInitialized, "Var is not bound to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error(Errc::ShapeMismatch, "operands live on different tapes");
  return tape_of(a);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

const float kLogFloorLn = std::log(kLogFloor);

}  // namespace

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw Error(Errc::ShapeMismatch, "matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.ptr(), b.ptr(), 0.0f, out.ptr());
  return out;
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  Tensor out = matmul_forward(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& av = t.value_of(ia);
    const Tensor& bv = t.value_of(ib);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    const float* g = t.grad_of(self).data();
    if (t.requires_grad(ia)) gemm(false, true, m, k, n, g, bv.ptr(), 1.0f, t.grad_buffer(ia).data());
    if (t.requires_grad(ib)) gemm(true, false, k, n, m, av.ptr(), g, 1.0f, t.grad_buffer(ib).data());
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  require_rank(av, 2, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia, m, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace {

struct ConvDims {
  std::size_t h, w, cin, kh, kw, cout;

  std::size_t pixels() const { return h * w; }
  std::size_t taps() const { return kh * kw * cin; }
  bool pointwise() const { return kh == 1 && kw == 1; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel) {
  require_rank(input, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(1), kernel.dim(3)};
  if (kernel.dim(2) != d.cin) {
    throw Error(Errc::ShapeMismatch,
                "conv2d: input channels " + std::to_string(d.cin) + " vs kernel " + shape_str(kernel.shape()));
  }
  if (d.kh % 2 == 0 || d.kw % 2 == 0) throw Error(Errc::ShapeMismatch, "conv2d: kernel extents must be odd");
  return d;
}

// Visits every (output pixel, in-bounds input pixel, tap) triple of a "same"
// convolution; fn(p, q, tap) gets flat pixel indices and the (ky, kx) slot.
template <typename Fn>
void for_each_tap(const ConvDims& d, Fn&& fn) {
  const long ph = static_cast<long>(d.kh / 2), pw = static_cast<long>(d.kw / 2);
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t x = 0; x < d.w; ++x) {
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        const long iy = static_cast<long>(y + ky) - ph;
        if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const long ix = static_cast<long>(x + kx) - pw;
          if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
          fn(y * d.w + x, static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix), ky * d.kw + kx);
        }
      }
    }
  }
}

// Patch matrix [pixels, taps], taps ordered (ky, kx, ci) like the kernel
// rows; zero where a tap falls in the padding.
std::vector<float> im2col(const float* in, const ConvDims& d) {
  std::vector<float> col(d.pixels() * d.taps(), 0.0f);
  const std::size_t taps = d.taps();
  for_each_tap(d, [&](std::size_t p, std::size_t q, std::size_t slot) {
    std::copy_n(in + q * d.cin, d.cin, col.data() + p * taps + slot * d.cin);
  });
  return col;
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel) {
  const ConvDims d = conv_dims(input, kernel);
  Tensor out({d.h, d.w, d.cout});
  std::vector<float> col;
  const float* patches = input.ptr();
  if (!d.pointwise()) {
    col = im2col(input.ptr(), d);
    patches = col.data();
  }
  gemm(false, false, d.pixels(), d.cout, d.taps(), patches, kernel.ptr(), 0.0f, out.ptr());
  return out;
}

Var conv2d(Var input, Var kernel) {
  Tape& tape = tape_of(input, kernel);
  Tensor out = conv2d_forward(input.value(), kernel.value());
  const std::size_t ii = input.id, ik = kernel.id;
  return tape.record(std::move(out), {ii, ik}, [ii, ik](Tape& t, std::size_t self) {
    const Tensor& inv = t.value_of(ii);
    const Tensor& kv = t.value_of(ik);
    const ConvDims d = conv_dims(inv, kv);
    const float* g = t.grad_of(self).data();
    if (t.requires_grad(ik)) {
      std::vector<float> col;
      const float* patches = inv.ptr();
      if (!d.pointwise()) {
        col = im2col(inv.ptr(), d);
        patches = col.data();
      }
      // dK += col^T g
      gemm(true, false, d.taps(), d.cout, d.pixels(), patches, g, 1.0f, t.grad_buffer(ik).data());
    }
    if (t.requires_grad(ii)) {
      float* gin = t.grad_buffer(ii).data();
      if (d.pointwise()) {
        gemm(false, true, d.pixels(), d.cin, d.cout, g, kv.ptr(), 1.0f, gin);
        return;
      }
      // dcol = g K^T, scattered back onto the input pixels.
      std::vector<float> dcol(d.pixels() * d.taps());
      gemm(false, true, d.pixels(), d.taps(), d.cout, g, kv.ptr(), 0.0f, dcol.data());
      const std::size_t taps = d.taps();
      for_each_tap(d, [&](std::size_t p, std::size_t q, std::size_t slot) {
        const float* src = dcol.data() + p * taps + slot * d.cin;
        float* dst = gin + q * d.cin;
        for (std::size_t ci = 0; ci < d.cin; ++ci) dst[ci] += src[ci];
      });
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto od = out.mutable_data();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    for (auto in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var add_scalar(Var a, float s) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v += s;
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

Var mul_scalar(Var a, float s) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v *= s;
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia, s](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * s;
  });
}

Var mul_const(Var a, const Tensor& c) {
  Tape& tape = tape_of(a);
  require_same_shape(a.value(), c, "mul_const");
  Tensor out = a.value();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= c[i];
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia, c](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * c[i];
  });
}

Var add_channel_bias(Var x, Var bias) {
  Tape& tape = tape_of(x, bias);
  const Tensor& xv = x.value();
  require_rank(xv, 3, "add_channel_bias");
  const std::size_t c = xv.dim(2);
  if (bias.value().numel() != c) throw Error(Errc::ShapeMismatch, "add_channel_bias: bias size differs from channels");
  Tensor out = xv;
  auto od = out.mutable_data();
  const auto bd = bias.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i % c];
  const std::size_t ix = x.id, ib = bias.id;
  return tape.record(std::move(out), {ix, ib}, [ix, ib, c](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.requires_grad(ix)) {
      auto gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
}

Var relu(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v = v > 0.0f ? v : 0.0f;
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const auto in = t.value_of(ia).data();
    auto gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0f) gi[i] += g[i];
  });
}

Var log(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.mutable_data()) v = std::log(std::max(v, kLogFloor));
  const std::size_t ia = a.id;
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const auto in = t.value_of(ia).data();
    auto gi = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] >= kLogFloor) gi[i] += g[i] / in[i];
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  const std::size_t ia = a.id;
  return tape.record(Tensor::scalar(static_cast<float>(acc)), {ia}, [ia](Tape& t, std::size_t self) {
    const float g = t.grad_of(self)[0];
    for (auto& v : t.grad_buffer(ia)) v += g;
  });
}

Var mean(Var a) {
  Tape& tape = tape_of(a);
  const std::size_t n = a.value().numel();
  if (n == 0) throw Error(Errc::ShapeMismatch, "mean of empty tensor");
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  const std::size_t ia = a.id;
  return tape.record(Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), {ia},
                     [ia, n](Tape& t, std::size_t self) {
                       const float g = t.grad_of(self)[0] / static_cast<float>(n);
                       for (auto& v : t.grad_buffer(ia)) v += g;
                     });
}

namespace {

std::size_t channel_count(const Tensor& t, const char* op) {
  if (t.rank() == 0 || t.dim(t.rank() - 1) < 2) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": need at least 2 channels, got " + shape_str(t.shape()));
  }
  return t.dim(t.rank() - 1);
}

}  // namespace

Var softmax_channels(Var logits) {
  Tape& tape = tape_of(logits);
  const Tensor& lv = logits.value();
  const std::size_t n = channel_count(lv, "softmax_channels");
  Tensor out(lv.shape());
  for (std::size_t base = 0; base < lv.numel(); base += n) {
    float m = lv[base];
    for (std::size_t c = 1; c < n; ++c) m = std::max(m, lv[base + c]);
    float s = 0.0f;
    for (std::size_t c = 0; c < n; ++c) s += (out[base + c] = std::exp(lv[base + c] - m));
    for (std::size_t c = 0; c < n; ++c) out[base + c] /= s;
  }
  const std::size_t il = logits.id;
  return tape.record(std::move(out), {il}, [il, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const auto p = t.value_of(self).data();
    auto gi = t.grad_buffer(il);
    for (std::size_t base = 0; base < g.size(); base += n) {
      float dot = 0.0f;
      for (std::size_t c = 0; c < n; ++c) dot += p[base + c] * g[base + c];
      for (std::size_t c = 0; c < n; ++c) gi[base + c] += p[base + c] * (g[base + c] - dot);
    }
  });
}

Var log_softmax_channels(Var logits) {
  Tape& tape = tape_of(logits);
  const Tensor& lv = logits.value();
  const std::size_t n = channel_count(lv, "log_softmax_channels");
  Tensor out(lv.shape());
  for (std::size_t base = 0; base < lv.numel(); base += n) {
    float m = lv[base];
    for (std::size_t c = 1; c < n; ++c) m = std::max(m, lv[base + c]);
    float s = 0.0f;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(lv[base + c] - m);
    const float lse = m + std::log(s);
    for (std::size_t c = 0; c < n; ++c) out[base + c] = std::max(lv[base + c] - lse, kLogFloorLn);
  }
  const std::size_t il = logits.id;
  return tape.record(std::move(out), {il}, [il, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const auto lp = t.value_of(self).data();
    const auto lv = t.value_of(il).data();
    auto gi = t.grad_buffer(il);
    for (std::size_t base = 0; base < g.size(); base += n) {
      // Entries held at the floor have zero local derivative.
      float m = lv[base];
      for (std::size_t c = 1; c < n; ++c) m = std::max(m, lv[base + c]);
      float s = 0.0f;
      for (std::size_t c = 0; c < n; ++c) s += std::exp(lv[base + c] - m);
      float live_sum = 0.0f;
      for (std::size_t c = 0; c < n; ++c)
        if (lp[base + c] > kLogFloorLn) live_sum += g[base + c];
      for (std::size_t c = 0; c < n; ++c) {
        const float p = std::exp(lv[base + c] - m) / s;
        const float own = lp[base + c] > kLogFloorLn ? g[base + c] : 0.0f;
        gi[base + c] += own - p * live_sum;
      }
    }
  });
}

Var select_channel(Var x, std::span<const std::uint8_t> labels) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  require_rank(xv, 3, "select_channel");
  const std::size_t pixels = xv.dim(0) * xv.dim(1), n = xv.dim(2);
  if (labels.size() != pixels) throw Error(Errc::ShapeMismatch, "select_channel: label field size differs");
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  Tensor out({xv.dim(0), xv.dim(1)});
  for (std::size_t p = 0; p < pixels; ++p) {
    if (lab[p] >= n) throw Error(Errc::LabelOutOfRange, "label " + std::to_string(lab[p]) + " >= " + std::to_string(n));
    out[p] = xv[p * n + lab[p]];
  }
  const std::size_t ix = x.id;
  return tape.record(std::move(out), {ix}, [ix, n, lab = std::move(lab)](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t p = 0; p < g.size(); ++p) gx[p * n + lab[p]] += g[p];
  });
}

Var concat_channels(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 3, "concat_channels");
  require_rank(bv, 3, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) {
    throw Error(Errc::ShapeMismatch, "concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t pixels = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
  Tensor out({av.dim(0), av.dim(1), ca + cb});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(av.ptr() + p * ca, ca, out.ptr() + p * (ca + cb));
    std::copy_n(bv.ptr() + p * cb, cb, out.ptr() + p * (ca + cb) + ca);
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib, pixels, ca, cb](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad_buffer(ia);
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < ca; ++c) ga[p * ca + c] += g[p * (ca + cb) + c];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < cb; ++c) gb[p * cb + c] += g[p * (ca + cb) + ca + c];
    }
  });
}

Var upsample2x_nearest(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  require_rank(xv, 3, "upsample2x_nearest");
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor out({2 * h, 2 * w, c});
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t x2 = 0; x2 < 2 * w; ++x2)
      std::copy_n(xv.ptr() + ((y / 2) * w + x2 / 2) * c, c, out.ptr() + (y * 2 * w + x2) * c);
  const std::size_t ix = x.id;
  return tape.record(std::move(out), {ix}, [ix, h, w, c](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x2 = 0; x2 < 2 * w; ++x2)
        for (std::size_t ch = 0; ch < c; ++ch) gx[((y / 2) * w + x2 / 2) * c + ch] += g[(y * 2 * w + x2) * c + ch];
  });
}

Var downsample2x_avg(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  require_rank(xv, 3, "downsample2x_avg");
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw Error(Errc::ShapeMismatch, "downsample2x_avg: odd spatial size");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({oh, ow, c});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x2 = 0; x2 < ow; ++x2)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float s = xv[((2 * y) * w + 2 * x2) * c + ch] + xv[((2 * y) * w + 2 * x2 + 1) * c + ch] +
                        xv[((2 * y + 1) * w + 2 * x2) * c + ch] + xv[((2 * y + 1) * w + 2 * x2 + 1) * c + ch];
        out[(y * ow + x2) * c + ch] = 0.25f * s;
      }
  const std::size_t ix = x.id;
  return tape.record(std::move(out), {ix}, [ix, w, c, oh, ow](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x2 = 0; x2 < ow; ++x2)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float q = 0.25f * g[(y * ow + x2) * c + ch];
          gx[((2 * y) * w + 2 * x2) * c + ch] += q;
          gx[((2 * y) * w + 2 * x2 + 1) * c + ch] += q;
          gx[((2 * y + 1) * w + 2 * x2) * c + ch] += q;
          gx[((2 * y + 1) * w + 2 * x2 + 1) * c + ch] += q;
        }
  });
}

}  // namespace samfed
