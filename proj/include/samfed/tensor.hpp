#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace samfed {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Values are fixed after construction except
// through mutable_data(), which the optimizers use for in-place updates.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor({1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> mutable_data() noexcept { return data_; }
  const float* ptr() const noexcept { return data_.data(); }
  float* ptr() noexcept { return data_.data(); }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Value of a one-element tensor.
  float item() const;

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<const float> grad() const noexcept { return grad_; }
  void set_grad(std::vector<float> grad);
  void clear_grad() noexcept { grad_.clear(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Linear record of differentiable operations. backward() walks the record
// once in reverse and freezes it; a frozen tape accepts no further ops.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return value_of(v.id); }
  // d(loss)/d(v) after backward(); zeros when v did not influence the loss.
  Tensor gradient(Var v) const;

  void backward(Var loss);

  bool frozen() const noexcept { return frozen_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Interface for op implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::span<float> grad_buffer(std::size_t id);
  std::span<const float> grad_of(std::size_t id) const { return nodes_.at(id).grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<float> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void ensure_open() const;

  std::deque<Node> nodes_;
  bool frozen_ = false;
};

// ---- differentiable ops -------------------------------------------------
// Images and feature maps are laid out [H, W, C]; conv kernels are
// [kh, kw, Cin, Cout]. No implicit broadcasting.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
// Zero "same" padding, stride 1, odd kernel extents.
Var conv2d(Var input, Var kernel);
Var add(Var a, Var b);
Var add_scalar(Var a, float s);
Var mul_scalar(Var a, float s);
// Elementwise product with a same-shape constant (no gradient into c).
Var mul_const(Var a, const Tensor& c);
Var add_channel_bias(Var x, Var bias);
Var relu(Var a);
// Natural log with inputs floored at kLogFloor.
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var softmax_channels(Var logits);
// Per-pixel log-softmax over the last axis, floored at log(kLogFloor).
Var log_softmax_channels(Var logits);
// out[h,w] = x[h,w,labels[h*W+w]].
Var select_channel(Var x, std::span<const std::uint8_t> labels);
Var concat_channels(Var a, Var b);
Var upsample2x_nearest(Var x);
Var downsample2x_avg(Var x);

inline constexpr float kLogFloor = 1e-12f;

// Same arithmetic as the tape ops, without recording.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel);
Tensor matmul_forward(const Tensor& a, const Tensor& b);

}  // namespace samfed
