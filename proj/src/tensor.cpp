#include "samfed/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "samfed/error.hpp"

namespace samfed {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "shape " + shape_str(shape_) + " does not hold " +
                                         std::to_string(data_.size()) + " values");
  }
}

float Tensor::item() const {
  if (data_.size() != 1) throw Error(Errc::ShapeMismatch, "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::set_grad(std::vector<float> grad) {
  if (grad.size() != data_.size()) throw Error(Errc::ShapeMismatch, "gradient size differs from data size");
  grad_ = std::move(grad);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw Error(Errc::NotInitialized, "Var is not bound to a tape");
  return tape->value_of(id);
}

void Tape::ensure_open() const {
  if (frozen_) throw Error(Errc::TapeReuse, "tape already ran backward");
}

Var Tape::constant(Tensor value) {
  ensure_open();
  if (!value.all_finite()) throw Error(Errc::NonFinite, "constant contains NaN/Inf");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  ensure_open();
  if (!value.all_finite()) throw Error(Errc::NonFinite, "variable contains NaN/Inf");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  ensure_open();
  if (!value.all_finite()) throw Error(Errc::NonFinite, "op produced NaN/Inf");
  bool needs = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw Error(Errc::ShapeMismatch, "op input from a different tape");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(fn) : BackwardFn{}, needs});
  return Var{this, nodes_.size() - 1};
}

std::span<float> Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0f);
  return node.grad;
}

Tensor Tape::gradient(Var v) const {
  const auto& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0f);
  return Tensor(node.value.shape(), node.grad);
}

void Tape::backward(Var loss) {
  ensure_open();
  if (loss.tape != this) throw Error(Errc::ShapeMismatch, "loss was recorded on another tape");
  if (value_of(loss.id).numel() != 1) {
    throw Error(Errc::NonScalarLoss, "loss has shape " + shape_str(value_of(loss.id).shape()));
  }
  frozen_ = true;
  grad_buffer(loss.id)[0] = 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, i);
  }
}

}  // namespace samfed
