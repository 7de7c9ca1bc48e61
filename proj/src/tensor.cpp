#include "dslu/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <unordered_set>

namespace dslu {
namespace {

thread_local Tape* g_current_tape = nullptr;

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& s) {
  if (s.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (std::size_t d : s)
    if (d == 0) throw DimensionError("tensor shape " + shape_str(s) + " has a zero-length axis");
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto s = std::make_shared<TensorStorage>();
  s->data.assign(product(shape), value);
  s->shape = std::move(shape);
  Tensor t(std::move(s));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (product(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  Tensor t(std::move(s));
  t.set_requires_grad(requires_grad);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (on && s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), 0.0);
  if (!on) s_->grad.clear();
}

void Tensor::zero_grad() {
  std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto s = std::make_shared<TensorStorage>(*s_);
  return Tensor(std::move(s));
}

Tensor Tensor::detach() const {
  return from(shape(), values(), false);
}

void Tape::record(std::vector<std::shared_ptr<TensorStorage>> inputs,
                  std::shared_ptr<TensorStorage> output, BackwardFn fn) {
  nodes_.push_back({std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice without reset");
  if (!loss.defined() || loss.numel() != 1)
    throw TapeError("backward requires a scalar loss, got shape " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) throw TapeError("loss does not depend on any tracked tensor");
  consumed_ = true;

  TensorStorage* root = loss.shared().get();
  root->grad[0] += 1.0;

  std::unordered_set<const TensorStorage*> live{root};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!live.contains(it->output.get())) continue;
    it->fn();
    for (const auto& in : it->inputs)
      if (in->requires_grad) live.insert(in.get());
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

Tape* Tape::current() { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

}  // namespace dslu
