#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dslu {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Shape/dimension contract violations.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the tape (non-scalar loss, double backward, ...).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data iff requires_grad
  bool requires_grad = false;
};

// Dense row-major array of doubles. Copies share storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }
  std::size_t rows() const { return s_->shape.at(0); }
  std::size_t cols() const { return s_->shape.back(); }

  std::span<double> data() { return s_->data; }
  std::span<const double> data() const { return s_->data; }
  // Gradient buffers are shared accumulation targets, writable through any
  // handle.
  std::span<double> grad() const { return s_->grad; }
  std::vector<double>& values() { return s_->data; }
  const std::vector<double>& values() const { return s_->data; }

  double& operator()(std::size_t r, std::size_t c) { return s_->data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();

  Tensor clone() const;
  // Same values, no grad tracking.
  Tensor detach() const;

  // Identity of the underlying storage; two Tensors alias iff equal.
  const TensorStorage* storage() const { return s_.get(); }
  std::shared_ptr<TensorStorage> shared() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage> s_;
  friend class Tape;
};

// Ordered record of differentiable operations. Ops record onto the tape made
// current by a TapeScope whenever one of their inputs requires grad; with no
// current tape every op is a plain forward computation.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<std::shared_ptr<TensorStorage>> inputs,
              std::shared_ptr<TensorStorage> output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs recorded backward rules in reverse
  // order. Each node is visited at most once. Throws TapeError on a
  // non-scalar loss or a second call without reset().
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorStorage>> inputs;
    std::shared_ptr<TensorStorage> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  friend class TapeScope;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace dslu
