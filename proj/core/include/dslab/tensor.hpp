#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dslab/error.hpp"

namespace dslab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::size_t size() const { return value.size(); }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Dense row-major f64 tensor. Value-semantics handle onto a shared node so
// that recorded backward closures observe parameter updates and accumulate
// gradients in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }
  std::size_t size() const { return node_->value.size(); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }

  // gradient accumulated by the last backward(); empty when none reached it
  const std::vector<double>& grad() const { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  double item() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

  // deep copy of values; the copy is a fresh leaf
  Tensor clone() const;

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Records one forward pass; backward() replays it in reverse then clears it.
// Thread-local by design: recording and backward stay on one thread.
class Tape {
 public:
  static Tape& instance();

  void record(std::function<void()> backprop) {
    if (enabled_) entries_.push_back(std::move(backprop));
  }
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  // runs recorded closures newest-first, then clears the tape
  void replay_reverse_and_clear() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

 private:
  std::vector<std::function<void()>> entries_;
  bool enabled_ = true;
};

// RAII pause of tape recording (used by inference paths and the
// finite-difference oracles in tests).
struct NoGradGuard {
  NoGradGuard() : prev_(Tape::instance().enabled()) {
    Tape::instance().set_enabled(false);
  }
  ~NoGradGuard() { Tape::instance().set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// broadcast a [D] row vector over the rows of a [N,D] matrix
Tensor add_rowvec(const Tensor& x, const Tensor& v);
// y = x * exp(s); s is a [1] tensor (the learned log logit scale)
Tensor mul_exp_scalar(const Tensor& x, const Tensor& s);

Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t rows);
Tensor slice_cols(const Tensor& x, std::size_t col0, std::size_t cols);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor softmax_rows(const Tensor& x);
Tensor sum(const Tensor& x);
// normalizes the whole tensor as one vector to unit L2 norm
Tensor l2_normalize(const Tensor& x);

// table [V,E], one output row per id
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);

// Non-overlapping p x p patches of img [C,H,W] flattened and linearly
// projected by weight [D,C,p,p] + bias [D]; rows in raster patch order.
Tensor patch_project(const Tensor& img, const Tensor& weight,
                     const Tensor& bias);

// mean over rows of -log softmax(logits)[i, targets[i]], row-max stabilized
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& targets);

// Accumulates gradients into every requires_grad tensor reachable from loss,
// then clears the tape.
void backward(const Tensor& loss);

// --- parameters and optimizer ----------------------------------------------

struct ParamGroup {
  std::string name;
  std::vector<Tensor> tensors;
  bool frozen = false;
};

// theta <- theta - lr * grad for non-frozen groups; zeroes all grads after.
void sgd_step(std::vector<ParamGroup>& groups, double lr);

// --- checkpoint file format --------------------------------------------------
// Little-endian binary: magic "DSCK", version u32, then per group:
// name length u32 + UTF-8 name, frozen flag byte, tensor count u32, and per
// tensor rank u64 + extents u64 each + raw f64 data. Groups run to EOF.

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<ParamGroup>& groups);
std::vector<ParamGroup> load_checkpoint(const std::filesystem::path& path);

}  // namespace dslab
