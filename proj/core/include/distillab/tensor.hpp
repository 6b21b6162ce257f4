#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace distillab {

// Dense row-major f64 tensor. Copies share storage; training code treats
// tensors as handles to parameter/activation buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool tracked = false);
  Tensor(std::vector<int> shape, std::vector<double> values, bool tracked = false);

  static Tensor scalar(double v, bool tracked = false);

  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  std::vector<double>& values() { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }

  bool tracked() const { return impl_ && impl_->tracked; }
  double* grad() { return impl_->grad.data(); }
  const std::vector<double>& grad_values() const { return impl_->grad; }
  void zero_grad();

  // Value of a single-element tensor.
  double item() const;

  bool defined() const { return impl_ != nullptr; }

  // Deep copy with fresh storage (grad not copied).
  Tensor clone() const;

  struct Impl {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value when tracked
    bool tracked = false;
  };
  std::shared_ptr<Impl> impl_;
};

int64_t shape_numel(const std::vector<int>& shape);

// Records primitive applications in execution order; backward replays them
// in reverse, accumulating into the grad buffer of every tracked tensor.
// Single-threaded by design. A non-recording tape evaluates forward only.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t num_steps() const { return steps_.size(); }

  Tensor constant(std::vector<int> shape, std::vector<double> values);

  // Elementwise with numpy-style right-aligned broadcasting.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);

  // a: [..., M, K]; b: [K, N] or [..., K, N] with identical leading dims.
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a @ b^T for b: [N, K]; the layout linear layers store their weights in.
  Tensor matmul_nt(const Tensor& a, const Tensor& b);

  Tensor transpose(const Tensor& a, int axis0, int axis1);
  Tensor reshape(const Tensor& a, std::vector<int> shape);
  Tensor concat(const std::vector<Tensor>& parts, int axis);
  // Drops `axis` by selecting one index along it.
  Tensor select(const Tensor& a, int axis, int index);

  Tensor relu(const Tensor& a);
  // Softmax over the last axis of logits/temperature. temperature >= 1e-30.
  Tensor softmax(const Tensor& a, double temperature = 1.0);
  Tensor log_softmax(const Tensor& a);

  // table: [V, E]; ids are row indices with logical shape id_shape.
  Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                   std::vector<int> id_shape);

  // out[..., 0] = a[..., ids[...]]; ids has one entry per row of a.
  Tensor gather_last(const Tensor& a, const std::vector<int>& ids);

  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

  // out = mask != 0 ? fill : a. mask broadcasts like the binary ops and is
  // treated as a constant.
  Tensor masked_fill(const Tensor& a, const Tensor& mask, double fill);

  // Normalization over the last axis; gamma/beta have that axis's length.
  Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                    double eps = 1e-5);

  // loss must be a tracked single-element tensor. Seeds its grad with 1,
  // replays the tape in reverse, then clears it.
  void backward(const Tensor& loss);

  void reset();

 private:
  Tensor make_output(std::vector<int> shape, bool tracked);
  void record(std::function<void()> back);

  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
};

[[noreturn]] void tensor_error(const std::string& op, const std::string& detail);
std::string shape_str(const std::vector<int>& shape);

}  // namespace distillab
