#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stnet {

// Shared-storage n-d tensor handle. Copies are shallow: they alias the same
// data and gradient buffers, which is what lets tape closures and optimizer
// parameter lists refer to the same storage a layer holds.
template <typename T>
class Tensor {
  struct Impl {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, zero-filled
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> p_;

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false)
      : p_(std::make_shared<Impl>()) {
    p_->shape = std::move(shape);
    p_->data.assign(count(p_->shape), T(0));
    p_->requires_grad = requires_grad;
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : p_(std::make_shared<Impl>()) {
    if (data.size() != count(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
    p_->shape = std::move(shape);
    p_->data = std::move(data);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  bool defined() const { return static_cast<bool>(p_); }
  const std::vector<std::size_t>& shape() const { return p_->shape; }
  std::size_t dim(std::size_t i) const { return p_->shape.at(i); }
  std::size_t ndim() const { return p_->shape.size(); }
  std::size_t size() const { return p_->data.size(); }

  T* data() { return p_->data.data(); }
  const T* data() const { return p_->data.data(); }
  std::vector<T>& vec() { return p_->data; }
  const std::vector<T>& vec() const { return p_->data; }

  T& at(std::size_t i) { return p_->data[i]; }
  T at(std::size_t i) const { return p_->data[i]; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) { p_->requires_grad = v; }

  bool has_grad() const { return !p_->grad.empty(); }
  // Lazily materializes the gradient buffer (zero-filled).
  T* grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->data.size(), T(0));
    return p_->grad.data();
  }
  const std::vector<T>& grad_vec() const { return p_->grad; }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
  }

  // Deep copy (fresh storage, gradients not copied).
  Tensor clone() const {
    Tensor t(p_->shape, p_->requires_grad);
    t.p_->data = p_->data;
    return t;
  }

  bool same_storage(const Tensor& o) const { return p_ == o.p_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < p_->shape.size(); ++i)
      os << (i ? "," : "") << p_->shape[i];
    os << ']';
    return os.str();
  }
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace stnet
