#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace affect {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Errors thrown by the tensor engine and everything built on it.
class dimension_error : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
class contract_error : public std::logic_error {
  using std::logic_error::logic_error;
};
class numeric_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
class Tensor;

namespace autograd {

// One recorded operation. Nodes are created in forward order; `backward_fn`
// reads the output tensor's grad and accumulates into the inputs' grads.
template <typename T>
struct Node {
  std::vector<Tensor<T>> inputs;
  Tensor<T> output;
  std::function<void()> backward_fn;
  const char* op_name = "";
};

bool grad_enabled();

// RAII guard disabling graph recording (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autograd

// Dense row-major tensor. Copies share the underlying buffer (and gradient
// buffer); `clone()` deep-copies. T is float or double.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), fill)),
        meta_(std::make_shared<Meta>()) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_))
      throw dimension_error("tensor data length does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<T>>(std::move(values));
    meta_ = std::make_shared<Meta>();
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

  std::span<T> data() { return {data_->data(), data_->size()}; }
  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  T* ptr() { return data_->data(); }
  const T* ptr() const { return data_->data(); }

  T item() const {
    if (numel() != 1) throw contract_error("item() requires a scalar tensor, got " + shape_str(shape_));
    return (*data_)[0];
  }

  // Row-major element access; for tests and small-scale code, not hot loops.
  T& at(std::initializer_list<std::int64_t> idx) { return (*data_)[flat_index(idx)]; }
  T at(std::initializer_list<std::int64_t> idx) const { return (*data_)[flat_index(idx)]; }

  Tensor clone() const {
    Tensor out(shape_, *data_);
    return out;
  }

  bool requires_grad() const { return meta_ && meta_->requires_grad; }

  Tensor& set_requires_grad(bool v) {
    ensure_meta();
    meta_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return meta_ && !meta_->grad.empty(); }

  std::span<T> grad() {
    if (!has_grad()) throw contract_error("tensor has no gradient");
    return {meta_->grad.data(), meta_->grad.size()};
  }
  std::span<const T> grad() const {
    if (!has_grad()) throw contract_error("tensor has no gradient");
    return {meta_->grad.data(), meta_->grad.size()};
  }

  void zero_grad() {
    ensure_meta();
    meta_->grad.assign(static_cast<size_t>(numel()), T(0));
  }

  void drop_grad() {
    if (meta_) meta_->grad.clear();
  }

  bool all_finite() const;

  std::shared_ptr<autograd::Node<T>> node() const { return meta_ ? meta_->node : nullptr; }
  void set_node(std::shared_ptr<autograd::Node<T>> n) {
    ensure_meta();
    meta_->node = std::move(n);
    meta_->requires_grad = true;
  }

  // True if the two tensors share one data buffer.
  bool shares_data(const Tensor& other) const { return data_ == other.data_; }

 private:
  struct Meta {
    bool requires_grad = false;
    std::vector<T> grad;
    std::shared_ptr<autograd::Node<T>> node;
  };

  void ensure_meta() {
    if (!meta_) meta_ = std::make_shared<Meta>();
  }

  size_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw dimension_error("index rank mismatch");
    std::int64_t flat = 0;
    size_t d = 0;
    for (std::int64_t i : idx) {
      if (i < 0 || i >= shape_[d]) throw dimension_error("index out of range");
      flat = flat * shape_[d] + i;
      ++d;
    }
    return static_cast<size_t>(flat);
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<Meta> meta_;
};

// Runs reverse-mode differentiation from a scalar loss. Gradients of every
// tensor reachable from the loss graph are zeroed first, then accumulated, so
// each call yields d loss / d leaf without cross-call carryover.
template <typename T>
void backward(const Tensor<T>& loss);

// Binary tensor file ("TNSR" magic, u8 dtype 0=f32/1=f64, u8 rank, rank x u32
// little-endian dims, raw little-endian values).
template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

// Raw little-endian byte matrix used for annotator votes (T x 7 u8 indices).
void save_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> load_bytes(const std::filesystem::path& path);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);
extern template void save_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
extern template void save_tensor<double>(const std::filesystem::path&, const Tensor<double>&);
extern template Tensor<float> load_tensor<float>(const std::filesystem::path&);
extern template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace affect
