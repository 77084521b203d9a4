#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace man {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Location of the tape node that produced a tensor.
struct TapeRef {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::optional<TapeRef> node;
};

// Dense row-major array of doubles with an optional gradient slot.
//
// Tensor is a handle: copies share storage, the same way parameters are
// shared between a model and its optimizer. Use clone() for an independent
// deep copy. A default-constructed Tensor is empty (no storage).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  // 2-D tensor from nested rows; all rows must have the same length.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;
  // Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // allocates a zero gradient when absent
  void zero_grad();

  const std::optional<TapeRef>& node() const;

  // Independent copy of shape and data; no gradient, no tape node.
  Tensor clone() const;
  // Copy of the values that never carries gradient (constant on any tape).
  Tensor detach() const;

  // True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  friend class Tape;
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace man
