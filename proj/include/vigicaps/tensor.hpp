#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "vigicaps/errors.hpp"

namespace vigicaps {

/// Dense n-dimensional array of doubles with shared, copy-on-write storage.
/// Copies are cheap (the buffer is shared); `mutable_data()` clones the
/// buffer first when it is shared with another tensor.
class Tensor {
 public:
  using Shape = std::vector<std::int64_t>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return numel_; }
  bool defined() const { return static_cast<bool>(data_); }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  std::span<double> mutable_data();

  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  double scalar_value() const;

  /// Same buffer under a new shape; element count must match.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  static std::int64_t count(const Shape& shape);

 private:
  Shape shape_;
  std::int64_t numel_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

std::string shape_to_string(const Tensor::Shape& shape);

}  // namespace vigicaps
