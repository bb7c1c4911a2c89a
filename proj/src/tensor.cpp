#include "vigicaps/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vigicaps {

std::int64_t Tensor::count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeMismatch("tensor dimensions must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      numel_(count(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(numel_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), numel_(count(shape_)) {
  if (numel_ != static_cast<std::int64_t>(values.size()))
    throw ShapeMismatch("value count " + std::to_string(values.size()) + " does not fill shape " +
                        shape_to_string(shape_));
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& x : *t.data_) x = value;
  return t;
}

std::span<double> Tensor::mutable_data() {
  if (!data_) throw ShapeMismatch("tensor is undefined");
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return {data_->data(), data_->size()};
}

double Tensor::scalar_value() const {
  if (numel_ != 1) throw ShapeMismatch("expected scalar, got shape " + shape_to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (count(shape) != numel_)
    throw ShapeMismatch("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_;
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : *data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string shape_to_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace vigicaps
