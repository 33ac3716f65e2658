#include "splatnorm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace splatnorm {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor data size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape_));
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  auto* p = t.unique_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

int64_t Tensor::numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

int64_t Tensor::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw std::invalid_argument("axis out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

const double* Tensor::data() const {
  if (!data_) throw std::runtime_error("access to undefined tensor");
  return data_->data();
}

double* Tensor::unique_data() {
  if (!data_) throw std::runtime_error("access to undefined tensor");
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return data_->data();
}

double Tensor::at(int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel())
    throw std::out_of_range("tensor index " + std::to_string(flat_index));
  return (*data_)[flat_index];
}

double Tensor::scalar_value() const {
  if (numel() != 1)
    throw std::invalid_argument("scalar_value on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                " changes element count");
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

bool Tensor::all_finite() const { return first_non_finite() < 0; }

int64_t Tensor::first_non_finite() const {
  const double* p = data();
  int64_t n = numel();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return i;
  return -1;
}

}  // namespace splatnorm
