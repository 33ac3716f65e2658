#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace splatnorm {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shapes_equal(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles. Copies share the buffer; mutation goes
// through unique_data(), which unshares first. An empty (default) tensor has
// no buffer and rank 0 with numel 0.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const;
  // Negative axes count from the back.
  int64_t dim(int axis) const;
  bool defined() const { return data_ != nullptr; }

  const double* data() const;
  double* unique_data();

  double at(int64_t flat_index) const;
  double scalar_value() const;  // requires numel() == 1

  // Shares the buffer; element count must match.
  Tensor reshaped(Shape new_shape) const;
  Tensor clone() const;

  bool all_finite() const;
  // Index of the first non-finite element, or -1.
  int64_t first_non_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace splatnorm
