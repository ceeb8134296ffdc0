#include "layerslim/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "layerslim/errors.hpp"

namespace layerslim {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  std::vector<float> values;
  int64_t cols = -1;
  for (const auto& row : rows) {
    if (cols >= 0 && static_cast<int64_t>(row.size()) != cols) throw ShapeError("ragged matrix literal");
    cols = static_cast<int64_t>(row.size());
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({static_cast<int64_t>(rows.size()), cols}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({static_cast<int64_t>(values.size())}, std::vector<float>(values));
}

int64_t Tensor::dim(int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::rows() const { return rank() == 1 ? 1 : shape_[0]; }

int64_t Tensor::cols() const { return shape_.back(); }

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare " + shape_to_string(a.shape()) + " with " + shape_to_string(b.shape()));
  }
  float worst = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace layerslim
