#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace layerslim {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major float32 array. Rank is 1 or 2 everywhere in this library;
// scalars are represented as shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor({1}, {value}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // rows()/cols() view the tensor as a matrix; a rank-1 tensor is one row.
  int64_t rows() const;
  int64_t cols() const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  float& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  float at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  float item() const;
  Tensor reshaped(Shape shape) const;
  void fill(float value);
  bool all_finite() const;

  // Bit-exact equality of shape and payload.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace layerslim
