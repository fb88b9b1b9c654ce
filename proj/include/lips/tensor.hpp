#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lips {

/// Error raised when tensor extents do not fit an operation.
class InvalidShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Error raised when a configuration value is out of its allowed domain.
class InvalidConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Error raised for malformed user-supplied inputs (files, images).
class InvalidInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 tensor with 1 to 4 dimensions.
///
/// Feature maps use (channels, height, width) order; token matrices use
/// (tokens, channels). A default-constructed tensor is empty (rank 0) and
/// only valid as a placeholder.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const float& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D access (rows, cols).
  float& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  const float& at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

  // 3-D access (channel, y, x).
  float& at(int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  const float& at(int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  /// Same data, new shape with an equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

int64_t shape_numel(const Shape& shape);

/// Throws InvalidShapeError with `what` unless `cond` holds.
inline void require_shape(bool cond, const std::string& what) {
  if (!cond) throw InvalidShapeError(what);
}

inline void require_config(bool cond, const std::string& what) {
  if (!cond) throw InvalidConfigError(what);
}

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace lips
