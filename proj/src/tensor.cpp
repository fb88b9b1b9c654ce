#include "lips/tensor.hpp"

#include <sstream>

namespace lips {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  require_shape(!shape.empty() && shape.size() <= 4,
                "tensor rank must be 1-4, got " + std::to_string(shape.size()));
  for (int64_t e : shape) {
    require_shape(e > 0, "tensor extents must be positive: " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  require_shape(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
                "data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_to_string(shape_));
}

int64_t Tensor::dim(int axis) const {
  require_shape(axis >= 0 && axis < rank(), "axis out of range");
  return shape_[static_cast<size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  require_shape(shape_numel(shape) == size(),
                "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

}  // namespace lips
