#include "voxelinst/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "voxelinst/errors.hpp"

namespace voxelinst {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (int d : shape_) {
    if (d < 0) throw ContractError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  data_.assign(n, fill);
}

std::size_t Tensor::spatial() const {
  if (shape_.size() < 2) return data_.size();
  return data_.size() / static_cast<std::size_t>(shape_[0]);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw ContractError("tensor shape mismatch: " + shape_string(shape_) + " vs " +
                        shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::string Tensor::shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace voxelinst
