#include "crynet/nn/array.hpp"

#include <algorithm>
#include <cmath>

namespace crynet::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
bool Array<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Array<float>;
template class Array<double>;

}  // namespace crynet::nn
