#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gahb {

/// Extent of a rank-4 (batch, channels, height, width) array.
struct Dims {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const { return batch * channels * height * width; }
  constexpr std::size_t image_size() const { return channels * height * width; }
  constexpr std::size_t plane() const { return height * width; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Raised when operand shapes disagree. `axis()` names the offending axis.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string axis, const std::string& what)
      : std::invalid_argument(what), axis_(std::move(axis)) {}
  const std::string& axis() const { return axis_; }

 private:
  std::string axis_;
};

/// Throws DimensionError naming the first axis on which `a` and `b` differ.
void require_same_dims(const Dims& a, const Dims& b, const char* context);

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense rank-4 array, contiguous row-major (b, c, h, w).
template <class T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Dims dims, T fill = T(0)) : dims_(dims), data_(dims.size(), fill) {}
  Tensor4(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.size()) {
      throw DimensionError("data", "Tensor4: data length " + std::to_string(data_.size()) +
                                       " does not match dims " + to_string(dims_));
    }
#ifdef GAHB_CHECKED
    require_finite();
#endif
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((b * dims_.channels + c) * dims_.height + h) * dims_.width + w];
  }
  const T& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((b * dims_.channels + c) * dims_.height + h) * dims_.width + w];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vector() const { return data_; }

  /// All channels of batch element `b`.
  std::span<T> item(std::size_t b) {
    return std::span<T>(data_).subspan(b * dims_.image_size(), dims_.image_size());
  }
  std::span<const T> item(std::size_t b) const {
    return std::span<const T>(data_).subspan(b * dims_.image_size(), dims_.image_size());
  }

  /// Copy of batch element `b` as a batch-1 tensor.
  Tensor4 slice(std::size_t b) const {
    Dims d = dims_;
    d.batch = 1;
    auto s = item(b);
    return Tensor4(d, std::vector<T>(s.begin(), s.end()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void require_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) throw NonFiniteError("Tensor4: non-finite entry");
    }
  }

  template <class U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor4<U>(dims_, std::move(out));
  }

  Tensor4& operator+=(const Tensor4& o) {
    require_same_dims(dims_, o.dims_, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor4& operator-=(const Tensor4& o) {
    require_same_dims(dims_, o.dims_, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor4& operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
  }

  friend Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
  friend Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
  friend Tensor4 operator*(Tensor4 a, T s) { return a *= s; }
  friend Tensor4 operator*(T s, Tensor4 a) { return a *= s; }

 private:
  Dims dims_{};
  std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

/// Batch of `batch` copies of a single-channel h×w image.
inline Dims image_dims(std::size_t h, std::size_t w, std::size_t batch = 1) {
  return Dims{batch, 1, h, w};
}

template <class T>
double dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("data", "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

template <class T>
double squared_norm(std::span<const T> a) {
  return dot(a, a);
}

/// Normalized inner product; zero vectors give 0.
template <class T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Stack batch-1 tensors of equal dims along the batch axis.
template <class T>
Tensor4<T> stack(std::span<const Tensor4<T>> items) {
  if (items.empty()) return {};
  Dims d = items.front().dims();
  const std::size_t per = d.size();
  std::vector<T> data;
  data.reserve(per * items.size());
  for (const auto& t : items) {
    require_same_dims(d, t.dims(), "stack");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  d.batch *= items.size();
  return Tensor4<T>(d, std::move(data));
}

}  // namespace gahb
