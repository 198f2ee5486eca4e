#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace kinemod {

// Dense [bodies][channels][frames][joints] array in row-major order.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(std::size_t bodies, std::size_t channels, std::size_t frames, std::size_t joints,
          double fill = 0.0)
      : m_(bodies), c_(channels), t_(frames), v_(joints),
        data_(bodies * channels * frames * joints, fill) {}

  std::size_t bodies() const noexcept { return m_; }
  std::size_t channels() const noexcept { return c_; }
  std::size_t frames() const noexcept { return t_; }
  std::size_t joints() const noexcept { return v_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t m, std::size_t c, std::size_t t, std::size_t v) {
    return data_[index(m, c, t, v)];
  }
  double operator()(std::size_t m, std::size_t c, std::size_t t, std::size_t v) const {
    return data_[index(m, c, t, v)];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Tensor4& o) const noexcept {
    return m_ == o.m_ && c_ == o.c_ && t_ == o.t_ && v_ == o.v_;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  std::size_t index(std::size_t m, std::size_t c, std::size_t t, std::size_t v) const noexcept {
    return ((m * c_ + c) * t_ + t) * v_ + v;
  }

  std::size_t m_ = 0, c_ = 0, t_ = 0, v_ = 0;
  std::vector<double> data_;
};

}  // namespace kinemod
