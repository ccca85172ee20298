// Copyright 2026 The fqbmru Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fqbmru/errors.hpp"

namespace fqbmru {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Rank 2 is the working rank for all
/// network arithmetic; rank 3 is used for (batch, time, feature) data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw dimension_error("tensor shape " + shape_string(shape_) + " does not match " +
                            std::to_string(data_.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  /// Nested-list constructor: Tensor::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw dimension_error("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  /// 1 x n row vector.
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape_[1] : 1; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  double item() const {
    if (data_.size() != 1) throw dimension_error("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  Tensor transposed() const {
    require_rank2("transpose");
    Tensor out = Tensor::matrix(cols(), rows());
    for (std::size_t i = 0; i < rows(); ++i)
      for (std::size_t j = 0; j < cols(); ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_rank2(const char* op) const {
    if (rank() != 2) {
      throw dimension_error(std::string(op) + ": expected a matrix, got shape " +
                            shape_string(shape_));
    }
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Plain matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  a.require_rank2("matmul");
  b.require_rank2("matmul");
  if (a.cols() != b.rows()) {
    throw dimension_error("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * m;
      double* orow = out.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// y = W x + b for a single vector; W is out x in.
inline std::vector<double> affine(const Tensor& w, std::span<const double> b,
                                  std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw dimension_error("affine: weight " + shape_string(w.shape()) + " vs input " +
                          std::to_string(x.size()) + " / bias " + std::to_string(b.size()));
  }
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    const double* wr = w.data().data() + i * w.cols();
    for (std::size_t j = 0; j < x.size(); ++j) acc += wr[j] * x[j];
    y[i] += acc;
  }
  return y;
}

}  // namespace fqbmru
