// Copyright 2026 The varlora Authors.
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

#include "varlora/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

void check_rank(const std::vector<std::size_t>& shape) {
  require_shape(!shape.empty() && shape.size() <= 3,
                "tensor rank must be 1..3, got " + shape_string(shape));
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  require_shape(a.same_shape(b), std::string(op) + ": shape mismatch " +
                                     shape_string(a.shape()) + " vs " +
                                     shape_string(b.shape()));
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  require_shape(data_.size() == product(shape_),
                "data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_string(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  require_shape(r > 0, "matrix literal needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require_shape(row.size() == c, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  require_shape(data_.size() == 1, "item() on non-scalar " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  require_shape(product(shape) == data_.size(),
                "reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_shape(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
                "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  const double* pa = a.raw().data();
  const double* pb = b.raw().data();
  double* po = out.raw().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_shape(a.rank() == 2, "transpose expects a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.raw()) v *= s;
  return out;
}

Tensor square(const Tensor& a) { return hadamard(a, a); }

Tensor abs(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.raw()) v = std::fabs(v);
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src, double alpha) {
  check_same(dst, src, "add_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.raw()) s += v;
  return s;
}

double mean(const Tensor& a) {
  require(!a.empty(), "mean of empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.raw()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace varlora
