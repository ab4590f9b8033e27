#ifndef ADAPTERSEG_TENSOR_HPP
#define ADAPTERSEG_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adapterseg {

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major double tensor. Most of the pipeline works on 2-D
// [rows, cols] matrices (token grids, parameter matrices); images are
// [channels, height, width].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, double v);
  static Tensor matrix(std::int64_t rows, std::int64_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }

  // 2-D accessors; valid only for matrices.
  std::int64_t rows() const;
  std::int64_t cols() const;

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }
  double& at(std::int64_t r, std::int64_t c) { return data_[r * cols() + c]; }
  double at(std::int64_t r, std::int64_t c) const { return data_[r * cols() + c]; }
  // [C,H,W] accessor.
  double& at3(std::int64_t c, std::int64_t y, std::int64_t x);
  double at3(std::int64_t c, std::int64_t y, std::int64_t x) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v);
  void set_zero() { fill(0.0); }

  double item() const;  // value of a 1-element tensor
  double sum() const;
  double min() const;
  double max() const;
  double abs_max() const;

  // Eigen views over 2-D tensors.
  Eigen::Map<RowMatrixXd> mat();
  Eigen::Map<const RowMatrixXd> mat() const;
  // Flat array views (any rank).
  Eigen::Map<Eigen::ArrayXd> array() { return {data_.data(), size()}; }
  Eigen::Map<const Eigen::ArrayXd> array() const { return {data_.data(), size()}; }

  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

// Throws std::invalid_argument on mismatch; `what` names the operation.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace adapterseg

#endif  // ADAPTERSEG_TENSOR_HPP
