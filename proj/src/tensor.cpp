#include "adapterseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace adapterseg {

namespace {
std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
    throw std::invalid_argument("Tensor: data size does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

std::int64_t Tensor::rows() const {
  if (shape_.size() != 2) throw std::logic_error("Tensor::rows: not a matrix: " + shape_str());
  return shape_[0];
}

std::int64_t Tensor::cols() const {
  if (shape_.size() != 2) throw std::logic_error("Tensor::cols: not a matrix: " + shape_str());
  return shape_[1];
}

double& Tensor::at3(std::int64_t c, std::int64_t y, std::int64_t x) {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}

double Tensor::at3(std::int64_t c, std::int64_t y, std::int64_t x) const {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item: size != 1: " + shape_str());
  return data_[0];
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::max(m, v);
  return m;
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Eigen::Map<RowMatrixXd> Tensor::mat() {
  return {data_.data(), rows(), cols()};
}

Eigen::Map<const RowMatrixXd> Tensor::mat() const {
  return {data_.data(), rows(), cols()};
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace adapterseg
