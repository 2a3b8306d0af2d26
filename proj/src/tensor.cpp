#include "l2f/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace l2f {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > 2) throw std::invalid_argument("tensor rank > 2: " + shape_str(shape));
  for (Index d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  check_shape(shape);
  Index n = shape_size(shape);
  return Tensor(std::move(shape), Eigen::ArrayXd::Zero(n));
}

Tensor Tensor::full(Shape shape, double v) {
  check_shape(shape);
  Index n = shape_size(shape);
  return Tensor(std::move(shape), Eigen::ArrayXd::Constant(n, v));
}

Tensor Tensor::from_vector(const std::vector<double>& values) {
  Tensor t = zeros({static_cast<Index>(values.size())});
  for (size_t i = 0; i < values.size(); ++i) t.data_[static_cast<Index>(i)] = values[i];
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Index r = static_cast<Index>(rows.size());
  if (r == 0) throw std::invalid_argument("from_rows: empty");
  Index c = static_cast<Index>(rows.begin()->size());
  Tensor t = zeros({r, c});
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw std::invalid_argument("from_rows: ragged rows");
    for (double v : row) t.data_[i++] = v;
  }
  return t;
}

Tensor Tensor::from_matrix(const Eigen::Ref<const MatrixXdRM>& m) {
  Tensor t = zeros({m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

Index Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() == 1) return shape_[0];
  return 1;
}

Index Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  return 1;
}

double Tensor::item() const {
  if (!is_scalar()) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

Eigen::Map<const MatrixXdRM> Tensor::matrix() const {
  return Eigen::Map<const MatrixXdRM>(data_.data(), rows(), cols());
}

Eigen::Map<MatrixXdRM> Tensor::matrix() {
  return Eigen::Map<MatrixXdRM>(data_.data(), rows(), cols());
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != size()) {
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                ": element count mismatch");
  }
  return Tensor(std::move(shape), data_);
}

}  // namespace l2f
