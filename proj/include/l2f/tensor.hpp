#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <string>
#include <vector>

namespace l2f {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using MatrixXdRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense float64 tensor of rank 0, 1 or 2. Data is stored flat in row-major
/// order; matrix views are Eigen maps over that storage.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1) { data_[0] = 0.0; }

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor from_vector(const std::vector<double>& values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_matrix(const Eigen::Ref<const MatrixXdRM>& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  Index rows() const;
  Index cols() const;

  double item() const;
  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }
  double& at(Index r, Index c) { return data_[r * cols() + c]; }
  double at(Index r, Index c) const { return data_[r * cols() + c]; }

  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }

  Eigen::Map<const MatrixXdRM> matrix() const;
  Eigen::Map<MatrixXdRM> matrix();

  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  Eigen::ArrayXd data_;
};

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace l2f
