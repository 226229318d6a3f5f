#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "geofuse/core.hpp"

namespace geofuse {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<RowVec>;
using ConstVecMap = Eigen::Map<const RowVec>;

struct ParamTensor {
  std::string name;
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

/// Flat storage for every trainable value of a model, addressed by named
/// row-major tensors. Gradients and optimizer moments share the layout.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    require(!lookup_.count(name), "parameter '" + name + "' declared twice");
    const std::size_t offset = values_.size();
    lookup_.emplace(name, tensors_.size());
    tensors_.push_back({std::move(name), offset, rows, cols});
    values_.resize(offset + rows * cols, 0.0);
    return offset;
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  const ParamTensor& tensor(const std::string& name) const {
    auto it = lookup_.find(name);
    require(it != lookup_.end(), "unknown parameter '" + name + "'");
    return tensors_[it->second];
  }
  bool has(const std::string& name) const { return lookup_.count(name) != 0; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  std::span<double> slice(const ParamTensor& t) { return {values_.data() + t.offset, t.size()}; }
  std::span<const double> slice(const ParamTensor& t) const {
    return {values_.data() + t.offset, t.size()};
  }

 private:
  std::vector<ParamTensor> tensors_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::vector<double> values_;
};

/// Row-major matrix view of `rows x cols` values starting at `offset`.
inline ConstMatMap mat(const double* base, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {base + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline MatMap mat(double* base, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {base + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline ConstVecMap vec(const double* base, std::size_t offset, std::size_t n) {
  return {base + offset, static_cast<Eigen::Index>(n)};
}
inline VecMap vec(double* base, std::size_t offset, std::size_t n) {
  return {base + offset, static_cast<Eigen::Index>(n)};
}

}  // namespace geofuse
