#include "geossl/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace geossl {

namespace {
std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) fail("negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;
}  // namespace

void fail(const std::string& msg) { throw std::runtime_error(msg); }

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(int rows, int cols) : Tensor(std::vector<int>{rows, cols}) {}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t(1, 1);
    t[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    GEOSSL_CHECK(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
                 "tensor data size does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    GEOSSL_CHECK(shape_numel(shape) == numel(), "reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

Tensor Tensor::transposed() const {
    GEOSSL_CHECK(ndim() == 2, "transpose requires a 2-D tensor");
    Tensor out(cols(), rows());
    EMap(out.data(), out.rows(), out.cols()) = CEMap(data(), rows(), cols()).transpose();
    return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
    GEOSSL_CHECK(numel() == other.numel(), "add_: size mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::axpy_(double a, const Tensor& other) {
    GEOSSL_CHECK(numel() == other.numel(), "axpy_: size mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
}

void Tensor::scale_(double a) {
    for (double& v : data_) v *= a;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max() const {
    GEOSSL_CHECK(!data_.empty(), "max of empty tensor");
    double m = data_[0];
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::l2norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    GEOSSL_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.rows(),
                 "matmul: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c(a.rows(), b.cols());
    EMap(c.data(), c.rows(), c.cols()).noalias() =
        CEMap(a.data(), a.rows(), a.cols()) * CEMap(b.data(), b.rows(), b.cols());
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    GEOSSL_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.rows() == b.rows(),
                 "matmul_tn: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c(a.cols(), b.cols());
    EMap(c.data(), c.rows(), c.cols()).noalias() =
        CEMap(a.data(), a.rows(), a.cols()).transpose() * CEMap(b.data(), b.rows(), b.cols());
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    GEOSSL_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols(),
                 "matmul_nt: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c(a.rows(), b.rows());
    EMap(c.data(), c.rows(), c.cols()).noalias() =
        CEMap(a.data(), a.rows(), a.cols()) * CEMap(b.data(), b.rows(), b.cols()).transpose();
    return c;
}

}  // namespace geossl
