#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geossl {

/// Dense row-major tensor of doubles. Most of the model treats tensors as
/// 2-D matrices (rows = tokens / samples, cols = channels); higher ranks are
/// used only as shape metadata.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(int rows, int cols);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor from(std::vector<int> shape, std::vector<double> data);

    int ndim() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors (valid when ndim()==2)
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    Tensor reshaped(std::vector<int> shape) const;
    Tensor transposed() const;  // 2-D only

    void fill(double v);
    void add_(const Tensor& other);              // in-place +=
    void axpy_(double a, const Tensor& other);   // this += a*other
    void scale_(double a);

    double sum() const;
    double max() const;
    double l2norm() const;
    bool all_finite() const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// C = A * B  (2-D, inner dims must agree)
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A^T * B
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C = A * B^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

[[noreturn]] void fail(const std::string& msg);

#define GEOSSL_CHECK(cond, msg) \
    do { if (!(cond)) ::geossl::fail(msg); } while (0)

}  // namespace geossl
