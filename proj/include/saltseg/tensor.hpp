#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "saltseg/common.hpp"

namespace saltseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

Index shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

// One tape node: forward value plus everything backward() needs. Ops store a
// closure that receives the node's accumulated output gradient and pushes
// gradients into the parents; saved forward values live inside the closure.
struct TensorNode {
    Shape shape;
    Array data;
    Array grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Tensor> parents;
    std::function<void(const Array&)> backward_fn;
    bool backward_ran = false;  // set on the root by backward()
};

// Shared-handle value type over TensorNode. Dense row-major storage, rank <= 4.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Array data, Shape shape, bool requires_grad = false);
    static Tensor from_values(std::initializer_list<double> v, Shape shape, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    Index rank() const { return static_cast<Index>(n_->shape.size()); }
    Index numel() const { return n_->data.size(); }
    Index dim(int axis) const { return n_->shape[static_cast<std::size_t>(axis)]; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    const char* op_name() const { return n_->op; }

    Array& data() { return n_->data; }
    const Array& data() const { return n_->data; }
    Array& grad() { return n_->grad; }
    const Array& grad() const { return n_->grad; }
    bool has_grad() const { return n_->grad.size() > 0; }

    double item() const;
    double at(std::initializer_list<Index> idx) const;
    Index flat_index(std::initializer_list<Index> idx) const;

    void zero_grad() const;
    void accumulate_grad(const Array& g) const;

    // Fresh leaf with copied data, detached from any tape.
    Tensor detached_copy(bool requires_grad = false) const;

    TensorNode* node() const { return n_.get(); }

private:
    std::shared_ptr<TensorNode> n_;
};

// While alive, newly created op outputs do not record the tape (forward
// values only). Nestable; thread-local.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// --- operators -------------------------------------------------------------

// Grouped 2-D convolution. x: N x C x H x W, w: C' x (C/g) x k x k, bias: C'
// (optional, pass nullptr). k must be odd, C and C' divisible by g.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding,
              int groups = 1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// add/mul broadcast over singleton axes (same rank, each axis equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, Index start, Index len);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // N,C,H,W -> N,C,1,1

// x: N x F_in, w: F_out x F_in, bias: F_out (optional).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor* bias);

// Padded cells never win the max and receive no gradient; ties go to the
// lowest input linear index.
Tensor maxpool2d(const Tensor& x, int k, int stride, int padding = 0);

// Align-corners-false bilinear interpolation; factor 1 is the identity.
Tensor bilinear_upsample(const Tensor& x, int factor);

// Train mode normalizes with batch statistics and updates the running stats
// in place (new = (1-momentum)*old + momentum*batch, biased variance); eval
// mode normalizes with the running stats.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, bool train, double momentum = 0.1, double eps = 1e-5);

// Reverse-mode sweep from a scalar loss. Each reachable requires_grad tensor
// gets its grad accumulated; running backward twice on the same loss throws.
void backward(const Tensor& loss);

}  // namespace saltseg
