#pragma once

#include "geossl/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace geossl::nn {

/// Reverse-mode autodiff over Tensor. Graphs are built eagerly; creation
/// order doubles as a topological order for the backward sweep. Nodes whose
/// inputs carry no gradient collapse to constants, so inference-only passes
/// (e.g. the EMA teacher) never retain a tape.
struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::int64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor& g);
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value);  // gradient target
Var make_var(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Runs the backward sweep from a scalar root (seeds d(root)/d(root)=1).
void backward(const Var& root);

const Tensor& val(const Var& v);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var vlog(const Var& a);
Var vexp(const Var& a);
Var vsqrt(const Var& a);
Var rsqrt(const Var& a, double eps = 0.0);  // 1/sqrt(x+eps)
Var reciprocal(const Var& a);
Var clamp_min(const Var& a, double lo);
Var clamp_max(const Var& a, double hi);
Var gelu(const Var& a);

// ---- shape / selection ----
Var reshape(const Var& a, std::vector<int> shape);
Var transpose(const Var& a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int r0, int r1);
Var slice_cols(const Var& a, int c0, int c1);
Var gather_rows(const Var& a, std::vector<int> idx);
Var select_per_row(const Var& a, std::vector<int> col);  // (n x 1)

// ---- linear algebra / broadcasting ----
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);     // row: (1 x d)
Var mul_rowvec(const Var& a, const Var& row);     // row: (1 x d)
Var scale_rows(const Var& a, const Var& s);       // s: (n x 1)
Var scale_by(const Var& a, const Var& s);         // s: (1 x 1)
Var row_sum(const Var& a);                        // (n x 1)
Var col_sum(const Var& a);                        // (1 x d)
Var sum_all(const Var& a);                        // (1 x 1)
Var mean_all(const Var& a);                       // (1 x 1)

// ---- nonlinear blocks ----
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-6);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

/// Block-diagonal scaled-dot-product attention. Q is (B*Lq x dh); K and V
/// are (B*Lk x dh). Attention is computed independently per block b:
///   A_b = softmax(Q_b K_b^T * s + bias + mask_b),  O_b = A_b V_b
/// `s` is `scale` times the optional scalar variable `scale_var`. `bias`
/// (Lq x Lk) is shared across blocks and receives gradient; `mask` is a
/// constant (B*Lq x Lk) additive tensor (0 / -inf style). When `attn_out`
/// is non-null the attention probabilities (B*Lq x Lk) are copied there.
Var attention_blocks(const Var& q, const Var& k, const Var& v, int n_blocks,
                     double scale, const Var& scale_var = nullptr,
                     const Var& bias = nullptr, const Tensor* mask = nullptr,
                     Tensor* attn_out = nullptr);

/// Average-pools a row-major (h x w) grid of row vectors by (fh x fw).
Var avgpool_grid(const Var& a, int h, int w, int fh, int fw);

/// Mean of a row-major grid over all positions: (h*w x d) -> (1 x d).
Var mean_rows(const Var& a);

}  // namespace geossl::nn
