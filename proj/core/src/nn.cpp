#include "geossl/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace geossl::nn {

namespace {
std::atomic<std::int64_t> g_next_id{1};

bool any_requires(const std::vector<Var>& ps) {
    for (const auto& p : ps)
        if (p && p->requires_grad) return true;
    return false;
}
}  // namespace

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (!has_grad) {
        grad = Tensor::zeros(value.shape());
        has_grad = true;
    }
    grad.add_(g);
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

Var leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

Var make_var(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    if (any_requires(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void backward(const Var& root) {
    GEOSSL_CHECK(root && root->value.numel() == 1, "backward expects a scalar root");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    root->grad = Tensor::full(root->value.shape(), 1.0);
    root->has_grad = true;
    for (Node* n : order) {
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

const Tensor& val(const Var& v) { return v->value; }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    GEOSSL_CHECK(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor out = a->value;
    out.add_(b->value);
    return make_var(std::move(out), {a, b}, [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        self.parents[1]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    GEOSSL_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_var(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Tensor g = self.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            Tensor g = self.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
            self.parents[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a->value;
    out.scale_(c);
    return make_var(std::move(out), {a}, [c](Node& self) {
        Tensor g = self.grad;
        g.scale_(c);
        self.parents[0]->accumulate(g);
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return make_var(std::move(out), {a},
                    [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var vlog(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] /= x[i];
        self.parents[0]->accumulate(g);
    });
}

Var vexp(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= self.value[i];
        self.parents[0]->accumulate(g);
    });
}

Var vsqrt(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= 0.5 / self.value[i];
        self.parents[0]->accumulate(g);
    });
}

Var rsqrt(const Var& a, double eps) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / std::sqrt(out[i] + eps);
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] *= -0.5 * y * y * y;
        }
        self.parents[0]->accumulate(g);
    });
}

Var reciprocal(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / out[i];
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= -self.value[i] * self.value[i];
        self.parents[0]->accumulate(g);
    });
}

Var clamp_min(const Var& a, double lo) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], lo);
    return make_var(std::move(out), {a}, [lo](Node& self) {
        Tensor g = self.grad;
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (x[i] < lo) g[i] = 0.0;
        self.parents[0]->accumulate(g);
    });
}

Var clamp_max(const Var& a, double hi) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(out[i], hi);
    return make_var(std::move(out), {a}, [hi](Node& self) {
        Tensor g = self.grad;
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (x[i] > hi) g[i] = 0.0;
        self.parents[0]->accumulate(g);
    });
}

Var gelu(const Var& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x = out[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_var(std::move(out), {a}, [](Node& self) {
        Tensor g = self.grad;
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double xi = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
            g[i] *= cdf + xi * pdf;
        }
        self.parents[0]->accumulate(g);
    });
}

// ------------------------------------------------------------ shape/selection

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(shape);
    return make_var(std::move(out), {a}, [](Node& self) {
        self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape()));
    });
}

Var transpose(const Var& a) {
    return make_var(a->value.transposed(), {a}, [](Node& self) {
        self.parents[0]->accumulate(self.grad.transposed());
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    GEOSSL_CHECK(!parts.empty(), "concat_rows: empty");
    const int d = parts[0]->value.cols();
    int n = 0;
    for (const auto& p : parts) {
        GEOSSL_CHECK(p->value.ndim() == 2 && p->value.cols() == d, "concat_rows: col mismatch");
        n += p->value.rows();
    }
    Tensor out(n, d);
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(),
                  out.data() + static_cast<std::int64_t>(r) * d);
        r += p->value.rows();
    }
    return make_var(std::move(out), parts, [d](Node& self) {
        int r0 = 0;
        for (auto& p : self.parents) {
            const int pr = p->value.rows();
            if (p->requires_grad) {
                Tensor g(pr, d);
                std::copy(self.grad.data() + static_cast<std::int64_t>(r0) * d,
                          self.grad.data() + static_cast<std::int64_t>(r0 + pr) * d, g.data());
                p->accumulate(g);
            }
            r0 += pr;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    GEOSSL_CHECK(!parts.empty(), "concat_cols: empty");
    const int n = parts[0]->value.rows();
    int d = 0;
    for (const auto& p : parts) {
        GEOSSL_CHECK(p->value.ndim() == 2 && p->value.rows() == n, "concat_cols: row mismatch");
        d += p->value.cols();
    }
    Tensor out(n, d);
    int c0 = 0;
    for (const auto& p : parts) {
        const int pc = p->value.cols();
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < pc; ++c) out.at(r, c0 + c) = p->value.at(r, c);
        c0 += pc;
    }
    return make_var(std::move(out), parts, [n](Node& self) {
        int c0 = 0;
        for (auto& p : self.parents) {
            const int pc = p->value.cols();
            if (p->requires_grad) {
                Tensor g(n, pc);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < pc; ++c) g.at(r, c) = self.grad.at(r, c0 + c);
                p->accumulate(g);
            }
            c0 += pc;
        }
    });
}

Var slice_rows(const Var& a, int r0, int r1) {
    GEOSSL_CHECK(a->value.ndim() == 2 && 0 <= r0 && r0 <= r1 && r1 <= a->value.rows(),
                 "slice_rows: bad range");
    const int d = a->value.cols();
    Tensor out(r1 - r0, d);
    std::copy(a->value.data() + static_cast<std::int64_t>(r0) * d,
              a->value.data() + static_cast<std::int64_t>(r1) * d, out.data());
    return make_var(std::move(out), {a}, [r0, d](Node& self) {
        Tensor g = Tensor::zeros(self.parents[0]->value.shape());
        std::copy(self.grad.data(), self.grad.data() + self.grad.numel(),
                  g.data() + static_cast<std::int64_t>(r0) * d);
        self.parents[0]->accumulate(g);
    });
}

Var slice_cols(const Var& a, int c0, int c1) {
    GEOSSL_CHECK(a->value.ndim() == 2 && 0 <= c0 && c0 <= c1 && c1 <= a->value.cols(),
                 "slice_cols: bad range");
    const int n = a->value.rows();
    Tensor out(n, c1 - c0);
    for (int r = 0; r < n; ++r)
        for (int c = c0; c < c1; ++c) out.at(r, c - c0) = a->value.at(r, c);
    return make_var(std::move(out), {a}, [c0](Node& self) {
        Tensor g = Tensor::zeros(self.parents[0]->value.shape());
        const int n = self.grad.rows(), w = self.grad.cols();
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c) g.at(r, c0 + c) = self.grad.at(r, c);
        self.parents[0]->accumulate(g);
    });
}

Var gather_rows(const Var& a, std::vector<int> idx) {
    GEOSSL_CHECK(a->value.ndim() == 2, "gather_rows: 2-D input required");
    const int d = a->value.cols();
    Tensor out(static_cast<int>(idx.size()), d);
    for (size_t r = 0; r < idx.size(); ++r) {
        GEOSSL_CHECK(idx[r] >= 0 && idx[r] < a->value.rows(), "gather_rows: index out of range");
        std::copy(a->value.data() + static_cast<std::int64_t>(idx[r]) * d,
                  a->value.data() + static_cast<std::int64_t>(idx[r] + 1) * d,
                  out.data() + static_cast<std::int64_t>(r) * d);
    }
    return make_var(std::move(out), {a}, [idx = std::move(idx), d](Node& self) {
        Tensor g = Tensor::zeros(self.parents[0]->value.shape());
        for (size_t r = 0; r < idx.size(); ++r) {
            double* dst = g.data() + static_cast<std::int64_t>(idx[r]) * d;
            const double* src = self.grad.data() + static_cast<std::int64_t>(r) * d;
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
        self.parents[0]->accumulate(g);
    });
}

Var select_per_row(const Var& a, std::vector<int> col) {
    GEOSSL_CHECK(a->value.ndim() == 2 && static_cast<int>(col.size()) == a->value.rows(),
                 "select_per_row: one column index per row required");
    const int n = a->value.rows();
    Tensor out(n, 1);
    for (int r = 0; r < n; ++r) out.at(r, 0) = a->value.at(r, col[r]);
    return make_var(std::move(out), {a}, [col = std::move(col)](Node& self) {
        Tensor g = Tensor::zeros(self.parents[0]->value.shape());
        for (int r = 0; r < g.rows(); ++r) g.at(r, col[r]) = self.grad.at(r, 0);
        self.parents[0]->accumulate(g);
    });
}

// -------------------------------------------------------------------- algebra

Var matmul(const Var& a, const Var& b) {
    Tensor out = geossl::matmul(a->value, b->value);
    return make_var(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(matmul_nt(self.grad, bv));
        if (self.parents[1]->requires_grad) self.parents[1]->accumulate(matmul_tn(av, self.grad));
    });
}

Var add_rowvec(const Var& a, const Var& row) {
    GEOSSL_CHECK(row->value.ndim() == 2 && row->value.rows() == 1 &&
                     row->value.cols() == a->value.cols(),
                 "add_rowvec: row must be (1 x cols)");
    Tensor out = a->value;
    const int n = out.rows(), d = out.cols();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) += row->value.at(0, c);
    return make_var(std::move(out), {a, row}, [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor g(1, self.grad.cols());
            for (int r = 0; r < self.grad.rows(); ++r)
                for (int c = 0; c < self.grad.cols(); ++c) g.at(0, c) += self.grad.at(r, c);
            self.parents[1]->accumulate(g);
        }
    });
}

Var mul_rowvec(const Var& a, const Var& row) {
    GEOSSL_CHECK(row->value.ndim() == 2 && row->value.rows() == 1 &&
                     row->value.cols() == a->value.cols(),
                 "mul_rowvec: row must be (1 x cols)");
    Tensor out = a->value;
    const int n = out.rows(), d = out.cols();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) *= row->value.at(0, c);
    return make_var(std::move(out), {a, row}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& rv = self.parents[1]->value;
        const int n = av.rows(), d = av.cols();
        if (self.parents[0]->requires_grad) {
            Tensor g = self.grad;
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) g.at(r, c) *= rv.at(0, c);
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            Tensor g(1, d);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) g.at(0, c) += self.grad.at(r, c) * av.at(r, c);
            self.parents[1]->accumulate(g);
        }
    });
}

Var scale_rows(const Var& a, const Var& s) {
    GEOSSL_CHECK(s->value.ndim() == 2 && s->value.cols() == 1 &&
                     s->value.rows() == a->value.rows(),
                 "scale_rows: s must be (rows x 1)");
    Tensor out = a->value;
    const int n = out.rows(), d = out.cols();
    for (int r = 0; r < n; ++r) {
        const double sv = s->value.at(r, 0);
        for (int c = 0; c < d; ++c) out.at(r, c) *= sv;
    }
    return make_var(std::move(out), {a, s}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& sv = self.parents[1]->value;
        const int n = av.rows(), d = av.cols();
        if (self.parents[0]->requires_grad) {
            Tensor g = self.grad;
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) g.at(r, c) *= sv.at(r, 0);
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            Tensor g(n, 1);
            for (int r = 0; r < n; ++r) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) acc += self.grad.at(r, c) * av.at(r, c);
                g.at(r, 0) = acc;
            }
            self.parents[1]->accumulate(g);
        }
    });
}

Var scale_by(const Var& a, const Var& s) {
    GEOSSL_CHECK(s->value.numel() == 1, "scale_by: scalar variable required");
    Tensor out = a->value;
    out.scale_(s->value[0]);
    return make_var(std::move(out), {a, s}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const double sv = self.parents[1]->value[0];
        if (self.parents[0]->requires_grad) {
            Tensor g = self.grad;
            g.scale_(sv);
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < av.numel(); ++i) acc += self.grad[i] * av[i];
            self.parents[1]->accumulate(Tensor::scalar(acc));
        }
    });
}

Var row_sum(const Var& a) {
    const int n = a->value.rows(), d = a->value.cols();
    Tensor out(n, 1);
    for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += a->value.at(r, c);
        out.at(r, 0) = acc;
    }
    return make_var(std::move(out), {a}, [](Node& self) {
        const int n = self.parents[0]->value.rows(), d = self.parents[0]->value.cols();
        Tensor g(n, d);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) g.at(r, c) = self.grad.at(r, 0);
        self.parents[0]->accumulate(g);
    });
}

Var col_sum(const Var& a) {
    const int n = a->value.rows(), d = a->value.cols();
    Tensor out(1, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(0, c) += a->value.at(r, c);
    return make_var(std::move(out), {a}, [](Node& self) {
        const int n = self.parents[0]->value.rows(), d = self.parents[0]->value.cols();
        Tensor g(n, d);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) g.at(r, c) = self.grad.at(0, c);
        self.parents[0]->accumulate(g);
    });
}

Var sum_all(const Var& a) {
    return make_var(Tensor::scalar(a->value.sum()), {a}, [](Node& self) {
        self.parents[0]->accumulate(
            Tensor::full(self.parents[0]->value.shape(), self.grad[0]));
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

// ------------------------------------------------------------------ nonlinear

Var softmax_rows(const Var& a) {
    const int n = a->value.rows(), d = a->value.cols();
    Tensor out(n, d);
    for (int r = 0; r < n; ++r) {
        double m = a->value.at(r, 0);
        for (int c = 1; c < d; ++c) m = std::max(m, a->value.at(r, c));
        double z = 0.0;
        for (int c = 0; c < d; ++c) {
            const double e = std::exp(a->value.at(r, c) - m);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < d; ++c) out.at(r, c) /= z;
    }
    return make_var(std::move(out), {a}, [](Node& self) {
        const int n = self.value.rows(), d = self.value.cols();
        Tensor g(n, d);
        for (int r = 0; r < n; ++r) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
            for (int c = 0; c < d; ++c)
                g.at(r, c) = self.value.at(r, c) * (self.grad.at(r, c) - dot);
        }
        self.parents[0]->accumulate(g);
    });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
    const int n = a->value.rows(), d = a->value.cols();
    GEOSSL_CHECK(gamma->value.cols() == d && beta->value.cols() == d, "layer_norm: affine dims");
    Tensor out(n, d);
    Tensor xhat(n, d);
    Tensor inv_sigma(n, 1);
    for (int r = 0; r < n; ++r) {
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += a->value.at(r, c);
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double t = a->value.at(r, c) - mu;
            var += t * t;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma.at(r, 0) = is;
        for (int c = 0; c < d; ++c) {
            const double xh = (a->value.at(r, c) - mu) * is;
            xhat.at(r, c) = xh;
            out.at(r, c) = xh * gamma->value.at(0, c) + beta->value.at(0, c);
        }
    }
    return make_var(std::move(out), {a, gamma, beta},
                    [xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
        const int n = xhat.rows(), d = xhat.cols();
        const Tensor& gam = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Tensor g(n, d);
            for (int r = 0; r < n; ++r) {
                double s1 = 0.0, s2 = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double gy = self.grad.at(r, c) * gam.at(0, c);
                    s1 += gy;
                    s2 += gy * xhat.at(r, c);
                }
                s1 /= d;
                s2 /= d;
                for (int c = 0; c < d; ++c) {
                    const double gy = self.grad.at(r, c) * gam.at(0, c);
                    g.at(r, c) = (gy - s1 - xhat.at(r, c) * s2) * inv_sigma.at(r, 0);
                }
            }
            self.parents[0]->accumulate(g);
        }
        if (self.parents[1]->requires_grad) {
            Tensor g(1, d);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) g.at(0, c) += self.grad.at(r, c) * xhat.at(r, c);
            self.parents[1]->accumulate(g);
        }
        if (self.parents[2]->requires_grad) {
            Tensor g(1, d);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) g.at(0, c) += self.grad.at(r, c);
            self.parents[2]->accumulate(g);
        }
    });
}

Var l2_normalize_rows(const Var& a, double eps) {
    Var sq = mul(a, a);
    Var inv = rsqrt(row_sum(sq), eps);
    return scale_rows(a, inv);
}

Var attention_blocks(const Var& q, const Var& k, const Var& v, int n_blocks,
                     double scale_c, const Var& scale_var, const Var& bias,
                     const Tensor* mask, Tensor* attn_out) {
    const int dh = q->value.cols();
    GEOSSL_CHECK(k->value.cols() == dh && v->value.cols() == dh,
                 "attention_blocks: head dim mismatch");
    GEOSSL_CHECK(q->value.rows() % n_blocks == 0 && k->value.rows() % n_blocks == 0,
                 "attention_blocks: rows not divisible by block count");
    GEOSSL_CHECK(k->value.rows() == v->value.rows(), "attention_blocks: K/V row mismatch");
    const int lq = q->value.rows() / n_blocks;
    const int lk = k->value.rows() / n_blocks;
    if (bias)
        GEOSSL_CHECK(bias->value.rows() == lq && bias->value.cols() == lk,
                     "attention_blocks: bias must be (Lq x Lk)");
    if (mask)
        GEOSSL_CHECK(mask->rows() == n_blocks * lq && mask->cols() == lk,
                     "attention_blocks: mask must be (B*Lq x Lk)");

    const double s = scale_c * (scale_var ? scale_var->value[0] : 1.0);

    Tensor probs(n_blocks * lq, lk);
    Tensor out(n_blocks * lq, dh);
    for (int b = 0; b < n_blocks; ++b) {
        for (int i = 0; i < lq; ++i) {
            const int qi = b * lq + i;
            double m = -1e300;
            for (int j = 0; j < lk; ++j) {
                const int kj = b * lk + j;
                double logit = 0.0;
                for (int c = 0; c < dh; ++c) logit += q->value.at(qi, c) * k->value.at(kj, c);
                logit *= s;
                if (bias) logit += bias->value.at(i, j);
                if (mask) logit += mask->at(qi, j);
                probs.at(qi, j) = logit;
                m = std::max(m, logit);
            }
            double z = 0.0;
            for (int j = 0; j < lk; ++j) {
                const double e = std::exp(probs.at(qi, j) - m);
                probs.at(qi, j) = e;
                z += e;
            }
            for (int j = 0; j < lk; ++j) probs.at(qi, j) /= z;
            for (int c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (int j = 0; j < lk; ++j) acc += probs.at(qi, j) * v->value.at(b * lk + j, c);
                out.at(qi, c) = acc;
            }
        }
    }
    if (attn_out) *attn_out = probs;

    std::vector<Var> parents{q, k, v};
    const int bias_idx = bias ? static_cast<int>(parents.size()) : -1;
    if (bias) parents.push_back(bias);
    const int sv_idx = scale_var ? static_cast<int>(parents.size()) : -1;
    if (scale_var) parents.push_back(scale_var);

    return make_var(std::move(out), std::move(parents),
                    [probs = std::move(probs), n_blocks, lq, lk, dh, s, scale_c, bias_idx,
                     sv_idx](Node& self) {
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        Tensor dq(n_blocks * lq, dh), dk(n_blocks * lk, dh), dv(n_blocks * lk, dh);
        Tensor dbias;
        if (bias_idx >= 0) dbias = Tensor(lq, lk);
        double ds = 0.0;
        const bool need_s = sv_idx >= 0 && self.parents[sv_idx]->requires_grad;

        std::vector<double> dl(static_cast<size_t>(lk));
        for (int b = 0; b < n_blocks; ++b) {
            for (int i = 0; i < lq; ++i) {
                const int qi = b * lq + i;
                // dA = dO V^T ; dLogit = A o (dA - sum(dA o A))
                double dot = 0.0;
                for (int j = 0; j < lk; ++j) {
                    const int kj = b * lk + j;
                    double da = 0.0;
                    for (int c = 0; c < dh; ++c) da += self.grad.at(qi, c) * vn.value.at(kj, c);
                    dl[static_cast<size_t>(j)] = da;
                    dot += da * probs.at(qi, j);
                }
                for (int j = 0; j < lk; ++j) {
                    const int kj = b * lk + j;
                    const double a = probs.at(qi, j);
                    const double dlogit = a * (dl[static_cast<size_t>(j)] - dot);
                    dl[static_cast<size_t>(j)] = dlogit;
                    if (bias_idx >= 0) dbias.at(i, j) += dlogit;
                    for (int c = 0; c < dh; ++c) {
                        dv.at(kj, c) += a * self.grad.at(qi, c);
                        dq.at(qi, c) += dlogit * s * kn.value.at(kj, c);
                        dk.at(kj, c) += dlogit * s * qn.value.at(qi, c);
                    }
                    if (need_s) {
                        double qk = 0.0;
                        for (int c = 0; c < dh; ++c) qk += qn.value.at(qi, c) * kn.value.at(kj, c);
                        ds += dlogit * scale_c * qk;
                    }
                }
            }
        }
        qn.accumulate(dq);
        kn.accumulate(dk);
        vn.accumulate(dv);
        if (bias_idx >= 0) self.parents[bias_idx]->accumulate(dbias);
        if (need_s) self.parents[sv_idx]->accumulate(Tensor::scalar(ds));
    });
}

Var avgpool_grid(const Var& a, int h, int w, int fh, int fw) {
    GEOSSL_CHECK(a->value.rows() == h * w && h % fh == 0 && w % fw == 0,
                 "avgpool_grid: bad factor");
    const int d = a->value.cols();
    const int oh = h / fh, ow = w / fw;
    Tensor out(oh * ow, d);
    const double inv = 1.0 / (fh * fw);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
            for (int dy = 0; dy < fh; ++dy)
                for (int dx = 0; dx < fw; ++dx) {
                    const int src = (r * fh + dy) * w + (c * fw + dx);
                    for (int ch = 0; ch < d; ++ch)
                        out.at(r * ow + c, ch) += a->value.at(src, ch) * inv;
                }
    return make_var(std::move(out), {a}, [h, w, fh, fw, d](Node& self) {
        const int oh = h / fh, ow = w / fw;
        const double inv = 1.0 / (fh * fw);
        Tensor g(h * w, d);
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c)
                for (int dy = 0; dy < fh; ++dy)
                    for (int dx = 0; dx < fw; ++dx) {
                        const int src = (r * fh + dy) * w + (c * fw + dx);
                        for (int ch = 0; ch < d; ++ch)
                            g.at(src, ch) += self.grad.at(r * ow + c, ch) * inv;
                    }
        self.parents[0]->accumulate(g);
    });
}

Var mean_rows(const Var& a) { return scale(col_sum(a), 1.0 / a->value.rows()); }

}  // namespace geossl::nn
