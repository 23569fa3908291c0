#include "mmsurv/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsurv/errors.hpp"

namespace mmsurv {

namespace {

thread_local bool g_grad_enabled = true;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(size_t r, size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
    }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void TensorNode::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(size_t rows, size_t cols) {
    return from_data(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::full(size_t rows, size_t cols, double value) {
    return from_data(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::from_data(size_t rows, size_t cols, std::vector<double> data) {
    if (data.size() != rows * cols) {
        throw ShapeError("from_data: buffer length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(rows, cols));
    }
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->value = std::move(data);
    return t;
}

Tensor Tensor::parameter(size_t rows, size_t cols, std::vector<double> data) {
    Tensor t = from_data(rows, cols, std::move(data));
    t.node_->requires_grad = true;
    return t;
}

size_t Tensor::rows() const { return node_ ? node_->rows : 0; }
size_t Tensor::cols() const { return node_ ? node_->cols : 0; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::at(size_t r, size_t c) const {
    check_defined(*this, "at");
    if (r >= rows() || c >= cols()) throw ShapeError("at: index out of range");
    return node_->value[r * cols() + c];
}

double Tensor::scalar() const {
    check_defined(*this, "scalar");
    if (rows() != 1 || cols() != 1) {
        throw ContractError("scalar: tensor is " + shape_str(rows(), cols()) + ", expected 1x1");
    }
    return node_->value[0];
}

const std::vector<double>& Tensor::value() const {
    check_defined(*this, "value");
    return node_->value;
}

std::vector<double>& Tensor::mutable_value() {
    check_defined(*this, "mutable_value");
    if (!node_->is_leaf()) throw ContractError("mutable_value: only leaves may be mutated");
    return node_->value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

const std::vector<double>& Tensor::grad() const {
    check_defined(*this, "grad");
    if (!has_grad()) throw ContractError("grad: no gradient buffer; run backward first");
    return node_->grad;
}

void Tensor::zero_grad() {
    check_defined(*this, "zero_grad");
    node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
    check_defined(*this, "detach");
    return from_data(rows(), cols(), node_->value);
}

Tensor make_op(size_t rows, size_t cols, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop) {
    Tensor t = Tensor::from_data(rows, cols, std::move(value));
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        t.node_->requires_grad = true;
        auto& ps = t.node_->parents;
        ps.reserve(parents.size());
        for (auto& p : parents) ps.push_back(p.node_);
        t.node_->backprop = std::move(backprop);
    }
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.rows(), a.cols()) +
                         " x " + shape_str(b.rows(), b.cols()));
    }
    const size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m);
    {
        CMap A(a.value().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
        CMap B(b.value().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
        MMap C(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        C.noalias() = A * B;
    }
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_op(n, m, std::move(out), {a, b}, [an, bn, n, k, m](TensorNode& self) {
        CMap dC(self.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        if (an->requires_grad) {
            an->ensure_grad();
            MMap dA(an->grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
            CMap B(bn->value.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
            dA.noalias() += dC * B.transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            MMap dB(bn->grad.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
            CMap A(an->value.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
            dB.noalias() += A.transpose() * dC;
        }
    });
}

Tensor transpose(const Tensor& x) {
    check_defined(x, "transpose");
    const size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    const auto& v = x.value();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j * n + i] = v[i * m + j];
    TensorNode* xn = x.node();
    return make_op(m, n, std::move(out), {x}, [xn, n, m](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) xn->grad[i * m + j] += self.grad[j * n + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_defined(a, "sub");
    check_defined(b, "sub");
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& x, double s) {
    check_defined(x, "scale");
    std::vector<double> out(x.size());
    const auto& v = x.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = v[i] * s;
    TensorNode* xn = x.node();
    return make_op(x.rows(), x.cols(), std::move(out), {x}, [xn, s](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * s;
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& r) {
    check_defined(x, "add_rowvec");
    check_defined(r, "add_rowvec");
    if (r.rows() != 1 || r.cols() != x.cols()) {
        throw ShapeError("add_rowvec: vector is " + shape_str(r.rows(), r.cols()) +
                         ", expected 1x" + std::to_string(x.cols()));
    }
    const size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    const auto& xv = x.value();
    const auto& rv = r.value();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] = xv[i * m + j] + rv[j];
    TensorNode* xn = x.node();
    TensorNode* rn = r.node();
    return make_op(n, m, std::move(out), {x, r}, [xn, rn, n, m](TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < n * m; ++i) xn->grad[i] += self.grad[i];
        }
        if (rn->requires_grad) {
            rn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) rn->grad[j] += self.grad[i * m + j];
        }
    });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& r) {
    check_defined(x, "mul_rowvec");
    check_defined(r, "mul_rowvec");
    if (r.rows() != 1 || r.cols() != x.cols()) {
        throw ShapeError("mul_rowvec: vector is " + shape_str(r.rows(), r.cols()) +
                         ", expected 1x" + std::to_string(x.cols()));
    }
    const size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    const auto& xv = x.value();
    const auto& rv = r.value();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] = xv[i * m + j] * rv[j];
    TensorNode* xn = x.node();
    TensorNode* rn = r.node();
    return make_op(n, m, std::move(out), {x, r}, [xn, rn, n, m](TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j)
                    xn->grad[i * m + j] += self.grad[i * m + j] * rn->value[j];
        }
        if (rn->requires_grad) {
            rn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j)
                    rn->grad[j] += self.grad[i * m + j] * xn->value[i * m + j];
        }
    });
}

Tensor gather_rows(const Tensor& x, std::vector<size_t> idx) {
    check_defined(x, "gather_rows");
    const size_t m = x.cols();
    for (size_t i : idx) {
        if (i >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    }
    std::vector<double> out(idx.size() * m);
    const auto& v = x.value();
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[i] * m), m,
                    out.begin() + static_cast<std::ptrdiff_t>(i * m));
    TensorNode* xn = x.node();
    const size_t n = idx.size();
    return make_op(n, m, std::move(out), {x},
                   [xn, m, indices = std::move(idx)](TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (size_t i = 0; i < indices.size(); ++i)
                           for (size_t j = 0; j < m; ++j)
                               xn->grad[indices[i] * m + j] += self.grad[i * m + j];
                   });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const size_t m = parts[0].cols();
    size_t n = 0;
    for (const auto& p : parts) {
        check_defined(p, "concat_rows");
        if (p.cols() != m) throw ShapeError("concat_rows: column mismatch");
        n += p.rows();
    }
    std::vector<double> out;
    out.reserve(n * m);
    for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
    std::vector<Tensor> ps(parts.begin(), parts.end());
    std::vector<TensorNode*> nodes;
    std::vector<size_t> row_counts;
    for (const auto& p : ps) {
        nodes.push_back(p.node());
        row_counts.push_back(p.rows());
    }
    return make_op(n, m, std::move(out), std::move(ps),
                   [nodes, row_counts, m](TensorNode& self) {
                       size_t off = 0;
                       for (size_t k = 0; k < nodes.size(); ++k) {
                           const size_t cnt = row_counts[k] * m;
                           if (nodes[k]->requires_grad) {
                               nodes[k]->ensure_grad();
                               for (size_t i = 0; i < cnt; ++i)
                                   nodes[k]->grad[i] += self.grad[off + i];
                           }
                           off += cnt;
                       }
                   });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const size_t n = parts[0].rows();
    size_t m = 0;
    for (const auto& p : parts) {
        check_defined(p, "concat_cols");
        if (p.rows() != n) throw ShapeError("concat_cols: row mismatch");
        m += p.cols();
    }
    std::vector<double> out(n * m);
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t pc = p.cols();
        const auto& v = p.value();
        for (size_t i = 0; i < n; ++i)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                        out.begin() + static_cast<std::ptrdiff_t>(i * m + off));
        off += pc;
    }
    std::vector<Tensor> ps(parts.begin(), parts.end());
    std::vector<TensorNode*> nodes;
    std::vector<size_t> col_counts;
    for (const auto& p : ps) {
        nodes.push_back(p.node());
        col_counts.push_back(p.cols());
    }
    return make_op(n, m, std::move(out), std::move(ps),
                   [nodes, col_counts, n, m](TensorNode& self) {
                       size_t o = 0;
                       for (size_t k = 0; k < nodes.size(); ++k) {
                           const size_t pc = col_counts[k];
                           if (nodes[k]->requires_grad) {
                               nodes[k]->ensure_grad();
                               for (size_t i = 0; i < n; ++i)
                                   for (size_t j = 0; j < pc; ++j)
                                       nodes[k]->grad[i * pc + j] += self.grad[i * m + o + j];
                           }
                           o += pc;
                       }
                   });
}

Tensor slice_cols(const Tensor& x, size_t start, size_t count) {
    check_defined(x, "slice_cols");
    if (start + count > x.cols()) throw ShapeError("slice_cols: range out of bounds");
    const size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * count);
    const auto& v = x.value();
    for (size_t i = 0; i < n; ++i)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * m + start), count,
                    out.begin() + static_cast<std::ptrdiff_t>(i * count));
    TensorNode* xn = x.node();
    return make_op(n, count, std::move(out), {x}, [xn, start, count, n, m](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < count; ++j)
                xn->grad[i * m + start + j] += self.grad[i * count + j];
    });
}

Tensor softmax_rows(const Tensor& x) {
    check_defined(x, "softmax_rows");
    if (x.cols() < 1) throw ShapeError("softmax_rows: empty rows");
    const size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    const auto& v = x.value();
    for (size_t i = 0; i < n; ++i) {
        double mx = v[i * m];
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, v[i * m + j]);
        double sum = 0.0;
        for (size_t j = 0; j < m; ++j) {
            out[i * m + j] = std::exp(v[i * m + j] - mx);
            sum += out[i * m + j];
        }
        for (size_t j = 0; j < m; ++j) out[i * m + j] /= sum;
    }
    TensorNode* xn = x.node();
    return make_op(n, m, std::move(out), {x}, [xn, n, m](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * self.value[i * m + j];
            for (size_t j = 0; j < m; ++j)
                xn->grad[i * m + j] += self.value[i * m + j] * (self.grad[i * m + j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    const size_t n = x.rows(), m = x.cols();
    if (gain.rows() != 1 || gain.cols() != m || bias.rows() != 1 || bias.cols() != m) {
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(m));
    }
    std::vector<double> out(n * m);
    std::vector<double> xhat(n * m);
    std::vector<double> inv_sigma(n);
    const auto& v = x.value();
    const auto& g = gain.value();
    const auto& b = bias.value();
    for (size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (size_t j = 0; j < m; ++j) mu += v[i * m + j];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (size_t j = 0; j < m; ++j) {
            const double d = v[i * m + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_sigma[i] = is;
        for (size_t j = 0; j < m; ++j) {
            xhat[i * m + j] = (v[i * m + j] - mu) * is;
            out[i * m + j] = xhat[i * m + j] * g[j] + b[j];
        }
    }
    TensorNode* xn = x.node();
    TensorNode* gn = gain.node();
    TensorNode* bn = bias.node();
    return make_op(n, m, std::move(out), {x, gain, bias},
                   [xn, gn, bn, n, m, xh = std::move(xhat),
                    is = std::move(inv_sigma)](TensorNode& self) {
                       for (size_t i = 0; i < n; ++i) {
                           if (gn->requires_grad) {
                               gn->ensure_grad();
                               for (size_t j = 0; j < m; ++j)
                                   gn->grad[j] += self.grad[i * m + j] * xh[i * m + j];
                           }
                           if (bn->requires_grad) {
                               bn->ensure_grad();
                               for (size_t j = 0; j < m; ++j) bn->grad[j] += self.grad[i * m + j];
                           }
                           if (xn->requires_grad) {
                               xn->ensure_grad();
                               double mean_gd = 0.0, mean_gdx = 0.0;
                               for (size_t j = 0; j < m; ++j) {
                                   const double gd = self.grad[i * m + j] * gn->value[j];
                                   mean_gd += gd;
                                   mean_gdx += gd * xh[i * m + j];
                               }
                               mean_gd /= static_cast<double>(m);
                               mean_gdx /= static_cast<double>(m);
                               for (size_t j = 0; j < m; ++j) {
                                   const double gd = self.grad[i * m + j] * gn->value[j];
                                   xn->grad[i * m + j] +=
                                       (gd - mean_gd - xh[i * m + j] * mean_gdx) * is[i];
                               }
                           }
                       }
                   });
}

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    const size_t n = x.size();
    std::vector<double> out(n);
    const auto& v = x.value();
    for (size_t i = 0; i < n; ++i) {
        const double u = kGeluC0 * (v[i] + kGeluC1 * v[i] * v[i] * v[i]);
        out[i] = 0.5 * v[i] * (1.0 + std::tanh(u));
    }
    TensorNode* xn = x.node();
    return make_op(x.rows(), x.cols(), std::move(out), {x}, [xn, n](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            const double xi = xn->value[i];
            const double u = kGeluC0 * (xi + kGeluC1 * xi * xi * xi);
            const double th = std::tanh(u);
            const double sech2 = 1.0 - th * th;
            const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * xi * xi);
            xn->grad[i] += self.grad[i] * (0.5 * (1.0 + th) + 0.5 * xi * sech2 * du);
        }
    });
}

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double s = 0.0;
    for (double v : x.value()) s += v;
    TensorNode* xn = x.node();
    return make_op(1, 1, {s}, {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (double& g : xn->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    check_defined(x, "mean_all");
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x.value()) s += v;
    s *= inv;
    TensorNode* xn = x.node();
    return make_op(1, 1, {s}, {x}, [xn, inv](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (double& g : xn->grad) g += self.grad[0] * inv;
    });
}

Tensor mean_rows(const Tensor& x) {
    check_defined(x, "mean_rows");
    if (x.rows() == 0) throw ShapeError("mean_rows: empty tensor");
    const size_t n = x.rows(), m = x.cols();
    const double inv = 1.0 / static_cast<double>(n);
    std::vector<double> out(m, 0.0);
    const auto& v = x.value();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j] += v[i * m + j];
    for (size_t j = 0; j < m; ++j) out[j] *= inv;
    TensorNode* xn = x.node();
    return make_op(1, m, std::move(out), {x}, [xn, n, m, inv](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) xn->grad[i * m + j] += self.grad[j] * inv;
    });
}

Tensor bce_with_logit(const Tensor& logit, double target01) {
    check_defined(logit, "bce_with_logit");
    if (logit.rows() != 1 || logit.cols() != 1) {
        throw ShapeError("bce_with_logit: logit must be 1x1");
    }
    const double z = logit.value()[0];
    // max(z,0) - t*z + log(1 + exp(-|z|))
    const double loss = std::max(z, 0.0) - target01 * z + std::log1p(std::exp(-std::abs(z)));
    TensorNode* zn = logit.node();
    return make_op(1, 1, {loss}, {logit}, [zn, target01](TensorNode& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const double z = zn->value[0];
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                  : std::exp(z) / (1.0 + std::exp(z));
        zn->grad[0] += self.grad[0] * (sig - target01);
    });
}

Tensor cross_entropy_logits(const Tensor& logits_row, size_t target) {
    check_defined(logits_row, "cross_entropy_logits");
    if (logits_row.rows() != 1) throw ShapeError("cross_entropy_logits: expected a 1xK row");
    const size_t k = logits_row.cols();
    if (target >= k) throw ContractError("cross_entropy_logits: target index out of range");
    const auto& v = logits_row.value();
    double mx = v[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, v[j]);
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) sum += std::exp(v[j] - mx);
    const double lse = mx + std::log(sum);
    const double loss = lse - v[target];
    TensorNode* xn = logits_row.node();
    return make_op(1, 1, {loss}, {logits_row}, [xn, target, k](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        double mx = xn->value[0];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, xn->value[j]);
        double sum = 0.0;
        for (size_t j = 0; j < k; ++j) sum += std::exp(xn->value[j] - mx);
        for (size_t j = 0; j < k; ++j) {
            const double p = std::exp(xn->value[j] - mx) / sum;
            xn->grad[j] += self.grad[0] * (p - (j == target ? 1.0 : 0.0));
        }
    });
}

Tensor cox_neg_log_likelihood(const Tensor& risk_col, const std::vector<double>& time,
                              const std::vector<uint8_t>& event) {
    check_defined(risk_col, "cox_neg_log_likelihood");
    if (risk_col.cols() != 1) throw ShapeError("cox_neg_log_likelihood: risks must be nx1");
    const size_t n = risk_col.rows();
    if (time.size() != n || event.size() != n) {
        throw ShapeError("cox_neg_log_likelihood: outcome length mismatch");
    }
    size_t n_events = 0;
    for (uint8_t e : event) n_events += e ? 1 : 0;
    if (n_events == 0) {
        throw ContractError(
            "cox_neg_log_likelihood: batch has zero events; resample the batch so that "
            "at least one event is present");
    }
    const auto& h = risk_col.value();

    // Process subjects in descending time; the risk set of an event at time t
    // is everyone still in front of the sweep (t_j >= t), ties included
    // (Breslow). Running log-sum-exp is kept with max-shift.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return time[a] > time[b]; });

    double run_max = -std::numeric_limits<double>::infinity();
    double run_sum = 0.0;  // sum of exp(h - run_max) over processed subjects
    auto push = [&](double v) {
        if (v > run_max) {
            run_sum = run_sum * std::exp(run_max - v) + 1.0;
            run_max = v;
        } else {
            run_sum += std::exp(v - run_max);
        }
    };

    // Per-subject denominator log-sum-exp, filled for events only.
    std::vector<double> lse(n, 0.0);
    double loss = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && time[order[j]] == time[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) push(h[order[k]]);
        const double cur_lse = run_max + std::log(run_sum);
        for (size_t k = i; k < j; ++k) {
            const size_t s = order[k];
            if (event[s]) {
                lse[s] = cur_lse;
                loss -= h[s] - cur_lse;
            }
        }
        i = j;
    }
    loss /= static_cast<double>(n_events);

    TensorNode* hn = risk_col.node();
    return make_op(
        1, 1, {loss}, {risk_col},
        [hn, time, event, order, lse, n_events, n](TensorNode& self) {
            if (!hn->requires_grad) return;
            hn->ensure_grad();
            const double up = self.grad[0] / static_cast<double>(n_events);
            // dL/dh_k = -(1/Ne) [ delta_k - exp(h_k) * sum_{events i: t_i <= t_k} 1/denom_i ]
            // Sweep ascending time accumulating sum of 1/denom over events seen.
            std::vector<size_t> asc(order.rbegin(), order.rend());
            double denom_acc = 0.0;  // sum over events i with t_i <= current t of exp(-lse_i)
            size_t i = 0;
            while (i < n) {
                size_t j = i;
                while (j < n && time[asc[j]] == time[asc[i]]) ++j;
                for (size_t k = i; k < j; ++k) {
                    const size_t s = asc[k];
                    if (event[s]) denom_acc += std::exp(-lse[s]);
                }
                for (size_t k = i; k < j; ++k) {
                    const size_t s = asc[k];
                    const double d = (event[s] ? 1.0 : 0.0) - std::exp(hn->value[s]) * denom_acc;
                    hn->grad[s] += -up * d;
                }
                i = j;
            }
        });
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined loss");
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward: loss must be scalar, got " +
                            std::to_string(loss.rows()) + "x" + std::to_string(loss.cols()));
    }
    TensorNode* root = loss.node();
    if (!root->requires_grad) return;  // nothing reachable

    // Iterative post-order DFS for topological order (children after parents
    // in `topo`; we replay it in reverse).
    static int mark_counter = 0;
    const int mark = ++mark_counter;
    std::vector<TensorNode*> topo;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    root->visit_mark = mark;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next].get();
            ++next;
            if (p->visit_mark != mark && p->requires_grad) {
                p->visit_mark = mark;
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh gradient buffers for interior nodes; leaves accumulate.
    for (TensorNode* node : topo) {
        if (!node->is_leaf()) {
            node->grad.assign(node->value.size(), 0.0);
        } else {
            node->ensure_grad();
        }
    }
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

}  // namespace mmsurv
