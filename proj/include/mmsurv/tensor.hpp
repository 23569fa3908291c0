#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmsurv {

// Dense 2D double tensor with tape-based reverse-mode autodiff.
// Scalars are 1x1, row vectors 1xc, column vectors nx1. Ops build a graph of
// shared nodes; backward(loss) fills gradient buffers of reachable leaves.
// Gradients accumulate in leaves across backward calls until zero_grad().

struct TensorNode;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(size_t rows, size_t cols);
    static Tensor full(size_t rows, size_t cols, double value);
    static Tensor from_data(size_t rows, size_t cols, std::vector<double> data);
    // Leaf with requires_grad set; the unit the optimizer updates.
    static Tensor parameter(size_t rows, size_t cols, std::vector<double> data);

    bool defined() const { return node_ != nullptr; }
    size_t rows() const;
    size_t cols() const;
    size_t size() const { return rows() * cols(); }
    bool requires_grad() const;

    double at(size_t r, size_t c) const;
    double scalar() const;  // value of a 1x1 tensor
    const std::vector<double>& value() const;
    std::vector<double>& mutable_value();  // leaves only (optimizer updates)

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    // Value copy detached from the tape.
    Tensor detach() const;

    TensorNode* node() const { return node_.get(); }

private:
    friend Tensor make_op(size_t rows, size_t cols, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backprop);
    std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first backward touches it
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // adds into parents' grads
    int visit_mark = 0;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad();
};

// Disables tape recording in scope (frozen-model inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// --- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& r);  // r: 1 x cols, broadcast over rows
Tensor mul_rowvec(const Tensor& x, const Tensor& r);
Tensor gather_rows(const Tensor& x, std::vector<size_t> idx);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, size_t start, size_t count);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // column means, 1 x cols
Tensor bce_with_logit(const Tensor& logit, double target01);
Tensor cross_entropy_logits(const Tensor& logits_row, size_t target);
// Negative log Cox partial likelihood, Breslow ties, mean over events.
Tensor cox_neg_log_likelihood(const Tensor& risk_col, const std::vector<double>& time,
                              const std::vector<uint8_t>& event);

void backward(const Tensor& loss);

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC0 = 0.7978845608;  // sqrt(2/pi), pinned
constexpr double kGeluC1 = 0.044715;

}  // namespace mmsurv
