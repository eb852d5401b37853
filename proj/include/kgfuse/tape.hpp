#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "kgfuse/matrix.hpp"

namespace kgfuse {

// Reverse-mode autodiff over matrices. Each training step builds a fresh tape,
// runs the forward computation eagerly, then walks the recorded ops backwards.
// Ops only record a backward closure when some input requires a gradient, so
// evaluation-mode forwards pay no autodiff overhead.
class Tape {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(Mat value, bool requires_grad = false);

    const Mat& val(Var v) const;
    // Gradient of the last backward() target w.r.t. v. Zero-filled for
    // grad-requiring nodes the loss does not depend on.
    const Mat& grad(Var v);
    bool requires_grad(Var v) const;

    // loss must be 1x1.
    void backward(Var loss);

    // --- elementwise / shape ops ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul_elem(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var add_rowvec(Var a, Var row);  // row is 1 x C, broadcast over rows of a
    Var relu(Var a);
    Var gelu(Var a);

    // --- linear algebra ---
    Var matmul(Var a, Var b);     // A @ B
    Var matmul_nt(Var a, Var b);  // A @ B^T

    // --- reductions ---
    Var rowsum(Var a);   // R x 1
    Var colsum(Var a);   // 1 x C
    Var sum_all(Var a);  // 1 x 1
    Var mean_all(Var a);

    // --- normalization ---
    Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
    Var softmax_rows(Var a);
    Var log_softmax_rows(Var a);

    // --- indexing ---
    Var gather_rows(Var a, std::vector<int> rows);
    Var gather_elems(Var a, std::vector<std::pair<int, int>> cells);  // n x 1

    // Multi-head scaled dot-product self-attention over `rows/block_len`
    // independent blocks (used to batch the masked variants of one sequence).
    // key_mask marks padding rows; masked keys receive -inf scores.
    Var self_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo,
                       int n_heads, int block_len, const std::vector<uint8_t>& key_mask = {});

    // Per-position attention scores over K parallel streams:
    // out(t, k) = scale * dot(q.row(t), ks[k].row(t)).
    Var expert_scores(Var q, const std::vector<Var>& ks, double scale);

    // z.row(t) = sum_k p(t, k) * vs[k].row(t), the value mix of the fusion layer.
    Var mix_values(Var p, const std::vector<Var>& vs);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;  // lazily allocated
        bool requires_grad = false;
        std::function<void(Tape&)> back;
    };

    Var push(Mat value, bool requires_grad, std::function<void(Tape&)> back);
    // Installs the backward closure only when the node needs gradients.
    void set_back(int id, std::function<void(Tape&)> back);
    Mat& grad_ref(int id);
    void accum(int id, const Mat& g);
    const Mat& v(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool rg(Var a) const { return nodes_[static_cast<size_t>(a.id)].requires_grad; }
    void check(Var a) const;

    std::vector<Node> nodes_;
};

}  // namespace kgfuse
