#include "kgfuse/tape.hpp"

#include <cmath>

#include "kgfuse/common.hpp"

namespace kgfuse {

namespace {
constexpr double kMaskScore = -1e30;

double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}
}  // namespace

void Tape::check(Var a) const {
    if (!a.valid() || static_cast<size_t>(a.id) >= nodes_.size())
        throw Error("tape: invalid variable handle");
}

Tape::Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = requires_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_back(int id, std::function<void(Tape&)> back) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.requires_grad) n.back = std::move(back);
}

Tape::Var Tape::leaf(Mat value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

const Mat& Tape::val(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)].requires_grad;
}

Mat& Tape::grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

const Mat& Tape::grad(Var v) {
    check(v);
    return grad_ref(v.id);
}

void Tape::accum(int id, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
        throw Error("tape: gradient shape mismatch");
    grad_ref(id) += g;
}

void Tape::backward(Var loss) {
    check(loss);
    const Mat& lv = val(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw Error("tape: backward target must be 1x1");
    grad_ref(loss.id)(0, 0) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.requires_grad && n.back && n.grad.size() != 0) n.back(*this);
    }
}

// ---------------------------------------------------------------------------

Tape::Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw Error("add: shape mismatch");
    Mat out = val(a) + val(b);
    const int ia = a.id, ib = b.id;
    Var o = push(std::move(out), rg(a) || rg(b), nullptr);
    const int io = o.id;
    set_back(io, [ia, ib, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, g);
        t.accum(ib, g);
    });
    return o;
}

Tape::Var Tape::sub(Var a, Var b) {
    check(a);
    check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw Error("sub: shape mismatch");
    Mat out = val(a) - val(b);
    const int ia = a.id, ib = b.id;
    Var o = push(std::move(out), rg(a) || rg(b), nullptr);
    const int io = o.id;
    set_back(io, [ia, ib, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, g);
        t.accum(ib, -g);
    });
    return o;
}

Tape::Var Tape::mul_elem(Var a, Var b) {
    check(a);
    check(b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw Error("mul_elem: shape mismatch");
    Mat out = val(a).cwiseProduct(val(b));
    const int ia = a.id, ib = b.id;
    Var o = push(std::move(out), rg(a) || rg(b), nullptr);
    const int io = o.id;
    set_back(io, [ia, ib, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, g.cwiseProduct(t.v(ib)));
        t.accum(ib, g.cwiseProduct(t.v(ia)));
    });
    return o;
}

Tape::Var Tape::scale(Var a, double c) {
    check(a);
    Mat out = val(a) * c;
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io, c](Tape& t) {
        t.accum(ia, Mat(t.grad_ref(io) * c));
    });
    return o;
}

Tape::Var Tape::add_const(Var a, double c) {
    check(a);
    Mat out = (val(a).array() + c).matrix();
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) { t.accum(ia, t.grad_ref(io)); });
    return o;
}

Tape::Var Tape::add_rowvec(Var a, Var row) {
    check(a);
    check(row);
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
        throw Error("add_rowvec: row must be 1 x cols(a)");
    Mat out = val(a).rowwise() + val(row).row(0);
    const int ia = a.id, ir = row.id;
    Var o = push(std::move(out), rg(a) || rg(row), nullptr);
    const int io = o.id;
    set_back(io, [ia, ir, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, g);
        t.accum(ir, Mat(g.colwise().sum()));
    });
    return o;
}

Tape::Var Tape::relu(Var a) {
    check(a);
    Mat out = val(a).cwiseMax(0.0);
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& x = t.v(ia);
        const Mat& g = t.grad_ref(io);
        Mat dx = ((x.array() > 0.0).cast<double>() * g.array()).matrix();
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::gelu(Var a) {
    check(a);
    Mat out = val(a).unaryExpr([](double x) { return gelu_val(x); });
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& x = t.v(ia);
        const Mat& g = t.grad_ref(io);
        Mat dx = x.unaryExpr([](double v) { return gelu_grad(v); }).cwiseProduct(g);
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::matmul(Var a, Var b) {
    check(a);
    check(b);
    if (val(a).cols() != val(b).rows()) throw Error("matmul: inner dimension mismatch");
    Mat out = val(a) * val(b);
    const int ia = a.id, ib = b.id;
    Var o = push(std::move(out), rg(a) || rg(b), nullptr);
    const int io = o.id;
    set_back(io, [ia, ib, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, Mat(g * t.v(ib).transpose()));
        t.accum(ib, Mat(t.v(ia).transpose() * g));
    });
    return o;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
    check(a);
    check(b);
    if (val(a).cols() != val(b).cols()) throw Error("matmul_nt: inner dimension mismatch");
    Mat out = val(a) * val(b).transpose();
    const int ia = a.id, ib = b.id;
    Var o = push(std::move(out), rg(a) || rg(b), nullptr);
    const int io = o.id;
    set_back(io, [ia, ib, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, Mat(g * t.v(ib)));
        t.accum(ib, Mat(g.transpose() * t.v(ia)));
    });
    return o;
}

Tape::Var Tape::rowsum(Var a) {
    check(a);
    Mat out = val(a).rowwise().sum();
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, Mat(g * Mat::Ones(1, t.v(ia).cols())));
    });
    return o;
}

Tape::Var Tape::colsum(Var a) {
    check(a);
    Mat out = val(a).colwise().sum();
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ia, Mat(Mat::Ones(t.v(ia).rows(), 1) * g));
    });
    return o;
}

Tape::Var Tape::sum_all(Var a) {
    check(a);
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const double g = t.grad_ref(io)(0, 0);
        t.accum(ia, Mat(Mat::Constant(t.v(ia).rows(), t.v(ia).cols(), g)));
    });
    return o;
}

Tape::Var Tape::mean_all(Var a) {
    check(a);
    const double inv = 1.0 / static_cast<double>(val(a).size());
    return scale(sum_all(a), inv);
}

Tape::Var Tape::layer_norm(Var a, Var gamma, Var beta, double eps) {
    check(a);
    check(gamma);
    check(beta);
    const Mat& x = val(a);
    const int C = static_cast<int>(x.cols());
    if (val(gamma).rows() != 1 || val(gamma).cols() != C || val(beta).rows() != 1 ||
        val(beta).cols() != C)
        throw Error("layer_norm: gamma/beta must be 1 x cols");
    Mat xhat(x.rows(), C);
    Mat inv_std(x.rows(), 1);
    for (int r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(r, 0) = is;
        xhat.row(r) = (x.row(r).array() - mu) * is;
    }
    Mat out = ((xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
               val(beta).row(0).array())
                  .matrix();
    const int ia = a.id, ig = gamma.id, ibt = beta.id;
    Var o = push(std::move(out), rg(a) || rg(gamma) || rg(beta), nullptr);
    const int io = o.id;
    // xhat and inv_std are captured by value for the backward pass.
    set_back(io, [ia, ig, ibt, io, xhat, inv_std](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(ig, Mat(g.cwiseProduct(xhat).colwise().sum()));
        t.accum(ibt, Mat(g.colwise().sum()));
        const Mat& gam = t.v(ig);
        Mat dxhat = (g.array().rowwise() * gam.row(0).array()).matrix();
        Mat dx(g.rows(), g.cols());
        const double invC = 1.0 / static_cast<double>(g.cols());
        for (int r = 0; r < g.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r) =
                (inv_std(r, 0) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2))
                    .matrix();
        }
        (void)invC;
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::softmax_rows(Var a) {
    check(a);
    const Mat& x = val(a);
    Mat out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
        out.row(r) = (e / e.sum()).matrix().transpose();
    }
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& p = t.v(io);
        const Mat& g = t.grad_ref(io);
        Mat dx(p.rows(), p.cols());
        for (int r = 0; r < p.rows(); ++r) {
            const double dot = g.row(r).cwiseProduct(p.row(r)).sum();
            dx.row(r) = (p.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::log_softmax_rows(Var a) {
    check(a);
    const Mat& x = val(a);
    Mat out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
        out.row(r) = (x.row(r).array() - lse).matrix();
    }
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io](Tape& t) {
        const Mat& y = t.v(io);
        const Mat& g = t.grad_ref(io);
        Mat dx(y.rows(), y.cols());
        for (int r = 0; r < y.rows(); ++r) {
            const double gsum = g.row(r).sum();
            dx.row(r) = (g.row(r).array() - y.row(r).array().exp() * gsum).matrix();
        }
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::gather_rows(Var a, std::vector<int> rows) {
    check(a);
    const Mat& x = val(a);
    Mat out(static_cast<int>(rows.size()), x.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= x.rows()) throw Error("gather_rows: index out of range");
        out.row(static_cast<int>(i)) = x.row(rows[i]);
    }
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io, rows](Tape& t) {
        const Mat& g = t.grad_ref(io);
        Mat dx = Mat::Zero(t.v(ia).rows(), t.v(ia).cols());
        for (size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<int>(i));
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::gather_elems(Var a, std::vector<std::pair<int, int>> cells) {
    check(a);
    const Mat& x = val(a);
    Mat out(static_cast<int>(cells.size()), 1);
    for (size_t i = 0; i < cells.size(); ++i) {
        const auto [r, c] = cells[i];
        if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols())
            throw Error("gather_elems: index out of range");
        out(static_cast<int>(i), 0) = x(r, c);
    }
    const int ia = a.id;
    Var o = push(std::move(out), rg(a), nullptr);
    const int io = o.id;
    set_back(io, [ia, io, cells](Tape& t) {
        const Mat& g = t.grad_ref(io);
        Mat dx = Mat::Zero(t.v(ia).rows(), t.v(ia).cols());
        for (size_t i = 0; i < cells.size(); ++i)
            dx(cells[i].first, cells[i].second) += g(static_cast<int>(i), 0);
        t.accum(ia, dx);
    });
    return o;
}

Tape::Var Tape::self_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo,
                               Var bo, int n_heads, int block_len,
                               const std::vector<uint8_t>& key_mask) {
    check(x);
    const Mat& xv = val(x);
    const int rows = static_cast<int>(xv.rows());
    const int H = static_cast<int>(xv.cols());
    if (n_heads <= 0 || H % n_heads != 0) throw Error("self_attention: heads must divide width");
    if (block_len <= 0 || rows % block_len != 0)
        throw Error("self_attention: rows must be a multiple of block_len");
    if (!key_mask.empty() && static_cast<int>(key_mask.size()) != rows)
        throw Error("self_attention: key_mask size mismatch");
    const int d = H / n_heads;
    const int n_blocks = rows / block_len;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));

    Mat Q = (xv * val(wq)).rowwise() + val(bq).row(0);
    Mat K = (xv * val(wk)).rowwise() + val(bk).row(0);
    Mat V = (xv * val(wv)).rowwise() + val(bv).row(0);

    // One probability matrix per (block, head), kept for the backward pass.
    std::vector<Mat> probs;
    probs.reserve(static_cast<size_t>(n_blocks * n_heads));
    Mat ctx(rows, H);
    for (int b = 0; b < n_blocks; ++b) {
        const int r0 = b * block_len;
        for (int h = 0; h < n_heads; ++h) {
            const int c0 = h * d;
            Mat S = att_scale * (Q.block(r0, c0, block_len, d) *
                                 K.block(r0, c0, block_len, d).transpose());
            if (!key_mask.empty()) {
                for (int j = 0; j < block_len; ++j)
                    if (key_mask[static_cast<size_t>(r0 + j)]) S.col(j).setConstant(kMaskScore);
            }
            Mat P(block_len, block_len);
            for (int r = 0; r < block_len; ++r) {
                const double mx = S.row(r).maxCoeff();
                Eigen::ArrayXd e = (S.row(r).array() - mx).exp();
                P.row(r) = (e / e.sum()).matrix().transpose();
            }
            ctx.block(r0, c0, block_len, d) = P * V.block(r0, c0, block_len, d);
            probs.push_back(std::move(P));
        }
    }
    Mat out = (ctx * val(wo)).rowwise() + val(bo).row(0);

    const bool needs = rg(x) || rg(wq) || rg(bq) || rg(wk) || rg(bk) || rg(wv) || rg(bv) ||
                       rg(wo) || rg(bo);
    const int ix = x.id, iwq = wq.id, ibq = bq.id, iwk = wk.id, ibk = bk.id, iwv = wv.id,
              ibv = bv.id, iwo = wo.id, ibo = bo.id;
    Var o = push(std::move(out), needs, nullptr);
    const int io = o.id;
    if (!needs) return o;

    set_back(io, [=, probs = std::move(probs), Q = std::move(Q),
                                            K = std::move(K), V = std::move(V),
                                            ctx = std::move(ctx)](Tape& t) {
        const Mat& g = t.grad_ref(io);
        t.accum(iwo, Mat(ctx.transpose() * g));
        t.accum(ibo, Mat(g.colwise().sum()));
        Mat dctx = g * t.v(iwo).transpose();

        Mat dQ = Mat::Zero(Q.rows(), Q.cols());
        Mat dK = Mat::Zero(K.rows(), K.cols());
        Mat dV = Mat::Zero(V.rows(), V.cols());
        for (int b = 0; b < n_blocks; ++b) {
            const int r0 = b * block_len;
            for (int h = 0; h < n_heads; ++h) {
                const int c0 = h * d;
                const Mat& P = probs[static_cast<size_t>(b * n_heads + h)];
                Mat dctx_h = dctx.block(r0, c0, block_len, d);
                Mat dP = dctx_h * V.block(r0, c0, block_len, d).transpose();
                dV.block(r0, c0, block_len, d) += P.transpose() * dctx_h;
                Mat dS(block_len, block_len);
                for (int r = 0; r < block_len; ++r) {
                    const double dot = dP.row(r).cwiseProduct(P.row(r)).sum();
                    dS.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
                }
                dS *= att_scale;
                dQ.block(r0, c0, block_len, d) += dS * K.block(r0, c0, block_len, d);
                dK.block(r0, c0, block_len, d) +=
                    dS.transpose() * Q.block(r0, c0, block_len, d);
            }
        }
        const Mat& xin = t.v(ix);
        t.accum(iwq, Mat(xin.transpose() * dQ));
        t.accum(ibq, Mat(dQ.colwise().sum()));
        t.accum(iwk, Mat(xin.transpose() * dK));
        t.accum(ibk, Mat(dK.colwise().sum()));
        t.accum(iwv, Mat(xin.transpose() * dV));
        t.accum(ibv, Mat(dV.colwise().sum()));
        Mat dx = dQ * t.v(iwq).transpose() + dK * t.v(iwk).transpose() +
                 dV * t.v(iwv).transpose();
        t.accum(ix, dx);
    });
    return o;
}

Tape::Var Tape::expert_scores(Var q, const std::vector<Var>& ks, double sc) {
    check(q);
    if (ks.empty()) throw Error("expert_scores: need at least one stream");
    const Mat& qv = val(q);
    bool needs = rg(q);
    for (Var k : ks) {
        check(k);
        if (val(k).rows() != qv.rows() || val(k).cols() != qv.cols())
            throw Error("expert_scores: stream shape mismatch");
        needs = needs || rg(k);
    }
    const int T = static_cast<int>(qv.rows());
    const int Kn = static_cast<int>(ks.size());
    Mat out(T, Kn);
    for (int k = 0; k < Kn; ++k)
        out.col(k) = sc * qv.cwiseProduct(val(ks[static_cast<size_t>(k)])).rowwise().sum();
    std::vector<int> kids(ks.size());
    for (size_t i = 0; i < ks.size(); ++i) kids[i] = ks[i].id;
    const int iq = q.id;
    Var o = push(std::move(out), needs, nullptr);
    const int io = o.id;
    if (!needs) return o;
    set_back(io, [iq, io, kids, sc](Tape& t) {
        const Mat& g = t.grad_ref(io);
        const Mat& qv2 = t.v(iq);
        Mat dq = Mat::Zero(qv2.rows(), qv2.cols());
        for (size_t k = 0; k < kids.size(); ++k) {
            const Mat& kv = t.v(kids[k]);
            Mat col = g.col(static_cast<int>(k));
            dq += sc * kv.cwiseProduct(Mat(col * Mat::Ones(1, kv.cols())));
            t.accum(kids[k],
                    Mat(sc * qv2.cwiseProduct(Mat(col * Mat::Ones(1, qv2.cols())))));
        }
        t.accum(iq, dq);
    });
    return o;
}

Tape::Var Tape::mix_values(Var p, const std::vector<Var>& vs) {
    check(p);
    if (vs.empty()) throw Error("mix_values: need at least one stream");
    const Mat& pv = val(p);
    if (pv.cols() != static_cast<int>(vs.size()))
        throw Error("mix_values: probability columns must match stream count");
    bool needs = rg(p);
    const int T = static_cast<int>(pv.rows());
    for (Var v : vs) {
        check(v);
        if (val(v).rows() != T) throw Error("mix_values: stream row mismatch");
        needs = needs || rg(v);
    }
    const int H = static_cast<int>(val(vs[0]).cols());
    Mat out = Mat::Zero(T, H);
    for (size_t k = 0; k < vs.size(); ++k)
        out += val(vs[k]).cwiseProduct(
            Mat(pv.col(static_cast<int>(k)) * Mat::Ones(1, H)));
    std::vector<int> vids(vs.size());
    for (size_t i = 0; i < vs.size(); ++i) vids[i] = vs[i].id;
    const int ip = p.id;
    Var o = push(std::move(out), needs, nullptr);
    const int io = o.id;
    if (!needs) return o;
    set_back(io, [ip, io, vids](Tape& t) {
        const Mat& g = t.grad_ref(io);
        const Mat& pv2 = t.v(ip);
        Mat dp(pv2.rows(), pv2.cols());
        for (size_t k = 0; k < vids.size(); ++k) {
            const Mat& vv = t.v(vids[k]);
            dp.col(static_cast<int>(k)) = g.cwiseProduct(vv).rowwise().sum();
            t.accum(vids[k], Mat(g.cwiseProduct(Mat(pv2.col(static_cast<int>(k)) *
                                                    Mat::Ones(1, g.cols())))));
        }
        t.accum(ip, dp);
    });
    return o;
}

}  // namespace kgfuse
