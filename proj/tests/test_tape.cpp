#include <doctest.h>

#include <cmath>
#include <functional>

#include "kgfuse/rng.hpp"
#include "kgfuse/tape.hpp"

using namespace kgfuse;

namespace {

using Builder = std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>;

Mat random_mat(int r, int c, SeededRng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

double eval_loss(const std::vector<Mat>& inputs, const Builder& build, const Mat& weights) {
    Tape t;
    std::vector<Tape::Var> vars;
    for (const auto& m : inputs) vars.push_back(t.leaf(m, false));
    Tape::Var out = build(t, vars);
    Tape::Var loss = t.sum_all(t.mul_elem(out, t.leaf(weights, false)));
    return t.val(loss)(0, 0);
}

// Checks d(loss)/d(input) against central differences for every input, where
// loss is a fixed random linear functional of the op output (so the whole
// Jacobian is exercised, not just row sums).
void check_gradients(const std::vector<Mat>& inputs, const Builder& build, double tol = 1e-6,
                     double h = 1e-5) {
    SeededRng wrng(1234);
    Mat weights;
    {
        Tape t;
        std::vector<Tape::Var> vars;
        for (const auto& m : inputs) vars.push_back(t.leaf(m, false));
        Tape::Var out = build(t, vars);
        weights = random_mat(static_cast<int>(t.val(out).rows()),
                             static_cast<int>(t.val(out).cols()), wrng);
    }

    Tape t;
    std::vector<Tape::Var> vars;
    for (const auto& m : inputs) vars.push_back(t.leaf(m, true));
    Tape::Var out = build(t, vars);
    Tape::Var loss = t.sum_all(t.mul_elem(out, t.leaf(weights, false)));
    t.backward(loss);

    for (size_t i = 0; i < inputs.size(); ++i) {
        const Mat& analytic = t.grad(vars[i]);
        for (int r = 0; r < inputs[i].rows(); ++r) {
            for (int c = 0; c < inputs[i].cols(); ++c) {
                std::vector<Mat> plus = inputs, minus = inputs;
                plus[i](r, c) += h;
                minus[i](r, c) -= h;
                const double numeric =
                    (eval_loss(plus, build, weights) - eval_loss(minus, build, weights)) /
                    (2.0 * h);
                const double a = analytic(r, c);
                const double err = std::abs(a - numeric) /
                                   std::max({std::abs(a), std::abs(numeric), 1.0});
                INFO("input ", i, " at (", r, ",", c, "): analytic ", a, " numeric ", numeric);
                CHECK(err < tol);
            }
        }
    }
}

}  // namespace

TEST_SUITE("tape") {
    TEST_CASE("elementwise ops differentiate") {
        SeededRng rng(7);
        Mat a = random_mat(3, 4, rng), b = random_mat(3, 4, rng);
        check_gradients({a, b}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.mul_elem(t.add(v[0], v[1]), t.sub(v[0], t.scale(v[1], 0.5)));
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.gelu(t.add_const(v[0], 0.3));
        });
        // Keep ReLU inputs away from the kink.
        Mat c = random_mat(3, 4, rng);
        for (int r = 0; r < c.rows(); ++r)
            for (int j = 0; j < c.cols(); ++j)
                if (std::abs(c(r, j)) < 0.05) c(r, j) = 0.2;
        check_gradients({c}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.relu(v[0]);
        });
    }

    TEST_CASE("matmul and reductions differentiate") {
        SeededRng rng(8);
        Mat a = random_mat(3, 5, rng), b = random_mat(5, 2, rng), bt = random_mat(2, 5, rng);
        check_gradients({a, b}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.matmul(v[0], v[1]);
        });
        check_gradients({a, bt}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.matmul_nt(v[0], v[1]);
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.rowsum(v[0]);
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.colsum(v[0]);
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.mean_all(v[0]);
        });
        Mat row = random_mat(1, 5, rng);
        check_gradients({a, row}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.add_rowvec(v[0], v[1]);
        });
    }

    TEST_CASE("normalization ops differentiate") {
        SeededRng rng(9);
        Mat a = random_mat(4, 6, rng);
        Mat g = random_mat(1, 6, rng, 0.5);
        Mat b = random_mat(1, 6, rng, 0.5);
        g.array() += 1.2;  // keep gains away from zero
        check_gradients({a, g, b}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.layer_norm(v[0], v[1], v[2]);
        }, 2e-6);
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.softmax_rows(v[0]);
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.log_softmax_rows(v[0]);
        });
    }

    TEST_CASE("gather ops differentiate, repeated indices accumulate") {
        SeededRng rng(10);
        Mat a = random_mat(5, 3, rng);
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.gather_rows(v[0], {4, 0, 0, 2});
        });
        check_gradients({a}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.gather_elems(v[0], {{0, 1}, {4, 2}, {0, 1}});
        });
    }

    TEST_CASE("self-attention differentiates over blocks, heads and padding") {
        SeededRng rng(11);
        const int T = 3, B = 2, H = 4;
        Mat x = random_mat(B * T, H, rng, 0.7);
        Mat wq = random_mat(H, H, rng, 0.4), wk = random_mat(H, H, rng, 0.4),
            wv = random_mat(H, H, rng, 0.4), wo = random_mat(H, H, rng, 0.4);
        Mat bq = random_mat(1, H, rng, 0.1), bk = random_mat(1, H, rng, 0.1),
            bv = random_mat(1, H, rng, 0.1), bo = random_mat(1, H, rng, 0.1);
        std::vector<uint8_t> mask(static_cast<size_t>(B * T), 0);
        mask[2] = 1;  // pad the last key of the first block
        check_gradients(
            {x, wq, bq, wk, bk, wv, bv, wo, bo},
            [&](Tape& t, const std::vector<Tape::Var>& v) {
                return t.self_attention(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
                                        /*n_heads=*/2, /*block_len=*/T, mask);
            },
            5e-6);
    }

    TEST_CASE("fusion score and mix ops differentiate") {
        SeededRng rng(12);
        const int T = 4, H = 5;
        Mat q = random_mat(T, H, rng), k1 = random_mat(T, H, rng), k2 = random_mat(T, H, rng);
        Mat p(T, 2);
        for (int r = 0; r < T; ++r) {
            const double a = 0.2 + 0.6 * rng.uniform_real();
            p(r, 0) = a;
            p(r, 1) = 1.0 - a;
        }
        check_gradients({q, k1, k2}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.expert_scores(v[0], {v[1], v[2]}, 0.37);
        });
        check_gradients({p, k1, k2}, [](Tape& t, const std::vector<Tape::Var>& v) {
            return t.mix_values(v[0], {v[1], v[2]});
        });
        // Softmax over scores composed with the mix, the full fusion step.
        check_gradients({q, k1, k2}, [](Tape& t, const std::vector<Tape::Var>& v) {
            Tape::Var s = t.expert_scores(v[0], {v[1], v[2]}, 0.5);
            return t.mix_values(t.softmax_rows(s), {v[1], v[2]});
        });
    }

    TEST_CASE("softmax rows sum to one") {
        SeededRng rng(13);
        Tape t;
        Tape::Var s = t.softmax_rows(t.leaf(random_mat(6, 9, rng, 3.0), false));
        for (int r = 0; r < 6; ++r) CHECK(t.val(s).row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }

    TEST_CASE("backward requires a scalar") {
        Tape t;
        Tape::Var a = t.leaf(Mat::Ones(2, 2), true);
        CHECK_THROWS(t.backward(a));
    }

    TEST_CASE("no-grad leaves stay grad-free through ops") {
        Tape t;
        Tape::Var a = t.leaf(Mat::Ones(2, 2), false);
        Tape::Var b = t.scale(a, 2.0);
        CHECK_FALSE(t.requires_grad(b));
    }
}
