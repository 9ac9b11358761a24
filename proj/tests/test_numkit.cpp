#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mvgt/ops.hpp"
#include "mvgt/optim.hpp"
#include "oracles.hpp"

using namespace mvgt;
using namespace mvgt::numkit;

namespace {

Tensor random_leaf(Tape& tape, Shape shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::leaf(std::move(shape), std::move(v), tape);
}

} // namespace

TEST_CASE("matmul values") {
    Tape tape;
    SECTION("identity") {
        Tensor id = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        Tensor m = Tensor::constant({3, 3}, {2, -1, 4, 0, 3, 5, 7, 8, -6});
        Tensor out = matmul(id, m);
        REQUIRE(out.data() == m.data());
    }
    SECTION("hand-checked 2x2") {
        Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
        Tensor b = Tensor::constant({2, 1}, {1, 1});
        Tensor out = matmul(a, b);
        REQUIRE(out.at(0, 0) == 3.0);
        REQUIRE(out.at(1, 0) == 7.0);
    }
    SECTION("shape mismatch names both shapes") {
        Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor b = Tensor::constant({2, 2}, {1, 2, 3, 4});
        REQUIRE_THROWS_MATCHES(
            matmul(a, b), DimensionError,
            Catch::Matchers::MessageMatches(
                Catch::Matchers::ContainsSubstring("[2,3]") &&
                Catch::Matchers::ContainsSubstring("[2,2]")));
    }
}

TEST_CASE("matmul gradient vs finite differences") {
    Tape tape;
    Rng rng(7);
    Tensor a = random_leaf(tape, {3, 4}, rng);
    Tensor b = random_leaf(tape, {4, 2}, rng);
    auto rep = oracles::check_gradients(
        tape, [&] { return sum_all(matmul(a, b)); }, {a, b}, 1e-5);
    REQUIRE(rep.max_rel < 1e-7);
}

TEST_CASE("softmax_lastdim") {
    Tape tape;
    SECTION("uniform logits") {
        Tensor x = Tensor::constant({3}, {0, 0, 0});
        Tensor y = softmax_lastdim(x);
        for (std::size_t i = 0; i < 3; ++i)
            REQUIRE(y.at(i) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    }
    SECTION("large logits do not overflow") {
        Tensor x = Tensor::constant({2}, {1000.0, 0.0});
        Tensor y = softmax_lastdim(x);
        REQUIRE(y.at(0) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(std::isfinite(y.at(1)));
    }
    SECTION("rows sum to one, entries in [0,1]") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> v(12);
            for (auto& x : v) x = rng.uniform(-30, 30);
            Tensor y = softmax_lastdim(Tensor::constant({3, 4}, v));
            for (std::size_t r = 0; r < 3; ++r) {
                double s = 0;
                for (std::size_t j = 0; j < 4; ++j) {
                    REQUIRE(y.at(r, j) >= 0.0);
                    REQUIRE(y.at(r, j) <= 1.0);
                    s += y.at(r, j);
                }
                REQUIRE(std::abs(s - 1.0) < 1e-9);
            }
        }
    }
    SECTION("all -inf row raises") {
        const double ninf = -std::numeric_limits<double>::infinity();
        Tensor x = Tensor::constant({1, 3}, {ninf, ninf, ninf});
        REQUIRE_THROWS_AS(softmax_lastdim(x), NumericError);
    }
    SECTION("Jacobian matches finite differences") {
        Rng rng(11);
        Tape t2;
        Tensor x = random_leaf(t2, {2, 5}, rng, -2, 2);
        // random projection makes the scalar loss exercise the full Jacobian
        std::vector<double> w(10);
        for (auto& v : w) v = rng.uniform(-1, 1);
        Tensor wt = Tensor::constant({2, 5}, w);
        auto rep = oracles::check_gradients(
            t2, [&] { return sum_all(mul(softmax_lastdim(x), wt)); }, {x}, 1e-5);
        REQUIRE(rep.max_rel < 1e-6);
    }
}

TEST_CASE("layer_norm") {
    Tape tape;
    SECTION("constant slice maps to bias") {
        Tensor x = Tensor::constant({1, 3}, {5, 5, 5});
        Tensor gain = Tensor::constant({3}, {2, 2, 2});
        Tensor bias = Tensor::constant({3}, {0.5, -1, 3});
        Tensor y = layer_norm(x, gain, bias, 1e-5);
        REQUIRE(y.at(0, 0) == Catch::Approx(0.5).margin(1e-9));
        REQUIRE(y.at(0, 1) == Catch::Approx(-1).margin(1e-9));
        REQUIRE(y.at(0, 2) == Catch::Approx(3).margin(1e-9));
    }
    SECTION("unit gain normalizes [1,2,3]") {
        Tensor x = Tensor::constant({3}, {1, 2, 3});
        Tensor gain = Tensor::constant({3}, {1, 1, 1});
        Tensor bias = Tensor::constant({3}, {0, 0, 0});
        Tensor y = layer_norm(x, gain, bias, 1e-9);
        REQUIRE(y.at(0) == Catch::Approx(-1.2247).margin(1e-3));
        REQUIRE(y.at(1) == Catch::Approx(0.0).margin(1e-3));
        REQUIRE(y.at(2) == Catch::Approx(1.2247).margin(1e-3));
    }
    SECTION("gradient vs finite differences") {
        Rng rng(5);
        Tape t2;
        Tensor x = random_leaf(t2, {3, 6}, rng, -2, 2);
        Tensor gain = random_leaf(t2, {6}, rng, 0.5, 1.5);
        Tensor bias = random_leaf(t2, {6}, rng);
        std::vector<double> w(18);
        for (auto& v : w) v = rng.uniform(-1, 1);
        Tensor wt = Tensor::constant({3, 6}, w);
        auto rep = oracles::check_gradients(
            t2,
            [&] { return sum_all(mul(layer_norm(x, gain, bias, 1e-5), wt)); },
            {x, gain, bias}, 1e-5);
        REQUIRE(rep.max_rel < 1e-5);
    }
}

TEST_CASE("elementwise suite semantics") {
    Tape tape;
    Rng rng(17);
    SECTION("dropout p=0 is identity in training mode") {
        Tensor x = random_leaf(tape, {4, 4}, rng);
        Tensor y = dropout(x, 0.0, true, rng);
        REQUIRE(y.data() == x.data());
    }
    SECTION("dropout eval mode is identity") {
        Tensor x = random_leaf(tape, {4, 4}, rng);
        Tensor y = dropout(x, 0.5, false, rng);
        REQUIRE(y.data() == x.data());
    }
    SECTION("dropout training scales survivors by 1/(1-p)") {
        Tensor x = Tensor::full({1000}, 1.0);
        Tensor y = dropout(x, 0.25, true, rng);
        std::size_t kept = 0;
        for (double v : y.data()) {
            REQUIRE((v == 0.0 || v == Catch::Approx(1.0 / 0.75)));
            kept += v != 0.0;
        }
        REQUIRE(kept > 600);
        REQUIRE(kept < 900);
    }
    SECTION("dropout rejects p out of range") {
        Tensor x = Tensor::full({4}, 1.0);
        REQUIRE_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
    }
    SECTION("sum over axis of ones yields the length") {
        Tensor x = Tensor::full({6, 3}, 1.0);
        Tensor s = sum_axis(x, 0);
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(s.at(j) == 6.0);
    }
    SECTION("concat_lastdim stitches slices") {
        Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
        Tensor b = Tensor::constant({2, 1}, {9, 8});
        Tensor c = concat_lastdim({a, b});
        REQUIRE(c.shape() == Shape{2, 3});
        REQUIRE(c.data() == std::vector<double>{1, 2, 9, 3, 4, 8});
    }
    SECTION("transpose") {
        Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor t = transpose(a);
        REQUIRE(t.shape() == Shape{3, 2});
        REQUIRE(t.data() == std::vector<double>{1, 4, 2, 5, 3, 6});
    }
    SECTION("shape mismatch raises dimension error") {
        Tensor a = Tensor::full({2, 3}, 1.0);
        Tensor b = Tensor::full({3, 2}, 1.0);
        REQUIRE_THROWS_AS(add(a, b), DimensionError);
        REQUIRE_THROWS_AS(mul(a, b), DimensionError);
    }
}

namespace {

// A differentiable-op scenario: leaves and fixed weights are created once;
// the returned closure rebuilds the forward pass from current leaf values.
struct OpScenario {
    std::vector<Tensor> params;
    std::function<Tensor()> loss;
};

Tensor rand_const(Shape shape, Rng& rng) {
    std::vector<double> w(shape_numel(shape));
    for (auto& v : w) v = rng.uniform(-1, 1);
    return Tensor::constant(std::move(shape), std::move(w));
}

// weighted sum makes the scalar loss sensitive to every output entry
Tensor wsum(const Tensor& t, const Tensor& w) { return sum_all(mul(t, w)); }

} // namespace

TEST_CASE("every differentiable op passes fd checks on random tensors") {
    using Maker = std::function<OpScenario(Tape&, Rng&)>;
    std::vector<std::pair<const char*, Maker>> cases = {
        {"add",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r), b = random_leaf(t, {4, 5}, r);
             Tensor w = rand_const({4, 5}, r);
             return {{a, b}, [=] { return wsum(add(a, b), w); }};
         }},
        {"sub",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r), b = random_leaf(t, {4, 5}, r);
             Tensor w = rand_const({4, 5}, r);
             return {{a, b}, [=] { return wsum(sub(a, b), w); }};
         }},
        {"mul",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {8}, r), b = random_leaf(t, {8}, r);
             Tensor w = rand_const({8}, r);
             return {{a, b}, [=] { return wsum(mul(a, b), w); }};
         }},
        {"add_rowvec",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {5, 4}, r), v = random_leaf(t, {4}, r);
             Tensor w = rand_const({5, 4}, r);
             return {{a, v}, [=] { return wsum(add_rowvec(a, v), w); }};
         }},
        {"mul_rowvec",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {5, 4}, r), v = random_leaf(t, {4}, r);
             Tensor w = rand_const({5, 4}, r);
             return {{a, v}, [=] { return wsum(mul_rowvec(a, v), w); }};
         }},
        {"add_scalar_t",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {3, 4}, r), s = random_leaf(t, {1}, r);
             Tensor w = rand_const({3, 4}, r);
             return {{a, s}, [=] { return wsum(add_scalar_t(a, s), w); }};
         }},
        {"mul_scalar_t",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {3, 4}, r), s = random_leaf(t, {1}, r);
             Tensor w = rand_const({3, 4}, r);
             return {{a, s}, [=] { return wsum(mul_scalar_t(a, s), w); }};
         }},
        {"gelu",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {6, 6}, r, -3, 3);
             Tensor w = rand_const({6, 6}, r);
             return {{a}, [=] { return wsum(gelu(a), w); }};
         }},
        {"relu away from kink",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {6, 6}, r, 0.1, 3.0);
             Tensor w = rand_const({6, 6}, r);
             return {{a}, [=] { return wsum(relu(a), w); }};
         }},
        {"exp",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 4}, r);
             Tensor w = rand_const({4, 4}, r);
             return {{a}, [=] { return wsum(exp_op(a), w); }};
         }},
        {"sqrt",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 4}, r, 0.5, 2.0);
             Tensor w = rand_const({4, 4}, r);
             return {{a}, [=] { return wsum(sqrt_op(a), w); }};
         }},
        {"reciprocal",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 4}, r, 0.5, 2.0);
             Tensor w = rand_const({4, 4}, r);
             return {{a}, [=] { return wsum(reciprocal(a), w); }};
         }},
        {"scale and add_scalar",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 4}, r);
             Tensor w = rand_const({4, 4}, r);
             return {{a},
                     [=] { return wsum(add_scalar(scale(a, 1.7), 0.3), w); }};
         }},
        {"matmul",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r), b = random_leaf(t, {5, 3}, r);
             Tensor w = rand_const({4, 3}, r);
             return {{a, b}, [=] { return wsum(matmul(a, b), w); }};
         }},
        {"transpose",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r);
             Tensor w = rand_const({5, 4}, r);
             return {{a}, [=] { return wsum(transpose(a), w); }};
         }},
        {"reshape",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 6}, r);
             Tensor w = rand_const({2, 12}, r);
             return {{a}, [=] { return wsum(reshape(a, {2, 12}), w); }};
         }},
        {"slice_lastdim",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 6}, r);
             Tensor w = rand_const({4, 3}, r);
             return {{a}, [=] { return wsum(slice_lastdim(a, 1, 3), w); }};
         }},
        {"concat_lastdim",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {3, 2}, r), b = random_leaf(t, {3, 4}, r);
             Tensor w = rand_const({3, 6}, r);
             return {{a, b}, [=] { return wsum(concat_lastdim({a, b}), w); }};
         }},
        {"concat_rows",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {2, 3}, r), b = random_leaf(t, {4, 3}, r);
             Tensor w = rand_const({6, 3}, r);
             return {{a, b}, [=] { return wsum(concat_rows({a, b}), w); }};
         }},
        {"gather_rows",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor tbl = random_leaf(t, {5, 3}, r);
             Tensor w = rand_const({5, 3}, r);
             std::vector<std::size_t> idx{0, 2, 2, 4, 1};
             return {{tbl}, [=] { return wsum(gather_rows(tbl, idx), w); }};
         }},
        {"sum_axis0",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r);
             Tensor w = rand_const({5}, r);
             return {{a}, [=] { return wsum(sum_axis(a, 0), w); }};
         }},
        {"sum_axis1 on 3-d",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {3, 4, 5}, r);
             Tensor w = rand_const({3, 5}, r);
             return {{a}, [=] { return wsum(sum_axis(a, 1), w); }};
         }},
        {"mean_axis",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r);
             Tensor w = rand_const({4}, r);
             return {{a}, [=] { return wsum(mean_axis(a, 1), w); }};
         }},
        {"softmax_lastdim",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r, -2, 2);
             Tensor w = rand_const({4, 5}, r);
             return {{a}, [=] { return wsum(softmax_lastdim(a), w); }};
         }},
        {"log_softmax_lastdim",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 5}, r, -2, 2);
             Tensor w = rand_const({4, 5}, r);
             return {{a}, [=] { return wsum(log_softmax_lastdim(a), w); }};
         }},
        {"nll_pick_mean",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 3}, r, -2, 2);
             std::vector<std::size_t> labels{0, 2, 1, 1};
             return {{a}, [=] {
                         return nll_pick_mean(log_softmax_lastdim(a), labels);
                     }};
         }},
        {"layer_norm",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {3, 6}, r, -2, 2);
             Tensor g = random_leaf(t, {6}, r, 0.5, 1.5);
             Tensor b = random_leaf(t, {6}, r);
             Tensor w = rand_const({3, 6}, r);
             return {{a, g, b},
                     [=] { return wsum(layer_norm(a, g, b, 1e-5), w); }};
         }},
        {"minmax_norm_axis0",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {5, 3}, r, -2, 2);
             Tensor w = rand_const({5, 3}, r);
             return {{a}, [=] { return wsum(minmax_norm_axis0(a, 1e-3), w); }};
         }},
        {"clamp_min away from boundary",
         [](Tape& t, Rng& r) -> OpScenario {
             Tensor a = random_leaf(t, {4, 4}, r, 1.0, 2.0);
             Tensor w = rand_const({4, 4}, r);
             return {{a}, [=] { return wsum(clamp_min(a, 0.5), w); }};
         }},
    };
    for (const auto& [name, make] : cases) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            INFO(name << " seed " << seed);
            Tape tape;
            Rng rng(seed * 1000 + 42);
            OpScenario sc = make(tape, rng);
            tape.clear(); // drop entries recorded while building
            auto rep = oracles::check_gradients(tape, sc.loss, sc.params, 1e-5);
            REQUIRE(rep.max_rel < 1e-4);
        }
    }
}

TEST_CASE("backward semantics") {
    SECTION("loss = sum(W) gives all-ones gradient") {
        Tape tape;
        Tensor w = Tensor::leaf({2, 3}, {1, 2, 3, 4, 5, 6}, tape);
        Tensor loss = sum_all(w);
        tape.backward(loss);
        for (double g : w.grad()) REQUIRE(g == 1.0);
        REQUIRE(tape.size() == 0); // cleared afterwards
    }
    SECTION("parameter used twice accumulates both adjoints") {
        Tape tape;
        Rng rng(23);
        Tensor w = random_leaf(tape, {3, 3}, rng);
        Tensor x = random_leaf(tape, {3, 2}, rng);
        auto loss_fn = [&] { return sum_all(matmul(w, matmul(w, x))); };
        auto rep = oracles::check_gradients(tape, loss_fn, {w, x}, 1e-5);
        REQUIRE(rep.max_rel < 1e-6);
    }
    SECTION("disconnected parameter keeps zero gradient") {
        Tape tape;
        Tensor w = Tensor::leaf({2}, {1, 2}, tape);
        Tensor unused = Tensor::leaf({2}, {3, 4}, tape);
        tape.backward(sum_all(w));
        REQUIRE(unused.grad() == std::vector<double>{0, 0});
    }
    SECTION("non-scalar loss is rejected") {
        Tape tape;
        Tensor w = Tensor::leaf({2}, {1, 2}, tape);
        Tensor y = scale(w, 2.0);
        REQUIRE_THROWS_AS(tape.backward(y), DimensionError);
    }
    SECTION("k uses accumulate k single-use adjoints (k=3)") {
        Tape tape;
        Tensor w = Tensor::leaf({4}, {0.5, -1.0, 2.0, 0.25}, tape);
        Tensor c = Tensor::constant({4}, {1.0, 2.0, 3.0, 4.0});
        // single use
        tape.backward(sum_all(mul(w, c)));
        std::vector<double> single = w.grad();
        w.zero_grad();
        // three uses of the same parameter
        Tensor l3 = add(add(sum_all(mul(w, c)), sum_all(mul(w, c))),
                        sum_all(mul(w, c)));
        tape.backward(l3);
        for (std::size_t i = 0; i < 4; ++i)
            REQUIRE(w.grad()[i] == Catch::Approx(3.0 * single[i]).margin(1e-12));
    }
}

TEST_CASE("adamw") {
    SECTION("zero grad, zero decay leaves parameters unchanged") {
        Tape tape;
        Tensor p = Tensor::leaf({3}, {1.0, -2.0, 0.5}, tape);
        AdamW opt({{"p", p}}, {.lr = 0.1, .weight_decay = 0.0});
        opt.step();
        REQUIRE(p.data() == std::vector<double>{1.0, -2.0, 0.5});
        REQUIRE(opt.step_count() == 1);
    }
    SECTION("hand-evaluated single step") {
        Tape tape;
        Tensor p = Tensor::leaf({1}, {1.0}, tape);
        p.grad()[0] = 1.0;
        AdamW opt({{"p", p}},
                  {.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8,
                   .weight_decay = 0.0});
        opt.step();
        REQUIRE(p.data()[0] == Catch::Approx(0.9).margin(1e-6));
    }
    SECTION("decoupled decay without gradient") {
        Tape tape;
        Tensor p = Tensor::leaf({1}, {2.0}, tape);
        AdamW opt({{"p", p}}, {.lr = 0.1, .weight_decay = 0.1});
        opt.step();
        REQUIRE(p.data()[0] == Catch::Approx(2.0 * (1.0 - 0.01)).margin(1e-12));
    }
    SECTION("NaN gradient aborts naming the parameter") {
        Tape tape;
        Tensor p = Tensor::leaf({2}, {1.0, 1.0}, tape);
        p.grad()[1] = std::numeric_limits<double>::quiet_NaN();
        AdamW opt({{"encoder.w_q", p}}, {});
        REQUIRE_THROWS_MATCHES(
            opt.step(), NumericError,
            Catch::Matchers::MessageMatches(
                Catch::Matchers::ContainsSubstring("encoder.w_q")));
    }
}

TEST_CASE("determinism: identical seeds produce bit-identical outputs") {
    auto run = [] {
        Tape tape;
        Rng rng(99);
        Tensor a = random_leaf(tape, {4, 4}, rng);
        Tensor b = random_leaf(tape, {4, 4}, rng);
        Tensor y = dropout(gelu(matmul(a, b)), 0.3, true, rng);
        tape.backward(sum_all(y));
        return std::make_pair(y.data(), a.grad());
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    REQUIRE(y1 == y2);
    REQUIRE(g1 == g2);
}
