#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nbcv/autograd.hpp"
#include "nbcv/losses.hpp"
#include "nbcv/network.hpp"
#include "nbcv/optim.hpp"
#include "nbcv/rng.hpp"
#include "support/oracles.hpp"

using namespace nbcv;
using namespace nbcv::testing;

namespace {

Network tiny_affine(double w, double b) {
    AffineLayer a;
    a.w = Tensor({1, 1}, {w});
    a.b = Tensor({1}, {b});
    return Network({1}, {Layer{std::move(a)}});
}

}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0}));
    CHECK_THROWS(Tensor::zeros({0, 3}));
    Tensor t = Tensor::vec({1.0, 2.0});
    CHECK(t.size() == 2);
    t[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(t.ensure_finite("test"), std::runtime_error);
}

TEST_CASE("forward: hand affine evaluation") {
    Network net = tiny_affine(2.0, -1.0);
    ActivationTrace tr = net.forward(Tensor::vec({0.5}));
    CHECK(tr.logits[0] == doctest::Approx(0.0));
}

TEST_CASE("forward: ReLU definition") {
    AffineLayer a;
    a.w = Tensor({2, 2}, {1, 0, 0, 1});
    a.b = Tensor({2}, {0, 0});
    AffineLayer out;
    out.w = Tensor({2, 2}, {1, 0, 0, 1});
    out.b = Tensor({2}, {0, 0});
    Network net({2}, {Layer{a}, Layer{ReluLayer{}}, Layer{out}});
    ActivationTrace tr = net.forward(Tensor::vec({-1.0, 2.0}));
    CHECK(tr.relu_pre[0][0] == -1.0);
    CHECK(tr.relu_post[0][0] == 0.0);
    CHECK(tr.relu_post[0][1] == 2.0);
}

TEST_CASE("forward: random 2-4-2 net matches straight-line reimplementation") {
    Network net = random_mlp({2, 4, 2}, 7);
    // pull the weights into plain nested vectors
    std::vector<std::vector<std::vector<double>>> ws;
    std::vector<std::vector<double>> bs;
    for (const Layer& layer : net.layers()) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            std::vector<std::vector<double>> w(a->out_dim(), std::vector<double>(a->in_dim()));
            for (std::size_t r = 0; r < a->out_dim(); ++r)
                for (std::size_t c = 0; c < a->in_dim(); ++c)
                    w[r][c] = a->w.data[r * a->in_dim() + c];
            ws.push_back(std::move(w));
            bs.push_back(a->b.data);
        }
    }
    RngStream rng(3, "inputs");
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
        std::vector<std::vector<double>> ref_pre;
        std::vector<double> ref = reference_mlp_forward(ws, bs, x, &ref_pre);
        ActivationTrace tr = net.forward(Tensor::vec(x));
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(tr.logits[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < ref_pre[0].size(); ++i)
            CHECK(tr.relu_pre[0][i] == doctest::Approx(ref_pre[0][i]).epsilon(1e-12));
    }
}

TEST_CASE("forward: purity is bitwise") {
    Network net = random_mlp({3, 8, 8, 3}, 11);
    Tensor x = Tensor::vec({0.3, -0.7, 1.5});
    ActivationTrace a = net.forward(x);
    ActivationTrace b = net.forward(x);
    for (std::size_t i = 0; i < a.logits.size(); ++i) CHECK(a.logits[i] == b.logits[i]);
}

TEST_CASE("forward: shape mismatch and trace relation") {
    Network net = random_mlp({3, 4, 2}, 1);
    CHECK_THROWS(net.forward(Tensor::vec({1.0, 2.0})));
    ActivationTrace tr = net.forward(Tensor::vec({0.1, 0.2, 0.3}));
    for (std::size_t i = 0; i < tr.relu_pre[0].size(); ++i)
        CHECK(tr.relu_post[0][i] == std::max(0.0, tr.relu_pre[0][i]));
}

TEST_CASE("network validation rules") {
    AffineLayer a;
    a.w = Tensor({2, 2}, {1, 0, 0, 1});
    a.b = Tensor({2}, {0, 0});
    // ReLU first: no pre-activation
    CHECK_THROWS(Network({2}, {Layer{ReluLayer{}}, Layer{a}}));
    // trailing ReLU: logits must be affine
    CHECK_THROWS(Network({2}, {Layer{a}, Layer{ReluLayer{}}}));
    // incompatible widths
    AffineLayer b3;
    b3.w = Tensor({1, 3}, {1, 1, 1});
    b3.b = Tensor({1}, {0});
    CHECK_THROWS(Network({2}, {Layer{a}, Layer{b3}}));
}

TEST_CASE("grad: sum of logits of y=2x") {
    Tape tape;
    Tensor w({2, 2}, {2, 0, 0, 2});
    Tensor b({2}, {0, 0});
    Tensor x = Tensor::vec({1.0, 1.0});
    auto wid = tape.constant_view(w);
    auto bid = tape.constant_view(b);
    auto xid = tape.leaf_view(x);
    auto loss = tape.sum(tape.affine(wid, bid, xid));
    tape.backward(loss);
    Tensor g = tape.gradient(xid);
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(2.0));
}

TEST_CASE("grad: inactive ReLU gives zero gradient") {
    Tape tape;
    Tensor w({1, 2}, {1.0, 1.0});
    Tensor b({1}, {0.0});
    Tensor x = Tensor::vec({-2.0, 0.5});  // w.x = -1.5 < 0
    auto xid = tape.leaf_view(x);
    auto y = tape.relu(tape.affine(tape.constant_view(w), tape.constant_view(b), xid));
    auto loss = tape.sum(y);
    tape.backward(loss);
    Tensor g = tape.gradient(xid);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
}

TEST_CASE("grad: ReLU subgradient at exactly zero is zero") {
    Tape tape;
    Tensor x = Tensor::vec({0.0});
    auto xid = tape.leaf_view(x);
    auto loss = tape.sum(tape.relu(xid));
    tape.backward(loss);
    CHECK(tape.gradient(xid)[0] == 0.0);
}

TEST_CASE("grad: non-scalar root throws; disconnected leaf is zero") {
    Tape tape;
    Tensor x = Tensor::vec({1.0, 2.0});
    auto xid = tape.leaf_view(x);
    CHECK_THROWS(tape.backward(xid));

    Tape tape2;
    Tensor a = Tensor::vec({1.0});
    Tensor c = Tensor::vec({3.0});
    auto aid = tape2.leaf_view(a);
    auto cid = tape2.leaf_view(c);
    auto loss = tape2.sum(tape2.relu(aid));
    tape2.backward(loss);
    Tensor g = tape2.gradient(cid);
    CHECK(g[0] == 0.0);
}

TEST_CASE("grad: finite differences on random 3-layer nets") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Network net = random_mlp({3, 6, 5, 4}, seed + 100);
        RngStream rng(seed, "fd/input");
        Tensor x = Tensor::vec({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        std::size_t label = seed % 4;

        auto loss_value = [&] {
            Tape t;
            NetGraph g(t, net, false);
            return t.value(t.ce_softmax(g.forward(t.constant_view(x)), label))[0];
        };

        Tape tape;
        NetGraph graph(tape, net, true);
        auto xid = tape.leaf_view(x);
        auto loss = tape.ce_softmax(graph.forward(xid), label);
        tape.backward(loss);

        // input gradient
        Tensor gx = tape.gradient(xid);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double fd = central_diff(loss_value, x.data[i]);
            CHECK(grad_close(gx[i], fd));
        }
        // parameter gradients
        auto params = net.parameters();
        auto pnodes = graph.param_nodes();
        REQUIRE(params.size() == pnodes.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor gp = tape.gradient(pnodes[p]);
            for (std::size_t i = 0; i < params[p]->size(); i += 7) {  // sample entries
                double fd = central_diff(loss_value, params[p]->data[i]);
                CHECK(grad_close(gp[i], fd));
            }
        }
    }
}

TEST_CASE("grad: interval affine ops match finite differences") {
    RngStream rng(5, "interval");
    Tensor w = Tensor::zeros({3, 4});
    for (double& v : w.data) {
        v = rng.uniform(-1, 1);
        if (std::fabs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;  // keep FD off the sign kink
    }
    Tensor b = Tensor::vec({0.1, -0.2, 0.3});
    Tensor lo = Tensor::vec({-0.5, -0.2, 0.0, 0.4});
    Tensor hi = Tensor::vec({0.5, 0.3, 0.8, 0.9});

    auto value = [&] {
        Tape t;
        auto l = t.affine_interval_lower(t.constant_view(w), t.constant_view(b),
                                         t.constant_view(lo), t.constant_view(hi));
        auto u = t.affine_interval_upper(t.constant_view(w), t.constant_view(b),
                                         t.constant_view(lo), t.constant_view(hi));
        return t.value(t.sum(t.tanh_of(t.shift(t.mul(l, u), 1.0))))[0];
    };

    Tape tape;
    auto wid = tape.leaf_view(w);
    auto bid = tape.leaf_view(b);
    auto l = tape.affine_interval_lower(wid, bid, tape.constant_view(lo), tape.constant_view(hi));
    auto u = tape.affine_interval_upper(wid, bid, tape.constant_view(lo), tape.constant_view(hi));
    auto loss = tape.sum(tape.tanh_of(tape.shift(tape.mul(l, u), 1.0)));
    tape.backward(loss);
    Tensor gw = tape.gradient(wid);
    Tensor gb = tape.gradient(bid);
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(grad_close(gw[i], central_diff(value, w.data[i])));
    for (std::size_t i = 0; i < b.size(); ++i)
        CHECK(grad_close(gb[i], central_diff(value, b.data[i])));
}

TEST_CASE("conv: 1x1 identity kernel lowers to the identity matrix") {
    Conv2dLayer conv;
    conv.kernels = Tensor({1, 1, 1, 1}, {1.0});
    conv.bias = Tensor({1}, {0.0});
    AffineLayer aff = lower_conv_to_affine(conv, {1, 3, 3});
    CHECK(aff.out_dim() == 9);
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t c = 0; c < 9; ++c)
            CHECK(aff.w.data[r * 9 + c] == (r == c ? 1.0 : 0.0));
}

TEST_CASE("conv: 2x2 averaging kernel on 3x3 input unrolls to 0.25 entries") {
    Conv2dLayer conv;
    conv.kernels = Tensor({1, 1, 2, 2}, {0.25, 0.25, 0.25, 0.25});
    conv.bias = Tensor({1}, {0.0});
    AffineLayer aff = lower_conv_to_affine(conv, {1, 3, 3});
    REQUIRE(aff.w.shape == std::vector<std::size_t>{4, 9});
    // first output pixel averages input pixels (0,0),(0,1),(1,0),(1,1)
    std::vector<double> row0(aff.w.data.begin(), aff.w.data.begin() + 9);
    std::vector<double> want{0.25, 0.25, 0, 0.25, 0.25, 0, 0, 0, 0};
    CHECK(row0 == want);
    for (double v : aff.w.data) CHECK((v == 0.0 || v == 0.25));
}

TEST_CASE("conv: lowering agrees with direct convolution on random inputs") {
    RngStream rng(9, "conv");
    Conv2dLayer conv;
    conv.kernels = Tensor::zeros({3, 2, 3, 3});
    for (double& v : conv.kernels.data) v = rng.uniform(-1, 1);
    conv.bias = Tensor::vec({0.1, -0.5, 0.2});
    conv.stride_h = conv.stride_w = 2;
    conv.pad_h = conv.pad_w = 1;
    std::vector<std::size_t> in_shape{2, 5, 5};

    Conv2dGeom geom = conv.geometry(in_shape);
    AffineLayer aff = lower_conv_to_affine(conv, in_shape);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = Tensor::zeros({geom.in_size()});
        for (double& v : x.data) v = rng.uniform(-2, 2);
        Tensor direct = Tensor::zeros({geom.out_size()});
        conv2d_apply(geom, conv.kernels.data.data(), conv.bias.data.data(), x.data.data(),
                     direct.data.data());
        double max_diff = 0.0;
        for (std::size_t r = 0; r < aff.out_dim(); ++r) {
            double acc = aff.b[r];
            for (std::size_t c = 0; c < aff.in_dim(); ++c)
                acc += aff.w.data[r * aff.in_dim() + c] * x[c];
            max_diff = std::max(max_diff, std::fabs(acc - direct[r]));
        }
        CHECK(max_diff <= 1e-9);
    }
    CHECK_THROWS(conv.geometry({2, 4, 6}));  // stride does not tile
}

TEST_CASE("conv: tape gradients match finite differences") {
    RngStream rng(13, "convgrad");
    Conv2dLayer conv;
    conv.kernels = Tensor::zeros({2, 1, 2, 2});
    for (double& v : conv.kernels.data) v = rng.uniform(-1, 1);
    conv.bias = Tensor::vec({0.05, -0.1});
    std::vector<std::size_t> in_shape{1, 3, 3};
    Conv2dGeom geom = conv.geometry(in_shape);

    Tensor x = Tensor::zeros({geom.in_size()});
    for (double& v : x.data) v = rng.uniform(-1, 1);

    auto value = [&] {
        Tape t;
        auto y = t.conv2d(t.constant_view(conv.kernels), t.constant_view(conv.bias),
                          t.constant_view(x), geom);
        return t.value(t.sum(t.relu(y)))[0];
    };

    Tape tape;
    auto kid = tape.leaf_view(conv.kernels);
    auto bid = tape.leaf_view(conv.bias);
    auto xid = tape.leaf_view(x);
    auto loss = tape.sum(tape.relu(tape.conv2d(kid, bid, xid, geom)));
    tape.backward(loss);
    Tensor gk = tape.gradient(kid), gb = tape.gradient(bid), gx = tape.gradient(xid);
    for (std::size_t i = 0; i < conv.kernels.size(); ++i)
        CHECK(grad_close(gk[i], central_diff(value, conv.kernels.data[i])));
    for (std::size_t i = 0; i < conv.bias.size(); ++i)
        CHECK(grad_close(gb[i], central_diff(value, conv.bias.data[i])));
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(grad_close(gx[i], central_diff(value, x.data[i])));
}

TEST_CASE("init_params: determinism, distinct seeds, He variance") {
    Network a = random_mlp({100, 100, 10}, 42);
    Network b = random_mlp({100, 100, 10}, 42);
    Network c = random_mlp({100, 100, 10}, 43);
    const Tensor& wa = std::get<AffineLayer>(a.layers()[0]).w;
    const Tensor& wb = std::get<AffineLayer>(b.layers()[0]).w;
    const Tensor& wc = std::get<AffineLayer>(c.layers()[0]).w;
    CHECK(wa.data == wb.data);
    CHECK(wa.data != wc.data);

    double mean = 0.0;
    for (double v : wa.data) mean += v;
    mean /= wa.size();
    double var = 0.0;
    for (double v : wa.data) var += (v - mean) * (v - mean);
    var /= wa.size();
    CHECK(var == doctest::Approx(2.0 / 100.0).epsilon(0.2));
    for (double v : std::get<AffineLayer>(a.layers()[0]).b.data) CHECK(v == 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::vec({1.0, -2.0});
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::zeros({2})};
    AdamState st;
    adam_step(params, grads, st, {});
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
}

TEST_CASE("adam: first step moves by about lr in the gradient sign") {
    // hand evaluation at t=1: m_hat = g, v_hat = g^2, step = lr*g/(|g|+eps)
    Tensor p = Tensor::vec({0.5, 0.5});
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::vec({0.3, -0.01})};
    AdamState st;
    AdamParams hp;
    hp.lr = 1e-3;
    adam_step(params, grads, st, hp);
    CHECK(p[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.5 + 1e-3).epsilon(1e-4));
}

TEST_CASE("adam: constant gradient moves monotonically against its sign") {
    Tensor p = Tensor::vec({0.0});
    std::vector<Tensor*> params{&p};
    AdamState st;
    AdamParams hp;
    double prev = 0.0;
    for (int step = 0; step < 50; ++step) {
        std::vector<Tensor> grads{Tensor::vec({2.5})};
        adam_step(params, grads, st, hp);
        CHECK(p[0] < prev);
        prev = p[0];
    }
    Tensor q = Tensor::vec({std::numeric_limits<double>::quiet_NaN()});
    std::vector<Tensor> bad{q};
    CHECK_THROWS(adam_step(params, bad, st, hp));
}
