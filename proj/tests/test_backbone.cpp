#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "vesselseg/losses.hpp"
#include "vesselseg/nn/network.hpp"

using namespace vseg;
using nn::NetworkConfig;
using nn::SegmentationNetwork;
using nn::Variant;

namespace {

NetworkConfig small_conv(int patch = 16, std::uint64_t seed = 7) {
    NetworkConfig c;
    c.variant = Variant::conv_unet;
    c.base_channels = 4;
    c.depth = 2;
    c.patch_size = patch;
    c.init_seed = seed;
    return c;
}

NetworkConfig small_attn(int patch = 8, std::uint64_t seed = 7) {
    NetworkConfig c;
    c.variant = Variant::windowed_attention_unet;
    c.base_channels = 4;
    c.depth = 1;
    c.window = 4;
    c.heads = 2;
    c.patch_size = patch;
    c.init_seed = seed;
    return c;
}

Tensor random_patch(int p, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({p, p, p});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

Tensor flip_spatial(const Tensor& t, int axis) {
    Tensor out(t.shape());
    if (t.rank() == 3) {
        const int D = t.extent(0), H = t.extent(1), W = t.extent(2);
        for (int d = 0; d < D; ++d)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at(d, h, w) = t.at(axis == 0 ? D - 1 - d : d, axis == 1 ? H - 1 - h : h,
                                           axis == 2 ? W - 1 - w : w);
    } else {
        const int C = t.extent(0), D = t.extent(1), H = t.extent(2), W = t.extent(3);
        for (int c = 0; c < C; ++c)
            for (int d = 0; d < D; ++d)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        out.at(c, d, h, w) =
                            t.at(c, axis == 0 ? D - 1 - d : d, axis == 1 ? H - 1 - h : h,
                                 axis == 2 ? W - 1 - w : w);
    }
    return out;
}

// Average a conv kernel (Co,Ci,k,k,k) over all 8 spatial reflections.
Tensor symmetrize_kernel(const Tensor& w) {
    const int Co = w.extent(0), Ci = w.extent(1), k = w.extent(2);
    Tensor out(w.shape());
    for (int oc = 0; oc < Co; ++oc)
        for (int ic = 0; ic < Ci; ++ic)
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b)
                    for (int c = 0; c < k; ++c) {
                        double acc = 0.0;
                        for (int fa = 0; fa < 2; ++fa)
                            for (int fb = 0; fb < 2; ++fb)
                                for (int fc = 0; fc < 2; ++fc) {
                                    const int ia = fa ? k - 1 - a : a;
                                    const int ib = fb ? k - 1 - b : b;
                                    const int ic2 = fc ? k - 1 - c : c;
                                    acc += w[(((static_cast<std::size_t>(oc) * Ci + ic) * k + ia) *
                                                  k +
                                              ib) *
                                                 k +
                                             ic2];
                                }
                        out[(((static_cast<std::size_t>(oc) * Ci + ic) * k + a) * k + b) * k + c] =
                            acc / 8.0;
                    }
    return out;
}

}  // namespace

// ---- build determinism and preconditions -------------------------------------------

TEST_CASE("same config and seed build bit-identical parameters") {
    for (const NetworkConfig& cfg : {small_conv(), small_attn()}) {
        SegmentationNetwork a(cfg), b(cfg);
        auto pa = a.snapshot_parameters();
        auto pb = b.snapshot_parameters();
        REQUIRE(pa.size() == pb.size());
        for (const auto& [name, t] : pa) {
            const Tensor& u = pb.at(name);
            REQUIRE(u.size() == t.size());
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == u[i]);
        }
    }
}

TEST_CASE("incompatible patch/depth combination is rejected") {
    NetworkConfig c = small_conv();
    c.depth = 5;
    c.patch_size = 16;  // 16 not divisible by 32
    CHECK_THROWS_AS(SegmentationNetwork{c}, std::invalid_argument);
}

TEST_CASE("attention variant patch 32 window 4 builds") {
    NetworkConfig c = small_attn(32);
    c.depth = 2;
    CHECK_NOTHROW(SegmentationNetwork{c});
}

TEST_CASE("attention variant rejects window not dividing a stage") {
    NetworkConfig c = small_attn(8);
    c.depth = 2;  // stage sizes 8,4,2; window 4 does not divide 2
    c.window = 4;
    CHECK_THROWS_AS(SegmentationNetwork{c}, std::invalid_argument);
}

TEST_CASE("teacher/student parameter layouts are identical across instances") {
    NetworkConfig cfg = small_attn();
    SegmentationNetwork teacher(cfg), student(cfg);
    auto tp = teacher.parameters();
    auto sp = student.parameters();
    REQUIRE(tp.size() == sp.size());
    for (std::size_t i = 0; i < tp.size(); ++i) {
        CHECK(tp[i].name == sp[i].name);
        CHECK(tp[i].value->shape() == sp[i].value->shape());
    }
}

// ---- forward contract ------------------------------------------------------------------

TEST_CASE("forward preserves spatial shape and normalizes per voxel") {
    for (int p : {16, 32}) {
        SegmentationNetwork net(small_conv(p));
        Prediction pred = net.forward(random_patch(p, 11));
        CHECK(pred.probabilities.shape() == std::vector<int>{2, p, p, p});
        CHECK(pred.valid());
    }
    SegmentationNetwork attn(small_attn(8));
    Prediction pred = attn.forward(random_patch(8, 12));
    CHECK(pred.probabilities.shape() == std::vector<int>{2, 8, 8, 8});
    CHECK(pred.valid());
}

TEST_CASE("two forwards with the same parameters and input are identical") {
    for (const NetworkConfig& cfg : {small_conv(8), small_attn(8)}) {
        SegmentationNetwork net(cfg);
        Tensor x = random_patch(cfg.patch_size, 13);
        Prediction a = net.forward(x);
        Prediction b = net.forward(x);
        for (std::size_t i = 0; i < a.probabilities.size(); ++i)
            CHECK(a.probabilities[i] == b.probabilities[i]);
    }
}

TEST_CASE("zero-initialized head gives exactly 0.5 everywhere") {
    SegmentationNetwork net(small_conv(8));
    auto params = net.snapshot_parameters();
    params.at("head.weight").fill(0.0);
    params.at("head.bias").fill(0.0);
    net.load_parameters(params);
    Prediction pred = net.forward(random_patch(8, 14));
    for (std::size_t i = 0; i < pred.probabilities.size(); ++i)
        CHECK(pred.probabilities[i] == 0.5);
}

TEST_CASE("forward rejects wrong patch shape") {
    SegmentationNetwork net(small_conv(16));
    CHECK_THROWS_AS(net.forward(random_patch(8, 15)), std::invalid_argument);
}

// ---- snapshot / load -------------------------------------------------------------------

TEST_CASE("snapshot -> load round trip reproduces forward bit-exactly") {
    for (const NetworkConfig& cfg : {small_conv(8), small_attn(8)}) {
        SegmentationNetwork net(cfg);
        Tensor x = random_patch(cfg.patch_size, 16);
        Prediction before = net.forward(x);
        auto snap = net.snapshot_parameters();

        SegmentationNetwork other(cfg);
        // different seed to make sure load overwrites everything
        NetworkConfig cfg2 = cfg;
        cfg2.init_seed = 99;
        SegmentationNetwork reloaded(cfg2);
        reloaded.load_parameters(snap);
        Prediction after = reloaded.forward(x);
        for (std::size_t i = 0; i < before.probabilities.size(); ++i)
            CHECK(before.probabilities[i] == after.probabilities[i]);
        (void)other;
    }
}

TEST_CASE("snapshot is a deep copy") {
    SegmentationNetwork net(small_conv(8));
    auto snap = net.snapshot_parameters();
    const double first_before = snap.begin()->second[0];
    // Mutate the live network.
    auto params = net.parameters();
    (*params[0].value)[0] += 42.0;
    CHECK(snap.begin()->second[0] == first_before);
}

TEST_CASE("loading a map from a differently configured network fails") {
    SegmentationNetwork conv(small_conv(8));
    NetworkConfig bigger = small_conv(8);
    bigger.base_channels = 8;
    SegmentationNetwork other(bigger);
    CHECK_THROWS_AS(conv.load_parameters(other.snapshot_parameters()), std::invalid_argument);
}

// ---- gradients ----------------------------------------------------------------------------

TEST_CASE("cross-entropy gradients are finite and reach every parameter tensor") {
    for (const NetworkConfig& cfg : {small_conv(8), small_attn(8)}) {
        CAPTURE(cfg.variant == Variant::conv_unet ? "conv" : "attention");
        SegmentationNetwork net(cfg);
        net.zero_grads();
        Tensor x = random_patch(cfg.patch_size, 17);
        Rng rng(18);
        Tensor target = oracle::random_mask3(cfg.patch_size, rng);

        Prediction pred = net.forward_training(x);
        auto ce = cross_entropy_loss_grad(pred, target);
        net.backward(ce.grad);

        bool any_nonzero = false;
        for (const auto& p : net.parameters()) {
            double norm = 0.0;
            for (std::size_t i = 0; i < p.grad->size(); ++i) {
                CHECK(std::isfinite((*p.grad)[i]));
                norm += std::abs((*p.grad)[i]);
            }
            if (norm > 0.0) any_nonzero = true;
        }
        CHECK(any_nonzero);
    }
}

TEST_CASE("network backward matches finite differences on sampled parameters") {
    for (const NetworkConfig& cfg : {small_conv(8), small_attn(8)}) {
        CAPTURE(cfg.variant == Variant::conv_unet ? "conv" : "attention");
        SegmentationNetwork net(cfg);
        Tensor x = random_patch(cfg.patch_size, 19);
        Rng rng(20);
        Tensor target = oracle::random_mask3(cfg.patch_size, rng);

        net.zero_grads();
        Prediction pred = net.forward_training(x);
        auto ce = cross_entropy_loss_grad(pred, target);
        net.backward(ce.grad);

        auto params = net.parameters();
        Rng pick(21);
        const double step = 1e-5;
        int checked = 0;
        for (int s = 0; s < 24; ++s) {
            auto& p = params[static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
            if (p.value->size() == 0) continue;
            const std::size_t j = static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<std::int64_t>(p.value->size()) - 1));
            const double keep = (*p.value)[j];
            (*p.value)[j] = keep + step;
            const double up = cross_entropy_loss(net.forward(x), target);
            (*p.value)[j] = keep - step;
            const double dn = cross_entropy_loss(net.forward(x), target);
            (*p.value)[j] = keep;
            const double fd = (up - dn) / (2.0 * step);
            const double analytic = (*p.grad)[j];
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
            CAPTURE(p.name);
            CHECK(std::abs(fd - analytic) / denom < 5e-3);
            ++checked;
        }
        CHECK(checked >= 20);
    }
}

// ---- flip equivariance (conv variant, symmetrized kernels) ---------------------------------

TEST_CASE("conv variant with flip-symmetric kernels commutes with axis flips") {
    // Holds only when every conv kernel is symmetric under the flip, so the
    // check runs on a symmetrized snapshot; documented for the conv variant.
    SegmentationNetwork net(small_conv(16));
    auto params = net.snapshot_parameters();
    for (auto& [name, t] : params)
        if (t.rank() == 5) t = symmetrize_kernel(t);
    net.load_parameters(params);

    Tensor x = random_patch(16, 22);
    Prediction base = net.forward(x);
    for (int axis = 0; axis < 3; ++axis) {
        CAPTURE(axis);
        Prediction flipped_in = net.forward(flip_spatial(x, axis));
        Tensor expected = flip_spatial(base.probabilities, axis);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < expected.size(); ++i)
            max_diff = std::max(max_diff, std::abs(flipped_in.probabilities[i] - expected[i]));
        CHECK(max_diff < 1e-4);
    }
}

// ---- kernels: serial reference vs OpenMP ----------------------------------------------------

TEST_CASE("conv3d kernels match the serial reference bit-exactly") {
    Rng rng(23);
    auto rnd = [&](std::vector<int> shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
        return t;
    };
    for (int stride : {1, 2}) {
        const int k = stride == 1 ? 3 : 2;
        const int pad = stride == 1 ? 1 : 0;
        Tensor in = rnd({3, 8, 8, 8});
        Tensor w = rnd({4, 3, k, k, k});
        Tensor b = rnd({4});

        Tensor f_omp = nn::conv3d_forward(in, w, b, stride, pad);
        Tensor f_ser = nn::serial::conv3d_forward(in, w, b, stride, pad);
        REQUIRE(f_omp.size() == f_ser.size());
        for (std::size_t i = 0; i < f_omp.size(); ++i) CHECK(f_omp[i] == f_ser[i]);

        Tensor gout = rnd(f_omp.shape());
        Tensor gi_omp = nn::conv3d_backward_input(gout, w, in.shape(), stride, pad);
        Tensor gi_ser = nn::serial::conv3d_backward_input(gout, w, in.shape(), stride, pad);
        for (std::size_t i = 0; i < gi_omp.size(); ++i) CHECK(gi_omp[i] == gi_ser[i]);

        Tensor gw_omp = nn::conv3d_backward_weight(in, gout, k, stride, pad);
        Tensor gw_ser = nn::serial::conv3d_backward_weight(in, gout, k, stride, pad);
        for (std::size_t i = 0; i < gw_omp.size(); ++i) CHECK(gw_omp[i] == gw_ser[i]);
    }
}

// ---- checkpoint container --------------------------------------------------------------------

TEST_CASE("checkpoint file round trip preserves config and tensors") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "vseg_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "net.ckpt").string();

    NetworkConfig cfg = small_attn(8);
    SegmentationNetwork net(cfg);
    auto snap = net.snapshot_parameters();
    nn::save_tensors(path, cfg, snap);

    auto loaded = nn::load_tensors(path);
    CHECK(loaded.config == cfg);
    REQUIRE(loaded.tensors.size() == snap.size());
    for (const auto& [name, t] : snap) {
        const Tensor& u = loaded.tensors.at(name);
        REQUIRE(u.shape() == t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(u[i] == t[i]);
    }
}
