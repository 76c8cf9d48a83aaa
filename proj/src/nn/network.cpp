#include "vesselseg/nn/network.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vseg::nn {

void NetworkConfig::validate() const {
    if (base_channels < 1 || depth < 1 || patch_size < 2)
        throw std::invalid_argument("network config values must be positive");
    int p = patch_size;
    for (int i = 0; i < depth; ++i) {
        if (p % 2 != 0)
            throw std::invalid_argument("patch size " + std::to_string(patch_size) +
                                        " is not divisible by 2^depth");
        p /= 2;
    }
    if (variant == Variant::windowed_attention_unet) {
        if (base_channels % heads != 0)
            throw std::invalid_argument("base channels must be divisible by heads");
        int s = patch_size;
        for (int i = 0; i <= depth; ++i) {
            if (s % window != 0)
                throw std::invalid_argument("patch size must be divisible by the window at every stage");
            if (i < depth) s /= 2;
        }
    }
}

std::string NetworkConfig::to_json() const {
    nlohmann::json j;
    j["variant"] = variant == Variant::conv_unet ? "conv_unet" : "windowed_attention_unet";
    j["base_channels"] = base_channels;
    j["depth"] = depth;
    j["window"] = window;
    j["heads"] = heads;
    j["patch_size"] = patch_size;
    j["init_seed"] = init_seed;
    return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    NetworkConfig c;
    const std::string v = j.at("variant").get<std::string>();
    if (v == "conv_unet")
        c.variant = Variant::conv_unet;
    else if (v == "windowed_attention_unet")
        c.variant = Variant::windowed_attention_unet;
    else
        throw std::invalid_argument("unknown network variant: " + v);
    c.base_channels = j.at("base_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.window = j.at("window").get<int>();
    c.heads = j.at("heads").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

// ---- shared blocks ------------------------------------------------------------

namespace {

struct ConvBlock {
    Conv3d conv1, conv2;
    InstanceNorm norm1, norm2;
    ReLU relu1, relu2;

    ConvBlock() = default;
    ConvBlock(int cin, int cout)
        : conv1(cin, cout, 3, 1, 1), conv2(cout, cout, 3, 1, 1), norm1(cout), norm2(cout) {}

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
    }
    Tensor forward(const Tensor& x, bool training) {
        Tensor h = relu1.forward(norm1.forward(conv1.forward(x, training), training), training);
        return relu2.forward(norm2.forward(conv2.forward(h, training), training), training);
    }
    Tensor backward(const Tensor& g) {
        Tensor h = conv2.backward(norm2.backward(relu2.backward(g)));
        return conv1.backward(norm1.backward(relu1.backward(h)));
    }
    void collect(const std::string& p, std::vector<NamedParam>& out) {
        conv1.collect(p + ".conv1", out);
        norm1.collect(p + ".norm1", out);
        conv2.collect(p + ".conv2", out);
        norm2.collect(p + ".norm2", out);
    }
};

struct ConvNormRelu {
    Conv3d conv;
    InstanceNorm norm;
    ReLU relu;

    ConvNormRelu() = default;
    ConvNormRelu(int cin, int cout, int k, int stride, int pad)
        : conv(cin, cout, k, stride, pad), norm(cout) {}

    void init(Rng& rng) { conv.init(rng); }
    Tensor forward(const Tensor& x, bool training) {
        return relu.forward(norm.forward(conv.forward(x, training), training), training);
    }
    Tensor backward(const Tensor& g) { return conv.backward(norm.backward(relu.backward(g))); }
    void collect(const std::string& p, std::vector<NamedParam>& out) {
        conv.collect(p + ".conv", out);
        norm.collect(p + ".norm", out);
    }
};

struct Mlp {
    Linear fc1, fc2;
    ReLU act;

    Mlp() = default;
    explicit Mlp(int c) : fc1(c, 2 * c), fc2(2 * c, c) {}

    void init(Rng& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }
    Tensor forward(const Tensor& t, bool training) {
        return fc2.forward(act.forward(fc1.forward(t, training), training), training);
    }
    Tensor backward(const Tensor& g) { return fc1.backward(act.backward(fc2.backward(g))); }
    void collect(const std::string& p, std::vector<NamedParam>& out) {
        fc1.collect(p + ".fc1", out);
        fc2.collect(p + ".fc2", out);
    }
};

// Pre-norm transformer block on a (C,D,H,W) field:
//   x = x + WMSA(LN(x));  x = x + MLP(LN(x))
struct AttnBlock {
    LayerNorm ln1, ln2;
    WindowAttention attn;
    Mlp mlp;
    std::vector<int> shape_;

    AttnBlock() = default;
    AttnBlock(int c, int heads, int window) : ln1(c), ln2(c), attn(c, heads, window), mlp(c) {}

    void init(Rng& rng) {
        attn.init(rng);
        mlp.init(rng);
    }

    Tensor forward(const Tensor& x, bool training) {
        if (training) shape_ = x.shape();
        Tensor t = ln1.forward(to_tokens(x), training);
        Tensor a = attn.forward(from_tokens(t, x.shape()), training);
        Tensor x2(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] + a[i];

        Tensor m = mlp.forward(ln2.forward(to_tokens(x2), training), training);
        Tensor mc = from_tokens(m, x.shape());
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x2[i] + mc[i];
        return out;
    }

    Tensor backward(const Tensor& g) {
        // out = x2 + MLP path
        Tensor g_mlp = ln2.backward(mlp.backward(to_tokens(g)));
        Tensor g_x2 = g;  // residual branch
        Tensor g_mlp_c = from_tokens(g_mlp, shape_);
        for (std::size_t i = 0; i < g_x2.size(); ++i) g_x2[i] += g_mlp_c[i];

        // x2 = x + attention path
        Tensor g_attn = ln1.backward(to_tokens(attn.backward(g_x2)));
        Tensor g_x = g_x2;
        Tensor g_attn_c = from_tokens(g_attn, shape_);
        for (std::size_t i = 0; i < g_x.size(); ++i) g_x[i] += g_attn_c[i];
        return g_x;
    }

    void collect(const std::string& p, std::vector<NamedParam>& out) {
        ln1.collect(p + ".ln1", out);
        attn.collect(p + ".attn", out);
        ln2.collect(p + ".ln2", out);
        mlp.collect(p + ".mlp", out);
    }
};

int stage_channels(int base, int i) { return base << i; }

}  // namespace

// ---- backbone interface ----------------------------------------------------------

struct SegmentationNetwork::Backbone {
    virtual ~Backbone() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& g) = 0;
    virtual void collect(std::vector<NamedParam>& out) = 0;
};

// Encoder/decoder with double-conv blocks, avg-pool downsampling and
// nearest-neighbour upsampling. Downsampling and upsampling commute with axis
// flips, which the flip-equivariance check relies on.
struct SegmentationNetwork::ConvUNet final : Backbone {
    int depth;
    std::vector<ConvBlock> enc;
    ConvBlock bottleneck;
    std::vector<ConvNormRelu> reduce;  // after upsampling: C_{i+1} -> C_i
    std::vector<ConvBlock> fuse;       // after skip concat: 2C_i -> C_i
    Conv3d head;

    std::vector<Tensor> skips_;
    std::vector<std::vector<int>> pool_in_shapes_, up_in_shapes_;

    ConvUNet(const NetworkConfig& cfg, Rng& rng) : depth(cfg.depth) {
        int cin = 1;
        for (int i = 0; i < depth; ++i) {
            enc.emplace_back(cin, stage_channels(cfg.base_channels, i));
            cin = stage_channels(cfg.base_channels, i);
        }
        bottleneck = ConvBlock(cin, stage_channels(cfg.base_channels, depth));
        for (int i = 0; i < depth; ++i) {
            const int ci = stage_channels(cfg.base_channels, i);
            const int ci1 = stage_channels(cfg.base_channels, i + 1);
            reduce.emplace_back(ci1, ci, 3, 1, 1);
            fuse.emplace_back(2 * ci, ci);
        }
        head = Conv3d(cfg.base_channels, 2, 1, 1, 0);

        for (auto& b : enc) b.init(rng);
        bottleneck.init(rng);
        for (auto& b : reduce) b.init(rng);
        for (auto& b : fuse) b.init(rng);
        head.init(rng);
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (training) {
            skips_.clear();
            pool_in_shapes_.clear();
            up_in_shapes_.clear();
        }
        Tensor h = x;
        std::vector<Tensor> skips;
        for (int i = 0; i < depth; ++i) {
            h = enc[static_cast<std::size_t>(i)].forward(h, training);
            skips.push_back(h);
            if (training) pool_in_shapes_.push_back(h.shape());
            h = avgpool2_forward(h);
        }
        h = bottleneck.forward(h, training);
        for (int i = depth - 1; i >= 0; --i) {
            if (training) up_in_shapes_.push_back(h.shape());
            h = upsample_nearest2_forward(h);
            h = reduce[static_cast<std::size_t>(i)].forward(h, training);
            h = concat_channels(h, skips[static_cast<std::size_t>(i)]);
            h = fuse[static_cast<std::size_t>(i)].forward(h, training);
        }
        if (training) skips_ = std::move(skips);
        return head.forward(h, training);
    }

    Tensor backward(const Tensor& g) override {
        Tensor h = head.backward(g);
        std::vector<Tensor> skip_grads(static_cast<std::size_t>(depth));
        for (int i = 0; i <= depth - 1; ++i) {
            h = fuse[static_cast<std::size_t>(i)].backward(h);
            const int ci = h.extent(0) / 2;
            Tensor g_red, g_skip;
            split_channels(h, ci, g_red, g_skip);
            skip_grads[static_cast<std::size_t>(i)] = std::move(g_skip);
            g_red = reduce[static_cast<std::size_t>(i)].backward(g_red);
            h = upsample_nearest2_backward(
                g_red, up_in_shapes_[static_cast<std::size_t>(depth - 1 - i)]);
        }
        h = bottleneck.backward(h);
        for (int i = depth - 1; i >= 0; --i) {
            h = avgpool2_backward(h, pool_in_shapes_[static_cast<std::size_t>(i)]);
            Tensor& sg = skip_grads[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < h.size(); ++j) h[j] += sg[j];
            h = enc[static_cast<std::size_t>(i)].backward(h);
        }
        return h;
    }

    void collect(std::vector<NamedParam>& out) override {
        for (int i = 0; i < depth; ++i)
            enc[static_cast<std::size_t>(i)].collect("enc" + std::to_string(i), out);
        bottleneck.collect("bottleneck", out);
        for (int i = 0; i < depth; ++i) {
            reduce[static_cast<std::size_t>(i)].collect("dec" + std::to_string(i) + ".reduce", out);
            fuse[static_cast<std::size_t>(i)].collect("dec" + std::to_string(i) + ".fuse", out);
        }
        head.collect("head", out);
    }
};

// Windowed-attention encoder/decoder: transformer blocks over non-overlapping
// cubic windows at every stage, strided-conv downsampling.
struct SegmentationNetwork::AttnUNet final : Backbone {
    int depth;
    ConvNormRelu stem;
    std::vector<AttnBlock> attn_enc;
    std::vector<Conv3d> down;
    AttnBlock attn_bot;
    std::vector<ConvNormRelu> up_conv;
    std::vector<ConvNormRelu> fuse;
    std::vector<AttnBlock> attn_dec;
    Conv3d head;

    std::vector<Tensor> skips_;
    std::vector<std::vector<int>> down_in_shapes_, up_in_shapes_;

    AttnUNet(const NetworkConfig& cfg, Rng& rng)
        : depth(cfg.depth), stem(1, cfg.base_channels, 3, 1, 1) {
        for (int i = 0; i < depth; ++i) {
            const int ci = stage_channels(cfg.base_channels, i);
            attn_enc.emplace_back(ci, cfg.heads, cfg.window);
            down.emplace_back(ci, stage_channels(cfg.base_channels, i + 1), 2, 2, 0);
        }
        attn_bot = AttnBlock(stage_channels(cfg.base_channels, depth), cfg.heads, cfg.window);
        for (int i = 0; i < depth; ++i) {
            const int ci = stage_channels(cfg.base_channels, i);
            up_conv.emplace_back(stage_channels(cfg.base_channels, i + 1), ci, 3, 1, 1);
            fuse.emplace_back(2 * ci, ci, 3, 1, 1);
            attn_dec.emplace_back(ci, cfg.heads, cfg.window);
        }
        head = Conv3d(cfg.base_channels, 2, 1, 1, 0);

        stem.init(rng);
        for (auto& b : attn_enc) b.init(rng);
        for (auto& c : down) c.init(rng);
        attn_bot.init(rng);
        for (auto& b : up_conv) b.init(rng);
        for (auto& b : fuse) b.init(rng);
        for (auto& b : attn_dec) b.init(rng);
        head.init(rng);
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (training) {
            down_in_shapes_.clear();
            up_in_shapes_.clear();
        }
        Tensor h = stem.forward(x, training);
        std::vector<Tensor> skips;
        for (int i = 0; i < depth; ++i) {
            h = attn_enc[static_cast<std::size_t>(i)].forward(h, training);
            skips.push_back(h);
            if (training) down_in_shapes_.push_back(h.shape());
            h = down[static_cast<std::size_t>(i)].forward(h, training);
        }
        h = attn_bot.forward(h, training);
        for (int i = depth - 1; i >= 0; --i) {
            if (training) up_in_shapes_.push_back(h.shape());
            h = upsample_nearest2_forward(h);
            h = up_conv[static_cast<std::size_t>(i)].forward(h, training);
            h = concat_channels(h, skips[static_cast<std::size_t>(i)]);
            h = fuse[static_cast<std::size_t>(i)].forward(h, training);
            h = attn_dec[static_cast<std::size_t>(i)].forward(h, training);
        }
        if (training) skips_ = std::move(skips);
        return head.forward(h, training);
    }

    Tensor backward(const Tensor& g) override {
        Tensor h = head.backward(g);
        std::vector<Tensor> skip_grads(static_cast<std::size_t>(depth));
        for (int i = 0; i <= depth - 1; ++i) {
            h = attn_dec[static_cast<std::size_t>(i)].backward(h);
            h = fuse[static_cast<std::size_t>(i)].backward(h);
            const int ci = h.extent(0) / 2;
            Tensor g_up, g_skip;
            split_channels(h, ci, g_up, g_skip);
            skip_grads[static_cast<std::size_t>(i)] = std::move(g_skip);
            g_up = up_conv[static_cast<std::size_t>(i)].backward(g_up);
            h = upsample_nearest2_backward(g_up,
                                           up_in_shapes_[static_cast<std::size_t>(depth - 1 - i)]);
        }
        h = attn_bot.backward(h);
        for (int i = depth - 1; i >= 0; --i) {
            h = down[static_cast<std::size_t>(i)].backward(h);
            Tensor& sg = skip_grads[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < h.size(); ++j) h[j] += sg[j];
            h = attn_enc[static_cast<std::size_t>(i)].backward(h);
        }
        return stem.backward(h);
    }

    void collect(std::vector<NamedParam>& out) override {
        stem.collect("stem", out);
        for (int i = 0; i < depth; ++i) {
            attn_enc[static_cast<std::size_t>(i)].collect("enc" + std::to_string(i) + ".attn", out);
            down[static_cast<std::size_t>(i)].collect("enc" + std::to_string(i) + ".down", out);
        }
        attn_bot.collect("bottleneck.attn", out);
        for (int i = 0; i < depth; ++i) {
            up_conv[static_cast<std::size_t>(i)].collect("dec" + std::to_string(i) + ".up", out);
            fuse[static_cast<std::size_t>(i)].collect("dec" + std::to_string(i) + ".fuse", out);
            attn_dec[static_cast<std::size_t>(i)].collect("dec" + std::to_string(i) + ".attn", out);
        }
        head.collect("head", out);
    }
};

// ---- SegmentationNetwork ----------------------------------------------------------

SegmentationNetwork::SegmentationNetwork(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::fork(cfg.init_seed, "network_init");
    if (cfg.variant == Variant::conv_unet)
        impl_ = std::make_unique<ConvUNet>(cfg_, rng);
    else
        impl_ = std::make_unique<AttnUNet>(cfg_, rng);
}

SegmentationNetwork::SegmentationNetwork(SegmentationNetwork&&) noexcept = default;
SegmentationNetwork& SegmentationNetwork::operator=(SegmentationNetwork&&) noexcept = default;
SegmentationNetwork::~SegmentationNetwork() = default;

namespace {

void check_patch_shape(const Tensor& x, const NetworkConfig& cfg) {
    if (x.rank() != 3) throw std::invalid_argument("network input must be a (p,p,p) patch");
    for (int a = 0; a < 3; ++a)
        if (x.extent(a) != cfg.patch_size)
            throw std::invalid_argument("patch shape " + shape_string(x.shape()) +
                                        " does not match configured size " +
                                        std::to_string(cfg.patch_size));
}

Tensor with_channel_axis(const Tensor& x) {
    Tensor out({1, x.extent(0), x.extent(1), x.extent(2)});
    std::copy(x.data(), x.data() + x.size(), out.data());
    return out;
}

}  // namespace

Prediction SegmentationNetwork::forward(const Tensor& patch_image) {
    check_patch_shape(patch_image, cfg_);
    Tensor logits = impl_->forward(with_channel_axis(patch_image), /*training=*/false);
    return Prediction(softmax_.forward(logits, /*training=*/false));
}

Prediction SegmentationNetwork::forward_training(const Tensor& patch_image) {
    check_patch_shape(patch_image, cfg_);
    Tensor logits = impl_->forward(with_channel_axis(patch_image), /*training=*/true);
    return Prediction(softmax_.forward(logits, /*training=*/true));
}

void SegmentationNetwork::backward(const Tensor& grad_probabilities) {
    impl_->backward(softmax_.backward(grad_probabilities));
}

void SegmentationNetwork::zero_grads() {
    for (auto& p : parameters()) p.grad->fill(0.0);
}

std::vector<NamedParam> SegmentationNetwork::parameters() {
    std::vector<NamedParam> out;
    impl_->collect(out);
    return out;
}

std::map<std::string, Tensor> SegmentationNetwork::snapshot_parameters() {
    std::map<std::string, Tensor> out;
    for (const auto& p : parameters()) out[p.name] = *p.value;  // deep copy
    return out;
}

void SegmentationNetwork::load_parameters(const std::map<std::string, Tensor>& params) {
    auto mine = parameters();
    if (params.size() != mine.size())
        throw std::invalid_argument("parameter map size mismatch");
    for (auto& p : mine) {
        auto it = params.find(p.name);
        if (it == params.end()) throw std::invalid_argument("missing parameter: " + p.name);
        if (it->second.shape() != p.value->shape())
            throw std::invalid_argument("shape mismatch for parameter " + p.name);
        *p.value = it->second;
    }
}

SegmentationNetwork build_network(const NetworkConfig& cfg) { return SegmentationNetwork(cfg); }

// ---- checkpoint io -----------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

void save_tensors(const std::string& path, const NetworkConfig& cfg,
                  const std::map<std::string, Tensor>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(f, 1);  // version
    const std::string cfg_json = cfg.to_json();
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(cfg_json.size()));
    f.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    write_pod<std::uint64_t>(f, tensors.size());
    for (const auto& [name, t] : tensors) {
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint32_t>(f, 0);  // dtype 0 = float64
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = read_pod<std::uint32_t>(f);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    const auto cfg_len = read_pod<std::uint32_t>(f);
    std::string cfg_json(cfg_len, '\0');
    f.read(cfg_json.data(), cfg_len);

    LoadedCheckpoint out;
    out.config = NetworkConfig::from_json(cfg_json);
    const auto count = read_pod<std::uint64_t>(f);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto dtype = read_pod<std::uint32_t>(f);
        if (dtype != 0) throw std::runtime_error("unsupported tensor dtype in checkpoint");
        const auto ndim = read_pod<std::uint32_t>(f);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(f));
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        out.tensors.emplace(std::move(name), std::move(t));
    }
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    return out;
}

}  // namespace vseg::nn
