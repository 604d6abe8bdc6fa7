#include "derain/net.hpp"

#include <cmath>
#include <cstring>

#include "derain/kernels.hpp"
#include "derain/util.hpp"

namespace derain {
namespace {

const kernels::Backend& K() { return kernels::active(); }

Tensor concat3(const Tensor& a, const Tensor& b, const Tensor& c) {
    Tensor out(a.c + b.c + c.c, a.h, a.w);
    const size_t plane = static_cast<size_t>(a.h) * a.w;
    std::memcpy(out.data(), a.data(), a.c * plane * sizeof(double));
    std::memcpy(out.data() + a.c * plane, b.data(), b.c * plane * sizeof(double));
    std::memcpy(out.data() + (a.c + b.c) * plane, c.data(), c.c * plane * sizeof(double));
    return out;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
    Tensor out(a.c, a.h, a.w);
    K().add(a.data(), b.data(), out.data(), a.size());
    return out;
}

uint64_t hash_doubles(uint64_t h, const std::vector<double>& v) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

} // namespace

void ArchConfig::validate() const {
    if (base_channels < 4) throw ValidationError("arch: base_channels must be >= 4");
    if (depth < 1) throw ValidationError("arch: depth must be >= 1");
    if (depth > 6) throw ValidationError("arch: depth must be <= 6");
}

// ---------------------------------------------------------------------------
// Layers

void Conv3x3::init(int in_channels, int out_channels, int stride_, Rng& rng) {
    in_c = in_channels;
    out_c = out_channels;
    stride = stride_;
    w.resize(static_cast<size_t>(out_c) * in_c * 9);
    b.assign(out_c, 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(out_c, 0.0);
    const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * 9.0));
    for (double& x : w) x = std * rng.normal();
}

Tensor Conv3x3::forward(const Tensor& in) const {
    if (in.c != in_c)
        throw ValidationError("conv: expected " + std::to_string(in_c) + " input channels, got " +
                              std::to_string(in.c));
    if (stride == 2 && (in.h % 2 || in.w % 2))
        throw ValidationError("conv stride 2: input size must be even");
    Tensor out(out_c, in.h / stride, in.w / stride);
    K().conv3x3_fwd(in.data(), w.data(), b.data(), out.data(), in_c, out_c, in.h, in.w, stride);
    return out;
}

Tensor Conv3x3::backward(const Tensor& grad_out, const Tensor& in, bool want_input_grad) {
    K().conv3x3_bwd_params(grad_out.data(), in.data(), gw.data(), gb.data(), in_c, out_c,
                           in.h, in.w, stride);
    Tensor gin;
    if (want_input_grad) {
        gin = Tensor(in.c, in.h, in.w);
        K().conv3x3_bwd_input(grad_out.data(), w.data(), gin.data(), in_c, out_c, in.h,
                              in.w, stride);
    }
    return gin;
}

void Conv3x3::zero_grads() {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
}

Tensor upsample2(const Tensor& in) {
    Tensor out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < out.h; ++y) {
            const double* irow = in.channel(c) + static_cast<size_t>(y / 2) * in.w;
            double* orow = out.channel(c) + static_cast<size_t>(y) * out.w;
            for (int x = 0; x < out.w; ++x) orow[x] = irow[x / 2];
        }
    return out;
}

Tensor upsample2_backward(const Tensor& grad_out) {
    Tensor gin(grad_out.c, grad_out.h / 2, grad_out.w / 2);
    for (int c = 0; c < grad_out.c; ++c)
        for (int y = 0; y < grad_out.h; ++y) {
            const double* grow = grad_out.channel(c) + static_cast<size_t>(y) * grad_out.w;
            double* irow = gin.channel(c) + static_cast<size_t>(y / 2) * gin.w;
            for (int x = 0; x < grad_out.w; ++x) irow[x / 2] += grow[x];
        }
    return gin;
}

Tensor silu(const Tensor& in) {
    Tensor out(in.c, in.h, in.w);
    K().silu_fwd(in.data(), out.data(), in.size());
    return out;
}

Tensor sigmoid(const Tensor& in) {
    Tensor out(in.c, in.h, in.w);
    K().sigmoid_fwd(in.data(), out.data(), in.size());
    return out;
}

// ---------------------------------------------------------------------------
// Encoder

void Encoder::init(const ArchConfig& arch, int in_channels_, Rng& rng) {
    in_channels = in_channels_;
    conv_a.assign(arch.depth, {});
    conv_down.assign(arch.depth, {});
    int prev = in_channels;
    for (int b = 0; b < arch.depth; ++b) {
        const int ch = arch.level_channels(b + 1);
        conv_a[b].init(prev, ch, 1, rng);
        conv_down[b].init(ch, ch, 2, rng);
        prev = ch;
    }
}

EncoderTrace Encoder::forward(const Tensor& input) const {
    EncoderTrace tr;
    tr.input = input;
    const Tensor* x = &tr.input;
    for (size_t b = 0; b < conv_a.size(); ++b) {
        tr.pre_act.push_back(conv_a[b].forward(*x));
        tr.skip.push_back(silu(tr.pre_act.back()));
        tr.down.push_back(conv_down[b].forward(tr.skip.back()));
        x = &tr.down.back();
    }
    return tr;
}

void Encoder::backward(const EncoderTrace& tr, const Tensor& grad_features,
                       const std::vector<Tensor>* skip_grads) {
    const int depth = static_cast<int>(conv_a.size());
    Tensor gd = grad_features;
    for (int b = depth - 1; b >= 0; --b) {
        Tensor gs = conv_down[b].backward(gd, tr.skip[b]);
        if (skip_grads) K().add(gs.data(), (*skip_grads)[b].data(), gs.data(), gs.size());
        Tensor ga(gs.c, gs.h, gs.w);
        K().silu_bwd(tr.pre_act[b].data(), gs.data(), ga.data(), ga.size());
        const Tensor& block_in = b == 0 ? tr.input : tr.down[b - 1];
        gd = conv_a[b].backward(ga, block_in, /*want_input_grad=*/b > 0);
    }
}

void Encoder::zero_grads() {
    for (auto& c : conv_a) c.zero_grads();
    for (auto& c : conv_down) c.zero_grads();
}

void Encoder::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (size_t b = 0; b < conv_a.size(); ++b) {
        const std::string base = prefix + ".b" + std::to_string(b);
        out.push_back({base + ".ca.w", &conv_a[b].w, &conv_a[b].gw});
        out.push_back({base + ".ca.b", &conv_a[b].b, &conv_a[b].gb});
        out.push_back({base + ".cd.w", &conv_down[b].w, &conv_down[b].gw});
        out.push_back({base + ".cd.b", &conv_down[b].b, &conv_down[b].gb});
    }
}

// ---------------------------------------------------------------------------
// Decoder

void Decoder::init(const ArchConfig& arch, int out_channels, Rng& rng) {
    convs.assign(arch.depth, {});
    for (int lv = 0; lv < arch.depth; ++lv) {
        const int level = arch.depth - lv; // levels run depth..1
        const int in_ch = lv == 0 ? arch.level_channels(arch.depth)
                                  : arch.level_channels(level + 1);
        convs[lv].init(in_ch, arch.level_channels(level), 1, rng);
    }
    head.init(arch.level_channels(1), out_channels, 1, rng);
}

DecoderTrace Decoder::forward(const Tensor& features, const std::vector<Tensor>& skips) const {
    DecoderTrace tr;
    const int depth = static_cast<int>(convs.size());
    const Tensor* z = &features;
    for (int lv = 0; lv < depth; ++lv) {
        tr.up_in.push_back(upsample2(*z));
        Tensor a = convs[lv].forward(tr.up_in.back());
        const Tensor& skip = skips[depth - 1 - lv];
        require_same_shape(a, skip, "decoder skip");
        tr.pre_act.push_back(add_tensors(a, skip));
        tr.act.push_back(silu(tr.pre_act.back()));
        z = &tr.act.back();
    }
    tr.head_pre = head.forward(*z);
    tr.out = sigmoid(tr.head_pre);
    return tr;
}

Tensor Decoder::backward(const DecoderTrace& tr, const Tensor& grad_out,
                         std::vector<Tensor>& skip_grads) {
    const int depth = static_cast<int>(convs.size());
    skip_grads.assign(depth, {});

    Tensor g_head_pre(tr.out.c, tr.out.h, tr.out.w);
    K().sigmoid_bwd(tr.out.data(), grad_out.data(), g_head_pre.data(), g_head_pre.size());
    Tensor gz = head.backward(g_head_pre, tr.act.back());

    for (int lv = depth - 1; lv >= 0; --lv) {
        Tensor gm(gz.c, gz.h, gz.w);
        K().silu_bwd(tr.pre_act[lv].data(), gz.data(), gm.data(), gm.size());
        skip_grads[depth - 1 - lv] = gm; // the skip add fans the gradient out unchanged
        Tensor gu = convs[lv].backward(gm, tr.up_in[lv]);
        gz = upsample2_backward(gu);
    }
    return gz;
}

void Decoder::zero_grads() {
    for (auto& c : convs) c.zero_grads();
    head.zero_grads();
}

void Decoder::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (size_t lv = 0; lv < convs.size(); ++lv) {
        const std::string base = prefix + ".l" + std::to_string(lv);
        out.push_back({base + ".w", &convs[lv].w, &convs[lv].gw});
        out.push_back({base + ".b", &convs[lv].b, &convs[lv].gb});
    }
    out.push_back({prefix + ".head.w", &head.w, &head.gw});
    out.push_back({prefix + ".head.b", &head.b, &head.gb});
}

// ---------------------------------------------------------------------------
// DerainNet

static void check_window(const FrameWindow& window, const ArchConfig& arch) {
    const int f = arch.downsample_factor();
    const Tensor& c = window.frames[2];
    if (c.h % f || c.w % f)
        throw ValidationError("window size " + std::to_string(c.h) + "x" + std::to_string(c.w) +
                              " not divisible by downsample factor " + std::to_string(f));
    for (const Tensor& t : window.frames) {
        require_same_shape(t, c, "window frame");
        if (t.c != 3) throw ValidationError("window frames must have 3 channels");
    }
}

void DerainNet::init(const ArchConfig& arch_, Rng& rng) {
    arch_.validate();
    arch = arch_;
    enc1.init(arch, 9, rng);
    enc2.init(arch, 9, rng);
    dec.init(arch, 3, rng);
}

DerainTrace DerainNet::forward(const FrameWindow& window) const {
    check_window(window, arch);
    DerainTrace tr;
    tr.group1 = concat3(window.frames[1], window.frames[2], window.frames[3]);
    tr.group2 = concat3(window.frames[0], window.frames[2], window.frames[4]);
    tr.enc1 = enc1.forward(tr.group1);
    tr.enc2 = enc2.forward(tr.group2);
    tr.feat1 = tr.enc1.features();
    tr.feat2 = tr.enc2.features();
    tr.feat = add_tensors(tr.feat1, tr.feat2);
    tr.skips.clear();
    for (size_t b = 0; b < tr.enc1.skip.size(); ++b)
        tr.skips.push_back(add_tensors(tr.enc1.skip[b], tr.enc2.skip[b]));
    tr.dec = dec.forward(tr.feat, tr.skips);
    return tr;
}

void DerainNet::backward(const DerainTrace& tr, const Tensor& grad_background,
                         const Tensor* grad_features) {
    std::vector<Tensor> skip_grads;
    Tensor gf = dec.backward(tr.dec, grad_background, skip_grads);
    if (grad_features) K().add(gf.data(), grad_features->data(), gf.data(), gf.size());
    // feat and each skip are sums over the two encoders, so both encoders
    // receive the same gradients.
    enc1.backward(tr.enc1, gf, &skip_grads);
    enc2.backward(tr.enc2, gf, &skip_grads);
}

void DerainNet::zero_grads() {
    enc1.zero_grads();
    enc2.zero_grads();
    dec.zero_grads();
}

std::vector<ParamRef> DerainNet::params() {
    std::vector<ParamRef> out;
    enc1.collect_params("e1", out);
    enc2.collect_params("e2", out);
    dec.collect_params("dec", out);
    return out;
}

uint64_t DerainNet::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto& self = const_cast<DerainNet&>(*this);
    for (const auto& p : self.params()) h = hash_doubles(h, *p.value);
    return h;
}

// ---------------------------------------------------------------------------
// ReviewNet

void ReviewNet::init(const ArchConfig& arch_, Rng& rng) {
    arch_.validate();
    arch = arch_;
    enc.init(arch, 3, rng);
    dec.init(arch, 1, rng);
}

ReviewTrace ReviewNet::forward(const Tensor& residual) const {
    if (residual.c != 3) throw ValidationError("review net expects a 3-channel residual");
    const int f = arch.downsample_factor();
    if (residual.h % f || residual.w % f)
        throw ValidationError("residual size not divisible by downsample factor " +
                              std::to_string(f));
    ReviewTrace tr;
    tr.enc = enc.forward(residual);
    tr.dec = dec.forward(tr.enc.features(), tr.enc.skip);
    return tr;
}

void ReviewNet::backward(const ReviewTrace& tr, const Tensor& grad_rain_map,
                         const Tensor* grad_features) {
    std::vector<Tensor> skip_grads;
    Tensor gf = dec.backward(tr.dec, grad_rain_map, skip_grads);
    if (grad_features) K().add(gf.data(), grad_features->data(), gf.data(), gf.size());
    enc.backward(tr.enc, gf, &skip_grads);
}

void ReviewNet::zero_grads() {
    enc.zero_grads();
    dec.zero_grads();
}

std::vector<ParamRef> ReviewNet::params() {
    std::vector<ParamRef> out;
    enc.collect_params("enc", out);
    dec.collect_params("dec", out);
    return out;
}

uint64_t ReviewNet::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto& self = const_cast<ReviewNet&>(*this);
    for (const auto& p : self.params()) h = hash_doubles(h, *p.value);
    return h;
}

// ---------------------------------------------------------------------------
// Free functions

GroupedFeatures encode_grouped(const DerainNet& net, const FrameWindow& window) {
    check_window(window, net.arch);
    GroupedFeatures out;
    const Tensor g1 = concat3(window.frames[1], window.frames[2], window.frames[3]);
    const Tensor g2 = concat3(window.frames[0], window.frames[2], window.frames[4]);
    const EncoderTrace t1 = net.enc1.forward(g1);
    const EncoderTrace t2 = net.enc2.forward(g2);
    out.f1 = t1.features();
    out.f2 = t2.features();
    out.f = add_tensors(out.f1, out.f2);
    for (size_t b = 0; b < t1.skip.size(); ++b)
        out.skips.push_back(add_tensors(t1.skip[b], t2.skip[b]));
    return out;
}

Tensor extract_residual(const FrameWindow& window, const Tensor& background) {
    require_same_shape(window.center(), background, "extract_residual");
    Tensor r(background.c, background.h, background.w);
    K().sub(window.center().data(), background.data(), r.data(), r.size());
    return r;
}

ReviewTrace review_forward(const ReviewNet& net, const Tensor& residual) {
    if (!residual.all_finite())
        throw ValidationError("review_forward: residual contains non-finite values");
    return net.forward(residual);
}

} // namespace derain
