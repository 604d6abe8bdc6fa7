#pragma once

#include <string>
#include <vector>

#include "derain/data.hpp"
#include "derain/rng.hpp"
#include "derain/tensor.hpp"

namespace derain {

struct ArchConfig {
    int base_channels = 8;
    int depth = 2; // number of 2x downsampling levels

    int downsample_factor() const { return 1 << depth; }
    int level_channels(int level) const { return base_channels << (level - 1); } // level 1..depth
    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

struct Conv3x3 {
    int in_c = 0, out_c = 0, stride = 1;
    std::vector<double> w, b;   // w: out_c*in_c*9
    std::vector<double> gw, gb; // gradient accumulators

    void init(int in_channels, int out_channels, int stride_, Rng& rng);
    Tensor forward(const Tensor& in) const;
    // Accumulates gw/gb; returns the input gradient when want_input_grad.
    Tensor backward(const Tensor& grad_out, const Tensor& in, bool want_input_grad = true);
    void zero_grads();
};

// Mutable view of one named parameter array and its gradient.
struct ParamRef {
    std::string name;
    std::vector<double>* value;
    std::vector<double>* grad;
};

Tensor upsample2(const Tensor& in);
Tensor upsample2_backward(const Tensor& grad_out);
Tensor silu(const Tensor& in);
Tensor sigmoid(const Tensor& in);

struct EncoderTrace {
    Tensor input;
    std::vector<Tensor> pre_act; // conv_a output per block
    std::vector<Tensor> skip;    // activation per block (the skip tap)
    std::vector<Tensor> down;    // strided conv output per block

    const Tensor& features() const { return down.back(); }
};

// `depth` blocks of [conv3x3, activation, conv3x3 stride 2]; channels double
// per level from base_channels.
struct Encoder {
    int in_channels = 0;
    std::vector<Conv3x3> conv_a;
    std::vector<Conv3x3> conv_down;

    void init(const ArchConfig& arch, int in_channels_, Rng& rng);
    EncoderTrace forward(const Tensor& input) const;
    // skip_grads may be null; input gradient is not produced (inputs are data).
    void backward(const EncoderTrace& tr, const Tensor& grad_features,
                  const std::vector<Tensor>* skip_grads);
    void zero_grads();
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct DecoderTrace {
    std::vector<Tensor> up_in;   // upsampled tensor entering each level's conv
    std::vector<Tensor> pre_act; // conv output plus skip, before activation
    std::vector<Tensor> act;
    Tensor head_pre;
    Tensor out; // bounded to (0,1) by the output sigmoid
};

// Mirrors the encoder: nearest-neighbor upsample + conv + summed skip per
// level, then a head conv with a sigmoid output bound.
struct Decoder {
    std::vector<Conv3x3> convs;
    Conv3x3 head;

    void init(const ArchConfig& arch, int out_channels, Rng& rng);
    // skips[b] is the summed skip at encoder block b (b = 0 is full resolution).
    DecoderTrace forward(const Tensor& features, const std::vector<Tensor>& skips) const;
    // Returns the gradient at `features` and fills skip_grads (sized depth).
    Tensor backward(const DecoderTrace& tr, const Tensor& grad_out,
                    std::vector<Tensor>& skip_grads);
    void zero_grads();
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct DerainTrace {
    Tensor group1, group2; // channel-concatenated frame groups
    EncoderTrace enc1, enc2;
    std::vector<Tensor> skips; // pairwise-summed skips
    Tensor feat1, feat2, feat; // feat = feat1 + feat2
    DecoderTrace dec;

    const Tensor& background() const { return dec.out; }
    const Tensor& features() const { return feat; }
};

// Frame-grouped derain network: two encoders over different frame-rate
// groups, summed features and skips, one decoder producing the background.
struct DerainNet {
    ArchConfig arch;
    Encoder enc1, enc2;
    Decoder dec;

    void init(const ArchConfig& arch_, Rng& rng);
    DerainTrace forward(const FrameWindow& window) const;
    // grad_features may be null. Accumulates parameter gradients.
    void backward(const DerainTrace& tr, const Tensor& grad_background,
                  const Tensor* grad_features);
    void zero_grads();
    std::vector<ParamRef> params();
    uint64_t checksum() const; // FNV over all parameter bytes
};

struct ReviewTrace {
    EncoderTrace enc;
    DecoderTrace dec;

    const Tensor& rain_map() const { return dec.out; }
    const Tensor& features() const { return enc.features(); }
};

// Maps a derain residual to a single-channel rain map in (0,1).
struct ReviewNet {
    ArchConfig arch;
    Encoder enc;
    Decoder dec;

    void init(const ArchConfig& arch_, Rng& rng);
    ReviewTrace forward(const Tensor& residual) const;
    void backward(const ReviewTrace& tr, const Tensor& grad_rain_map,
                  const Tensor* grad_features);
    void zero_grads();
    std::vector<ParamRef> params();
    uint64_t checksum() const;
};

struct GroupedFeatures {
    Tensor f1, f2, f;          // f = f1 + f2
    std::vector<Tensor> skips; // pairwise sums
};

// The two-encoder front end alone (forward only).
GroupedFeatures encode_grouped(const DerainNet& net, const FrameWindow& window);

// R = X_t - B; values lie in [-1, 1] since both inputs are in [0,1].
Tensor extract_residual(const FrameWindow& window, const Tensor& background);

// Throws on non-finite residual input.
ReviewTrace review_forward(const ReviewNet& net, const Tensor& residual);

} // namespace derain
