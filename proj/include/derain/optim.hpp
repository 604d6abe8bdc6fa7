#pragma once

#include <cstdint>
#include <vector>

#include "derain/net.hpp"

namespace derain {

// Adam moment buffers, flattened over the network's parameter order.
struct AdamState {
    uint64_t t = 0;
    std::vector<double> m, v;

    void reset(const std::vector<ParamRef>& params);
    bool matches(const std::vector<ParamRef>& params) const;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip_norm = 0.0; // 0 disables clipping
};

// One update step over the given parameters. Clips the global gradient norm
// first when grad_clip_norm > 0.
void adam_step(std::vector<ParamRef>& params, AdamState& state, const AdamConfig& cfg);

} // namespace derain
