#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "derain/net.hpp"
#include "derain/optim.hpp"

namespace derain {

// Full snapshot of the derain and review networks plus optimizer state.
// Binary layout is documented in the README (format version 1); files carry
// a trailing CRC32 and round-trip bit-exactly.
struct StageCheckpoint {
    uint32_t version = 1;
    ArchConfig derain_arch;
    ArchConfig review_arch;
    uint32_t stage_index = 1;
    uint32_t epochs_done = 0;
    uint64_t config_fingerprint = 0;
    std::vector<std::pair<std::string, std::vector<double>>> tensors;
    bool has_optimizer = false;
    AdamState adam_derain;
    AdamState adam_review;
};

StageCheckpoint make_checkpoint(DerainNet& derain, ReviewNet& review,
                                const AdamState* adam_derain, const AdamState* adam_review,
                                uint32_t stage_index, uint32_t epochs_done,
                                uint64_t config_fingerprint);

void save_checkpoint(const std::string& path, const StageCheckpoint& ckpt);
StageCheckpoint load_checkpoint(const std::string& path);

// Restores parameters (and optimizer state when pointers are given) into
// already-constructed networks. Throws on any arch_config mismatch.
void restore_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain, ReviewNet* review,
                        AdamState* adam_derain, AdamState* adam_review);

// Builds fresh networks shaped by the checkpoint's arch and fills them.
void build_from_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain, ReviewNet& review);
void build_derain_from_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain);

} // namespace derain
