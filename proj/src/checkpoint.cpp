#include "derain/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "derain/kernels.hpp"
#include "derain/util.hpp"

namespace derain {
namespace {

constexpr char kMagic[8] = {'D', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

struct Writer {
    std::string buf;

    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u16(uint16_t v) { bytes(&v, 2); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void doubles(const std::vector<double>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * sizeof(double));
    }
    void str(const std::string& s) {
        if (s.size() > UINT16_MAX) throw ValidationError("checkpoint: name too long");
        u16(static_cast<uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void bytes(void* p, size_t n) {
        if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint16_t u16() {
        uint16_t v;
        bytes(&v, 2);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::vector<double> doubles() {
        const uint64_t n = u64();
        if (n > (buf.size() - pos) / sizeof(double)) throw IoError("checkpoint: truncated file");
        std::vector<double> v(n);
        bytes(v.data(), n * sizeof(double));
        return v;
    }
    std::string str() {
        const uint16_t n = u16();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

void write_adam(Writer& w, const AdamState& s) {
    w.u64(s.t);
    w.doubles(s.m);
    w.doubles(s.v);
}

AdamState read_adam(Reader& r) {
    AdamState s;
    s.t = r.u64();
    s.m = r.doubles();
    s.v = r.doubles();
    return s;
}

void check_arch(const ArchConfig& file, const ArchConfig& net, const char* which) {
    if (!(file == net))
        throw ValidationError(std::string("checkpoint ") + which + " arch mismatch: file has base " +
                              std::to_string(file.base_channels) + " depth " +
                              std::to_string(file.depth) + ", net has base " +
                              std::to_string(net.base_channels) + " depth " +
                              std::to_string(net.depth));
}

} // namespace

void AdamState::reset(const std::vector<ParamRef>& params) {
    size_t n = 0;
    for (const auto& p : params) n += p.value->size();
    t = 0;
    m.assign(n, 0.0);
    v.assign(n, 0.0);
}

bool AdamState::matches(const std::vector<ParamRef>& params) const {
    size_t n = 0;
    for (const auto& p : params) n += p.value->size();
    return m.size() == n && v.size() == n;
}

void adam_step(std::vector<ParamRef>& params, AdamState& state, const AdamConfig& cfg) {
    if (!state.matches(params)) throw ValidationError("adam: state size does not match params");
    double clip_scale = 1.0;
    if (cfg.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : params)
            sq += kernels::active().sum_sq(p.grad->data(), p.grad->size());
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip_norm) clip_scale = cfg.grad_clip_norm / norm;
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    size_t off = 0;
    for (auto& p : params) {
        std::vector<double>& w = *p.value;
        const std::vector<double>& g = *p.grad;
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip_scale;
            double& m = state.m[off + i];
            double& v = state.v[off + i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * gi;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * gi * gi;
            w[i] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
        }
        off += w.size();
    }
}

StageCheckpoint make_checkpoint(DerainNet& derain, ReviewNet& review,
                                const AdamState* adam_derain, const AdamState* adam_review,
                                uint32_t stage_index, uint32_t epochs_done,
                                uint64_t config_fingerprint) {
    StageCheckpoint ckpt;
    ckpt.derain_arch = derain.arch;
    ckpt.review_arch = review.arch;
    ckpt.stage_index = stage_index;
    ckpt.epochs_done = epochs_done;
    ckpt.config_fingerprint = config_fingerprint;
    for (const auto& p : derain.params()) ckpt.tensors.emplace_back("derain/" + p.name, *p.value);
    for (const auto& p : review.params()) ckpt.tensors.emplace_back("review/" + p.name, *p.value);
    if (adam_derain && adam_review) {
        ckpt.has_optimizer = true;
        ckpt.adam_derain = *adam_derain;
        ckpt.adam_review = *adam_review;
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const StageCheckpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(ckpt.version);
    w.u32(static_cast<uint32_t>(ckpt.derain_arch.base_channels));
    w.u32(static_cast<uint32_t>(ckpt.derain_arch.depth));
    w.u32(static_cast<uint32_t>(ckpt.review_arch.base_channels));
    w.u32(static_cast<uint32_t>(ckpt.review_arch.depth));
    w.u32(ckpt.stage_index);
    w.u32(ckpt.epochs_done);
    w.u64(ckpt.config_fingerprint);
    w.u32(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, values] : ckpt.tensors) {
        w.str(name);
        w.doubles(values);
    }
    w.u8(ckpt.has_optimizer ? 1 : 0);
    if (ckpt.has_optimizer) {
        write_adam(w, ckpt.adam_derain);
        write_adam(w, ckpt.adam_review);
    }
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(w.buf.data()), static_cast<uInt>(w.buf.size())));
    w.u32(crc);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint '" + path + "'");
        out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
        if (!out) throw IoError("short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path + "'");
}

StageCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + 4) throw IoError("checkpoint: truncated file");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("'" + path + "' is not a checkpoint file");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    const uint32_t crc = static_cast<uint32_t>(::crc32(
        0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc) throw IoError("checkpoint '" + path + "': checksum mismatch");

    Reader r{buf};
    r.pos = sizeof(kMagic);
    StageCheckpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != 1)
        throw IoError("checkpoint '" + path + "': unsupported format version " +
                      std::to_string(ckpt.version));
    ckpt.derain_arch.base_channels = static_cast<int>(r.u32());
    ckpt.derain_arch.depth = static_cast<int>(r.u32());
    ckpt.review_arch.base_channels = static_cast<int>(r.u32());
    ckpt.review_arch.depth = static_cast<int>(r.u32());
    ckpt.stage_index = r.u32();
    ckpt.epochs_done = r.u32();
    ckpt.config_fingerprint = r.u64();
    const uint32_t n_tensors = r.u32();
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        ckpt.tensors.emplace_back(std::move(name), r.doubles());
    }
    ckpt.has_optimizer = r.u8() != 0;
    if (ckpt.has_optimizer) {
        ckpt.adam_derain = read_adam(r);
        ckpt.adam_review = read_adam(r);
    }
    return ckpt;
}

namespace {

void restore_params(const StageCheckpoint& ckpt, const std::string& prefix,
                    std::vector<ParamRef> params) {
    for (auto& p : params) {
        const std::string key = prefix + p.name;
        const auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                     [&](const auto& t) { return t.first == key; });
        if (it == ckpt.tensors.end())
            throw IoError("checkpoint: missing parameter '" + key + "'");
        if (it->second.size() != p.value->size())
            throw ValidationError("checkpoint: parameter '" + key + "' has " +
                                  std::to_string(it->second.size()) + " values, net expects " +
                                  std::to_string(p.value->size()));
        *p.value = it->second;
    }
}

} // namespace

void restore_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain, ReviewNet* review,
                        AdamState* adam_derain, AdamState* adam_review) {
    check_arch(ckpt.derain_arch, derain.arch, "derain");
    restore_params(ckpt, "derain/", derain.params());
    if (review) {
        check_arch(ckpt.review_arch, review->arch, "review");
        restore_params(ckpt, "review/", review->params());
    }
    if (adam_derain) {
        if (!ckpt.has_optimizer)
            throw ValidationError("checkpoint has no optimizer state to restore");
        *adam_derain = ckpt.adam_derain;
        if (!adam_derain->matches(derain.params()))
            throw ValidationError("checkpoint: derain optimizer state size mismatch");
    }
    if (adam_review) {
        if (!ckpt.has_optimizer)
            throw ValidationError("checkpoint has no optimizer state to restore");
        *adam_review = ckpt.adam_review;
        if (review && !adam_review->matches(review->params()))
            throw ValidationError("checkpoint: review optimizer state size mismatch");
    }
}

void build_from_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain, ReviewNet& review) {
    Rng rng(0);
    derain.init(ckpt.derain_arch, rng);
    review.init(ckpt.review_arch, rng);
    restore_checkpoint(ckpt, derain, &review, nullptr, nullptr);
}

void build_derain_from_checkpoint(const StageCheckpoint& ckpt, DerainNet& derain) {
    Rng rng(0);
    derain.init(ckpt.derain_arch, rng);
    restore_checkpoint(ckpt, derain, nullptr, nullptr, nullptr);
}

} // namespace derain
