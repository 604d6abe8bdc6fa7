#include "derain/kernels.hpp"

#include <cstdlib>
#include <string>

#include "derain/util.hpp"

namespace derain::kernels {
namespace {

const Backend* pick_auto() {
    if (const Backend* b = avx2_backend()) return b;
    return &scalar_backend();
}

const Backend* resolve(std::string_view name) {
    if (name == "auto") return pick_auto();
    if (name == "scalar") return &scalar_backend();
    if (name == "avx2") {
        const Backend* b = avx2_backend();
        if (!b) throw ValidationError("kernel backend 'avx2' not available on this CPU/build");
        return b;
    }
    throw ValidationError("unknown kernel backend '" + std::string(name) +
                          "' (expected auto|scalar|avx2)");
}

const Backend*& current() {
    static const Backend* b = [] {
        if (const char* env = std::getenv("DERAINLAB_KERNELS")) return resolve(env);
        return pick_auto();
    }();
    return b;
}

} // namespace

const Backend& active() { return *current(); }

std::string_view active_name() { return current()->name; }

void set_backend(std::string_view name) { current() = resolve(name); }

} // namespace derain::kernels
