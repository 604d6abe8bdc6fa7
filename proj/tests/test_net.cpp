#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "derain/checkpoint.hpp"
#include "derain/net.hpp"
#include "derain/util.hpp"
#include "oracles.hpp"

using namespace derain;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

FrameWindow random_window(Rng& rng, int size = 16) {
    FrameWindow win;
    for (int i = 0; i < 5; ++i) win.frames[i] = random_tensor(3, size, size, rng);
    win.target = random_tensor(3, size, size, rng);
    return win;
}

void zero_params(std::vector<ParamRef> params) {
    for (auto& p : params) std::fill(p.value->begin(), p.value->end(), 0.0);
}

} // namespace

TEST_CASE("grouping additivity: F equals F1 plus F2 exactly") {
    Rng rng(31);
    DerainNet net;
    Rng init(1);
    net.init({8, 2}, init);

    for (int trial = 0; trial < 5; ++trial) {
        const FrameWindow win = random_window(rng);
        const GroupedFeatures g = encode_grouped(net, win);
        REQUIRE(g.f.same_shape(g.f1));
        for (size_t i = 0; i < g.f.size(); ++i) {
            const double expect = g.f1.v[i] + g.f2.v[i]; // same IEEE add, zero ulps
            CHECK(g.f.v[i] == expect);
        }
        for (size_t b = 0; b < g.skips.size(); ++b) REQUIRE(!g.skips[b].empty());
    }
}

TEST_CASE("zeroing the second encoder leaves F equal to F1") {
    Rng rng(32);
    DerainNet net;
    Rng init(2);
    net.init({8, 2}, init);
    net.enc2 = net.enc1; // same shapes, then zero the copy
    zero_params([&] {
        std::vector<ParamRef> out;
        net.enc2.collect_params("e2", out);
        return out;
    }());

    const FrameWindow win = random_window(rng);
    const GroupedFeatures g = encode_grouped(net, win);
    for (double v : g.f2.v) CHECK(v == 0.0);
    for (size_t i = 0; i < g.f.size(); ++i) CHECK(g.f.v[i] == g.f1.v[i]);
}

TEST_CASE("all-zero parameters give zero features") {
    Rng rng(33);
    DerainNet net;
    Rng init(3);
    net.init({8, 2}, init);
    zero_params(net.params());
    const GroupedFeatures g = encode_grouped(net, random_window(rng));
    for (double v : g.f1.v) CHECK(v == 0.0);
    for (double v : g.f2.v) CHECK(v == 0.0);
    for (double v : g.f.v) CHECK(v == 0.0);
}

TEST_CASE("derain forward contracts") {
    Rng rng(34);
    DerainNet net;
    Rng init(4);
    net.init({8, 2}, init);

    SUBCASE("output matches the center frame shape and stays in (0,1)") {
        for (int size : {16, 24, 32}) {
            const FrameWindow win = random_window(rng, size);
            const DerainTrace tr = net.forward(win);
            CHECK(tr.background().c == 3);
            CHECK(tr.background().h == size);
            CHECK(tr.background().w == size);
            for (double v : tr.background().v) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(tr.features().h == size / 4);
            CHECK(tr.features().all_finite());
        }
    }
    SUBCASE("forward is pure: identical calls give bit-identical output") {
        const FrameWindow win = random_window(rng);
        const DerainTrace a = net.forward(win);
        const DerainTrace b = net.forward(win);
        REQUIRE(a.background().v == b.background().v);
        REQUIRE(a.features().v == b.features().v);
    }
    SUBCASE("indivisible sizes are rejected") {
        FrameWindow win = random_window(rng, 16);
        for (auto& f : win.frames) f = random_tensor(3, 18, 18, rng);
        win.target = random_tensor(3, 18, 18, rng);
        CHECK_THROWS_AS(net.forward(win), ValidationError);
    }
    SUBCASE("zero parameters with zero bias output the constant sigmoid(0)") {
        zero_params(net.params());
        const DerainTrace tr = net.forward(random_window(rng));
        for (double v : tr.background().v) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    }
}

TEST_CASE("residual extraction reconstructs the input") {
    Rng rng(35);
    const FrameWindow win = random_window(rng);

    SUBCASE("background equal to the center gives zero residual") {
        const Tensor r = extract_residual(win, win.center());
        for (double v : r.v) CHECK(v == 0.0);
    }
    SUBCASE("residual plus background rebuilds the center exactly") {
        const Tensor b = random_tensor(3, 16, 16, rng);
        const Tensor r = extract_residual(win, b);
        for (size_t i = 0; i < r.size(); ++i) {
            CHECK(r.v[i] + b.v[i] == win.center().v[i]); // exact: r was formed as x - b
            CHECK(r.v[i] >= -1.0);
            CHECK(r.v[i] <= 1.0);
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(extract_residual(win, Tensor(3, 8, 8)), ValidationError);
    }
}

TEST_CASE("review net contracts") {
    Rng rng(36);
    ReviewNet net;
    Rng init(5);
    net.init({4, 2}, init);

    SUBCASE("single-channel bounded output of the input's spatial size") {
        const Tensor r = random_tensor(3, 24, 16, rng, -1.0, 1.0);
        const ReviewTrace tr = review_forward(net, r);
        CHECK(tr.rain_map().c == 1);
        CHECK(tr.rain_map().h == 24);
        CHECK(tr.rain_map().w == 16);
        for (double v : tr.rain_map().v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    SUBCASE("zero parameters output the constant sigmoid(0)") {
        zero_params(net.params());
        const ReviewTrace tr = review_forward(net, random_tensor(3, 16, 16, rng));
        for (double v : tr.rain_map().v) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("non-finite input is rejected") {
        Tensor r = random_tensor(3, 16, 16, rng);
        r.v[7] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(review_forward(net, r), ValidationError);
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(37);
    DerainNet derain;
    ReviewNet review;
    Rng init(6);
    derain.init({8, 2}, init);
    review.init({4, 2}, init);
    AdamState ad, ar;
    ad.reset(derain.params());
    ar.reset(review.params());
    ad.t = 17;
    for (double& m : ad.m) m = rng.uniform(-1, 1);

    const fs::path path = fs::temp_directory_path() / "derain_ckpt_test.ckpt";
    const StageCheckpoint ckpt = make_checkpoint(derain, review, &ad, &ar, 2, 20, 0xabcdef);
    save_checkpoint(path.string(), ckpt);

    SUBCASE("forward outputs are bit-identical after reload") {
        const FrameWindow win = random_window(rng);
        const Tensor before = derain.forward(win).background();

        const StageCheckpoint loaded = load_checkpoint(path.string());
        CHECK(loaded.stage_index == 2);
        CHECK(loaded.epochs_done == 20);
        CHECK(loaded.config_fingerprint == 0xabcdef);

        DerainNet derain2;
        ReviewNet review2;
        build_from_checkpoint(loaded, derain2, review2);
        const Tensor after = derain2.forward(win).background();
        REQUIRE(before.v == after.v);
        CHECK(derain2.checksum() == derain.checksum());
        CHECK(review2.checksum() == review.checksum());

        AdamState ad2, ar2;
        restore_checkpoint(loaded, derain2, &review2, &ad2, &ar2);
        CHECK(ad2.t == 17);
        REQUIRE(ad2.m == ad.m);
        REQUIRE(ar2.v == ar.v);
    }
    SUBCASE("arch mismatch is an explicit error") {
        const StageCheckpoint loaded = load_checkpoint(path.string());
        DerainNet wrong;
        Rng init2(7);
        wrong.init({8, 3}, init2); // depth mismatch
        try {
            restore_checkpoint(loaded, wrong, nullptr, nullptr, nullptr);
            FAIL("expected arch error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("arch") != std::string::npos);
        }
    }
    SUBCASE("a tampered byte fails the checksum") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        bytes[bytes.size() / 2] ^= 0x40;
        const fs::path bad = fs::temp_directory_path() / "derain_ckpt_bad.ckpt";
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            load_checkpoint(bad.string());
            FAIL("expected checksum error");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("checksum") != std::string::npos);
        }
    }
    SUBCASE("truncated file is rejected") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const fs::path bad = fs::temp_directory_path() / "derain_ckpt_trunc.ckpt";
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(bad.string()), IoError);
    }
}

TEST_CASE("upsample and its adjoint") {
    Rng rng(38);
    const Tensor x = random_tensor(2, 6, 5, rng);
    const Tensor up = upsample2(x);
    REQUIRE(up.h == 12);
    REQUIRE(up.w == 10);
    for (int y = 0; y < up.h; ++y)
        for (int xx = 0; xx < up.w; ++xx) CHECK(up.at(1, y, xx) == x.at(1, y / 2, xx / 2));

    // <u, up(x)> == <up_adj(u), x>
    const Tensor u = random_tensor(2, 12, 10, rng, -1, 1);
    const Tensor adj = upsample2_backward(u);
    double lhs = 0, rhs = 0;
    for (size_t i = 0; i < u.size(); ++i) lhs += u.v[i] * up.v[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += adj.v[i] * x.v[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("depth-3 nets forward and train-step cleanly") {
    Rng rng(39);
    DerainNet net;
    Rng init(8);
    net.init({8, 3}, init); // the larger preset's depth
    FrameWindow win;
    for (int i = 0; i < 5; ++i) win.frames[i] = random_tensor(3, 24, 16, rng);
    win.target = random_tensor(3, 24, 16, rng);

    const DerainTrace tr = net.forward(win);
    CHECK(tr.background().h == 24);
    CHECK(tr.background().w == 16);
    CHECK(tr.features().h == 3);
    CHECK(tr.features().w == 2);
    CHECK(tr.background().all_finite());

    Tensor g = zeros_like(tr.background());
    g.fill(1e-3);
    net.zero_grads();
    net.backward(tr, g, nullptr);
    double gnorm = 0;
    for (const auto& p : net.params())
        for (double v : *p.grad) gnorm += v * v;
    CHECK(gnorm > 0.0);
    CHECK(std::isfinite(gnorm));
}
