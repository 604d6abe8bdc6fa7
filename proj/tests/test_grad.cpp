#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "derain/loss.hpp"
#include "derain/net.hpp"
#include "oracles.hpp"

using namespace derain;
using oracle::random_tensor;

namespace {

constexpr double kEps = 1e-6;
constexpr double kRelTol = 1e-5; // double-precision gate
constexpr double kAbsFloor = 1e-9;

bool grad_matches(double analytic, double fd) {
    const double diff = std::fabs(analytic - fd);
    if (diff <= kAbsFloor) return true;
    return diff / std::max(std::fabs(analytic), std::fabs(fd)) <= kRelTol;
}

// Central finite differences over n randomly selected parameters, compared
// against the already-accumulated analytic gradients.
void check_param_grads(std::vector<ParamRef> params, const std::function<double()>& loss,
                       int n_samples, Rng& rng) {
    std::vector<std::pair<size_t, size_t>> flat; // (param index, element index)
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (size_t i = 0; i < params[pi].value->size(); ++i) flat.push_back({pi, i});

    int checked = 0;
    for (int s = 0; s < n_samples; ++s) {
        const auto [pi, i] = flat[rng.uniform_index(flat.size())];
        double& wref = (*params[pi].value)[i];
        const double analytic = (*params[pi].grad)[i];
        const double keep = wref;
        wref = keep + kEps;
        const double up = loss();
        wref = keep - kEps;
        const double dn = loss();
        wref = keep;
        const double fd = (up - dn) / (2.0 * kEps);
        INFO("param ", params[pi].name, "[", i, "] analytic=", analytic, " fd=", fd);
        CHECK(grad_matches(analytic, fd));
        ++checked;
    }
    REQUIRE(checked >= n_samples);
}

FrameWindow random_window(Rng& rng, int size = 16) {
    FrameWindow win;
    for (int i = 0; i < 5; ++i) win.frames[i] = random_tensor(3, size, size, rng);
    win.target = random_tensor(3, size, size, rng);
    return win;
}

const ArchConfig kTinyArch{4, 2};

} // namespace

TEST_CASE("ssim gradient matches finite differences on pixels") {
    Rng rng(21);
    Tensor pred = random_tensor(1, 16, 16, rng, 0.1, 0.9);
    const Tensor target = random_tensor(1, 16, 16, rng);
    const ValueGrad vg = ssim_grad(pred, target);
    CHECK(vg.value == doctest::Approx(ssim(pred, target)).epsilon(1e-12));

    for (int s = 0; s < 40; ++s) {
        const size_t i = rng.uniform_index(pred.size());
        const double keep = pred.v[i];
        pred.v[i] = keep + kEps;
        const double up = ssim(pred, target);
        pred.v[i] = keep - kEps;
        const double dn = ssim(pred, target);
        pred.v[i] = keep;
        CHECK(grad_matches(vg.grad.v[i], (up - dn) / (2.0 * kEps)));
    }
}

TEST_CASE("combined loss gradient matches finite differences on pixels") {
    Rng rng(22);
    const LossWeights w;
    Tensor pred = random_tensor(3, 16, 16, rng, 0.1, 0.9);
    const Tensor target = random_tensor(3, 16, 16, rng);
    const ValueGrad vg = combined_loss_grad(pred, target, w);
    CHECK(vg.value == doctest::Approx(combined_loss(pred, target, w)).epsilon(1e-12));

    for (int s = 0; s < 40; ++s) {
        const size_t i = rng.uniform_index(pred.size());
        const double keep = pred.v[i];
        pred.v[i] = keep + kEps;
        const double up = combined_loss(pred, target, w);
        pred.v[i] = keep - kEps;
        const double dn = combined_loss(pred, target, w);
        pred.v[i] = keep;
        CHECK(grad_matches(vg.grad.v[i], (up - dn) / (2.0 * kEps)));
    }
}

TEST_CASE("combined loss gradients flow correctly through the derain net") {
    Rng rng(23);
    DerainNet net;
    Rng init(100);
    net.init(kTinyArch, init);
    const LossWeights w;
    const FrameWindow win = random_window(rng);

    const DerainTrace tr = net.forward(win);
    const ValueGrad vg = combined_loss_grad(tr.background(), win.target, w);
    net.zero_grads();
    net.backward(tr, vg.grad, nullptr);

    auto loss = [&] { return combined_loss(net.forward(win).background(), win.target, w); };
    check_param_grads(net.params(), loss, 25, rng);
}

TEST_CASE("feature distillation gradients flow into the encoders") {
    Rng rng(24);
    DerainNet net;
    Rng init(101);
    net.init(kTinyArch, init);
    const FrameWindow win = random_window(rng);

    Rng trng(55);
    const Tensor teacher_f = random_tensor(8, 4, 4, trng, -0.5, 0.5);

    const DerainTrace tr = net.forward(win);
    REQUIRE(tr.features().same_shape(teacher_f));
    const ValueGrad fg = feature_kd_loss_grad(tr.features(), teacher_f);
    const Tensor zero_b = zeros_like(tr.background());
    net.zero_grads();
    net.backward(tr, zero_b, &fg.grad);

    auto loss = [&] { return feature_kd_loss(net.forward(win).features(), teacher_f); };
    check_param_grads(net.params(), loss, 25, rng);
}

TEST_CASE("review replay loss gradients reach only the student") {
    Rng rng(25);
    DerainNet student;
    Rng init(102);
    student.init(kTinyArch, init);
    const LossWeights w;
    const FrameWindow win = random_window(rng);

    // Detached teacher products: a fixed rain map and background.
    const Tensor rain_map = random_tensor(1, 16, 16, rng, 0.0, 0.4);
    const Tensor teacher_b = random_tensor(3, 16, 16, rng, 0.2, 0.8);
    AffineParams p;
    p.rotation_deg = 5.0;
    p.scale = 1.05;
    p.translate_frac = {0.05, -0.03};

    student.zero_grads();
    const double v =
        review_replay_loss_backward(student, win, rain_map, teacher_b, w, p, 1.0);
    CHECK(v == doctest::Approx(review_replay_loss(student, win, rain_map, teacher_b, w, p))
                  .epsilon(1e-12));

    auto loss = [&] { return review_replay_loss(student, win, rain_map, teacher_b, w, p); };
    check_param_grads(student.params(), loss, 20, rng);

    SUBCASE("teacher products are detached: perturbing a frozen teacher net leaves the loss unchanged") {
        DerainNet teacher;
        Rng init2(103);
        teacher.init(kTinyArch, init2);
        const double before = review_replay_loss(student, win, rain_map, teacher_b, w, p);
        auto params = teacher.params();
        (*params[0].value)[0] += 0.5; // the cached rain map and background do not see this
        const double after = review_replay_loss(student, win, rain_map, teacher_b, w, p);
        CHECK(before == after);
    }
}

TEST_CASE("review net loss gradients flow through the review net") {
    Rng rng(26);
    ReviewNet net;
    Rng init(104);
    net.init(kTinyArch, init);
    const LossWeights w;

    const Tensor residual = random_tensor(3, 16, 16, rng, -0.5, 0.5);
    const Tensor target = random_tensor(1, 16, 16, rng);
    Rng trng(56);
    const Tensor teacher_f = random_tensor(8, 4, 4, trng, -0.5, 0.5);
    const Tensor teacher_s = random_tensor(1, 16, 16, trng);

    SUBCASE("stage 1: supervised term only") {
        const ReviewTrace tr = net.forward(residual);
        const ReviewNetLossGrads g =
            review_net_loss_grad(1, nullptr, nullptr, tr.rain_map(), nullptr, target, w);
        net.zero_grads();
        net.backward(tr, g.grad_rain_map, nullptr);

        auto loss = [&] {
            const ReviewTrace t = net.forward(residual);
            return review_net_loss(1, nullptr, nullptr, t.rain_map(), nullptr, target, w);
        };
        check_param_grads(net.params(), loss, 20, rng);
    }
    SUBCASE("stage 2: full composition with teacher terms") {
        const ReviewTrace tr = net.forward(residual);
        REQUIRE(tr.features().same_shape(teacher_f));
        const ReviewNetLossGrads g = review_net_loss_grad(2, &tr.features(), &teacher_f,
                                                          tr.rain_map(), &teacher_s, target, w);
        net.zero_grads();
        net.backward(tr, g.grad_rain_map, &g.grad_features);

        auto loss = [&] {
            const ReviewTrace t = net.forward(residual);
            return review_net_loss(2, &t.features(), &teacher_f, t.rain_map(), &teacher_s,
                                   target, w);
        };
        check_param_grads(net.params(), loss, 20, rng);
    }
}
