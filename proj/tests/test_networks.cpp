#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "avlae/nets.hpp"
#include "testutil.hpp"

using namespace avlae;
using testutil::check_gradients;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.model.d = 8;
    cfg.model.T = 4;
    cfg.model.H = 16;
    cfg.model.W = 16;
    cfg.model.channels.generator = 2;
    cfg.model.channels.encoder = 4;
    cfg.model.channels.discriminator = 4;
    cfg.model.channels.hidden = 16;
    cfg.flow.iterations = 3;
    cfg.flow.scale = 2;
    return cfg;
}

template <typename T>
ModelT<T> tiny_model(std::uint64_t seed = 77) {
    Rng rng(seed);
    return ModelT<T>::build(tiny_config(), rng);
}

template <typename T>
TensorPtr<T> moving_video(std::int64_t tn, std::int64_t h, std::int64_t w) {
    std::vector<T> data(static_cast<std::size_t>(3 * tn * h * w));
    for (std::int64_t t = 0; t < tn; ++t) {
        const double cx = 4.0 + 1.0 * static_cast<double>(t), cy = static_cast<double>(h) / 2;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                const double v = -0.8 + 1.5 * std::exp(-(dx * dx + dy * dy) / 8.0);
                for (int c = 0; c < 3; ++c) {
                    data[static_cast<std::size_t>(((c * tn + t) * h + y) * w + x)] =
                        static_cast<T>(v * (c == 0 ? 1.0 : 0.6));
                }
            }
        }
    }
    return TensorT<T>::make({3, tn, h, w}, std::move(data));
}

}  // namespace

TEST_CASE("mappers: output dimension, determinism, stream independence") {
    auto model = tiny_model<float>();
    Rng rng(1);
    auto z = randn_tensor<float>(rng, {8});
    auto w1 = model.mapper_a.forward(z);
    auto w2 = model.mapper_a.forward(z);
    REQUIRE(w1->shape == Shape{8});
    CHECK(std::memcmp(w1->data.data(), w2->data.data(), w1->data.size() * sizeof(float)) == 0);

    // changing z_M leaves map_appearance(z_A) untouched
    auto z_m = randn_tensor<float>(rng, {8});
    auto w_m1 = model.mapper_m.forward(z_m);
    auto w1_again = model.mapper_a.forward(z);
    CHECK(std::memcmp(w1->data.data(), w1_again->data.data(), w1->data.size() * sizeof(float)) == 0);

    auto bad = randn_tensor<float>(rng, {9});
    CHECK_THROWS_AS(model.mapper_a.forward(bad), std::invalid_argument);
}

TEST_CASE("the seven parameter collections are pairwise disjoint and flow owns none") {
    auto model = tiny_model<float>();
    std::set<const void*> seen;
    std::size_t total = 0;
    for (NetId id : all_net_ids()) {
        for (const auto& [name, p] : model.named_params(id)) {
            CHECK(seen.insert(p.get()).second);
            ++total;
        }
    }
    CHECK(total == model.all_named_params().size());
    // the motion encoder owns only trunk and projection parameters; the flow
    // front end contributes nothing trainable
    for (const auto& [name, p] : model.named_params(NetId::kEncoderM)) {
        CHECK(name.find("flow") == std::string::npos);
    }
}

TEST_CASE("mapper Jacobian matches finite differences") {
    auto model = tiny_model<double>();
    Rng rng(2);
    auto z = randn_tensor<double>(rng, {8}, true);
    std::vector<TensorPtr<double>> leaves = {z};
    for (auto& [n, p] : model.named_params(NetId::kMapperA)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return reduce_sum(square(model.mapper_a.forward(z))); }, 1e-5, 24);
    CHECK(worst < 1e-4);
}

TEST_CASE("generator: shape contract, tanh range, both streams reach the output") {
    auto model = tiny_model<float>();
    Rng rng(3);
    auto z_a = randn_tensor<float>(rng, {8});
    auto z_m = randn_tensor<float>(rng, {8});
    auto video = model.generate(z_a, z_m);
    REQUIRE(video->shape == Shape{3, 4, 16, 16});
    for (float v : video->data) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
        CHECK(std::isfinite(v));
    }

    // gradients of the mean pixel reach both intermediate latents
    auto w_a = model.mapper_a.forward(z_a);
    auto w_m = model.mapper_m.forward(z_m);
    auto w_a_leaf = w_a->detach();
    auto w_m_leaf = w_m->detach();
    w_a_leaf->requires_grad = true;
    w_m_leaf->requires_grad = true;
    auto out = reduce_mean(model.generator.forward(w_a_leaf, w_m_leaf));
    out->backward();
    auto norm = [](const std::vector<float>& g) {
        double acc = 0;
        for (float v : g) acc += static_cast<double>(v) * v;
        return std::sqrt(acc);
    };
    CHECK(norm(w_a_leaf->grad) > 0);
    CHECK(norm(w_m_leaf->grad) > 0);
}

TEST_CASE("architecture symmetry: swapping argument order equals swapping latent halves") {
    auto model = tiny_model<float>();
    Rng rng(4);
    auto a = randn_tensor<float>(rng, {8});
    auto b = randn_tensor<float>(rng, {8});

    auto v_ab = model.generator.forward(a, b);
    auto v_ab_direct = model.generator.forward_latent(concat<float>({a, b}, 0));
    CHECK(std::memcmp(v_ab->data.data(), v_ab_direct->data.data(),
                      v_ab->data.size() * sizeof(float)) == 0);

    auto v_ba = model.generator.forward(b, a);
    auto v_ba_direct = model.generator.forward_latent(concat<float>({b, a}, 0));
    CHECK(std::memcmp(v_ba->data.data(), v_ba_direct->data.data(),
                      v_ba->data.size() * sizeof(float)) == 0);

    // and the two orders genuinely differ (no symmetric collapse)
    CHECK(v_ab->data != v_ba->data);
}

TEST_CASE("generator gradients match finite differences") {
    auto model = tiny_model<double>();
    Rng rng(5);
    auto w_a = randn_tensor<double>(rng, {8}, true);
    auto w_m = randn_tensor<double>(rng, {8}, true);
    std::vector<TensorPtr<double>> leaves = {w_a, w_m};
    for (auto& [n, p] : model.named_params(NetId::kGenerator)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return reduce_mean(square(model.generator.forward(w_a, w_m))); }, 1e-5, 8);
    CHECK(worst < 1e-4);
}

TEST_CASE("appearance encoder: dimension, determinism, finite differences") {
    auto model = tiny_model<float>();
    auto video = moving_video<float>(4, 16, 16);
    auto frame = model.frame(video, 2);
    auto e1 = model.encoder_a.forward(frame);
    auto e2 = model.encoder_a.forward(frame);
    REQUIRE(e1->shape == Shape{8});
    CHECK(std::memcmp(e1->data.data(), e2->data.data(), e1->data.size() * sizeof(float)) == 0);

    auto dmodel = tiny_model<double>();
    Rng rng(6);
    auto dframe = randn_tensor<double>(rng, {3, 16, 16}, true);
    for (auto& v : dframe->data) v = std::tanh(v);  // keep within the declared range
    std::vector<TensorPtr<double>> leaves = {dframe};
    for (auto& [n, p] : dmodel.named_params(NetId::kEncoderA)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return reduce_sum(square(dmodel.encoder_a.forward(dframe))); }, 1e-5, 12);
    CHECK(worst < 1e-4);
}

TEST_CASE("motion encoder factors through flow: static videos share one code") {
    auto model = tiny_model<float>();
    Rng rng(7);
    auto f1 = randn_tensor<float>(rng, {3, 1, 16, 16});
    auto f2 = randn_tensor<float>(rng, {3, 1, 16, 16});
    auto repeat_frames = [&](const TensorPtr<float>& f) {
        std::vector<float> chw(static_cast<std::size_t>(3 * 4 * 16 * 16));
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t t = 0; t < 4; ++t)
                std::copy_n(f->data.data() + c * 256, 256, chw.data() + (c * 4 + t) * 256);
        return TensorT<float>::make({3, 4, 16, 16}, std::move(chw));
    };
    auto w1 = model.encoder_m.forward(repeat_frames(f1));
    auto w2 = model.encoder_m.forward(repeat_frames(f2));
    REQUIRE(w1->shape == Shape{8});
    CHECK(std::memcmp(w1->data.data(), w2->data.data(), w1->data.size() * sizeof(float)) == 0);

    // and it equals the encoding of the all-zero flow field
    const std::int64_t h = 16 / model.encoder_m.flow.scale;
    auto zero_flow = TensorT<float>::zeros({2, 3, h, h});
    auto w0 = model.encoder_m.forward_from_flow(zero_flow);
    CHECK(std::memcmp(w1->data.data(), w0->data.data(), w1->data.size() * sizeof(float)) == 0);
}

TEST_CASE("motion encoder passes gradients through the frozen flow to the video") {
    auto model = tiny_model<float>();
    auto video = moving_video<float>(4, 16, 16);
    video->requires_grad = true;
    auto code = model.encoder_m.forward(video);
    reduce_sum(square(code))->backward();
    double g = 0;
    for (float v : video->grad) g += std::abs(static_cast<double>(v));
    CHECK(g > 0);
}

TEST_CASE("motion encoder gradients match finite differences (flow path included)") {
    auto model = tiny_model<double>();
    auto video = moving_video<double>(4, 16, 16);
    video->requires_grad = true;
    std::vector<TensorPtr<double>> leaves = {video};
    for (auto& [n, p] : model.named_params(NetId::kEncoderM)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return reduce_sum(square(model.encoder_m.forward(video))); }, 1e-6, 8);
    CHECK(worst < 1e-3);
}

TEST_CASE("image discriminator: scalar logit, determinism, finite differences") {
    auto model = tiny_model<float>();
    Rng rng(8);
    auto w = randn_tensor<float>(rng, {8});
    auto l1 = model.disc_image.forward(w);
    auto l2 = model.disc_image.forward(w);
    REQUIRE(l1->shape == Shape{});
    CHECK(l1->item() == l2->item());

    auto dmodel = tiny_model<double>();
    auto dw = randn_tensor<double>(rng, {8}, true);
    std::vector<TensorPtr<double>> leaves = {dw};
    for (auto& [n, p] : dmodel.named_params(NetId::kDiscImage)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return square(dmodel.disc_image.forward(dw)); }, 1e-5, 24);
    CHECK(worst < 1e-4);
}

TEST_CASE("video discriminator: scalar logit and a live motion path") {
    auto model = tiny_model<float>();
    auto video = moving_video<float>(4, 16, 16);
    Rng rng(9);
    auto w_m = randn_tensor<float>(rng, {8});
    auto logit = model.disc_video.forward(video, w_m);
    REQUIRE(logit->shape == Shape{});

    auto zeroed = TensorT<float>::zeros({8});
    auto logit_zero = model.disc_video.forward(video, zeroed);
    CHECK(logit->item() != logit_zero->item());
}

TEST_CASE("video discriminator gradients match finite differences") {
    auto model = tiny_model<double>();
    auto video = moving_video<double>(4, 16, 16);
    video->requires_grad = true;
    Rng rng(10);
    auto w_m = randn_tensor<double>(rng, {8}, true);
    std::vector<TensorPtr<double>> leaves = {video, w_m};
    for (auto& [n, p] : model.named_params(NetId::kDiscVideo)) leaves.push_back(p);
    const double worst = check_gradients<double>(
        leaves, [&]() { return square(model.disc_video.forward(video, w_m)); }, 1e-5, 8);
    CHECK(worst < 1e-4);
}

TEST_CASE("reconstruct_video equals the manual three-op composition") {
    auto model = tiny_model<float>();
    auto video = moving_video<float>(4, 16, 16);
    auto rec = model.reconstruct_video(video, 2);
    REQUIRE(rec->shape == video->shape);

    auto manual = model.generator.forward(model.encoder_a.forward(model.frame(video, 2)),
                                          model.encoder_m.forward(video));
    CHECK(std::memcmp(rec->data.data(), manual->data.data(), rec->data.size() * sizeof(float)) == 0);

    CHECK_THROWS_AS(model.reconstruct_video(video, 0), std::out_of_range);
    CHECK_THROWS_AS(model.reconstruct_video(video, 5), std::out_of_range);
}

TEST_CASE("all outputs finite at initialization for in-range inputs") {
    auto model = tiny_model<float>(123);
    Rng rng(11);
    auto z_a = randn_tensor<float>(rng, {8});
    auto z_m = randn_tensor<float>(rng, {8});
    auto video = model.generate(z_a, z_m);
    auto w_m = model.encoder_m.forward(video);
    auto w_a = model.encoder_a.forward(model.frame(video, 1));
    auto li = model.disc_image.forward(w_a);
    auto lv = model.disc_video.forward(video, w_m);
    for (float v : video->data) CHECK(std::isfinite(v));
    for (float v : w_m->data) CHECK(std::isfinite(v));
    for (float v : w_a->data) CHECK(std::isfinite(v));
    CHECK(std::isfinite(li->item()));
    CHECK(std::isfinite(lv->item()));
}

TEST_CASE("paper-scale geometry plans cleanly") {
    // 128-d latents, 16 frames, 128x128: the published configuration must at
    // least construct and agree on shapes end to end.
    auto stages = plan_generator_stages(16, 128, 128, 4);
    std::int64_t t = 1, h = 4;
    for (const auto& s : stages) {
        t = (t - 1) * s.st + s.kt - 2 * s.pt;
        h = (h - 1) * s.ss + s.ks - 2 * s.ps;
    }
    CHECK(t == 16);
    CHECK(h == 128);
    CHECK(stages.back().out_ch == 3);

    auto trunk = plan_trunk_stages(3, 16, 128, 128, 4);
    CHECK(trunk_output_size(trunk, 16, 128, 128, 3) > 0);
}

TEST_CASE("no-motion-encoder variant widens the video head and drops E_M") {
    RunConfig cfg = tiny_config();
    cfg.ablation.no_motion_encoder = true;
    Rng rng(12);
    auto model = ModelT<float>::build(cfg, rng);
    CHECK(model.named_params(NetId::kEncoderM).empty());
    auto video = moving_video<float>(4, 16, 16);
    auto logit = model.disc_video.forward(video, nullptr);
    CHECK(std::isfinite(logit->item()));

    // widened head: hidden FC layers are wider than the intact model's
    auto intact = tiny_model<float>();
    CHECK(model.disc_video.head.layers[0].weight->shape[0] >
          intact.disc_video.head.layers[0].weight->shape[0]);
}
