#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "avlae/losses.hpp"
#include "avlae/metrics.hpp"
#include "avlae/train.hpp"
#include "testutil.hpp"

using namespace avlae;

namespace {

RunConfig tiny_train_config(std::uint64_t seed = 5) {
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
    cfg.optim.batch = 2;
    cfg.optim.steps = 4;
    cfg.optim.seed = seed;
    cfg.io.out_dir = (std::filesystem::temp_directory_path() / "avlae_train_test").string();
    return cfg;
}

Dataset tiny_dataset(const RunConfig& cfg, std::int64_t n = 12) {
    SyntheticSpec spec;
    spec.n_videos = n;
    spec.T = cfg.model.T;
    spec.H = cfg.model.H;
    spec.W = cfg.model.W;
    spec.seed = 17;
    return make_synthetic(spec);
}

std::vector<std::vector<float>> param_bytes(const Model& model, NetId id) {
    std::vector<std::vector<float>> out;
    for (const auto& [n, p] : model.named_params(id)) out.push_back(p->data);
    return out;
}

bool bitwise_equal(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return false;
        if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adversarial terms: zero logits give 2 log(1/2)") {
    std::vector<TensorPtr<double>> r = {TensorT<double>::scalar(0.0), TensorT<double>::scalar(0.0)};
    std::vector<TensorPtr<double>> f = {TensorT<double>::scalar(0.0), TensorT<double>::scalar(0.0)};
    auto terms = adv_terms_from_logits(r, f, true);
    CHECK(terms.disc->item() == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-9));
    CHECK(terms.disc->item() == doctest::Approx(-1.3863).epsilon(1e-4));
    CHECK(terms.gen->item() == doctest::Approx(std::log(0.5)).epsilon(1e-9));
}

TEST_CASE("adversarial terms: perfect discriminator approaches zero from below") {
    std::vector<TensorPtr<double>> r = {TensorT<double>::scalar(50.0)};
    std::vector<TensorPtr<double>> f = {TensorT<double>::scalar(-50.0)};
    auto terms = adv_terms_from_logits(r, f, true);
    CHECK(terms.disc->item() < 0.0);
    CHECK(terms.disc->item() > -1e-20);
}

TEST_CASE("adversarial terms match the naive sigmoid-then-log oracle") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<TensorPtr<double>> r, f;
        double naive_disc = 0, naive_gen = 0;
        const int B = 6;
        for (int b = 0; b < B; ++b) {
            const double lr = rng.uniform(-6, 6), lf = rng.uniform(-6, 6);
            r.push_back(TensorT<double>::scalar(lr));
            f.push_back(TensorT<double>::scalar(lf));
            const double sr = 1.0 / (1.0 + std::exp(-lr));
            const double sf = 1.0 / (1.0 + std::exp(-lf));
            naive_disc += std::log(sr) / B + std::log(1.0 - sf) / B;
            naive_gen += std::log(1.0 - sf) / B;
        }
        auto terms = adv_terms_from_logits(r, f, true);
        CHECK(std::abs(terms.disc->item() - naive_disc) < 1e-6);
        CHECK(std::abs(terms.gen->item() - naive_gen) < 1e-6);

        auto ns = adv_terms_from_logits(r, f, false);
        double naive_ns = 0;
        for (int b = 0; b < B; ++b) {
            naive_ns -= std::log(1.0 / (1.0 + std::exp(-f[static_cast<std::size_t>(b)]->item()))) / B;
        }
        CHECK(std::abs(ns.gen->item() - naive_ns) < 1e-6);
    }
}

TEST_CASE("latent reconstruction: injected vectors, zero weights, unit offsets") {
    Rng rng(42);
    // matching encoded vectors give exactly zero
    std::vector<TensorPtr<double>> t, e;
    for (int b = 0; b < 3; ++b) {
        auto v = randn_tensor<double>(rng, {4});
        t.push_back(v);
        e.push_back(v->detach());
    }
    auto zero = latent_recon_loss<double>(t, e, t, e, 1.0, 1.0);
    CHECK(zero.total->item() == 0.0);

    // k1 = k2 = 0 gives the identical-zero loss
    auto off = latent_recon_loss<double>(t, e, t, e, 0.0, 0.0);
    CHECK(off.total->item() == 0.0);

    // unit offset in d = 4 with k1 = 1, k2 = 0 evaluates to exactly 4
    std::vector<TensorPtr<double>> targets = {TensorT<double>::make({4}, {0.3, -0.7, 1.1, 0.0})};
    std::vector<TensorPtr<double>> encoded = {
        TensorT<double>::make({4}, {1.3, 0.3, 2.1, 1.0})};  // +1 per coordinate
    auto unit = latent_recon_loss<double>(targets, encoded, {}, {}, 1.0, 0.0);
    CHECK(unit.total->item() == 4.0);
    CHECK(unit.motion->item() == 4.0);
    CHECK(unit.appearance->item() == 0.0);

    // the L1 flag switches the norm
    auto l1 = latent_recon_loss<double>(targets, encoded, {}, {}, 1.0, 0.0, true);
    CHECK(l1.total->item() == doctest::Approx(4.0));
    std::vector<TensorPtr<double>> encoded2 = {TensorT<double>::make({4}, {2.3, 0.3, 1.1, 0.0})};
    CHECK(latent_recon_loss<double>(targets, encoded2, {}, {}, 1.0, 0.0, true).total->item() ==
          doctest::Approx(3.0));  // |2| + |1|
    CHECK(latent_recon_loss<double>(targets, encoded2, {}, {}, 1.0, 0.0, false).total->item() ==
          doctest::Approx(5.0));  // 4 + 1
}

TEST_CASE("latent draws are standard normal") {
    auto cfg = tiny_train_config();
    cfg.optim.batch = 8;
    Trainer trainer(cfg, tiny_dataset(cfg, 16));
    double sum = 0, sumsq = 0;
    std::int64_t count = 0;
    for (int i = 0; i < 50; ++i) {
        auto s = trainer.draw_gen_sample();
        for (const auto& z : s.z_a) {
            for (float v : z->data) {
                sum += v;
                sumsq += static_cast<double>(v) * v;
                ++count;
            }
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sumsq / static_cast<double>(count) - mean * mean;
    CHECK(std::abs(mean) < 0.1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("Step I: updates encoders/discriminators only and improves its objective") {
    auto cfg = tiny_train_config();
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto& model = trainer.model();

    const auto fa = param_bytes(model, NetId::kMapperA);
    const auto fm = param_bytes(model, NetId::kMapperM);
    const auto g = param_bytes(model, NetId::kGenerator);
    const auto flow_before = trainer.flow_params();

    auto s = trainer.draw_disc_sample();
    const double before = trainer.disc_objective(s);
    const auto rep = trainer.step_discriminators(s);
    const double after = trainer.disc_objective(s);

    CHECK(bitwise_equal(fa, param_bytes(model, NetId::kMapperA)));
    CHECK(bitwise_equal(fm, param_bytes(model, NetId::kMapperM)));
    CHECK(bitwise_equal(g, param_bytes(model, NetId::kGenerator)));
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kMapperA)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kMapperM)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kGenerator)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kDiscVideo)] > 0.0);
    CHECK(after > before);

    const auto& flow_after = trainer.flow_params();
    CHECK(flow_before.iterations == flow_after.iterations);
    CHECK(flow_before.smoothness == flow_after.smoothness);
    CHECK(flow_before.scale == flow_after.scale);
}

TEST_CASE("Step II: updates mappers and generator only and improves its objective") {
    auto cfg = tiny_train_config(7);
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto& model = trainer.model();

    const auto ea = param_bytes(model, NetId::kEncoderA);
    const auto em = param_bytes(model, NetId::kEncoderM);
    const auto di = param_bytes(model, NetId::kDiscImage);
    const auto dv = param_bytes(model, NetId::kDiscVideo);

    auto s = trainer.draw_gen_sample();
    const double before = trainer.gen_objective(s);
    const auto rep = trainer.step_generator(s);
    const double after = trainer.gen_objective(s);

    CHECK(bitwise_equal(ea, param_bytes(model, NetId::kEncoderA)));
    CHECK(bitwise_equal(em, param_bytes(model, NetId::kEncoderM)));
    CHECK(bitwise_equal(di, param_bytes(model, NetId::kDiscImage)));
    CHECK(bitwise_equal(dv, param_bytes(model, NetId::kDiscVideo)));
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kEncoderA)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kEncoderM)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kDiscImage)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kDiscVideo)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kGenerator)] > 0.0);
    CHECK(after < before);
}

TEST_CASE("Step III: updates E_A, E_M*, G only; flow untouched") {
    auto cfg = tiny_train_config(9);
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto& model = trainer.model();

    const auto fa = param_bytes(model, NetId::kMapperA);
    const auto fm = param_bytes(model, NetId::kMapperM);
    const auto di = param_bytes(model, NetId::kDiscImage);
    const auto dv = param_bytes(model, NetId::kDiscVideo);
    const auto flow_before = trainer.flow_params();

    auto s = trainer.draw_gen_sample();
    const auto rep = trainer.step_latent_recon(s);

    CHECK(bitwise_equal(fa, param_bytes(model, NetId::kMapperA)));
    CHECK(bitwise_equal(fm, param_bytes(model, NetId::kMapperM)));
    CHECK(bitwise_equal(di, param_bytes(model, NetId::kDiscImage)));
    CHECK(bitwise_equal(dv, param_bytes(model, NetId::kDiscVideo)));
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kMapperA)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kMapperM)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kDiscImage)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kDiscVideo)] == 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kEncoderA)] > 0.0);
    CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kGenerator)] > 0.0);
    CHECK(trainer.flow_params().iterations == flow_before.iterations);
    CHECK(trainer.flow_params().smoothness == flow_before.smoothness);
    CHECK(trainer.flow_params().scale == flow_before.scale);
}

TEST_CASE("Step III with k1 = k2 = 0 is a no-op") {
    auto cfg = tiny_train_config(11);
    cfg.ablation.k1_zero = true;
    cfg.ablation.k2_zero = true;
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto s = trainer.draw_gen_sample();
    const auto rep = trainer.step_latent_recon(s);
    for (double d : rep.delta_norms) CHECK(d == 0.0);
    CHECK(rep.losses.rec_total == 0.0);
}

TEST_CASE("loss_rec strictly decreases over 50 Step-III-only iterations on a fixed batch") {
    auto cfg = tiny_train_config(13);
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto s = trainer.draw_gen_sample();
    double prev = trainer.rec_objective(s);
    for (int i = 0; i < 50; ++i) {
        trainer.step_latent_recon(s);
        const double now = trainer.rec_objective(s);
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("gradient-flow reachability: Step II gradients are nonzero at initialization") {
    auto cfg = tiny_train_config(15);
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto& model = trainer.model();
    auto s = trainer.draw_gen_sample();

    // replicate the Step II loss, sweep gradients, and measure norms per net
    std::vector<TensorPtr<real>> video_logits, image_logits;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        auto fake = model.generate(s.z_a[b], s.z_m[b]);
        video_logits.push_back(model.disc_video.forward(fake, model.encoder_m.forward(fake)));
        image_logits.push_back(
            model.disc_image.forward(model.encoder_a.forward(model.frame(fake, s.fake_frame[b]))));
    }
    auto loss = add(generator_loss_from_logits(video_logits, true),
                    generator_loss_from_logits(image_logits, true));
    loss->backward();
    for (NetId id : {NetId::kMapperA, NetId::kMapperM, NetId::kGenerator}) {
        double norm = 0;
        for (const auto& [n, p] : model.named_params(id)) {
            for (float gv : p->grad_or_zeros()) norm += std::abs(static_cast<double>(gv));
        }
        CAPTURE(net_name(id));
        CHECK(norm > 0.0);
    }
    model.zero_all_grads();
}

TEST_CASE("determinism: identical seeds give identical report streams") {
    auto cfg = tiny_train_config(21);
    cfg.optim.steps = 10;
    Trainer a(cfg, tiny_dataset(cfg));
    Trainer b(cfg, tiny_dataset(cfg));
    std::vector<StepReport> reps_a, reps_b;
    a.train([&](const StepReport& r) { reps_a.push_back(r); }, false);
    b.train([&](const StepReport& r) { reps_b.push_back(r); }, false);
    REQUIRE(reps_a.size() == 10);
    REQUIRE(reps_b.size() == 10);
    for (std::size_t i = 0; i < reps_a.size(); ++i) {
        // every field except wall time must agree exactly
        CHECK(reps_a[i].step == reps_b[i].step);
        CHECK(reps_a[i].losses.adv_video_disc == reps_b[i].losses.adv_video_disc);
        CHECK(reps_a[i].losses.adv_video_gen == reps_b[i].losses.adv_video_gen);
        CHECK(reps_a[i].losses.adv_image_disc == reps_b[i].losses.adv_image_disc);
        CHECK(reps_a[i].losses.adv_image_gen == reps_b[i].losses.adv_image_gen);
        CHECK(reps_a[i].losses.rec_motion == reps_b[i].losses.rec_motion);
        CHECK(reps_a[i].losses.rec_appearance == reps_b[i].losses.rec_appearance);
        CHECK(reps_a[i].losses.rec_total == reps_b[i].losses.rec_total);
        CHECK(reps_a[i].delta_norms == reps_b[i].delta_norms);
    }
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run") {
    auto cfg = tiny_train_config(23);
    cfg.optim.steps = 8;

    Trainer straight(cfg, tiny_dataset(cfg));
    std::vector<double> straight_losses;
    straight.train([&](const StepReport& r) { straight_losses.push_back(r.losses.rec_total); }, false);

    auto cfg3 = cfg;
    cfg3.optim.steps = 3;
    Trainer partial(cfg3, tiny_dataset(cfg3));
    partial.train(nullptr, false);
    const auto ckpt = partial.make_checkpoint();

    // round-trip the checkpoint through its binary container
    const auto path = (std::filesystem::temp_directory_path() / "avlae_resume.avc1").string();
    save_checkpoint(path, ckpt);
    const auto loaded = load_checkpoint(path);

    auto cfg_resume = cfg;  // full budget again
    Trainer resumed(cfg_resume, tiny_dataset(cfg_resume));
    // fingerprints differ only in the step budget; assert the guard fires, then force
    CHECK_THROWS_AS(resumed.restore_checkpoint(loaded, false), ConfigError);
    resumed.restore_checkpoint(loaded, true);
    CHECK(resumed.step_count() == 3);

    std::vector<double> resumed_losses;
    resumed.train([&](const StepReport& r) { resumed_losses.push_back(r.losses.rec_total); }, false);
    REQUIRE(resumed_losses.size() == 5);
    for (std::size_t i = 0; i < resumed_losses.size(); ++i) {
        CHECK(resumed_losses[i] == straight_losses[i + 3]);
    }
}

TEST_CASE("checkpoint restore rejects a missing tensor by name") {
    auto cfg = tiny_train_config(29);
    Trainer trainer(cfg, tiny_dataset(cfg));
    auto ckpt = trainer.make_checkpoint();
    ckpt.tensors.erase(ckpt.tensors.begin());  // drop the first named parameter
    Trainer other(cfg, tiny_dataset(cfg));
    CHECK_THROWS_AS(other.restore_checkpoint(ckpt, true), std::out_of_range);
}

TEST_CASE("ablation variants run their contracts") {
    // -w_A rec (k2 = 0)
    {
        auto cfg = tiny_train_config(31);
        cfg.ablation.k2_zero = true;
        Trainer t(cfg, tiny_dataset(cfg));
        auto rep = t.train_step();
        CHECK(rep.losses.rec_appearance == 0.0);
        CHECK(rep.losses.rec_motion != 0.0);
    }
    // -w_M rec (k1 = 0)
    {
        auto cfg = tiny_train_config(33);
        cfg.ablation.k1_zero = true;
        Trainer t(cfg, tiny_dataset(cfg));
        auto rep = t.train_step();
        CHECK(rep.losses.rec_motion == 0.0);
        CHECK(rep.losses.rec_appearance != 0.0);
    }
    // -w_A rec, -w_M rec
    {
        auto cfg = tiny_train_config(35);
        cfg.ablation.k1_zero = true;
        cfg.ablation.k2_zero = true;
        Trainer t(cfg, tiny_dataset(cfg));
        auto rep = t.train_step();
        CHECK(rep.losses.rec_total == 0.0);
    }
    // -w_A rec, -w_M rec, -E_M: plain two-discriminator video GAN
    {
        auto cfg = tiny_train_config(37);
        cfg.ablation.k1_zero = true;
        cfg.ablation.k2_zero = true;
        cfg.ablation.no_motion_encoder = true;
        Trainer t(cfg, tiny_dataset(cfg));
        auto rep = t.train_step();
        CHECK(rep.losses.rec_total == 0.0);
        CHECK(t.model().named_params(NetId::kEncoderM).empty());
        CHECK(rep.delta_norms[static_cast<std::size_t>(NetId::kEncoderM)] == 0.0);
        CHECK(rep.finite());
    }
}

TEST_CASE("step reports serialize as one JSON line with finite values") {
    auto cfg = tiny_train_config(39);
    Trainer t(cfg, tiny_dataset(cfg));
    auto rep = t.train_step();
    CHECK(rep.finite());
    const auto line = rep.to_json_line();
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.find("rec_total") != std::string::npos);
    CHECK(line.find("F_A") != std::string::npos);
}
