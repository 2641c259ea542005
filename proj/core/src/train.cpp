#include "avlae/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "avlae/losses.hpp"

namespace fs = std::filesystem;

namespace avlae {

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
    return seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1));
}

double norm_of_delta(const std::vector<real>& before, const NamedParams<real>& now) {
    double acc = 0;
    std::size_t off = 0;
    for (const auto& [name, p] : now) {
        for (real v : p->data) {
            const double d = static_cast<double>(v) - static_cast<double>(before[off++]);
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

}  // namespace

bool StepReport::finite() const {
    const double vals[] = {losses.adv_video_disc, losses.adv_video_gen, losses.adv_image_disc,
                           losses.adv_image_gen,  losses.rec_motion,    losses.rec_appearance,
                           losses.rec_total};
    for (double v : vals) {
        if (!std::isfinite(v)) return false;
    }
    for (double v : delta_norms) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string StepReport::to_json_line() const {
    nlohmann::json j;
    j["step"] = step;
    j["losses"] = {
        {"adv_video_disc", losses.adv_video_disc}, {"adv_video_gen", losses.adv_video_gen},
        {"adv_image_disc", losses.adv_image_disc}, {"adv_image_gen", losses.adv_image_gen},
        {"rec_motion", losses.rec_motion},         {"rec_appearance", losses.rec_appearance},
        {"rec_total", losses.rec_total},
    };
    nlohmann::json deltas;
    for (NetId id : all_net_ids()) {
        deltas[net_name(id)] = delta_norms[static_cast<std::size_t>(id)];
    }
    j["delta_norms"] = deltas;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

Trainer::Trainer(RunConfig cfg, Dataset dataset)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)), rng_(cfg_.optim.seed) {
    validate_config(cfg_);
    if (dataset_.videos.empty()) throw std::invalid_argument("Trainer: dataset is empty");
    for (const auto& v : dataset_.videos) {
        if (v->shape != Shape{3, cfg_.model.T, cfg_.model.H, cfg_.model.W}) {
            throw std::invalid_argument("Trainer: dataset video shape " + shape_str(v->shape) +
                                        " does not match the configured geometry");
        }
    }
    model_ = Model::build(cfg_, rng_);

    AdamConfig<real> ac;
    ac.alpha = static_cast<real>(cfg_.optim.alpha);
    ac.beta1 = static_cast<real>(cfg_.optim.beta1);
    ac.beta2 = static_cast<real>(cfg_.optim.beta2);
    opt_video_disc_ = AdamOpt<real>(model_.params_of({NetId::kEncoderM, NetId::kDiscVideo}), ac);
    opt_image_disc_ = AdamOpt<real>(model_.params_of({NetId::kEncoderA, NetId::kDiscImage}), ac);
    opt_generator_ = AdamOpt<real>(model_.params_of({NetId::kMapperA, NetId::kMapperM, NetId::kGenerator}), ac);
    opt_recon_ = AdamOpt<real>(model_.params_of({NetId::kEncoderA, NetId::kEncoderM, NetId::kGenerator}), ac);

    order_.resize(dataset_.videos.size());
    reshuffle_order();
}

// The epoch permutation is a pure function of (seed, epoch) so a resumed run
// sees exactly the batches a straight run would have seen.
void Trainer::reshuffle_order() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
    Rng shuffle_rng(epoch_seed(cfg_.optim.seed, epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1],
                  order_[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<std::int64_t>(i)))]);
    }
}

std::vector<TensorPtr<real>> Trainer::next_batch() {
    std::vector<TensorPtr<real>> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.optim.batch));
    for (std::int64_t b = 0; b < cfg_.optim.batch; ++b) {
        if (cursor_ >= order_.size()) {
            cursor_ = 0;
            ++epoch_;
            reshuffle_order();
        }
        batch.push_back(dataset_.videos[static_cast<std::size_t>(order_[cursor_++])]);
    }
    return batch;
}

TrainSample Trainer::draw_disc_sample() {
    TrainSample s;
    s.reals = next_batch();
    const std::int64_t B = cfg_.optim.batch, d = cfg_.model.d, T = cfg_.model.T;
    for (std::int64_t b = 0; b < B; ++b) s.z_a.push_back(randn_tensor<real>(rng_, {d}));
    for (std::int64_t b = 0; b < B; ++b) s.z_m.push_back(randn_tensor<real>(rng_, {d}));
    for (std::int64_t b = 0; b < B; ++b) s.real_frame.push_back(rng_.uniform_int(T) + 1);
    for (std::int64_t b = 0; b < B; ++b) s.fake_frame.push_back(rng_.uniform_int(T) + 1);
    return s;
}

TrainSample Trainer::draw_gen_sample() {
    TrainSample s;
    const std::int64_t B = cfg_.optim.batch, d = cfg_.model.d, T = cfg_.model.T;
    for (std::int64_t b = 0; b < B; ++b) s.z_a.push_back(randn_tensor<real>(rng_, {d}));
    for (std::int64_t b = 0; b < B; ++b) s.z_m.push_back(randn_tensor<real>(rng_, {d}));
    for (std::int64_t b = 0; b < B; ++b) s.fake_frame.push_back(rng_.uniform_int(T) + 1);
    return s;
}

TensorPtr<real> Trainer::generate_detached(const TensorPtr<real>& z_a, const TensorPtr<real>& z_m) const {
    NoGradGuard off;
    return model_.generate(z_a, z_m);
}

void Trainer::check_finite(double v, const char* what) const {
    if (!std::isfinite(v)) {
        throw TrainAbort("non-finite " + std::string(what) + " at step " + std::to_string(step_) +
                         "; aborting run");
    }
}

std::array<std::vector<real>, kNetCount> Trainer::snapshot_params() const {
    std::array<std::vector<real>, kNetCount> snap;
    for (NetId id : all_net_ids()) {
        auto& dst = snap[static_cast<std::size_t>(id)];
        for (const auto& [name, p] : model_.named_params(id)) {
            dst.insert(dst.end(), p->data.begin(), p->data.end());
        }
    }
    return snap;
}

std::array<double, kNetCount> Trainer::delta_norms(
    const std::array<std::vector<real>, kNetCount>& before) const {
    std::array<double, kNetCount> out{};
    for (NetId id : all_net_ids()) {
        out[static_cast<std::size_t>(id)] =
            norm_of_delta(before[static_cast<std::size_t>(id)], model_.named_params(id));
    }
    return out;
}

StepReport Trainer::step_discriminators(const TrainSample& s) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto before = snapshot_params();
    const bool saturating = cfg_.optim.gen_loss == "saturating";

    std::vector<TensorPtr<real>> fakes;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        fakes.push_back(generate_detached(s.z_a[b], s.z_m[b]));
    }

    StepReport rep;
    rep.step = step_;

    // Motion/video group: E_M*, D_V.
    {
        std::vector<TensorPtr<real>> real_logits, fake_logits;
        for (std::size_t b = 0; b < s.reals.size(); ++b) {
            auto wm_real = model_.use_motion_encoder ? model_.encoder_m.forward(s.reals[b]) : nullptr;
            auto wm_fake = model_.use_motion_encoder ? model_.encoder_m.forward(fakes[b]) : nullptr;
            real_logits.push_back(model_.disc_video.forward(s.reals[b], wm_real));
            fake_logits.push_back(model_.disc_video.forward(fakes[b], wm_fake));
        }
        auto terms = adv_terms_from_logits(real_logits, fake_logits, saturating);
        rep.losses.adv_video_disc = terms.disc->item();
        check_finite(rep.losses.adv_video_disc, "video discriminator loss");
        auto loss = neg(terms.disc);  // ascend by descending the negation
        loss->backward();
        opt_video_disc_.step();
        model_.zero_all_grads();
    }

    // Image group: E_A, D_I.
    {
        std::vector<TensorPtr<real>> real_logits, fake_logits;
        for (std::size_t b = 0; b < s.reals.size(); ++b) {
            auto real_frame = model_.frame(s.reals[b], s.real_frame[b]);
            auto fake_frame = model_.frame(fakes[b], s.fake_frame[b]);
            real_logits.push_back(model_.disc_image.forward(model_.encoder_a.forward(real_frame)));
            fake_logits.push_back(model_.disc_image.forward(model_.encoder_a.forward(fake_frame)));
        }
        auto terms = adv_terms_from_logits(real_logits, fake_logits, saturating);
        rep.losses.adv_image_disc = terms.disc->item();
        check_finite(rep.losses.adv_image_disc, "image discriminator loss");
        auto loss = neg(terms.disc);
        loss->backward();
        opt_image_disc_.step();
        model_.zero_all_grads();
    }

    rep.delta_norms = delta_norms(before);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

StepReport Trainer::step_generator(const TrainSample& s) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto before = snapshot_params();
    const bool saturating = cfg_.optim.gen_loss == "saturating";

    std::vector<TensorPtr<real>> video_logits, image_logits;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        auto fake = model_.generate(s.z_a[b], s.z_m[b]);
        auto wm = model_.use_motion_encoder ? model_.encoder_m.forward(fake) : nullptr;
        video_logits.push_back(model_.disc_video.forward(fake, wm));
        image_logits.push_back(
            model_.disc_image.forward(model_.encoder_a.forward(model_.frame(fake, s.fake_frame[b]))));
    }
    auto gen_video = generator_loss_from_logits(video_logits, saturating);
    auto gen_image = generator_loss_from_logits(image_logits, saturating);

    StepReport rep;
    rep.step = step_;
    rep.losses.adv_video_gen = gen_video->item();
    rep.losses.adv_image_gen = gen_image->item();
    check_finite(rep.losses.adv_video_gen, "video generator loss");
    check_finite(rep.losses.adv_image_gen, "image generator loss");

    auto loss = add(gen_video, gen_image);
    loss->backward();
    opt_generator_.step();
    model_.zero_all_grads();

    rep.delta_norms = delta_norms(before);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

StepReport Trainer::step_latent_recon(const TrainSample& s) {
    const auto t0 = std::chrono::steady_clock::now();
    StepReport rep;
    rep.step = step_;

    const real k1 = static_cast<real>(cfg_.effective_k1());
    const real k2 = static_cast<real>(cfg_.effective_k2());
    if (k1 == real(0) && k2 == real(0)) {
        return rep;  // Step III degenerates to a no-op
    }
    const auto before = snapshot_params();
    const bool l1 = cfg_.optim.rec_norm == "l1";

    std::vector<TensorPtr<real>> motion_targets, motion_encoded, app_targets, app_encoded;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        auto w_a = model_.mapper_a.forward(s.z_a[b]);
        auto w_m = model_.mapper_m.forward(s.z_m[b]);
        auto fake = model_.generator.forward(w_a, w_m);
        if (k1 != real(0)) {
            motion_targets.push_back(w_m);
            motion_encoded.push_back(model_.encoder_m.forward(fake));
        }
        if (k2 != real(0)) {
            app_targets.push_back(w_a);
            app_encoded.push_back(model_.encoder_a.forward(model_.frame(fake, s.fake_frame[b])));
        }
    }
    auto terms = latent_recon_loss(motion_targets, motion_encoded, app_targets, app_encoded, k1, k2, l1);
    rep.losses.rec_motion = terms.motion->item();
    rep.losses.rec_appearance = terms.appearance->item();
    rep.losses.rec_total = terms.total->item();
    check_finite(rep.losses.rec_total, "latent reconstruction loss");

    terms.total->backward();
    opt_recon_.step();
    model_.zero_all_grads();

    rep.delta_norms = delta_norms(before);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

StepReport Trainer::train_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto before = snapshot_params();

    const auto s1 = draw_disc_sample();
    const auto r1 = step_discriminators(s1);
    const auto s2 = draw_gen_sample();
    const auto r2 = step_generator(s2);
    const auto s3 = draw_gen_sample();
    const auto r3 = step_latent_recon(s3);

    ++step_;
    StepReport rep;
    rep.step = step_;
    rep.losses.adv_video_disc = r1.losses.adv_video_disc;
    rep.losses.adv_image_disc = r1.losses.adv_image_disc;
    rep.losses.adv_video_gen = r2.losses.adv_video_gen;
    rep.losses.adv_image_gen = r2.losses.adv_image_gen;
    rep.losses.rec_motion = r3.losses.rec_motion;
    rep.losses.rec_appearance = r3.losses.rec_appearance;
    rep.losses.rec_total = r3.losses.rec_total;
    rep.delta_norms = delta_norms(before);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

void Trainer::train(const std::function<void(const StepReport&)>& on_report, bool write_checkpoints) {
    if (write_checkpoints) fs::create_directories(cfg_.io.out_dir);
    while (step_ < cfg_.optim.steps) {
        const StepReport rep = train_step();
        if (!rep.finite()) {
            throw TrainAbort("non-finite step report at step " + std::to_string(rep.step));
        }
        if (on_report) on_report(rep);
        if (write_checkpoints &&
            (step_ % cfg_.io.checkpoint_every == 0 || step_ == cfg_.optim.steps)) {
            char name[48];
            std::snprintf(name, sizeof(name), "ckpt_%08lld.avc1", static_cast<long long>(step_));
            save_checkpoint((fs::path(cfg_.io.out_dir) / name).string(), make_checkpoint());
        }
    }
}

double Trainer::disc_objective(const TrainSample& s) {
    NoGradGuard off;
    const bool saturating = cfg_.optim.gen_loss == "saturating";
    std::vector<TensorPtr<real>> fakes;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) fakes.push_back(model_.generate(s.z_a[b], s.z_m[b]));

    std::vector<TensorPtr<real>> rv, fv, ri, fi;
    for (std::size_t b = 0; b < s.reals.size(); ++b) {
        auto wm_real = model_.use_motion_encoder ? model_.encoder_m.forward(s.reals[b]) : nullptr;
        auto wm_fake = model_.use_motion_encoder ? model_.encoder_m.forward(fakes[b]) : nullptr;
        rv.push_back(model_.disc_video.forward(s.reals[b], wm_real));
        fv.push_back(model_.disc_video.forward(fakes[b], wm_fake));
        ri.push_back(model_.disc_image.forward(
            model_.encoder_a.forward(model_.frame(s.reals[b], s.real_frame[b]))));
        fi.push_back(model_.disc_image.forward(model_.encoder_a.forward(model_.frame(fakes[b], s.fake_frame[b]))));
    }
    return adv_terms_from_logits(rv, fv, saturating).disc->item() +
           adv_terms_from_logits(ri, fi, saturating).disc->item();
}

double Trainer::gen_objective(const TrainSample& s) {
    NoGradGuard off;
    const bool saturating = cfg_.optim.gen_loss == "saturating";
    std::vector<TensorPtr<real>> video_logits, image_logits;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        auto fake = model_.generate(s.z_a[b], s.z_m[b]);
        auto wm = model_.use_motion_encoder ? model_.encoder_m.forward(fake) : nullptr;
        video_logits.push_back(model_.disc_video.forward(fake, wm));
        image_logits.push_back(
            model_.disc_image.forward(model_.encoder_a.forward(model_.frame(fake, s.fake_frame[b]))));
    }
    return generator_loss_from_logits(video_logits, saturating)->item() +
           generator_loss_from_logits(image_logits, saturating)->item();
}

double Trainer::rec_objective(const TrainSample& s) {
    NoGradGuard off;
    const real k1 = static_cast<real>(cfg_.effective_k1());
    const real k2 = static_cast<real>(cfg_.effective_k2());
    const bool l1 = cfg_.optim.rec_norm == "l1";
    std::vector<TensorPtr<real>> motion_targets, motion_encoded, app_targets, app_encoded;
    for (std::size_t b = 0; b < s.z_a.size(); ++b) {
        auto w_a = model_.mapper_a.forward(s.z_a[b]);
        auto w_m = model_.mapper_m.forward(s.z_m[b]);
        auto fake = model_.generator.forward(w_a, w_m);
        if (k1 != real(0)) {
            motion_targets.push_back(w_m);
            motion_encoded.push_back(model_.encoder_m.forward(fake));
        }
        if (k2 != real(0)) {
            app_targets.push_back(w_a);
            app_encoded.push_back(model_.encoder_a.forward(model_.frame(fake, s.fake_frame[b])));
        }
    }
    return latent_recon_loss(motion_targets, motion_encoded, app_targets, app_encoded, k1, k2, l1)
        .total->item();
}

namespace {

const char* kAdamGroupNames[4] = {"video_disc", "image_disc", "generator", "recon"};

}  // namespace

CheckpointData Trainer::make_checkpoint() const {
    CheckpointData ckpt;
    ckpt.fingerprint = config_fingerprint(cfg_);
    ckpt.step = static_cast<std::uint64_t>(step_);
    ckpt.epoch = epoch_;
    ckpt.cursor = cursor_;
    ckpt.rng_state = rng_.save();

    const AdamOpt<real>* opts[4] = {&opt_video_disc_, &opt_image_disc_, &opt_generator_, &opt_recon_};
    NamedParams<real> group_names[4] = {
        [this] { NamedParams<real> n; for (NetId id : {NetId::kEncoderM, NetId::kDiscVideo}) { auto ps = model_.named_params(id); n.insert(n.end(), ps.begin(), ps.end()); } return n; }(),
        [this] { NamedParams<real> n; for (NetId id : {NetId::kEncoderA, NetId::kDiscImage}) { auto ps = model_.named_params(id); n.insert(n.end(), ps.begin(), ps.end()); } return n; }(),
        [this] { NamedParams<real> n; for (NetId id : {NetId::kMapperA, NetId::kMapperM, NetId::kGenerator}) { auto ps = model_.named_params(id); n.insert(n.end(), ps.begin(), ps.end()); } return n; }(),
        [this] { NamedParams<real> n; for (NetId id : {NetId::kEncoderA, NetId::kEncoderM, NetId::kGenerator}) { auto ps = model_.named_params(id); n.insert(n.end(), ps.begin(), ps.end()); } return n; }(),
    };

    for (int g = 0; g < 4; ++g) {
        ckpt.counters.emplace_back(std::string("adam.") + kAdamGroupNames[g] + ".t",
                                   static_cast<std::uint64_t>(opts[g]->t()));
    }
    for (const auto& [name, p] : model_.all_named_params()) {
        ckpt.tensors.emplace_back(name, p->detach());
    }
    for (int g = 0; g < 4; ++g) {
        for (std::size_t i = 0; i < group_names[g].size(); ++i) {
            const auto& [pname, p] = group_names[g][i];
            const auto& st = opts[g]->state(i);
            const std::string base = std::string("adam.") + kAdamGroupNames[g] + "." + pname;
            std::vector<real> m = st.m.size() == p->data.size() ? st.m : std::vector<real>(p->data.size(), real(0));
            std::vector<real> v = st.v.size() == p->data.size() ? st.v : std::vector<real>(p->data.size(), real(0));
            ckpt.tensors.emplace_back(base + ".m", TensorT<real>::make(p->shape, std::move(m)));
            ckpt.tensors.emplace_back(base + ".v", TensorT<real>::make(p->shape, std::move(v)));
        }
    }
    return ckpt;
}

void Trainer::restore_checkpoint(const CheckpointData& ckpt, bool force) {
    const std::uint64_t expect = config_fingerprint(cfg_);
    if (ckpt.fingerprint != expect && !force) {
        throw ConfigError("checkpoint fingerprint " + std::to_string(ckpt.fingerprint) +
                          " does not match config fingerprint " + std::to_string(expect) +
                          " (use force to override)");
    }
    for (const auto& [name, p] : model_.all_named_params()) {
        const auto& src = ckpt.tensor(name);
        if (src->shape != p->shape) {
            throw std::invalid_argument("checkpoint tensor \"" + name + "\" has shape " +
                                        shape_str(src->shape) + ", expected " + shape_str(p->shape));
        }
        p->data = src->data;
        p->zero_grad();
    }

    AdamOpt<real>* opts[4] = {&opt_video_disc_, &opt_image_disc_, &opt_generator_, &opt_recon_};
    const std::vector<std::vector<NetId>> groups = {
        {NetId::kEncoderM, NetId::kDiscVideo},
        {NetId::kEncoderA, NetId::kDiscImage},
        {NetId::kMapperA, NetId::kMapperM, NetId::kGenerator},
        {NetId::kEncoderA, NetId::kEncoderM, NetId::kGenerator},
    };
    for (int g = 0; g < 4; ++g) {
        opts[g]->set_t(static_cast<std::int64_t>(ckpt.counter(std::string("adam.") + kAdamGroupNames[g] + ".t")));
        NamedParams<real> names;
        for (NetId id : groups[static_cast<std::size_t>(g)]) {
            auto ps = model_.named_params(id);
            names.insert(names.end(), ps.begin(), ps.end());
        }
        for (std::size_t i = 0; i < names.size(); ++i) {
            const std::string base = std::string("adam.") + kAdamGroupNames[g] + "." + names[i].first;
            opts[g]->state(i).m = ckpt.tensor(base + ".m")->data;
            opts[g]->state(i).v = ckpt.tensor(base + ".v")->data;
        }
    }

    rng_.restore(ckpt.rng_state);
    step_ = static_cast<std::int64_t>(ckpt.step);
    epoch_ = ckpt.epoch;
    cursor_ = ckpt.cursor;
    reshuffle_order();
}

}  // namespace avlae
