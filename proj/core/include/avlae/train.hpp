#pragma once

// The three-step alternating optimization:
//   Step I   ascends the adversarial objectives, updating E_A, E_M*, D_I, D_V
//            through two separate Adam invocations (motion/video and
//            image groups);
//   Step II  descends the saturating generator loss, updating F_A, F_M, G;
//   Step III descends the latent reconstruction, updating E_A, E_M*, G.
// Each group owns its own Adam moments. The complement of every update set is
// left bitwise untouched, and the frozen flow estimator only passes gradients.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avlae/config.hpp"
#include "avlae/data.hpp"
#include "avlae/io.hpp"
#include "avlae/nets.hpp"
#include "avlae/optim.hpp"
#include "avlae/random.hpp"

namespace avlae {

using real = float;
using Model = ModelT<real>;

/// Training aborts (non-finite loss) surface as this; the CLI maps it to the
/// runtime-abort exit code.
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& message) : std::runtime_error(message) {}
};

struct StepLosses {
    double adv_video_disc = 0, adv_video_gen = 0;
    double adv_image_disc = 0, adv_image_gen = 0;
    double rec_motion = 0, rec_appearance = 0, rec_total = 0;
};

struct StepReport {
    std::int64_t step = 0;
    StepLosses losses;
    std::array<double, kNetCount> delta_norms{};  // indexed by NetId
    double wall_ms = 0;

    bool finite() const;
    std::string to_json_line() const;
};

/// One drawn iteration sample: a real mini-batch plus fresh latent draws and
/// per-video frame indices. Steps consume samples so tests can measure an
/// objective before and after an update on identical inputs.
struct TrainSample {
    std::vector<TensorPtr<real>> reals;
    std::vector<TensorPtr<real>> z_a, z_m;      // [d] leaves, standard normal
    std::vector<std::int64_t> real_frame;       // 1-based
    std::vector<std::int64_t> fake_frame;       // 1-based
};

class Trainer {
public:
    Trainer(RunConfig cfg, Dataset dataset);

    // Alg. steps; each returns the losses it optimized and the per-network
    // parameter-delta norms it caused.
    StepReport step_discriminators(const TrainSample& s);
    StepReport step_generator(const TrainSample& s);
    StepReport step_latent_recon(const TrainSample& s);

    /// Steps I -> II -> III on freshly drawn samples; one merged report.
    StepReport train_step();

    /// Runs the configured step budget, invoking on_report after every
    /// iteration (may be null). Checkpoints per io.checkpoint_every into
    /// out_dir when write_checkpoints is set.
    void train(const std::function<void(const StepReport&)>& on_report, bool write_checkpoints);

    TrainSample draw_disc_sample();
    TrainSample draw_gen_sample();

    // No-update objective evaluations on a fixed sample (used by tests and
    // the acceptance suite).
    double disc_objective(const TrainSample& s);  // adv disc terms, video + image
    double gen_objective(const TrainSample& s);   // generator loss as descended
    double rec_objective(const TrainSample& s);

    CheckpointData make_checkpoint() const;
    void restore_checkpoint(const CheckpointData& ckpt, bool force = false);

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const RunConfig& config() const { return cfg_; }
    const FlowParams& flow_params() const { return model_.encoder_m.flow; }
    Rng& rng() { return rng_; }
    std::int64_t step_count() const { return step_; }

    TensorPtr<real> generate_detached(const TensorPtr<real>& z_a, const TensorPtr<real>& z_m) const;

private:
    struct LossBundle;

    std::vector<TensorPtr<real>> next_batch();
    void reshuffle_order();
    void check_finite(double v, const char* what) const;
    std::array<std::vector<real>, kNetCount> snapshot_params() const;
    std::array<double, kNetCount> delta_norms(const std::array<std::vector<real>, kNetCount>& before) const;

    RunConfig cfg_;
    Dataset dataset_;
    Rng rng_;
    Model model_;
    AdamOpt<real> opt_video_disc_;  // E_M*, D_V
    AdamOpt<real> opt_image_disc_;  // E_A, D_I
    AdamOpt<real> opt_generator_;   // F_A, F_M, G
    AdamOpt<real> opt_recon_;       // E_A, E_M*, G
    std::int64_t step_ = 0;
    std::uint64_t epoch_ = 0;
    std::uint64_t cursor_ = 0;
    std::vector<std::int64_t> order_;
};

}  // namespace avlae
