#include "avlae/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "avlae/losses.hpp"
#include "avlae/optim.hpp"
#include "avlae/random.hpp"

namespace avlae {

namespace {

Eigen::VectorXd column_mean(const FeatureSet& s) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(s.f);
    for (std::int64_t i = 0; i < s.n; ++i) {
        for (std::int64_t j = 0; j < s.f; ++j) mu[j] += s.at(i, j);
    }
    return mu / static_cast<double>(s.n);
}

Eigen::MatrixXd covariance(const FeatureSet& s, const Eigen::VectorXd& mu) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(s.f, s.f);
    Eigen::VectorXd row(s.f);
    for (std::int64_t i = 0; i < s.n; ++i) {
        for (std::int64_t j = 0; j < s.f; ++j) row[j] = s.at(i, j) - mu[j];
        cov.noalias() += row * row.transpose();
    }
    return cov / static_cast<double>(s.n - 1);
}

// Symmetric PSD square root with eigenvalues below tol clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    if (solver.info() != Eigen::Success) {
        const double cond = m.norm() > 0 ? m.operatorNorm() / std::max(1e-300, m.determinant()) : 0.0;
        throw std::runtime_error(std::string("fid: eigendecomposition of ") + what +
                                 " did not converge (condition estimate " + std::to_string(cond) + ")");
    }
    Eigen::VectorXd ev = solver.eigenvalues();
    const double tol = 1e-10 * std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
    for (std::int64_t i = 0; i < ev.size(); ++i) ev[i] = ev[i] > tol ? std::sqrt(ev[i]) : 0.0;
    return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureSet& a, const FeatureSet& b) {
    if (a.f != b.f) throw std::invalid_argument("fid: feature dimensions differ");
    if (a.n < 2 || b.n < 2) throw std::invalid_argument("fid: need at least 2 samples per set");

    const Eigen::VectorXd mu_a = column_mean(a), mu_b = column_mean(b);
    const Eigen::MatrixXd cov_a = covariance(a, mu_a), cov_b = covariance(b, mu_b);

    // Tr sqrt(Sa Sb) = Tr sqrt(sqrt(Sa) Sb sqrt(Sa)); the inner product is
    // symmetric PSD so both roots go through the self-adjoint solver.
    const Eigen::MatrixXd root_a = psd_sqrt(cov_a, "the first covariance");
    Eigen::MatrixXd inner = root_a * cov_b * root_a;
    inner = 0.5 * (inner + inner.transpose().eval());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("fid: eigendecomposition of the cross term did not converge");
    }
    const Eigen::VectorXd ev = solver.eigenvalues();
    const double tol = 1e-10 * std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
    double tr_sqrt = 0;
    for (std::int64_t i = 0; i < ev.size(); ++i) {
        if (ev[i] > tol) tr_sqrt += std::sqrt(ev[i]);
    }

    double result = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if (result < 0 && result > -1e-8) result = 0;  // roundoff guard
    return result;
}

double inception_score(const ClassProbs& p) {
    if (p.n < 1 || p.k < 1) throw std::invalid_argument("inception_score: empty input");
    std::vector<double> marginal(static_cast<std::size_t>(p.k), 0.0);
    for (std::int64_t i = 0; i < p.n; ++i) {
        double row_sum = 0;
        for (std::int64_t j = 0; j < p.k; ++j) {
            const double v = p.data[static_cast<std::size_t>(i * p.k + j)];
            if (v < 0) throw std::invalid_argument("inception_score: negative probability in row " +
                                                   std::to_string(i));
            row_sum += v;
            marginal[static_cast<std::size_t>(j)] += v;
        }
        if (std::abs(row_sum - 1.0) > 1e-6) {
            throw std::invalid_argument("inception_score: row " + std::to_string(i) +
                                        " sums to " + std::to_string(row_sum));
        }
    }
    for (auto& m : marginal) m /= static_cast<double>(p.n);

    double mean_kl = 0;
    for (std::int64_t i = 0; i < p.n; ++i) {
        double kl = 0;
        for (std::int64_t j = 0; j < p.k; ++j) {
            const double v = p.data[static_cast<std::size_t>(i * p.k + j)];
            if (v > 0) kl += v * (std::log(v) - std::log(marginal[static_cast<std::size_t>(j)]));
        }
        mean_kl += kl;
    }
    return std::exp(mean_kl / static_cast<double>(p.n));
}

// --- ToyExtractor ---------------------------------------------------------------

ToyExtractor::ToyExtractor(const ExtractorConfig& cfg) : cfg_(cfg) {
    if (cfg_.n_classes < 2) throw std::invalid_argument("ToyExtractor: n_classes must be >= 2");
    Rng rng(cfg_.seed);
    const auto plan = plan_trunk_stages(3, cfg_.T, cfg_.H, cfg_.W, cfg_.base_channels);
    for (const auto& p : plan) stages_.push_back(ConvStageT<float>::init_forward(rng, p));
    // Global average pooling collapses [C, t, h, w] to [C]; a dense layer maps
    // the pooled channels to the feature dimension, then to class logits.
    const std::int64_t last_ch = plan.empty() ? 3 : plan.back().out_ch;
    pool_proj_ = DenseT<float>::init(rng, last_ch, cfg_.feature_dim);
    head_ = DenseT<float>::init(rng, cfg_.feature_dim, cfg_.n_classes);
}

TensorPtr<float> ToyExtractor::features_of(const TensorPtr<float>& video) const {
    if (video->shape != Shape{3, cfg_.T, cfg_.H, cfg_.W}) {
        throw std::invalid_argument("extractor: bad video shape " + shape_str(video->shape));
    }
    auto x = video;
    for (const auto& s : stages_) x = leaky_relu(s.forward(x), float(kLeakySlope));
    // global average pool per channel
    const std::int64_t C = x->shape[0];
    const std::int64_t inner = x->size() / C;
    auto rows2d = reshape(x, {C, inner});
    std::vector<TensorPtr<float>> rows;
    rows.reserve(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        rows.push_back(reshape(reduce_mean(select(rows2d, 0, c)), Shape{1}));
    }
    auto vec = concat(rows, 0);
    return leaky_relu(pool_proj_.forward(vec), float(kLeakySlope));
}

double ToyExtractor::train(const Dataset& train_set, const Dataset& holdout) {
    if (train_set.labels.empty() || holdout.labels.empty()) {
        throw std::invalid_argument("ToyExtractor::train: datasets must carry labels");
    }
    const std::int64_t expected = train_set.n_appearance_classes * train_set.n_motion_classes;
    if (expected != cfg_.n_classes) {
        throw std::invalid_argument("ToyExtractor::train: class grid " + std::to_string(expected) +
                                    " does not match configured n_classes " +
                                    std::to_string(cfg_.n_classes));
    }

    Rng rng(cfg_.seed ^ 0xABCDEF12345ull);
    AdamConfig<float> ac;
    ac.alpha = static_cast<float>(cfg_.alpha);
    ac.beta1 = 0.9f;
    ac.beta2 = 0.999f;
    std::vector<TensorPtr<float>> params;
    for (auto& [n, p] : named_params()) params.push_back(p);
    AdamOpt<float> opt(params, ac);

    const std::int64_t n = static_cast<std::int64_t>(train_set.videos.size());
    for (std::int64_t it = 0; it < cfg_.train_steps; ++it) {
        TensorPtr<float> loss;
        for (std::int64_t b = 0; b < cfg_.batch; ++b) {
            const std::int64_t i = rng.uniform_int(n);
            const auto& lab = train_set.labels[static_cast<std::size_t>(i)];
            const std::int64_t target =
                lab.appearance_class * train_set.n_motion_classes + lab.motion_class;
            auto logits = head_.forward(features_of(train_set.videos[static_cast<std::size_t>(i)]));
            auto ce = cross_entropy_logits(logits, target);
            loss = loss ? add(loss, ce) : ce;
        }
        loss = scale(loss, 1.0f / static_cast<float>(cfg_.batch));
        loss->backward();
        opt.step();
        for (auto& p : params) p->zero_grad();
    }

    std::int64_t correct = 0;
    {
        NoGradGuard off;
        for (std::size_t i = 0; i < holdout.videos.size(); ++i) {
            const auto& lab = holdout.labels[i];
            const std::int64_t target = lab.appearance_class * holdout.n_motion_classes + lab.motion_class;
            auto logits = head_.forward(features_of(holdout.videos[i]));
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < cfg_.n_classes; ++j) {
                if (logits->data[static_cast<std::size_t>(j)] > logits->data[static_cast<std::size_t>(best)]) best = j;
            }
            if (best == target) ++correct;
        }
    }
    holdout_accuracy_ = static_cast<double>(correct) / static_cast<double>(holdout.videos.size());
    gated_ = holdout_accuracy_ >= cfg_.min_accuracy;
    return holdout_accuracy_;
}

void ToyExtractor::require_gate() const {
    if (!gated_) {
        throw std::runtime_error(
            "extractor has not passed its accuracy gate (held-out accuracy " +
            std::to_string(holdout_accuracy_) + ", required " + std::to_string(cfg_.min_accuracy) +
            "); train it before requesting metrics");
    }
}

FeatureSet ToyExtractor::extract_features(const std::vector<TensorPtr<float>>& videos) const {
    require_gate();
    NoGradGuard off;
    FeatureSet out;
    out.n = static_cast<std::int64_t>(videos.size());
    out.f = cfg_.feature_dim;
    out.data.reserve(static_cast<std::size_t>(out.n * out.f));
    for (const auto& v : videos) {
        auto f = features_of(v);
        for (float x : f->data) out.data.push_back(static_cast<double>(x));
    }
    return out;
}

ClassProbs ToyExtractor::classify(const std::vector<TensorPtr<float>>& videos) const {
    require_gate();
    NoGradGuard off;
    ClassProbs out;
    out.n = static_cast<std::int64_t>(videos.size());
    out.k = cfg_.n_classes;
    out.data.reserve(static_cast<std::size_t>(out.n * out.k));
    for (const auto& v : videos) {
        auto logits = head_.forward(features_of(v));
        double mx = logits->data[0];
        for (float x : logits->data) mx = std::max(mx, static_cast<double>(x));
        double sum = 0;
        std::vector<double> row(static_cast<std::size_t>(out.k));
        for (std::int64_t j = 0; j < out.k; ++j) {
            row[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits->data[static_cast<std::size_t>(j)]) - mx);
            sum += row[static_cast<std::size_t>(j)];
        }
        for (double& v2 : row) out.data.push_back(v2 / sum);
    }
    return out;
}

NamedParams<float> ToyExtractor::named_params() const {
    NamedParams<float> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        stages_[i].collect(out, "extractor.stage" + std::to_string(i));
    }
    pool_proj_.collect(out, "extractor.pool_proj");
    head_.collect(out, "extractor.head");
    return out;
}

CheckpointData ToyExtractor::save_state() const {
    CheckpointData ckpt;
    ckpt.fingerprint = static_cast<std::uint64_t>(cfg_.n_classes) << 32 |
                       static_cast<std::uint64_t>(cfg_.feature_dim);
    ckpt.counters.emplace_back("gated", gated_ ? 1 : 0);
    ckpt.counters.emplace_back("holdout_accuracy_ppm",
                               static_cast<std::uint64_t>(holdout_accuracy_ * 1e6));
    for (const auto& [name, p] : named_params()) ckpt.tensors.emplace_back(name, p->detach());
    return ckpt;
}

void ToyExtractor::load_state(const CheckpointData& ckpt) {
    for (const auto& [name, p] : named_params()) {
        const auto& src = ckpt.tensor(name);
        if (src->shape != p->shape) {
            throw std::invalid_argument("extractor state tensor \"" + name + "\" has the wrong shape");
        }
        p->data = src->data;
        p->zero_grad();
    }
    gated_ = ckpt.counter("gated") != 0;
    holdout_accuracy_ = static_cast<double>(ckpt.counter("holdout_accuracy_ppm")) / 1e6;
}

// --- disentanglement probe --------------------------------------------------------

void video_readouts(const TensorPtr<float>& video, double app[3], double mot[2]) {
    const std::int64_t T = video->shape[1], H = video->shape[2], W = video->shape[3];
    const std::int64_t HW = H * W;
    for (int c = 0; c < 3; ++c) {
        double acc = 0;
        const float* base = video->data.data() + c * T * HW;
        for (std::int64_t i = 0; i < T * HW; ++i) acc += base[i];
        app[c] = acc / static_cast<double>(T * HW);
    }
    // Centroid weighted by squared deviation from the frame mean, so a flat
    // background contributes almost nothing and the centroid tracks the
    // salient content.
    auto centroid = [&](std::int64_t t, double& cx, double& cy) {
        double mean[3] = {0, 0, 0};
        for (int c = 0; c < 3; ++c) {
            const float* base = video->data.data() + (c * T + t) * HW;
            for (std::int64_t i = 0; i < HW; ++i) mean[c] += base[i];
            mean[c] /= static_cast<double>(HW);
        }
        double sw = 0, sx = 0, sy = 0;
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                double w = 0;
                for (int c = 0; c < 3; ++c) {
                    const double dv =
                        static_cast<double>(
                            video->data[static_cast<std::size_t>(((c * T + t) * H + y) * W + x)]) -
                        mean[c];
                    w += dv * dv;
                }
                w /= 3.0;
                sw += w;
                sx += w * static_cast<double>(x);
                sy += w * static_cast<double>(y);
            }
        }
        cx = sw > 0 ? sx / sw : 0;
        cy = sw > 0 ? sy / sw : 0;
    };
    double x0, y0, x1, y1;
    centroid(0, x0, y0);
    centroid(T - 1, x1, y1);
    mot[0] = x1 - x0;
    mot[1] = y1 - y0;
}

ProbeStats disentanglement_probe(const Model& model, std::int64_t n_pairs, std::uint64_t seed) {
    if (n_pairs < 1) throw std::invalid_argument("disentanglement_probe: n_pairs must be >= 1");
    Rng rng(seed);
    NoGradGuard off;
    const std::int64_t d = model.d;

    struct Readout {
        double app[3];
        double mot[2];
    };
    auto read = [&](const TensorPtr<float>& z_a, const TensorPtr<float>& z_m) {
        Readout r;
        auto v = model.generate(z_a, z_m);
        video_readouts(v, r.app, r.mot);
        return r;
    };

    std::vector<Readout> all;
    double app_change_zm = 0, mot_change_zm = 0;  // z_M resampled, z_A fixed
    double app_change_za = 0, mot_change_za = 0;  // z_A resampled, z_M fixed
    auto dist3 = [](const double* a, const double* b) {
        return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                         (a[2] - b[2]) * (a[2] - b[2]));
    };
    auto dist2 = [](const double* a, const double* b) {
        return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
    };

    for (std::int64_t i = 0; i < n_pairs; ++i) {
        auto z_a = randn_tensor<float>(rng, {d});
        auto z_m1 = randn_tensor<float>(rng, {d});
        auto z_m2 = randn_tensor<float>(rng, {d});
        const auto r1 = read(z_a, z_m1);
        const auto r2 = read(z_a, z_m2);
        app_change_zm += dist3(r1.app, r2.app);
        mot_change_zm += dist2(r1.mot, r2.mot);
        all.push_back(r1);
        all.push_back(r2);
    }
    for (std::int64_t i = 0; i < n_pairs; ++i) {
        auto z_m = randn_tensor<float>(rng, {d});
        auto z_a1 = randn_tensor<float>(rng, {d});
        auto z_a2 = randn_tensor<float>(rng, {d});
        const auto r1 = read(z_a1, z_m);
        const auto r2 = read(z_a2, z_m);
        app_change_za += dist3(r1.app, r2.app);
        mot_change_za += dist2(r1.mot, r2.mot);
        all.push_back(r1);
        all.push_back(r2);
    }

    // Spread of each readout across every probe sample; normalizing by these
    // makes the appearance and motion axes comparable.
    double app_mean[3] = {0, 0, 0}, mot_mean[2] = {0, 0};
    for (const auto& r : all) {
        for (int c = 0; c < 3; ++c) app_mean[c] += r.app[c];
        for (int c = 0; c < 2; ++c) mot_mean[c] += r.mot[c];
    }
    for (int c = 0; c < 3; ++c) app_mean[c] /= static_cast<double>(all.size());
    for (int c = 0; c < 2; ++c) mot_mean[c] /= static_cast<double>(all.size());
    double app_var = 0, mot_var = 0;
    for (const auto& r : all) {
        for (int c = 0; c < 3; ++c) app_var += (r.app[c] - app_mean[c]) * (r.app[c] - app_mean[c]);
        for (int c = 0; c < 2; ++c) mot_var += (r.mot[c] - mot_mean[c]) * (r.mot[c] - mot_mean[c]);
    }
    const double app_scale = std::sqrt(app_var / static_cast<double>(all.size())) + 1e-12;
    const double mot_scale = std::sqrt(mot_var / static_cast<double>(all.size())) + 1e-12;

    ProbeStats stats;
    const double inv_pairs = 1.0 / static_cast<double>(n_pairs);
    stats.appearance_drift = app_change_zm * inv_pairs / app_scale;
    stats.motion_swap_effect = mot_change_zm * inv_pairs / mot_scale;
    stats.appearance_swap_effect = app_change_za * inv_pairs / app_scale;
    stats.motion_drift = mot_change_za * inv_pairs / mot_scale;
    return stats;
}

}  // namespace avlae
