#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avlae/metrics.hpp"
#include "avlae/random.hpp"

using namespace avlae;

namespace {

FeatureSet gaussian_features(Rng& rng, std::int64_t n, std::int64_t f, const std::vector<double>& mean) {
    FeatureSet s;
    s.n = n;
    s.f = f;
    s.data.resize(static_cast<std::size_t>(n * f));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < f; ++j) {
            s.data[static_cast<std::size_t>(i * f + j)] = rng.normal() + mean[static_cast<std::size_t>(j)];
        }
    }
    return s;
}

// Symmetric point set with exact mean mu and exact diagonal covariance
// diag(2 a_j^2 / (n - 1)).
FeatureSet diagonal_features(const std::vector<double>& mu, const std::vector<double>& amp) {
    const std::int64_t f = static_cast<std::int64_t>(mu.size());
    FeatureSet s;
    s.n = 2 * f;
    s.f = f;
    s.data.assign(static_cast<std::size_t>(s.n * f), 0.0);
    for (std::int64_t j = 0; j < f; ++j) {
        for (std::int64_t i = 0; i < s.n; ++i) s.data[static_cast<std::size_t>(i * f + j)] = mu[static_cast<std::size_t>(j)];
        s.data[static_cast<std::size_t>((2 * j) * f + j)] += amp[static_cast<std::size_t>(j)];
        s.data[static_cast<std::size_t>((2 * j + 1) * f + j)] -= amp[static_cast<std::size_t>(j)];
    }
    return s;
}

}  // namespace

TEST_CASE("fid of a set against itself is ~zero") {
    Rng rng(51);
    auto a = gaussian_features(rng, 200, 6, std::vector<double>(6, 0.0));
    CHECK(std::abs(fid(a, a)) <= 1e-6);
}

TEST_CASE("fid recovers the squared mean shift between isotropic Gaussians") {
    Rng rng(52);
    const std::vector<double> zero(4, 0.0);
    const std::vector<double> m = {0.8, -0.5, 0.3, 1.1};
    auto a = gaussian_features(rng, 50000, 4, zero);
    auto b = gaussian_features(rng, 50000, 4, m);
    double m2 = 0;
    for (double v : m) m2 += v * v;
    CHECK(fid(a, b) == doctest::Approx(m2).epsilon(0.05));
}

TEST_CASE("fid matches the diagonal-covariance closed form on constructed sets") {
    const std::vector<double> mu_a = {0.0, 1.0, -2.0}, amp_a = {1.0, 2.0, 0.5};
    const std::vector<double> mu_b = {0.5, 0.0, -1.0}, amp_b = {2.0, 1.0, 1.5};
    auto a = diagonal_features(mu_a, amp_a);
    auto b = diagonal_features(mu_b, amp_b);

    double expect = 0;
    for (std::size_t j = 0; j < 3; ++j) {
        const double dmu = mu_a[j] - mu_b[j];
        expect += dmu * dmu;
        const double sa = 2.0 * amp_a[j] * amp_a[j] / static_cast<double>(a.n - 1);
        const double sb = 2.0 * amp_b[j] * amp_b[j] / static_cast<double>(b.n - 1);
        expect += (std::sqrt(sa) - std::sqrt(sb)) * (std::sqrt(sa) - std::sqrt(sb));
    }
    CHECK(std::abs(fid(a, b) - expect) <= 1e-4);
}

TEST_CASE("fid is symmetric and nonnegative") {
    Rng rng(53);
    for (int trial = 0; trial < 4; ++trial) {
        std::vector<double> ma(5), mb(5);
        for (auto& v : ma) v = rng.uniform(-1, 1);
        for (auto& v : mb) v = rng.uniform(-1, 1);
        auto a = gaussian_features(rng, 300, 5, ma);
        auto b = gaussian_features(rng, 300, 5, mb);
        const double ab = fid(a, b), ba = fid(b, a);
        CHECK(std::abs(ab - ba) <= 1e-8);
        CHECK(ab >= 0.0);
    }
}

TEST_CASE("fid rejects mismatched dimensions and tiny sets") {
    Rng rng(54);
    auto a = gaussian_features(rng, 10, 3, {0, 0, 0});
    auto b = gaussian_features(rng, 10, 4, {0, 0, 0, 0});
    CHECK_THROWS_AS(fid(a, b), std::invalid_argument);
    FeatureSet single;
    single.n = 1;
    single.f = 3;
    single.data = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(fid(single, a), std::invalid_argument);
}

TEST_CASE("inception score: uniform rows, balanced one-hot rows, single row") {
    ClassProbs uniform;
    uniform.n = 12;
    uniform.k = 5;
    uniform.data.assign(12 * 5, 1.0 / 5.0);
    CHECK(inception_score(uniform) == doctest::Approx(1.0).epsilon(1e-12));

    ClassProbs onehot;
    onehot.n = 10;
    onehot.k = 5;
    onehot.data.assign(10 * 5, 0.0);
    for (std::int64_t i = 0; i < 10; ++i) onehot.data[static_cast<std::size_t>(i * 5 + i % 5)] = 1.0;
    CHECK(std::abs(inception_score(onehot) - 5.0) <= 1e-9);

    ClassProbs one_row;
    one_row.n = 1;
    one_row.k = 4;
    one_row.data = {0.1, 0.2, 0.3, 0.4};
    CHECK(inception_score(one_row) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("inception score stays within [1, K] and validates rows") {
    Rng rng(55);
    ClassProbs p;
    p.n = 40;
    p.k = 7;
    p.data.resize(40 * 7);
    for (std::int64_t i = 0; i < 40; ++i) {
        double sum = 0;
        for (std::int64_t j = 0; j < 7; ++j) {
            const double v = -std::log(rng.uniform() + 1e-12);
            p.data[static_cast<std::size_t>(i * 7 + j)] = v;
            sum += v;
        }
        for (std::int64_t j = 0; j < 7; ++j) p.data[static_cast<std::size_t>(i * 7 + j)] /= sum;
    }
    const double is = inception_score(p);
    CHECK(is >= 1.0 - 1e-9);
    CHECK(is <= 7.0 + 1e-9);

    ClassProbs bad;
    bad.n = 1;
    bad.k = 3;
    bad.data = {0.5, 0.4, 0.3};  // sums to 1.2
    CHECK_THROWS_AS(inception_score(bad), std::invalid_argument);
    ClassProbs neg;
    neg.n = 1;
    neg.k = 3;
    neg.data = {1.2, -0.1, -0.1};
    CHECK_THROWS_AS(inception_score(neg), std::invalid_argument);
}

TEST_CASE("untrained extractor refuses to produce metrics") {
    ExtractorConfig cfg;
    cfg.T = 4;
    cfg.H = 16;
    cfg.W = 16;
    cfg.n_classes = 12;
    cfg.feature_dim = 16;
    ToyExtractor ex(cfg);
    CHECK_FALSE(ex.gated());
    std::vector<TensorPtr<float>> vids = {TensorT<float>::zeros({3, 4, 16, 16})};
    CHECK_THROWS_WITH_AS(ex.extract_features(vids), doctest::Contains("gate"), std::runtime_error);
    CHECK_THROWS_AS(ex.classify(vids), std::runtime_error);
}

TEST_CASE("extractor training raises held-out accuracy and respects the gate mechanics") {
    SyntheticSpec spec;
    spec.n_videos = 220;
    spec.T = 4;
    spec.H = 16;
    spec.W = 16;
    spec.palette = 1;
    spec.seed = 61;
    auto full = make_synthetic(spec);
    Dataset train, holdout;
    train.n_appearance_classes = holdout.n_appearance_classes = full.n_appearance_classes;
    train.n_motion_classes = holdout.n_motion_classes = full.n_motion_classes;
    for (std::size_t i = 0; i < full.videos.size(); ++i) {
        auto& dst = i < 160 ? train : holdout;
        dst.videos.push_back(full.videos[i]);
        dst.labels.push_back(full.labels[i]);
    }

    ExtractorConfig cfg;
    cfg.T = 4;
    cfg.H = 16;
    cfg.W = 16;
    cfg.n_classes = full.n_appearance_classes * full.n_motion_classes;
    cfg.feature_dim = 16;
    cfg.base_channels = 8;
    cfg.train_steps = 250;
    cfg.batch = 16;
    cfg.min_accuracy = 0.15;  // mechanism check only; the 0.9 gate runs in acceptance
    cfg.seed = 62;
    ToyExtractor ex(cfg);
    const double acc = ex.train(train, holdout);
    CHECK(acc > 2.0 / static_cast<double>(cfg.n_classes));  // well above chance
    CHECK(ex.gated() == (acc >= cfg.min_accuracy));

    if (ex.gated()) {
        auto feats = ex.extract_features(train.videos);
        CHECK(feats.f == 16);
        CHECK(feats.n == static_cast<std::int64_t>(train.videos.size()));
        auto probs = ex.classify(holdout.videos);
        CHECK(probs.k == cfg.n_classes);
        for (std::int64_t i = 0; i < probs.n; ++i) {
            double sum = 0;
            for (std::int64_t j = 0; j < probs.k; ++j) sum += probs.data[static_cast<std::size_t>(i * probs.k + j)];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }

        // state round-trip preserves behavior
        auto state = ex.save_state();
        ToyExtractor ex2(cfg);
        ex2.load_state(state);
        auto feats2 = ex2.extract_features(train.videos);
        CHECK(feats2.data == feats.data);
    }
}

TEST_CASE("video readouts recover known color and displacement") {
    SyntheticSpec spec;
    spec.n_videos = 48;
    spec.T = 8;
    spec.H = 32;
    spec.W = 32;
    spec.palette = 2;
    spec.seed = 63;
    auto ds = make_synthetic(spec);
    for (std::size_t i = 0; i < ds.videos.size(); ++i) {
        const auto& lab = ds.labels[i];
        double app[3], mot[2];
        video_readouts(ds.videos[i], app, mot);
        double dx, dy;
        heading_vector(lab.direction, dx, dy);
        const double travel = static_cast<double>(spec.T - 1) * (lab.speed + 1);
        CHECK(mot[0] == doctest::Approx(dx * travel).epsilon(0.2));
        CHECK(mot[1] == doctest::Approx(dy * travel).epsilon(0.2));
        // red objects push the red channel above the others, green likewise
        if (lab.color == 0) CHECK(app[0] > app[1]);
        if (lab.color == 1) CHECK(app[1] > app[0]);
    }
}

TEST_CASE("disentanglement probe is deterministic and finite on an untrained model") {
    RunConfig cfg;
    cfg.model.d = 8;
    cfg.model.T = 4;
    cfg.model.H = 16;
    cfg.model.W = 16;
    cfg.model.channels.generator = 2;
    cfg.model.channels.encoder = 4;
    cfg.model.channels.discriminator = 4;
    cfg.flow.iterations = 3;
    cfg.flow.scale = 2;
    Rng rng(64);
    auto model = Model::build(cfg, rng);

    const auto s1 = disentanglement_probe(model, 6, 99);
    const auto s2 = disentanglement_probe(model, 6, 99);
    CHECK(s1.appearance_drift == s2.appearance_drift);
    CHECK(s1.motion_swap_effect == s2.motion_swap_effect);
    CHECK(s1.motion_drift == s2.motion_drift);
    CHECK(s1.appearance_swap_effect == s2.appearance_swap_effect);
    for (double v : {s1.appearance_drift, s1.motion_swap_effect, s1.motion_drift,
                     s1.appearance_swap_effect}) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }

    const auto s3 = disentanglement_probe(model, 6, 100);
    CHECK(s3.appearance_drift != s1.appearance_drift);
}
