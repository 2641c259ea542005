#pragma once

// Adversarial and latent-reconstruction loss kernels. Logits cross network
// boundaries; sigmoid and log are fused through softplus so no probability is
// ever materialized:
//   log(sigmoid(x))     = -softplus(-x)
//   log(1 - sigmoid(x)) = -softplus(x)

#include <vector>

#include "avlae/tensor.hpp"

namespace avlae {

template <typename T>
struct AdvTerms {
    TensorPtr<T> disc;  // mean log sig(real) + mean log(1 - sig(fake)); the discriminator ascends this
    TensorPtr<T> gen;   // the generator descends this
};

template <typename T>
TensorPtr<T> stack_scalars(const std::vector<TensorPtr<T>>& scalars) {
    std::vector<TensorPtr<T>> rows;
    rows.reserve(scalars.size());
    for (const auto& s : scalars) rows.push_back(reshape(s, Shape{1}));
    return concat(rows, 0);
}

/// Adversarial terms from raw logits. The saturating generator term is
/// mean log(1 - sig(fake)); the non-saturating alternative is -mean log sig(fake).
template <typename T>
AdvTerms<T> adv_terms_from_logits(const std::vector<TensorPtr<T>>& real_logits,
                                  const std::vector<TensorPtr<T>>& fake_logits, bool saturating) {
    if (real_logits.empty() || fake_logits.empty()) {
        throw std::invalid_argument("adv_terms_from_logits: empty batch");
    }
    auto real_vec = stack_scalars(real_logits);
    auto fake_vec = stack_scalars(fake_logits);
    auto log_sig_real = neg(reduce_mean(softplus(neg(real_vec))));
    auto log_one_minus_sig_fake = neg(reduce_mean(softplus(fake_vec)));
    AdvTerms<T> out;
    out.disc = add(log_sig_real, log_one_minus_sig_fake);
    out.gen = saturating ? log_one_minus_sig_fake : reduce_mean(softplus(neg(fake_vec)));
    return out;
}

/// The quantity Step II descends for one discriminator:
/// mean log(1 - sig(fake)) when saturating, -mean log sig(fake) otherwise.
template <typename T>
TensorPtr<T> generator_loss_from_logits(const std::vector<TensorPtr<T>>& fake_logits, bool saturating) {
    if (fake_logits.empty()) throw std::invalid_argument("generator_loss_from_logits: empty batch");
    auto fake_vec = stack_scalars(fake_logits);
    return saturating ? neg(reduce_mean(softplus(fake_vec)))
                      : reduce_mean(softplus(neg(fake_vec)));
}

template <typename T>
struct ReconTerms {
    TensorPtr<T> total;
    TensorPtr<T> motion;      // k1 * mean ||target_m - encoded_m||^2
    TensorPtr<T> appearance;  // k2 * mean ||target_a - encoded_a||^2
};

/// Latent reconstruction between mapper outputs and encoder outputs, mean
/// over the batch. Squared L2 by default; L1 behind the flag.
template <typename T>
ReconTerms<T> latent_recon_loss(const std::vector<TensorPtr<T>>& motion_targets,
                                const std::vector<TensorPtr<T>>& motion_encoded,
                                const std::vector<TensorPtr<T>>& appearance_targets,
                                const std::vector<TensorPtr<T>>& appearance_encoded, T k1, T k2,
                                bool l1 = false) {
    if (motion_targets.size() != motion_encoded.size() ||
        appearance_targets.size() != appearance_encoded.size()) {
        throw std::invalid_argument("latent_recon_loss: batch size mismatch");
    }
    auto norm_mean = [&](const std::vector<TensorPtr<T>>& targets,
                         const std::vector<TensorPtr<T>>& encoded) -> TensorPtr<T> {
        TensorPtr<T> acc;
        for (std::size_t b = 0; b < targets.size(); ++b) {
            auto diff = sub(targets[b], encoded[b]);
            auto n = l1 ? reduce_sum(abs_op(diff)) : reduce_sum(square(diff));
            acc = acc ? add(acc, n) : n;
        }
        return scale(acc, T(1) / static_cast<T>(targets.size()));
    };

    ReconTerms<T> out;
    out.motion = !motion_targets.empty() && k1 != T(0)
                     ? scale(norm_mean(motion_targets, motion_encoded), k1)
                     : TensorT<T>::scalar(T(0));
    out.appearance = !appearance_targets.empty() && k2 != T(0)
                         ? scale(norm_mean(appearance_targets, appearance_encoded), k2)
                         : TensorT<T>::scalar(T(0));
    out.total = add(out.motion, out.appearance);
    return out;
}

}  // namespace avlae
