#include "ca/allocation_layer.hpp"

namespace ca {

namespace {
// Large negative logit; exp underflows to exactly zero after max subtraction.
constexpr double kExcludedLogit = -1e30;
}  // namespace

Tensor incidence_tensor(Tape& tape, const AuctionConfig& config) {
    return tape.constant({config.items, config.k}, incidence_matrix(config));
}

Tensor item_bundle_scores(const Tensor& item_logits, const Tensor& incidence,
                          const AllocationLayerOptions& opts) {
    const int axis = item_logits.rank() - 1;  // bundle axis
    if (opts.mask_mode == MaskMode::Unmasked)
        return softmax(item_logits, axis, opts.temperature);
    {
        // An all-zero incidence row would make the masked softmax 0/0.
        const auto iv = incidence.values();
        const Shape& is = incidence.shape();
        const int k = is.back();
        for (int64_t row = 0; row < static_cast<int64_t>(iv.size()) / k; ++row) {
            bool any = false;
            for (int s = 0; s < k && !any; ++s) any = iv[row * k + s] != 0.0;
            if (!any)
                throw TensorError("item_bundle_scores: item " + std::to_string(row) +
                                  " appears in no bundle");
        }
    }
    // Excluded bundles get a -inf-like logit scaled so the temperature
    // division cannot bring it back into range.
    Tensor hole = sub(incidence.tape()->constant_like(incidence, 1.0), incidence);
    Tensor masked = masked_fill(item_logits, hole, kExcludedLogit * opts.temperature);
    return softmax(masked, axis, opts.temperature);
}

BundleAvailability bundle_availability(const Tensor& item_scores, const Tensor& incidence,
                                       const AllocationLayerOptions& opts) {
    Tensor hole = sub(incidence.tape()->constant_like(incidence, 1.0), incidence);
    BundleAvailability out;
    out.masked_scores = masked_fill(item_scores, hole, opts.sentinel);
    const int item_axis = item_scores.rank() - 2;
    Tensor mins = min_along(out.masked_scores, item_axis);  // batch x k (or k)
    Shape row_shape = mins.shape();
    row_shape.insert(row_shape.end() - 1, 1);  // unsqueeze the agent axis
    out.bundle_avail = reshape(mins, std::move(row_shape));
    return out;
}

Tensor agent_bundle_scores(const Tensor& agent_logits, const Tensor& bundle_logits,
                           const AllocationLayerOptions& opts) {
    const int agent_axis = agent_logits.rank() - 2;
    const int bundle_axis = agent_logits.rank() - 1;
    Tensor per_agent = softmax(agent_logits, agent_axis, opts.temperature);
    Tensor per_bundle = softmax(bundle_logits, bundle_axis, opts.temperature);
    return minimum(per_agent, per_bundle);
}

Tensor compose_allocation(const Tensor& bundle_avail, const Tensor& agent_bundle) {
    return mul(bundle_avail, agent_bundle);
}

FeasibleAllocation feasible_allocation(const Tensor& agent_logits, const Tensor& bundle_logits,
                                       const Tensor& item_logits, const AuctionConfig& config,
                                       const AllocationLayerOptions& opts) {
    Tensor incidence = incidence_tensor(*agent_logits.tape(), config);
    FeasibleAllocation out;
    out.item_scores = item_bundle_scores(item_logits, incidence, opts);
    BundleAvailability avail = bundle_availability(out.item_scores, incidence, opts);
    out.masked_scores = avail.masked_scores;
    out.bundle_avail = avail.bundle_avail;
    out.agent_bundle = agent_bundle_scores(agent_logits, bundle_logits, opts);
    out.allocation = compose_allocation(out.bundle_avail, out.agent_bundle);
    return out;
}

}  // namespace ca
