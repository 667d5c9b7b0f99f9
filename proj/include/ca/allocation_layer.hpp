#pragma once

#include "ca/auction.hpp"
#include "ca/tensor.hpp"

namespace ca {

// How the item-to-bundle softmax treats bundles not containing the item.
// Masked excludes them (probability exactly zero); Unmasked normalizes over
// all k bundles. Either choice keeps the composed allocation feasible.
enum class MaskMode { Masked, Unmasked };

struct AllocationLayerOptions {
    double temperature = 15.0;
    double sentinel = 1e9;  // replaces zeroed entries before the min over items
    MaskMode mask_mode = MaskMode::Masked;
};

// Intermediates are kept for diagnostics and tests.
struct FeasibleAllocation {
    Tensor allocation;      // Z: batch x n x k, combinatorially feasible
    Tensor bundle_avail;    // b^bundle: batch x 1 x k
    Tensor agent_bundle;    // A^agent-bundle: batch x n x k
    Tensor item_scores;     // B^adjusted: batch x m x k
    Tensor masked_scores;   // B^masked: batch x m x k
};

// Per item j, softmax over the bundles containing j (temperature-scaled);
// rows sum to one over the item's bundles.
Tensor item_bundle_scores(const Tensor& item_logits, const Tensor& incidence,
                          const AllocationLayerOptions& opts);

// b^bundle[S] = min over items j in S of B^adjusted[j][S]; excluded entries
// are lifted to the sentinel so they never win the min.
struct BundleAvailability {
    Tensor bundle_avail;   // batch x 1 x k
    Tensor masked_scores;  // batch x m x k
};
BundleAvailability bundle_availability(const Tensor& item_scores, const Tensor& incidence,
                                       const AllocationLayerOptions& opts);

// Elementwise min of the agent-axis softmax of A and the bundle-axis softmax
// of A'; columns and rows then both sum to at most one.
Tensor agent_bundle_scores(const Tensor& agent_logits, const Tensor& bundle_logits,
                           const AllocationLayerOptions& opts);

// Z[i][S] = b^bundle[S] * A^agent-bundle[i][S] (broadcast elementwise product).
Tensor compose_allocation(const Tensor& bundle_avail, const Tensor& agent_bundle);

// Full layer: (A, A', B) logits, each batched (batch x n x k, batch x n x k,
// batch x m x k), to a feasible allocation.
FeasibleAllocation feasible_allocation(const Tensor& agent_logits, const Tensor& bundle_logits,
                                       const Tensor& item_logits, const AuctionConfig& config,
                                       const AllocationLayerOptions& opts);

// Constant incidence tensor (m x k) on the given tape.
Tensor incidence_tensor(Tape& tape, const AuctionConfig& config);

}  // namespace ca
