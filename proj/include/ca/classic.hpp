#pragma once

#include "ca/mechanism.hpp"

namespace ca {

// Affine-maximizer family: allocation argmax of sum_i w_i v_i(a) + lambda_a,
// Clarke-style pivot payments rescaled by 1/w_i. Unit weights and zero boosts
// reduce to VCG exactly. The boost table is indexed by the canonical feasible
// allocation enumeration; bidder_boosts (VVCA) are excluded from bidder i's
// own pivot terms.
struct AmaParams {
    std::vector<double> weights;                     // per bidder, > 0
    std::vector<double> boosts;                      // per allocation (shared)
    std::vector<std::vector<double>> bidder_boosts;  // optional, per bidder x allocation

    static AmaParams vcg(int bidders, size_t alloc_count);
    bool is_vvca() const { return !bidder_boosts.empty(); }
};

class AffineMaximizer : public Mechanism {
public:
    AffineMaximizer(const AuctionConfig& config, AmaParams params, std::string kind = "ama");

    const AuctionConfig& config() const override { return config_; }
    MechanismOutput forward(ParamBinder& bind, const Tensor& bids) override;
    std::string kind() const override { return kind_; }

    const AmaParams& ama_params() const { return params_; }
    const std::vector<DeterministicAllocation>& allocations() const { return allocations_; }

    // Winner determination and payments for one profile (bidders x k). The
    // chosen allocation index is returned; ties break to the lowest index.
    int outcome(const double* profile, double* allocation, double* payments) const;

    // Mean revenue over freshly sampled profiles.
    double monte_carlo_revenue(Setting setting, int64_t samples, Rng& rng,
                               BundleNoise noise = BundleNoise::MultiOnly, int chunk = 4096) const;

private:
    AuctionConfig config_;
    AmaParams params_;
    std::string kind_;
    std::vector<DeterministicAllocation> allocations_;
    std::vector<int> bundle_index_;  // per allocation x bidder, -1 when unassigned
};

std::unique_ptr<AffineMaximizer> make_vcg(const AuctionConfig& config);

// Allocation equivalence classes by per-bidder bundle-size profile; boosts are
// searched per class, optionally tied across bidder-symmetric classes.
struct AllocationClasses {
    std::vector<int> class_of;                  // per allocation
    std::vector<std::vector<int>> class_sizes;  // class -> size profile
    int count() const { return static_cast<int>(class_sizes.size()); }
};
AllocationClasses classify_allocations(const AuctionConfig& config,
                                       const std::vector<DeterministicAllocation>& allocs);

struct GridSearchSpec {
    std::vector<double> weight_values = {0.5, 0.75, 1.0, 1.25, 1.5};  // applied to bidders 2..n
    double boost_min = 0.0;
    double boost_max = 2.0;
    double boost_step = 0.1;
    // Default searched groups: the empty allocation (a reserve) and the
    // one-bidder-takes-everything class; low-dimensional enough that 100
    // training profiles rank points reliably.
    bool boost_all_classes = false;
    int64_t max_points = 5'000'000;
    bool vvca = false;  // bidder-specific boosts (own-bundle-size table)
};

struct SearchResult {
    AmaParams params;
    double train_revenue = 0.0;
    double eval_revenue = 0.0;
    int64_t points_evaluated = 0;
};

SearchResult grid_search_ama(Setting setting, const AuctionConfig& config, const GridSearchSpec& spec,
                             int train_samples, int64_t eval_samples, Rng& rng,
                             BundleNoise noise = BundleNoise::MultiOnly);

struct LocalSearchSpec {
    int restarts = 10;
    int max_sweeps = 60;
    double initial_step = 0.4;
    double min_step = 0.005;
    double weight_lo = 0.5, weight_hi = 1.5;
    double boost_lo = 0.0, boost_hi = 4.0;
};

// Coordinate hill climbing over (weights, class boosts); restart 0 starts at
// the VCG point so the train-set result can never fall below it.
SearchResult local_search_ama(Setting setting, const AuctionConfig& config, const LocalSearchSpec& spec,
                              int train_samples, int64_t eval_samples, Rng& rng,
                              BundleNoise noise = BundleNoise::MultiOnly);

}  // namespace ca
