#include "ca/classic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ca {

AmaParams AmaParams::vcg(int bidders, size_t alloc_count) {
    AmaParams p;
    p.weights.assign(bidders, 1.0);
    p.boosts.assign(alloc_count, 0.0);
    return p;
}

AffineMaximizer::AffineMaximizer(const AuctionConfig& config, AmaParams params, std::string kind)
    : config_(config), params_(std::move(params)), kind_(std::move(kind)) {
    allocations_ = enumerate_feasible_allocations(config);
    for (double w : params_.weights)
        if (w <= 0.0) throw std::invalid_argument("AffineMaximizer: weights must be positive");
    if (params_.weights.size() != static_cast<size_t>(config.bidders))
        throw std::invalid_argument("AffineMaximizer: weight count != bidders");
    if (params_.boosts.size() != allocations_.size())
        throw std::invalid_argument("AffineMaximizer: boost table size != allocation count");
    if (params_.is_vvca()) {
        if (params_.bidder_boosts.size() != static_cast<size_t>(config.bidders))
            throw std::invalid_argument("AffineMaximizer: bidder boost rows != bidders");
        for (const auto& row : params_.bidder_boosts)
            if (row.size() != allocations_.size())
                throw std::invalid_argument("AffineMaximizer: bidder boost table size mismatch");
    }
    bundle_index_.resize(allocations_.size() * config.bidders);
    for (size_t a = 0; a < allocations_.size(); ++a)
        for (int i = 0; i < config.bidders; ++i) {
            const uint32_t mask = allocations_[a].bundle_of[i];
            bundle_index_[a * config.bidders + i] = mask == 0 ? -1 : config.bundle_index(mask);
        }
}

std::unique_ptr<AffineMaximizer> make_vcg(const AuctionConfig& config) {
    const size_t count = enumerate_feasible_allocations(config).size();
    return std::make_unique<AffineMaximizer>(config, AmaParams::vcg(config.bidders, count), "vcg");
}

int AffineMaximizer::outcome(const double* profile, double* allocation, double* payments) const {
    const int n = config_.bidders, k = config_.k;
    const size_t A = allocations_.size();
    // weighted welfare of winner candidates
    int best = 0;
    double best_obj = -std::numeric_limits<double>::infinity();
    // per-bidder weighted value under each allocation is recomputed in the
    // pivot pass; keep the first pass allocation-major for cache friendliness
    for (size_t a = 0; a < A; ++a) {
        double obj = params_.boosts[a];
        for (int i = 0; i < n; ++i) {
            const int s = bundle_index_[a * n + i];
            if (s >= 0) obj += params_.weights[i] * profile[static_cast<size_t>(i) * k + s];
        }
        if (obj > best_obj) {
            best_obj = obj;
            best = static_cast<int>(a);
        }
    }
    std::fill(allocation, allocation + static_cast<size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) {
        const int s = bundle_index_[static_cast<size_t>(best) * n + i];
        if (s >= 0) allocation[static_cast<size_t>(i) * k + s] = 1.0;
    }
    for (int i = 0; i < n; ++i) {
        // pivot objective excludes bidder i's weighted value and, for VVCA,
        // bidder i's own boost
        double best_other = -std::numeric_limits<double>::infinity();
        double chosen_other = 0.0;
        for (size_t a = 0; a < A; ++a) {
            double obj = params_.boosts[a];
            if (params_.is_vvca()) obj -= params_.bidder_boosts[i][a];
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const int s = bundle_index_[a * n + j];
                if (s >= 0) obj += params_.weights[j] * profile[static_cast<size_t>(j) * k + s];
            }
            if (obj > best_other) best_other = obj;
            if (a == static_cast<size_t>(best)) chosen_other = obj;
        }
        payments[i] = (best_other - chosen_other) / params_.weights[i];
    }
    return best;
}

MechanismOutput AffineMaximizer::forward(ParamBinder& bind, const Tensor& bids) {
    Tape& tape = bind.tape();
    const Shape& s = bids.shape();
    const int n = config_.bidders, k = config_.k;
    if (s.size() != 3 || s[1] != n || s[2] != k)
        throw TensorError(kind_ + ": bids shape " + shape_str(s) + " does not match config");
    const int batch = s[0];
    std::vector<double> alloc(static_cast<size_t>(batch) * n * k);
    std::vector<double> pay(static_cast<size_t>(batch) * n);
    const double* src = bids.values().data();
    for (int b = 0; b < batch; ++b)
        outcome(src + static_cast<size_t>(b) * n * k, alloc.data() + static_cast<size_t>(b) * n * k,
                pay.data() + static_cast<size_t>(b) * n);
    // Deterministic winner rules are piecewise constant in the bids, so the
    // almost-everywhere derivative is zero: outputs join the tape as constants.
    MechanismOutput out;
    out.allocation = tape.constant({batch, n, k}, std::move(alloc));
    out.payments = tape.constant({batch, n}, std::move(pay));
    return out;
}

double AffineMaximizer::monte_carlo_revenue(Setting setting, int64_t samples, Rng& rng, BundleNoise noise,
                                            int chunk) const {
    const int n = config_.bidders, k = config_.k;
    std::vector<double> alloc(static_cast<size_t>(n) * k);
    std::vector<double> pay(n);
    double total = 0.0;
    int64_t done = 0;
    while (done < samples) {
        const int b = static_cast<int>(std::min<int64_t>(chunk, samples - done));
        ValuationBatch v = sample_profiles(setting, config_, b, rng, noise);
        for (int p = 0; p < b; ++p) {
            outcome(v.profile(p), alloc.data(), pay.data());
            for (int i = 0; i < n; ++i) total += pay[i];
        }
        done += b;
    }
    return total / static_cast<double>(samples);
}

AllocationClasses classify_allocations(const AuctionConfig& config,
                                       const std::vector<DeterministicAllocation>& allocs) {
    AllocationClasses out;
    out.class_of.resize(allocs.size());
    for (size_t a = 0; a < allocs.size(); ++a) {
        std::vector<int> profile(config.bidders);
        for (int i = 0; i < config.bidders; ++i)
            profile[i] = __builtin_popcount(allocs[a].bundle_of[i]);
        int idx = -1;
        for (size_t c = 0; c < out.class_sizes.size(); ++c)
            if (out.class_sizes[c] == profile) {
                idx = static_cast<int>(c);
                break;
            }
        if (idx < 0) {
            idx = static_cast<int>(out.class_sizes.size());
            out.class_sizes.push_back(profile);
        }
        out.class_of[a] = idx;
    }
    return out;
}

namespace {

// Bidder-symmetric groups of classes: classes whose sorted size profile agrees.
std::vector<std::vector<int>> symmetric_groups(const AllocationClasses& classes) {
    std::vector<std::vector<int>> keys;
    std::vector<std::vector<int>> groups;
    for (int c = 0; c < classes.count(); ++c) {
        std::vector<int> key = classes.class_sizes[c];
        std::sort(key.begin(), key.end());
        int g = -1;
        for (size_t i = 0; i < keys.size(); ++i)
            if (keys[i] == key) {
                g = static_cast<int>(i);
                break;
            }
        if (g < 0) {
            g = static_cast<int>(keys.size());
            keys.push_back(key);
            groups.emplace_back();
        }
        groups[g].push_back(c);
    }
    return groups;
}

double mean_revenue_on(const AffineMaximizer& mech, const ValuationBatch& profiles) {
    const int n = profiles.bidders, k = profiles.k;
    std::vector<double> alloc(static_cast<size_t>(n) * k);
    std::vector<double> pay(n);
    double total = 0.0;
    for (int b = 0; b < profiles.batch; ++b) {
        mech.outcome(profiles.profile(b), alloc.data(), pay.data());
        for (int i = 0; i < n; ++i) total += pay[i];
    }
    return total / profiles.batch;
}

AmaParams expand_class_params(const AuctionConfig& config, const AllocationClasses& classes,
                              const std::vector<double>& weights, const std::vector<double>& class_boosts,
                              const std::vector<double>* own_size_boosts,
                              const std::vector<DeterministicAllocation>& allocs) {
    AmaParams p;
    p.weights = weights;
    p.boosts.assign(allocs.size(), 0.0);
    for (size_t a = 0; a < allocs.size(); ++a) p.boosts[a] = class_boosts[classes.class_of[a]];
    if (own_size_boosts) {
        // VVCA: lambda_{i,a} depends on the size of bidder i's own bundle;
        // the shared boost becomes the sum over bidders
        p.bidder_boosts.assign(config.bidders, std::vector<double>(allocs.size(), 0.0));
        for (size_t a = 0; a < allocs.size(); ++a) {
            double sum = 0.0;
            for (int i = 0; i < config.bidders; ++i) {
                const int size = __builtin_popcount(allocs[a].bundle_of[i]);
                p.bidder_boosts[i][a] = (*own_size_boosts)[size];
                sum += p.bidder_boosts[i][a];
            }
            p.boosts[a] += sum;
        }
    }
    return p;
}

}  // namespace

SearchResult grid_search_ama(Setting setting, const AuctionConfig& config, const GridSearchSpec& spec,
                             int train_samples, int64_t eval_samples, Rng& rng, BundleNoise noise) {
    if (train_samples < 1) throw std::invalid_argument("grid_search_ama: need training samples");
    auto allocs = enumerate_feasible_allocations(config);
    AllocationClasses classes = classify_allocations(config, allocs);
    auto groups = symmetric_groups(classes);

    // searched boost dimensions
    std::vector<int> searched_groups;
    if (spec.vvca) {
        // own-size table: search sizes 0 and m, remaining sizes stay 0
        searched_groups = {0, config.items};
    } else if (spec.boost_all_classes) {
        for (size_t g = 0; g < groups.size(); ++g) searched_groups.push_back(static_cast<int>(g));
    } else {
        // group of the empty allocation and the grand-bundle class
        std::vector<int> empty_profile(config.bidders, 0);
        std::vector<int> grand_profile(config.bidders, 0);
        grand_profile.back() = config.items;  // sorted form
        for (size_t g = 0; g < groups.size(); ++g) {
            std::vector<int> key = classes.class_sizes[groups[g][0]];
            std::sort(key.begin(), key.end());
            if (key == empty_profile || key == grand_profile) searched_groups.push_back(static_cast<int>(g));
        }
    }

    std::vector<double> boost_values;
    for (double b = spec.boost_min; b <= spec.boost_max + 1e-12; b += spec.boost_step)
        boost_values.push_back(b);

    int64_t points = static_cast<int64_t>(spec.weight_values.size());
    for (size_t d = 0; d < searched_groups.size(); ++d) {
        points *= static_cast<int64_t>(boost_values.size());
        if (points > spec.max_points)
            throw std::invalid_argument("grid_search_ama: grid exceeds max_points guard");
    }

    ValuationBatch train = sample_profiles(setting, config, train_samples, rng, noise);

    const int dims = static_cast<int>(searched_groups.size());
    std::vector<int> idx(dims, 0);
    SearchResult best;
    best.train_revenue = -std::numeric_limits<double>::infinity();
    for (double w2 : spec.weight_values) {
        std::vector<double> weights(config.bidders, 1.0);
        for (int i = 1; i < config.bidders; ++i) weights[i] = w2;
        std::fill(idx.begin(), idx.end(), 0);
        while (true) {
            std::vector<double> class_boosts(classes.count(), 0.0);
            std::vector<double> own_size(static_cast<size_t>(config.items) + 1, 0.0);
            for (int d = 0; d < dims; ++d) {
                const double val = boost_values[idx[d]];
                if (spec.vvca)
                    own_size[searched_groups[d]] = val;
                else
                    for (int c : groups[searched_groups[d]]) class_boosts[c] = val;
            }
            AmaParams p = expand_class_params(config, classes, weights, class_boosts,
                                              spec.vvca ? &own_size : nullptr, allocs);
            AffineMaximizer mech(config, std::move(p), spec.vvca ? "vvca" : "ama");
            const double r = mean_revenue_on(mech, train);
            ++best.points_evaluated;
            if (r > best.train_revenue) {
                best.train_revenue = r;
                best.params = mech.ama_params();
            }
            int d = dims - 1;
            for (; d >= 0; --d) {
                if (++idx[d] < static_cast<int>(boost_values.size())) break;
                idx[d] = 0;
            }
            if (d < 0) break;
        }
    }
    AffineMaximizer winner(config, best.params, spec.vvca ? "vvca" : "ama");
    best.eval_revenue = winner.monte_carlo_revenue(setting, eval_samples, rng, noise);
    return best;
}

SearchResult local_search_ama(Setting setting, const AuctionConfig& config, const LocalSearchSpec& spec,
                              int train_samples, int64_t eval_samples, Rng& rng, BundleNoise noise) {
    auto allocs = enumerate_feasible_allocations(config);
    AllocationClasses classes = classify_allocations(config, allocs);
    const int n = config.bidders;
    const int dims = (n - 1) + classes.count();  // weights for bidders 2..n, then class boosts

    ValuationBatch train = sample_profiles(setting, config, train_samples, rng, noise);

    auto revenue_at = [&](const std::vector<double>& x) {
        std::vector<double> weights(n, 1.0);
        for (int i = 1; i < n; ++i) weights[i] = x[i - 1];
        std::vector<double> class_boosts(x.begin() + (n - 1), x.end());
        AmaParams p = expand_class_params(config, classes, weights, class_boosts, nullptr, allocs);
        AffineMaximizer mech(config, std::move(p));
        return mean_revenue_on(mech, train);
    };

    SearchResult best;
    best.train_revenue = -std::numeric_limits<double>::infinity();
    std::vector<double> best_x;
    for (int restart = 0; restart < spec.restarts; ++restart) {
        std::vector<double> x(dims, 0.0);
        if (restart == 0) {
            for (int i = 0; i < n - 1; ++i) x[i] = 1.0;  // the exact VCG point
        } else {
            for (int i = 0; i < n - 1; ++i) x[i] = rng.uniform(spec.weight_lo, spec.weight_hi);
            for (int d = n - 1; d < dims; ++d) x[d] = rng.uniform(spec.boost_lo, spec.boost_hi);
        }
        double cur = revenue_at(x);
        double step = spec.initial_step;
        for (int sweep = 0; sweep < spec.max_sweeps && step >= spec.min_step; ++sweep) {
            bool improved = false;
            for (int d = 0; d < dims; ++d) {
                const double lo = d < n - 1 ? spec.weight_lo : spec.boost_lo;
                const double hi = d < n - 1 ? spec.weight_hi : spec.boost_hi;
                for (double delta : {step, -step}) {
                    const double cand = std::clamp(x[d] + delta, lo, hi);
                    if (cand == x[d]) continue;
                    const double old = x[d];
                    x[d] = cand;
                    const double r = revenue_at(x);
                    if (r > cur) {
                        cur = r;
                        improved = true;
                        break;
                    }
                    x[d] = old;
                }
            }
            if (!improved) step *= 0.5;
            ++best.points_evaluated;
        }
        if (cur > best.train_revenue) {
            best.train_revenue = cur;
            best_x = x;
        }
    }
    {
        std::vector<double> weights(n, 1.0);
        for (int i = 1; i < n; ++i) weights[i] = best_x[i - 1];
        std::vector<double> class_boosts(best_x.begin() + (n - 1), best_x.end());
        best.params = expand_class_params(config, classes, weights, class_boosts, nullptr, allocs);
    }
    AffineMaximizer winner(config, best.params, "local_ama");
    best.eval_revenue = winner.monte_carlo_revenue(setting, eval_samples, rng, noise);
    return best;
}

}  // namespace ca
