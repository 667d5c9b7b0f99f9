#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ca/rng.hpp"

namespace ca {

// Bundles are indexed by their item bitmask in ascending order, so bundle
// index = bitmask - 1 and the singleton for item j sits at index (1<<j) - 1.
struct AuctionConfig {
    int bidders = 0;
    int items = 0;
    int k = 0;  // 2^items - 1
    std::vector<uint32_t> bundles;

    static AuctionConfig make(int bidders, int items);

    int bundle_index(uint32_t mask) const { return static_cast<int>(mask) - 1; }
    int singleton_index(int item) const { return (1 << item) - 1; }
    int bundle_size(int index) const { return __builtin_popcount(bundles[index]); }
    bool bundle_has_item(int index, int item) const { return (bundles[index] >> item) & 1u; }
};

// m x k row-major, entry 1.0 iff item j is in bundle S.
std::vector<double> incidence_matrix(const AuctionConfig& config);

enum class Setting { A, B, C };

Setting setting_from_string(const std::string& s);
std::string to_string(Setting s);

// Where the complementarity noise c_iS ~ U[-1,1] applies. MultiOnly keeps
// singleton values equal to the underlying item values.
enum class BundleNoise { MultiOnly, AllBundles };

struct ValuationBatch {
    int batch = 0;
    int bidders = 0;
    int k = 0;
    std::vector<double> values;  // batch x bidders x k row-major

    double* profile(int b) { return values.data() + static_cast<size_t>(b) * bidders * k; }
    const double* profile(int b) const { return values.data() + static_cast<size_t>(b) * bidders * k; }
    double& at(int b, int i, int s) { return values[(static_cast<size_t>(b) * bidders + i) * k + s]; }
    double at(int b, int i, int s) const { return values[(static_cast<size_t>(b) * bidders + i) * k + s]; }
};

// Setting A: additive over item values U[0,1]. Setting B: item values U[1,2]
// plus c_iS. Setting C (two bidders): bidder 1 items U[1,2], bidder 2 U[1,5],
// plus c_iS.
ValuationBatch sample_profiles(Setting setting, const AuctionConfig& config, int batch, Rng& rng,
                               BundleNoise noise = BundleNoise::MultiOnly);

// Coordinate-wise support interval of v_iS, used to project misreports.
// lo/hi are bidders x k row-major.
void support_box(Setting setting, const AuctionConfig& config, BundleNoise noise,
                 std::vector<double>& lo, std::vector<double>& hi);

// u_i = sum_S z_iS v_iS - p_i
double utility(std::span<const double> valuation_row, std::span<const double> allocation_row, double payment);

double revenue(std::span<const double> payments);

struct FeasibilityViolation {
    enum Kind { ItemOversold, BidderOversold, EntryOutOfRange } kind;
    int index;         // item, bidder, or flat entry index
    double magnitude;  // amount above the constraint
};

struct FeasibilityReport {
    double max_violation = 0.0;
    std::vector<FeasibilityViolation> violations;
    bool feasible() const { return violations.empty(); }
};

// Z is bidders x k. Checks items sold at most once, one bundle per bidder in
// expectation, and entries within [0,1], all up to tol.
FeasibilityReport check_feasibility(std::span<const double> allocation, const AuctionConfig& config,
                                    double tol);

// One bundle bitmask per bidder, 0 meaning no award; bitmasks pairwise disjoint.
struct DeterministicAllocation {
    std::vector<uint32_t> bundle_of;
};

// Exhaustive enumeration, empty allocation first; guarded to bidders <= 4,
// items <= 6.
std::vector<DeterministicAllocation> enumerate_feasible_allocations(const AuctionConfig& config);

// ---- valuation cache files ---------------------------------------------------

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

void write_valuation_cache(const std::string& path, const ValuationBatch& batch);
ValuationBatch read_valuation_cache(const std::string& path);
void write_valuation_csv(const std::string& path, const ValuationBatch& batch, const AuctionConfig& config,
                         int max_profiles = -1);

}  // namespace ca
