#include "ca/auction.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ca {

AuctionConfig AuctionConfig::make(int bidders, int items) {
    if (bidders < 1) throw std::invalid_argument("AuctionConfig: need at least one bidder");
    if (items < 1 || items > 12)
        throw std::invalid_argument("AuctionConfig: items must be in [1,12], got " + std::to_string(items));
    AuctionConfig c;
    c.bidders = bidders;
    c.items = items;
    c.k = (1 << items) - 1;
    c.bundles.resize(c.k);
    for (int s = 0; s < c.k; ++s) c.bundles[s] = static_cast<uint32_t>(s + 1);
    return c;
}

std::vector<double> incidence_matrix(const AuctionConfig& config) {
    std::vector<double> inc(static_cast<size_t>(config.items) * config.k, 0.0);
    for (int j = 0; j < config.items; ++j)
        for (int s = 0; s < config.k; ++s)
            if (config.bundle_has_item(s, j)) inc[static_cast<size_t>(j) * config.k + s] = 1.0;
    return inc;
}

Setting setting_from_string(const std::string& s) {
    if (s == "A" || s == "a") return Setting::A;
    if (s == "B" || s == "b") return Setting::B;
    if (s == "C" || s == "c") return Setting::C;
    throw std::invalid_argument("unknown setting '" + s + "' (expected A, B, or C)");
}

std::string to_string(Setting s) {
    switch (s) {
        case Setting::A: return "A";
        case Setting::B: return "B";
        case Setting::C: return "C";
    }
    return "?";
}

namespace {

void item_value_range(Setting setting, int bidder, double& lo, double& hi) {
    lo = 0.0;
    hi = 1.0;
    switch (setting) {
        case Setting::A: lo = 0.0; hi = 1.0; break;
        case Setting::B: lo = 1.0; hi = 2.0; break;
        case Setting::C:
            if (bidder == 0) {
                lo = 1.0;
                hi = 2.0;
            } else {
                lo = 1.0;
                hi = 5.0;
            }
            break;
    }
}

}  // namespace

ValuationBatch sample_profiles(Setting setting, const AuctionConfig& config, int batch, Rng& rng,
                               BundleNoise noise) {
    if (setting == Setting::C && config.bidders != 2)
        throw std::invalid_argument("setting C is defined for exactly 2 bidders, got " +
                                    std::to_string(config.bidders));
    if (batch < 1) throw std::invalid_argument("sample_profiles: batch must be positive");
    const int n = config.bidders, m = config.items, k = config.k;
    ValuationBatch out;
    out.batch = batch;
    out.bidders = n;
    out.k = k;
    out.values.resize(static_cast<size_t>(batch) * n * k);
    std::vector<double> item(static_cast<size_t>(n) * m);
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < n; ++i) {
            double lo, hi;
            item_value_range(setting, i, lo, hi);
            for (int j = 0; j < m; ++j) item[static_cast<size_t>(i) * m + j] = rng.uniform(lo, hi);
        }
        for (int i = 0; i < n; ++i)
            for (int s = 0; s < k; ++s) {
                double v = 0.0;
                for (int j = 0; j < m; ++j)
                    if (config.bundle_has_item(s, j)) v += item[static_cast<size_t>(i) * m + j];
                out.at(b, i, s) = v;
            }
        if (setting != Setting::A) {
            for (int i = 0; i < n; ++i)
                for (int s = 0; s < k; ++s) {
                    const double c = rng.uniform(-1.0, 1.0);
                    if (noise == BundleNoise::AllBundles || config.bundle_size(s) >= 2) out.at(b, i, s) += c;
                }
        }
    }
    return out;
}

void support_box(Setting setting, const AuctionConfig& config, BundleNoise noise, std::vector<double>& lo,
                 std::vector<double>& hi) {
    const int n = config.bidders, k = config.k;
    lo.assign(static_cast<size_t>(n) * k, 0.0);
    hi.assign(static_cast<size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) {
        double vlo, vhi;
        item_value_range(setting, i, vlo, vhi);
        for (int s = 0; s < k; ++s) {
            const int sz = config.bundle_size(s);
            double l = vlo * sz, h = vhi * sz;
            if (setting != Setting::A && (noise == BundleNoise::AllBundles || sz >= 2)) {
                l -= 1.0;
                h += 1.0;
            }
            lo[static_cast<size_t>(i) * k + s] = l;
            hi[static_cast<size_t>(i) * k + s] = h;
        }
    }
}

double utility(std::span<const double> valuation_row, std::span<const double> allocation_row, double payment) {
    double v = 0.0;
    for (size_t s = 0; s < valuation_row.size(); ++s) v += allocation_row[s] * valuation_row[s];
    return v - payment;
}

double revenue(std::span<const double> payments) {
    double r = 0.0;
    for (double p : payments) r += p;
    return r;
}

FeasibilityReport check_feasibility(std::span<const double> allocation, const AuctionConfig& config,
                                    double tol) {
    const int n = config.bidders, k = config.k;
    if (allocation.size() != static_cast<size_t>(n) * k)
        throw std::invalid_argument("check_feasibility: allocation size mismatch");
    FeasibilityReport rep;
    auto note = [&rep](FeasibilityViolation::Kind kind, int index, double mag) {
        rep.violations.push_back({kind, index, mag});
        rep.max_violation = std::max(rep.max_violation, mag);
    };
    for (int j = 0; j < config.items; ++j) {
        double mass = 0.0;
        for (int i = 0; i < n; ++i)
            for (int s = 0; s < k; ++s)
                if (config.bundle_has_item(s, j)) mass += allocation[static_cast<size_t>(i) * k + s];
        if (mass > 1.0 + tol) note(FeasibilityViolation::ItemOversold, j, mass - 1.0);
    }
    for (int i = 0; i < n; ++i) {
        double mass = 0.0;
        for (int s = 0; s < k; ++s) mass += allocation[static_cast<size_t>(i) * k + s];
        if (mass > 1.0 + tol) note(FeasibilityViolation::BidderOversold, i, mass - 1.0);
    }
    for (int e = 0; e < n * k; ++e) {
        if (allocation[e] < -tol) note(FeasibilityViolation::EntryOutOfRange, e, -allocation[e]);
        if (allocation[e] > 1.0 + tol) note(FeasibilityViolation::EntryOutOfRange, e, allocation[e] - 1.0);
    }
    return rep;
}

std::vector<DeterministicAllocation> enumerate_feasible_allocations(const AuctionConfig& config) {
    if (config.bidders > 4 || config.items > 6)
        throw std::invalid_argument("enumerate_feasible_allocations: guarded to bidders<=4, items<=6");
    std::vector<DeterministicAllocation> out;
    DeterministicAllocation cur;
    cur.bundle_of.assign(config.bidders, 0);
    // depth-first over bidders; option 0 (no award) first keeps the empty
    // allocation at index 0
    auto rec = [&](auto&& self, int bidder, uint32_t used) -> void {
        if (bidder == config.bidders) {
            out.push_back(cur);
            return;
        }
        for (uint32_t mask = 0; mask <= static_cast<uint32_t>(config.k); ++mask) {
            if (mask != 0 && (mask & used)) continue;
            cur.bundle_of[bidder] = mask;
            self(self, bidder + 1, used | mask);
        }
    };
    rec(rec, 0, 0);
    return out;
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {
constexpr char kCacheMagic[8] = {'C', 'A', 'V', 'A', 'L', 'S', '0', '1'};
}

void write_valuation_cache(const std::string& path, const ValuationBatch& batch) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(kCacheMagic, sizeof(kCacheMagic));
    const uint32_t dims[3] = {static_cast<uint32_t>(batch.batch), static_cast<uint32_t>(batch.bidders),
                              static_cast<uint32_t>(batch.k)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(batch.values.data()),
            static_cast<std::streamsize>(batch.values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

ValuationBatch read_valuation_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a valuation cache: " + path);
    uint32_t dims[3];
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    ValuationBatch b;
    b.batch = static_cast<int>(dims[0]);
    b.bidders = static_cast<int>(dims[1]);
    b.k = static_cast<int>(dims[2]);
    b.values.resize(static_cast<size_t>(b.batch) * b.bidders * b.k);
    f.read(reinterpret_cast<char*>(b.values.data()),
           static_cast<std::streamsize>(b.values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated valuation cache: " + path);
    return b;
}

void write_valuation_csv(const std::string& path, const ValuationBatch& batch, const AuctionConfig& config,
                         int max_profiles) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "profile,bidder,bundle,value\n";
    const int limit = max_profiles < 0 ? batch.batch : std::min(max_profiles, batch.batch);
    char buf[64];
    for (int b = 0; b < limit; ++b)
        for (int i = 0; i < batch.bidders; ++i)
            for (int s = 0; s < batch.k; ++s) {
                std::snprintf(buf, sizeof(buf), "%.17g", batch.at(b, i, s));
                f << b << ',' << i << ',' << config.bundles[s] << ',' << buf << '\n';
            }
}

}  // namespace ca
