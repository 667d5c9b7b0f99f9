#pragma once

#include <memory>
#include <string>
#include <unordered_map>

#include "ca/auction.hpp"
#include "ca/tensor.hpp"

namespace ca {

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    int64_t size() const { return numel(shape); }
};

// Owns parameters with stable addresses; order is the serialization order.
class ParamStore {
public:
    Param& add(std::string name, Shape shape);
    Param& add_glorot(std::string name, Shape shape, Rng& rng);
    Param* find(const std::string& name);
    std::vector<Param*>& all() { return order_; }
    const std::vector<Param*>& all() const { return order_; }
    int64_t total_size() const;

private:
    std::vector<std::unique_ptr<Param>> owned_;
    std::vector<Param*> order_;
};

// Binds parameters onto one tape, once each, and reads their gradients back.
class ParamBinder {
public:
    ParamBinder(Tape& tape, bool with_grad) : tape_(&tape), with_grad_(with_grad) {}

    Tensor operator()(Param& p);
    // Gradient accumulated for p on this tape; empty span if p was never
    // bound or got no gradient.
    std::span<const double> grad_of(const Param& p) const;
    Tape& tape() { return *tape_; }

private:
    Tape* tape_;
    bool with_grad_;
    std::unordered_map<const Param*, Tensor> bound_;
};

struct MechanismOutput {
    Tensor allocation;      // batch x n x k
    Tensor payments;        // batch x n
    Tensor price_fraction;  // batch x n; undefined for mechanisms without one
};

class Mechanism {
public:
    virtual ~Mechanism() = default;
    virtual const AuctionConfig& config() const = 0;
    // bids: batch x n x k tensor on the binder's tape. The caller owns the
    // binder so it can read parameter gradients back after backward; binders
    // built with with_grad=false make misreport loops skip parameter
    // gradients entirely.
    virtual MechanismOutput forward(ParamBinder& bind, const Tensor& bids) = 0;
    virtual ParamStore* params() { return nullptr; }
    virtual std::string kind() const = 0;

    // Convenience for callers that do not need gradients.
    MechanismOutput forward_plain(Tape& tape, const Tensor& bids) {
        ParamBinder bind(tape, false);
        return forward(bind, bids);
    }
};

// p_i = price_fraction_i * sum_S Z[i][S] * bids[i][S]; IR under truthful play
// holds by construction since the fraction is in [0,1].
Tensor price_payments(const Tensor& price_fraction, const Tensor& allocation, const Tensor& bids);

// Flat-array Adam with bias correction; shared by network training and
// misreport ascent.
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    int64_t t = 0;

    void step(std::span<double> x, std::span<const double> g, double lr);
};

}  // namespace ca
