#include "ca/mechanism.hpp"

#include <cmath>

namespace ca {

Param& ParamStore::add(std::string name, Shape shape) {
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->shape = std::move(shape);
    p->value.assign(static_cast<size_t>(numel(p->shape)), 0.0);
    owned_.push_back(std::move(p));
    order_.push_back(owned_.back().get());
    return *order_.back();
}

Param& ParamStore::add_glorot(std::string name, Shape shape, Rng& rng) {
    Param& p = add(std::move(name), shape);
    p.value = glorot_init(p.shape, rng);
    return p;
}

Param* ParamStore::find(const std::string& name) {
    for (Param* p : order_)
        if (p->name == name) return p;
    return nullptr;
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const Param* p : order_) n += p->size();
    return n;
}

Tensor ParamBinder::operator()(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Tensor t = tape_->input(p.shape, p.value, with_grad_);
    bound_.emplace(&p, t);
    return t;
}

std::span<const double> ParamBinder::grad_of(const Param& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return {};
    return it->second.grad();
}

Tensor price_payments(const Tensor& price_fraction, const Tensor& allocation, const Tensor& bids) {
    Tensor value = sum(mul(allocation, bids), allocation.rank() - 1);
    return mul(price_fraction, value);
}

void Adam::step(std::span<double> x, std::span<const double> g, double lr) {
    if (m.empty()) {
        m.assign(x.size(), 0.0);
        v.assign(x.size(), 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < x.size(); ++i) {
        const double gi = i < g.size() ? g[i] : 0.0;
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        x[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

}  // namespace ca
