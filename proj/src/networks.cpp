#include "ca/networks.hpp"

#include <cmath>

namespace ca {

Mlp Mlp::build(ParamStore& store, const std::string& prefix, int input, int hidden, int layers, int output,
               Rng& rng) {
    Mlp mlp;
    int in = input;
    for (int l = 0; l < layers; ++l) {
        mlp.weights.push_back(&store.add_glorot(prefix + ".w" + std::to_string(l), {in, hidden}, rng));
        mlp.biases.push_back(&store.add(prefix + ".b" + std::to_string(l), {hidden}));
        in = hidden;
    }
    mlp.weights.push_back(&store.add_glorot(prefix + ".w_out", {in, output}, rng));
    mlp.biases.push_back(&store.add(prefix + ".b_out", {output}));
    return mlp;
}

Tensor Mlp::forward(ParamBinder& bind, Tensor x) const {
    for (size_t l = 0; l < weights.size(); ++l) {
        x = add(matmul(x, bind(*weights[l])), bind(*biases[l]));
        if (l + 1 < weights.size()) x = tanh(x);
    }
    return x;
}

Tensor item_projection(const Tensor& bids, const AuctionConfig& config) {
    // selection matrix k x m picking singleton-bundle columns
    std::vector<double> sel(static_cast<size_t>(config.k) * config.items, 0.0);
    for (int j = 0; j < config.items; ++j)
        sel[static_cast<size_t>(config.singleton_index(j)) * config.items + j] = 1.0;
    Tensor selT = bids.tape()->constant({config.k, config.items}, std::move(sel));
    Tensor item_bids = matmul(bids, selT);  // (B, n, m)
    // (b^T . b_item)^T == b_item^T . b
    return matmul(permute(item_bids, {0, 2, 1}), bids);  // (B, m, k)
}

Tensor exchangeable_layer(const Tensor& x, const Tensor& w_elem, const Tensor& w_row, const Tensor& w_col,
                          const Tensor& w_global, const Tensor& bias) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[3] != 1) shape_fail("exchangeable_layer", s);
    const int batch = s[0], rows = s[1], cols = s[2];
    Tensor row_mean = reshape(mean(x, 2), {batch, rows, 1, 1});
    Tensor col_mean = reshape(mean(x, 1), {batch, 1, cols, 1});
    Tensor global_mean = reshape(mean(mean(x, 1), 1), {batch, 1, 1, 1});
    Tensor pre = add(add(mul(x, w_elem), mul(row_mean, w_row)),
                     add(add(mul(col_mean, w_col), mul(global_mean, w_global)), bias));
    return tanh(pre);
}

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo, int heads) {
    const Shape& s = x.shape();
    if (s.size() != 3) shape_fail("multi_head_attention", s);
    const int batch = s[0], len = s[1], d = s[2];
    if (heads < 1 || d % heads != 0)
        throw TensorError("multi_head_attention: feature dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    const int dh = d / heads;
    auto split_heads = [&](const Tensor& t) {
        return reshape(permute(reshape(t, {batch, len, heads, dh}), {0, 2, 1, 3}), {batch * heads, len, dh});
    };
    Tensor q = split_heads(matmul(x, wq));
    Tensor k = split_heads(matmul(x, wk));
    Tensor v = split_heads(matmul(x, wv));
    Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(scores, 2);
    Tensor ctx = matmul(attn, v);  // (batch*heads, len, dh)
    Tensor merged = reshape(permute(reshape(ctx, {batch, heads, len, dh}), {0, 2, 1, 3}), {batch, len, d});
    return add(x, matmul(merged, wo));
}

Tensor axis_attention(const Tensor& x, int seq_axis, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      const Tensor& wo, int heads) {
    const Shape& s = x.shape();
    if (s.size() != 4) shape_fail("axis_attention", s);
    if (seq_axis != 1 && seq_axis != 2) throw TensorError("axis_attention: seq_axis must be 1 or 2");
    const int batch = s[0], r = s[1], c = s[2], d = s[3];
    if (seq_axis == 2) {
        Tensor folded = reshape(x, {batch * r, c, d});
        Tensor y = multi_head_attention(folded, wq, wk, wv, wo, heads);
        return reshape(y, {batch, r, c, d});
    }
    Tensor folded = reshape(permute(x, {0, 2, 1, 3}), {batch * c, r, d});
    Tensor y = multi_head_attention(folded, wq, wk, wv, wo, heads);
    return permute(reshape(y, {batch, c, r, d}), {0, 2, 1, 3});
}

std::vector<double> sinusoidal_encoding(int length, int dim) {
    std::vector<double> pe(static_cast<size_t>(length) * dim);
    for (int pos = 0; pos < length; ++pos)
        for (int i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / dim);
            const double angle = pos / rate;
            pe[static_cast<size_t>(pos) * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

// ---- CANet -------------------------------------------------------------------

CANet::CANet(const AuctionConfig& config, CANetOptions opts, Rng& rng) : config_(config), opts_(opts) {
    const int n = config.bidders, m = config.items, k = config.k;
    alloc_mlp_ = Mlp::build(store_, "alloc", n * k, opts.hidden, opts.layers, 2 * n * k + m * k, rng);
    price_mlp_ = Mlp::build(store_, "price", n * k, opts.hidden, opts.layers, n, rng);
}

MechanismOutput CANet::forward(ParamBinder& bind, const Tensor& bids) {
    const Shape& s = bids.shape();
    const int n = config_.bidders, m = config_.items, k = config_.k;
    if (s.size() != 3 || s[1] != n || s[2] != k)
        throw TensorError("canet: bids shape " + shape_str(s) + " does not match " +
                          std::to_string(n) + " bidders x " + std::to_string(k) + " bundles");
    const int batch = s[0];
    Tensor x = reshape(bids, {batch, n * k});
    Tensor heads = alloc_mlp_.forward(bind, x);
    Tensor agent_logits = reshape(slice(heads, 1, 0, n * k), {batch, n, k});
    Tensor bundle_logits = reshape(slice(heads, 1, n * k, n * k), {batch, n, k});
    Tensor item_logits = reshape(slice(heads, 1, 2 * n * k, m * k), {batch, m, k});
    FeasibleAllocation fa =
        feasible_allocation(agent_logits, bundle_logits, item_logits, config_, opts_.alloc);
    MechanismOutput out;
    out.allocation = fa.allocation;
    out.price_fraction = sigmoid(price_mlp_.forward(bind, x));
    out.payments = price_payments(out.price_fraction, out.allocation, bids);
    return out;
}

// ---- CAFormer ------------------------------------------------------------------

PositionalMode positional_mode_from_string(const std::string& s) {
    if (s == "none") return PositionalMode::None;
    if (s == "agent_bundle") return PositionalMode::AgentBundle;
    throw std::invalid_argument("unknown positional mode '" + s + "' (none|agent_bundle)");
}

std::string to_string(PositionalMode m) {
    return m == PositionalMode::None ? "none" : "agent_bundle";
}

CAFormer::Attention CAFormer::make_attention(const std::string& prefix, Rng& rng) {
    const int d = opts_.channels;
    Attention a;
    a.wq = &store_.add_glorot(prefix + ".wq", {d, d}, rng);
    a.wk = &store_.add_glorot(prefix + ".wk", {d, d}, rng);
    a.wv = &store_.add_glorot(prefix + ".wv", {d, d}, rng);
    a.wo = &store_.add_glorot(prefix + ".wo", {d, d}, rng);
    return a;
}

CAFormer::Exchangeable CAFormer::make_exchangeable(const std::string& prefix, Rng& rng) {
    const int d = opts_.channels;
    Exchangeable e;
    e.w_elem = &store_.add_glorot(prefix + ".w_elem", {1, d}, rng);
    e.w_row = &store_.add_glorot(prefix + ".w_row", {1, d}, rng);
    e.w_col = &store_.add_glorot(prefix + ".w_col", {1, d}, rng);
    e.w_global = &store_.add_glorot(prefix + ".w_global", {1, d}, rng);
    e.bias = &store_.add(prefix + ".bias", {d});
    return e;
}

CAFormer::CAFormer(const AuctionConfig& config, CAFormerOptions opts, Rng& rng)
    : config_(config), opts_(opts) {
    const int d = opts_.channels;
    if (d % opts_.heads != 0) throw std::invalid_argument("caformer: channels must divide by heads");
    exch_bid_ = make_exchangeable("exch_bid", rng);
    exch_proj_ = make_exchangeable("exch_proj", rng);
    for (int l = 0; l < opts_.attention_layers; ++l) {
        const std::string suffix = std::to_string(l);
        agent_att_.push_back(make_attention("agent_att" + suffix, rng));
        bid_bundle_att_.push_back(make_attention("bid_bundle_att" + suffix, rng));
        item_att_.push_back(make_attention("item_att" + suffix, rng));
        proj_bundle_att_.push_back(make_attention("proj_bundle_att" + suffix, rng));
    }
    head_agent_w_ = &store_.add_glorot("head_agent.w", {2 * d, 1}, rng);
    head_agent_b_ = &store_.add("head_agent.b", {1});
    head_bundle_w_ = &store_.add_glorot("head_bundle.w", {2 * d, 1}, rng);
    head_bundle_b_ = &store_.add("head_bundle.b", {1});
    head_item_w_ = &store_.add_glorot("head_item.w", {2 * d, 1}, rng);
    head_item_b_ = &store_.add("head_item.b", {1});
    price_w_ = &store_.add_glorot("price.w", {d, 1}, rng);
    price_b_ = &store_.add("price.b", {1});
}

Tensor CAFormer::attend(ParamBinder& bind, const Attention& att, const Tensor& x, int seq_axis) const {
    return axis_attention(x, seq_axis, bind(*att.wq), bind(*att.wk), bind(*att.wv), bind(*att.wo),
                          opts_.heads);
}

MechanismOutput CAFormer::forward(ParamBinder& bind, const Tensor& bids) {
    Tape& tape = bind.tape();
    const Shape& s = bids.shape();
    const int n = config_.bidders, m = config_.items, k = config_.k, d = opts_.channels;
    if (s.size() != 3 || s[1] != n || s[2] != k)
        throw TensorError("caformer: bids shape " + shape_str(s) + " does not match " +
                          std::to_string(n) + " bidders x " + std::to_string(k) + " bundles");
    const int batch = s[0];

    Tensor proj = item_projection(bids, config_);  // (B, m, k)
    if (opts_.normalize_item_projection) proj = scale(proj, 1.0 / static_cast<double>(n));

    Tensor bid_feat = exchangeable_layer(reshape(bids, {batch, n, k, 1}), bind(*exch_bid_.w_elem),
                                         bind(*exch_bid_.w_row), bind(*exch_bid_.w_col),
                                         bind(*exch_bid_.w_global), bind(*exch_bid_.bias));
    Tensor proj_feat = exchangeable_layer(reshape(proj, {batch, m, k, 1}), bind(*exch_proj_.w_elem),
                                          bind(*exch_proj_.w_row), bind(*exch_proj_.w_col),
                                          bind(*exch_proj_.w_global), bind(*exch_proj_.bias));

    if (opts_.positional == PositionalMode::AgentBundle) {
        Tensor pe_agent = tape.constant({1, n, 1, d}, sinusoidal_encoding(n, d));
        Tensor pe_bundle = tape.constant({1, 1, k, d}, sinusoidal_encoding(k, d));
        bid_feat = add(add(bid_feat, pe_agent), pe_bundle);
        proj_feat = add(proj_feat, pe_bundle);
    }

    Tensor agent_view = bid_feat;
    Tensor bid_bundle_view = bid_feat;
    Tensor item_view = proj_feat;
    Tensor proj_bundle_view = proj_feat;
    for (int l = 0; l < opts_.attention_layers; ++l) {
        agent_view = attend(bind, agent_att_[l], agent_view, 1);
        bid_bundle_view = attend(bind, bid_bundle_att_[l], bid_bundle_view, 2);
        item_view = attend(bind, item_att_[l], item_view, 1);
        proj_bundle_view = attend(bind, proj_bundle_att_[l], proj_bundle_view, 2);
    }

    Tensor bid_concat = concat({agent_view, bid_bundle_view}, 3);    // (B, n, k, 2d)
    Tensor proj_concat = concat({item_view, proj_bundle_view}, 3);   // (B, m, k, 2d)

    auto head = [&](const Tensor& feat, Param* w, Param* b, int rows) {
        Tensor flat = reshape(feat, {batch * rows * k, 2 * d});
        return reshape(add(matmul(flat, bind(*w)), bind(*b)), {batch, rows, k});
    };
    Tensor agent_logits = head(bid_concat, head_agent_w_, head_agent_b_, n);
    Tensor bundle_logits = head(bid_concat, head_bundle_w_, head_bundle_b_, n);
    Tensor item_logits = head(proj_concat, head_item_w_, head_item_b_, m);

    FeasibleAllocation fa =
        feasible_allocation(agent_logits, bundle_logits, item_logits, config_, opts_.alloc);

    // pricing head: agent-attention features mean-pooled over bundles
    Tensor pooled = mean(agent_view, 2);  // (B, n, d)
    Tensor price_in = reshape(pooled, {batch * n, d});
    Tensor frac = sigmoid(reshape(add(matmul(price_in, bind(*price_w_)), bind(*price_b_)), {batch, n}));

    MechanismOutput out;
    out.allocation = fa.allocation;
    out.price_fraction = frac;
    out.payments = price_payments(out.price_fraction, out.allocation, bids);
    return out;
}

}  // namespace ca
