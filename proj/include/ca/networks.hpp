#pragma once

#include "ca/allocation_layer.hpp"
#include "ca/mechanism.hpp"

namespace ca {

// Fully connected stack with tanh hidden activations and a linear output.
struct Mlp {
    std::vector<Param*> weights;
    std::vector<Param*> biases;

    static Mlp build(ParamStore& store, const std::string& prefix, int input, int hidden, int layers,
                     int output, Rng& rng);
    Tensor forward(ParamBinder& bind, Tensor x) const;  // (B, input) -> (B, output)
};

// b' = (b^T . b_item)^T where b_item is the n x m matrix of singleton-bundle
// bids; bids batched (B, n, k) -> (B, m, k).
Tensor item_projection(const Tensor& bids, const AuctionConfig& config);

// sigma(w_elem*x + w_row*rowmean + w_col*colmean + w_global*globalmean + bias)
// with sigma = tanh; (B, r, c, 1) -> (B, r, c, d) where d = channel count of
// the weight vectors. Equivariant to row and column permutations.
Tensor exchangeable_layer(const Tensor& x, const Tensor& w_elem, const Tensor& w_row, const Tensor& w_col,
                          const Tensor& w_global, const Tensor& bias);

// Multi-head self-attention with a residual connection; x is (BB, L, d),
// projection weights are (d, d). Composed entirely from tape primitives.
Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo, int heads);

// Attention along one of the two middle axes of (B, r, c, d); the other axis
// is folded into the batch, so the result keeps the full shape.
Tensor axis_attention(const Tensor& x, int seq_axis, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      const Tensor& wo, int heads);

// Classic sinusoidal table, length x dim, row-major.
std::vector<double> sinusoidal_encoding(int length, int dim);

struct CANetOptions {
    int hidden = 100;
    int layers = 3;
    AllocationLayerOptions alloc;
};

// Two MLPs over the flattened bid vector: one feeding the feasibility layer's
// three logit heads, one producing the sigmoid pricing fractions.
class CANet : public Mechanism {
public:
    CANet(const AuctionConfig& config, CANetOptions opts, Rng& rng);

    const AuctionConfig& config() const override { return config_; }
    MechanismOutput forward(ParamBinder& bind, const Tensor& bids) override;
    ParamStore* params() override { return &store_; }
    std::string kind() const override { return "canet"; }
    const CANetOptions& options() const { return opts_; }

private:
    AuctionConfig config_;
    CANetOptions opts_;
    ParamStore store_;
    Mlp alloc_mlp_;
    Mlp price_mlp_;
};

enum class PositionalMode { None, AgentBundle };

PositionalMode positional_mode_from_string(const std::string& s);
std::string to_string(PositionalMode m);

struct CAFormerOptions {
    int channels = 64;  // feature dimension d
    int heads = 2;
    int attention_layers = 1;
    PositionalMode positional = PositionalMode::None;
    bool normalize_item_projection = false;  // scale b' by 1/n
    AllocationLayerOptions alloc;
};

// Exchangeable feature lift on the bid matrix and its item projection, per-axis
// self-attention with residuals, then per-position heads feeding the
// feasibility layer. Permutation-equivariant when positional encodings are off.
class CAFormer : public Mechanism {
public:
    CAFormer(const AuctionConfig& config, CAFormerOptions opts, Rng& rng);

    const AuctionConfig& config() const override { return config_; }
    MechanismOutput forward(ParamBinder& bind, const Tensor& bids) override;
    ParamStore* params() override { return &store_; }
    std::string kind() const override { return "caformer"; }
    const CAFormerOptions& options() const { return opts_; }

private:
    struct Attention {
        Param *wq, *wk, *wv, *wo;
    };
    struct Exchangeable {
        Param *w_elem, *w_row, *w_col, *w_global, *bias;
    };

    Attention make_attention(const std::string& prefix, Rng& rng);
    Exchangeable make_exchangeable(const std::string& prefix, Rng& rng);
    Tensor attend(ParamBinder& bind, const Attention& att, const Tensor& x, int seq_axis) const;

    AuctionConfig config_;
    CAFormerOptions opts_;
    ParamStore store_;
    Exchangeable exch_bid_, exch_proj_;
    std::vector<Attention> agent_att_, bid_bundle_att_, item_att_, proj_bundle_att_;
    Param *head_agent_w_, *head_agent_b_;
    Param *head_bundle_w_, *head_bundle_b_;
    Param *head_item_w_, *head_item_b_;
    Param *price_w_, *price_b_;
};

}  // namespace ca
