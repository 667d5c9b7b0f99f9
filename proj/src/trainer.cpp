#include "ca/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ca {

WeightScheduler::WeightScheduler(double init_raw, double gamma, double rho, double alpha, double beta1,
                                 double beta2, double eps)
    : raw_(init_raw), gamma_(gamma), rho_(rho), alpha_(alpha), beta1_(beta1), beta2_(beta2), eps_(eps) {}

double WeightScheduler::w_rgt() const { return std::max(std::tanh(raw_ / rho_), 0.0); }

void WeightScheduler::update(double rgt, double rev, double target) {
    const double g = std::log(std::max(rgt, 1e-12)) - std::log(target) - std::log1p(alpha_ * rev);
    m_ = beta1_ * m_ + (1.0 - beta1_) * g;
    v_ = beta2_ * v_ + (1.0 - beta2_) * g * g;
    ++t_;
    const double mh = m_ / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const double vh = v_ / (1.0 - std::pow(beta2_, static_cast<double>(t_)));
    raw_ += gamma_ * mh / (std::sqrt(vh) + eps_);
    // Bound the accumulator: keeps tanh strictly below 1 and lets the weight
    // react quickly after long one-sided stretches.
    const double cap = 15.0 * rho_;
    raw_ = std::clamp(raw_, -cap, cap);
}

double anneal_target(int64_t t, int64_t total, double start, double end) {
    const int64_t horizon = std::max<int64_t>(1, (2 * total) / 3);
    const double frac = std::min(1.0, static_cast<double>(t) / static_cast<double>(horizon));
    return start * std::pow(end / start, frac);
}

Tensor outer_loss(const Tensor& rev, const Tensor& rgt, double w_rev, double w_rgt) {
    return add(scale(log(add_scalar(rev, 1.0)), -w_rev), scale(rgt, w_rgt));
}

namespace {

// Scenario block layout: rows [i*batch, (i+1)*batch) hold profiles where
// bidder i misreports and everyone else is truthful.
Tensor scenario_bids(Tape& tape, const ValuationBatch& truth, const Tensor& reports) {
    const int batch = truth.batch, n = truth.bidders, k = truth.k;
    std::vector<Tensor> blocks;
    blocks.reserve(n);
    Tensor truth_t = tape.constant({batch, n, k}, truth.values);
    for (int i = 0; i < n; ++i) {
        std::vector<double> mask(static_cast<size_t>(n) * k, 0.0);
        std::fill(mask.begin() + static_cast<size_t>(i) * k, mask.begin() + static_cast<size_t>(i + 1) * k,
                  1.0);
        std::vector<double> inv(mask.size());
        for (size_t e = 0; e < mask.size(); ++e) inv[e] = 1.0 - mask[e];
        Tensor mask_t = tape.constant({1, n, k}, std::move(mask));
        Tensor inv_t = tape.constant({1, n, k}, std::move(inv));
        blocks.push_back(add(mul(truth_t, inv_t), mul(reports, mask_t)));
    }
    return concat(blocks, 0);  // (n*batch, n, k)
}

// Per-scenario utility of the misreporting bidder, shaped (n, batch),
// evaluated against the true valuations.
Tensor scenario_utility(Tape& tape, const ValuationBatch& truth, const MechanismOutput& out) {
    const int batch = truth.batch, n = truth.bidders, k = truth.k;
    std::vector<double> tiled(static_cast<size_t>(n) * batch * n * k);
    for (int i = 0; i < n; ++i)
        std::copy(truth.values.begin(), truth.values.end(),
                  tiled.begin() + static_cast<size_t>(i) * truth.values.size());
    Tensor truth_tiled = tape.constant({n * batch, n, k}, std::move(tiled));
    Tensor util = sub(sum(mul(out.allocation, truth_tiled), 2), out.payments);  // (n*batch, n)
    std::vector<double> sel(static_cast<size_t>(n) * batch * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int b = 0; b < batch; ++b) sel[(static_cast<size_t>(i) * batch + b) * n + i] = 1.0;
    Tensor sel_t = tape.constant({n * batch, n}, std::move(sel));
    return reshape(sum(mul(util, sel_t), 1), {n, batch});
}

void project_box(std::vector<double>& reports, int batch, int n, int k, const std::vector<double>& lo,
                 const std::vector<double>& hi) {
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < n; ++i)
            for (int s = 0; s < k; ++s) {
                double& x = reports[(static_cast<size_t>(b) * n + i) * k + s];
                if (lo.empty()) {
                    x = std::max(x, 0.0);
                } else {
                    const size_t box = static_cast<size_t>(i) * k + s;
                    x = std::clamp(x, lo[box], hi[box]);
                }
            }
}

}  // namespace

std::vector<double> optimize_misreports(Mechanism& mech, const ValuationBatch& truth, int steps, double lr,
                                        const std::vector<double>& lo, const std::vector<double>& hi,
                                        Rng& rng, double init_noise) {
    const int batch = truth.batch, n = truth.bidders, k = truth.k;
    std::vector<double> reports = truth.values;
    for (double& x : reports) x += rng.uniform(-init_noise, init_noise);
    project_box(reports, batch, n, k, lo, hi);
    Adam adam;
    for (int step = 0; step < steps; ++step) {
        Tape tape;
        ParamBinder bind(tape, false);
        Tensor vp = tape.input({batch, n, k}, reports, true);
        Tensor bids = scenario_bids(tape, truth, vp);
        MechanismOutput out = mech.forward(bind, bids);
        Tensor inner_loss = neg(sum_all(scenario_utility(tape, truth, out)));
        if (inner_loss.requires_grad()) {
            tape.backward(inner_loss);
            adam.step(reports, vp.grad(), lr);
        } else {
            // bid-independent gradient (classic mechanisms): nothing to ascend
            adam.step(reports, {}, lr);
        }
        project_box(reports, batch, n, k, lo, hi);
    }
    return reports;
}

RegretTerms regret_terms(Mechanism& mech, ParamBinder& bind, const ValuationBatch& truth,
                         const std::vector<double>& misreports) {
    Tape& tape = bind.tape();
    const int batch = truth.batch, n = truth.bidders, k = truth.k;
    Tensor truth_t = tape.constant({batch, n, k}, truth.values);
    Tensor reports_t = tape.constant({batch, n, k}, misreports);
    Tensor scenarios = scenario_bids(tape, truth, reports_t);
    Tensor all_bids = concat({truth_t, scenarios}, 0);  // ((n+1)*batch, n, k)
    MechanismOutput out = mech.forward(bind, all_bids);

    MechanismOutput truth_out;
    truth_out.allocation = slice(out.allocation, 0, 0, batch);
    truth_out.payments = slice(out.payments, 0, 0, batch);
    MechanismOutput mis_out;
    mis_out.allocation = slice(out.allocation, 0, batch, n * batch);
    mis_out.payments = slice(out.payments, 0, batch, n * batch);

    RegretTerms terms;
    terms.truthful_allocation = truth_out.allocation;
    terms.truthful_utility = sub(sum(mul(truth_out.allocation, truth_t), 2), truth_out.payments);
    terms.revenue = mean_all(sum(truth_out.payments, 1));
    Tensor mis_util = scenario_utility(tape, truth, mis_out);       // (n, batch)
    Tensor truth_util_t = permute(terms.truthful_utility, {1, 0});  // (n, batch)
    Tensor gain = clamp_min(sub(mis_util, truth_util_t), 0.0);
    terms.regret_per_bidder = mean(gain, 1);  // (n)
    terms.regret_mean = mean_all(terms.regret_per_bidder);
    return terms;
}

EvalMetrics evaluate(Mechanism& mech, Setting setting, int64_t samples, int inner_steps, double inner_lr,
                     uint64_t seed, BundleNoise noise, int chunk, MisreportDomain domain) {
    const AuctionConfig& config = mech.config();
    const int n = config.bidders, k = config.k;
    SeedSplitter split(seed);
    Rng data_rng = split.stream("eval-data");
    Rng mis_rng = split.stream("eval-misreports");
    std::vector<double> lo, hi;
    if (domain == MisreportDomain::Support) support_box(setting, config, noise, lo, hi);

    EvalMetrics metrics;
    std::vector<double> regret_sum(n, 0.0);
    double revenue_sum = 0.0;
    int64_t done = 0;
    while (done < samples) {
        const int b = static_cast<int>(std::min<int64_t>(chunk, samples - done));
        ValuationBatch truth = sample_profiles(setting, config, b, data_rng, noise);
        std::vector<double> reports =
            optimize_misreports(mech, truth, inner_steps, inner_lr, lo, hi, mis_rng, 0.1);
        Tape tape;
        ParamBinder bind(tape, false);
        RegretTerms terms = regret_terms(mech, bind, truth, reports);
        revenue_sum += terms.revenue.scalar() * b;
        const auto rgt = terms.regret_per_bidder.values();
        for (int i = 0; i < n; ++i) regret_sum[i] += rgt[i] * b;
        for (double u : terms.truthful_utility.values())
            if (u < -1e-9) ++metrics.ir_violations;
        const auto z = terms.truthful_allocation.values();
        for (int p = 0; p < b; ++p) {
            FeasibilityReport rep = check_feasibility(
                std::span<const double>(z.data() + static_cast<size_t>(p) * n * k,
                                        static_cast<size_t>(n) * k),
                config, 1e-6);
            metrics.feasibility_max_violation =
                std::max(metrics.feasibility_max_violation, rep.max_violation);
        }
        done += b;
    }
    metrics.samples = samples;
    metrics.revenue = revenue_sum / static_cast<double>(samples);
    metrics.regret_per_bidder.resize(n);
    for (int i = 0; i < n; ++i) {
        metrics.regret_per_bidder[i] = regret_sum[i] / static_cast<double>(samples);
        metrics.regret_mean += metrics.regret_per_bidder[i] / n;
        metrics.regret_max = std::max(metrics.regret_max, metrics.regret_per_bidder[i]);
    }
    return metrics;
}

TrainResult train(Mechanism& mech, Setting setting, const TrainConfig& config,
                  const ValuationBatch* offline_cache, const TrainHooks& hooks) {
    const AuctionConfig& auction = mech.config();
    const int n = auction.bidders, k = auction.k;
    ParamStore* store = mech.params();
    if (!store) throw std::invalid_argument("train: mechanism has no trainable parameters");
    if (offline_cache && (offline_cache->bidders != n || offline_cache->k != k))
        throw std::invalid_argument("train: offline cache dimensions do not match mechanism");

    SeedSplitter split(config.seed);
    Rng data_rng = split.stream("dataset");
    Rng mis_rng = split.stream("misreports");

    std::vector<double> lo, hi;
    if (config.misreport_domain == MisreportDomain::Support)
        support_box(setting, auction, config.noise, lo, hi);

    std::vector<Adam> optimizers(store->all().size());
    WeightScheduler scheduler(config.w_rgt_init, config.gamma_w, config.rho, config.alpha, config.beta1,
                              config.beta2, config.eps);

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    for (int64_t iter = 0; iter < config.iterations; ++iter) {
        ValuationBatch truth;
        if (offline_cache) {
            truth.batch = config.batch;
            truth.bidders = n;
            truth.k = k;
            truth.values.resize(static_cast<size_t>(config.batch) * n * k);
            for (int b = 0; b < config.batch; ++b) {
                const auto pick = static_cast<int>(data_rng.below(static_cast<uint64_t>(offline_cache->batch)));
                std::copy_n(offline_cache->profile(pick), static_cast<size_t>(n) * k, truth.profile(b));
            }
        } else {
            truth = sample_profiles(setting, auction, config.batch, data_rng, config.noise);
        }

        std::vector<double> reports =
            optimize_misreports(mech, truth, config.inner_steps_train, config.misreport_lr, lo, hi,
                                mis_rng, config.misreport_init_noise);

        const double target = anneal_target(iter, config.iterations, config.rgt_start, config.rgt_end);
        const double w_rgt = scheduler.w_rgt();

        Tape tape;
        ParamBinder bind(tape, true);
        RegretTerms terms = regret_terms(mech, bind, truth, reports);
        Tensor loss = outer_loss(terms.revenue, terms.regret_mean, 1.0 - w_rgt, w_rgt);

        const double loss_value = loss.scalar();
        const double rev = terms.revenue.scalar();
        const auto rgt_vec = terms.regret_per_bidder.values();
        double rgt_mean = 0.0, rgt_max = 0.0;
        for (double r : rgt_vec) {
            rgt_mean += r / n;
            rgt_max = std::max(rgt_max, r);
        }
        if (!std::isfinite(loss_value))
            throw NumericalError("train: non-finite loss at iteration " + std::to_string(iter),
                                 std::move(truth));

        tape.backward(loss);
        size_t pi = 0;
        for (Param* p : store->all()) {
            std::span<const double> g = bind.grad_of(*p);
            if (!g.empty()) optimizers[pi].step(p->value, g, config.learning_rate);
            ++pi;
        }

        scheduler.update(config.scheduler_max_regret ? rgt_max : rgt_mean, rev, target);

        result.last_train_revenue = rev;
        result.last_train_regret = rgt_mean;

        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (hooks.on_log &&
            (iter % std::max<int64_t>(1, config.log_every) == 0 || iter + 1 == config.iterations))
            hooks.on_log(iter, rev, rgt_mean, rgt_max, scheduler.w_rgt(), target, wall);
        if (hooks.on_validation && config.val_every > 0 && (iter + 1) % config.val_every == 0) {
            EvalMetrics vm = evaluate(mech, setting, config.val_profiles, config.inner_steps_eval,
                                      config.misreport_lr,
                                      split.seed_for("val") + static_cast<uint64_t>(iter), config.noise,
                                      500, config.misreport_domain);
            hooks.on_validation(iter, vm);
        }
        if (hooks.on_checkpoint && config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0)
            hooks.on_checkpoint(iter);
    }
    result.iterations = config.iterations;
    result.final_w_rgt = scheduler.w_rgt();
    return result;
}

}  // namespace ca
