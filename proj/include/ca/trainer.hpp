#pragma once

#include <functional>
#include <optional>
#include <string>

#include "ca/mechanism.hpp"

namespace ca {

enum class MisreportDomain { Support, NonNegative };

struct TrainConfig {
    int64_t iterations = 2000;
    int batch = 128;
    int inner_steps_train = 50;
    int inner_steps_eval = 1000;
    double learning_rate = 0.0007;
    double misreport_lr = 0.1;
    double misreport_init_noise = 0.1;
    MisreportDomain misreport_domain = MisreportDomain::Support;
    double gamma_w = 0.02;  // scheduler learning rate
    double rho = 2.0;       // tanh scaler
    double alpha = 1.0;     // regret-target revenue coupling
    double rgt_start = 0.05;
    double rgt_end = 0.001;
    double w_rgt_init = 1.0;  // initial value of the scheduler accumulator
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool scheduler_max_regret = false;  // feed max instead of mean regret
    uint64_t seed = 0;
    int64_t log_every = 10;
    int64_t val_every = 0;  // 0 disables periodic validation
    int val_profiles = 1000;
    int64_t checkpoint_every = 0;
    BundleNoise noise = BundleNoise::MultiOnly;
};

// Algorithm-style multi-task weight update. The Adam step accumulates on an
// unbounded value; tanh(raw / rho) clamped below at zero is the exposed
// weight, which keeps w_rev + w_rgt = 1, leaves the weights untouched at the
// g = 0 fixed point rgt = target * (1 + alpha * rev), and responds
// monotonically to the sign of g.
class WeightScheduler {
public:
    WeightScheduler(double init_raw, double gamma, double rho, double alpha, double beta1, double beta2,
                    double eps);

    void update(double rgt, double rev, double target);
    double w_rgt() const;
    double w_rev() const { return 1.0 - w_rgt(); }
    double raw() const { return raw_; }
    int64_t step_count() const { return t_; }

private:
    double raw_, gamma_, rho_, alpha_, beta1_, beta2_, eps_;
    double m_ = 0.0, v_ = 0.0;
    int64_t t_ = 0;
};

// Geometric interpolation from start to end over the first 2T/3 iterations,
// constant afterwards.
double anneal_target(int64_t t, int64_t total, double start, double end);

// L = -w_rev * log(1 + rev) + w_rgt * rgt
Tensor outer_loss(const Tensor& rev, const Tensor& rgt, double w_rev, double w_rgt);

// Per-bidder misreports v'_i optimized simultaneously (others truthful) by
// Adam ascent on u_i, projected to the given coordinate box after every step.
// Returns a batch x n x k array; lo/hi are n x k (empty means nonnegative-only
// projection).
std::vector<double> optimize_misreports(Mechanism& mech, const ValuationBatch& truth, int steps, double lr,
                                        const std::vector<double>& lo, const std::vector<double>& hi,
                                        Rng& rng, double init_noise);

struct RegretEvaluation {
    double revenue = 0.0;
    std::vector<double> regret_per_bidder;
    double regret_mean = 0.0;
    double regret_max = 0.0;
};

// Tape-level terms for one batch: mean revenue and per-bidder clamped regret.
// Used both for the outer training loss and for plain measurement.
struct RegretTerms {
    Tensor revenue;              // scalar
    Tensor regret_per_bidder;    // (n)
    Tensor regret_mean;          // scalar
    Tensor truthful_utility;     // (batch, n)
    Tensor truthful_allocation;  // (batch, n, k)
};
RegretTerms regret_terms(Mechanism& mech, ParamBinder& bind, const ValuationBatch& truth,
                         const std::vector<double>& misreports);

struct EvalMetrics {
    double revenue = 0.0;
    std::vector<double> regret_per_bidder;
    double regret_mean = 0.0;
    double regret_max = 0.0;
    int64_t ir_violations = 0;
    double feasibility_max_violation = 0.0;
    int64_t samples = 0;
};

EvalMetrics evaluate(Mechanism& mech, Setting setting, int64_t samples, int inner_steps, double inner_lr,
                     uint64_t seed, BundleNoise noise = BundleNoise::MultiOnly, int chunk = 500,
                     MisreportDomain domain = MisreportDomain::Support);

struct TrainResult {
    int64_t iterations = 0;
    double final_w_rgt = 0.0;
    double last_train_revenue = 0.0;
    double last_train_regret = 0.0;
};

struct TrainHooks {
    // iter, revenue, rgt_mean, rgt_max, w_rgt, rgt_target, wall_time_s
    std::function<void(int64_t, double, double, double, double, double, double)> on_log;
    std::function<void(int64_t, const EvalMetrics&)> on_validation;
    std::function<void(int64_t)> on_checkpoint;
};

// Adversarial loop: sample batch, inner misreport ascent, outer Adam step on
// the multi-task loss, scheduler update, target annealing. A non-finite loss
// aborts with NumericalError after dumping the offending batch via hooks.
class NumericalError : public std::runtime_error {
public:
    NumericalError(std::string msg, ValuationBatch batch)
        : std::runtime_error(std::move(msg)), offending_batch(std::move(batch)) {}
    ValuationBatch offending_batch;
};

TrainResult train(Mechanism& mech, Setting setting, const TrainConfig& config,
                  const ValuationBatch* offline_cache, const TrainHooks& hooks);

}  // namespace ca
