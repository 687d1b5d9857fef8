#pragma once

#include <string>
#include <vector>

#include "crt/preprocess.hpp"

namespace crt {

struct PrivacyBudget {
    double epsilon = 0.0;
    double delta = 0.0;
};

// Poisson-subsampled Gaussian mechanism composed over `steps` invocations.
struct MechanismSpec {
    double noise_multiplier = 0.0;  // sigma
    double sample_rate = 1.0;       // q
    long steps = 1;
};

// Renyi-divergence bookkeeping for the subsampled Gaussian. Per-order bounds
// use the binomial expansion at integer orders; fractional grid orders fall
// back to the next integer's bound, which stays valid because Renyi
// divergence is nondecreasing in the order. Conversion to (epsilon, delta)
// minimizes over the order grid:
//   epsilon = RDP(alpha) + log((alpha-1)/alpha) + (log(1/delta) - log(alpha)) / (alpha-1)
// the tightened form of the usual RDP conversion; the plain
// log(1/delta)/(alpha-1) variant overshoots the exact Gaussian curve by more
// than the accepted soundness slack.
class RdpAccountant {
  public:
    explicit RdpAccountant(const MechanismSpec& mech);

    // Orders 1.25, 1.50, ..., 64.00.
    static const std::vector<double>& default_orders();

    // Per-step Renyi bound at the given order. Throws std::domain_error when
    // sigma is zero (the budget is unbounded and must be signaled, never
    // silently returned as a number).
    double rdp_at(double order) const;

    double epsilon_for_delta(double delta) const;
    double delta_for_epsilon(double epsilon) const;

    const MechanismSpec& mechanism() const { return mech_; }

  private:
    MechanismSpec mech_;
};

double dp_epsilon(const MechanismSpec& mech, double delta);

// Smallest sigma whose budget lands in [target*(1-1e-4), target]; bisection,
// deterministic. Throws when the target cannot be reached within the sigma
// search bound.
double calibrate_sigma(const PrivacyBudget& target, double sample_rate, long steps);

enum class SecretGuaranteeKind {
    redacted,           // pi detected the secret: (0, 0)
    protected_by_base,  // missed by pi, caught by pi_c: base (epsilon, delta)
    uncovered,          // missed by both: no worst-case guarantee applies
};

struct PerSecretGuarantee {
    SecretGuaranteeKind kind = SecretGuaranteeKind::uncovered;
    PrivacyBudget budget;  // meaningful unless kind == uncovered
};

PerSecretGuarantee per_secret_confidentiality(const PrivacyBudget& base,
                                              bool detected_by_pi,
                                              bool covered_by_pi_c);

// Group bound for k undetected unique secrets:
//   epsilon_group = k * epsilon,  delta_group = k * exp(epsilon_group) * delta.
PrivacyBudget group_confidentiality(const PrivacyBudget& base, double surviving_count);

// Wrapper in terms of m unique secrets with undetected fraction gamma_tilde.
PrivacyBudget group_confidentiality_fraction(const PrivacyBudget& base,
                                             long unique_secrets,
                                             double undetected_fraction);

// Amplification by screening:
//   epsilon' = log(1 + gamma * (e^epsilon - 1)),  delta' = gamma * delta + delta2.
PrivacyBudget bayesian_amplify(const PrivacyBudget& base, double gamma, double delta2);

// Applies the amplification transform pointwise along the mechanism's
// (epsilon, delta) curve and reads off the smallest amplified epsilon whose
// amplified delta is within target_delta.
double recalibrate_epsilon(const MechanismSpec& mech, double gamma, double delta2,
                           double target_delta);

struct ConfidentialityReport {
    MechanismSpec mechanism;
    PrivacyBudget base;
    double gamma = 0.0;   // measured 1 - recall of pi
    double delta2 = 0.0;  // measured 1 - recall of pi_c

    struct SecretEntry {
        std::string secret_id;
        SecretGuaranteeKind kind;
        PrivacyBudget budget;
    };
    std::vector<SecretEntry> per_secret;
    size_t unique_secrets = 0;        // m
    size_t undetected_secrets = 0;    // k tilde
    size_t uncovered_secrets = 0;
    bool group_bound_valid = false;   // requires pi_c to cover every member

    PrivacyBudget group;
    PrivacyBudget bayesian;           // closed form at the base epsilon
    double bayesian_recalibrated = 0.0;  // epsilon at delta = base.delta
};

ConfidentialityReport build_confidentiality_report(const MechanismSpec& mech, double delta,
                                                   const std::vector<SecretOutcome>& outcomes,
                                                   double gamma, double delta2);

std::string report_to_json(const ConfidentialityReport& report);

}  // namespace crt
