#include "crt/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace crt {

namespace {

double log_binomial(long n, long k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

double log_sum_exp(const std::vector<double>& terms) {
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return m;
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - m);
    return m + std::log(sum);
}

// Binomial-expansion bound at integer order >= 2:
//   (alpha-1) * RDP = log sum_j C(alpha,j) (1-q)^(alpha-j) q^j exp(j(j-1)/(2 sigma^2))
double integer_order_rdp(long alpha, double q, double sigma) {
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(alpha) + 1);
    const double log_q = std::log(q);
    const double log_1mq = std::log1p(-q);
    for (long j = 0; j <= alpha; ++j) {
        double t = log_binomial(alpha, j);
        t += static_cast<double>(alpha - j) * log_1mq;
        t += static_cast<double>(j) * log_q;
        t += static_cast<double>(j) * static_cast<double>(j - 1) / (2.0 * sigma * sigma);
        terms.push_back(t);
    }
    const double lse = log_sum_exp(terms);
    return std::max(0.0, lse / (static_cast<double>(alpha) - 1.0));
}

void validate(const MechanismSpec& mech) {
    if (mech.noise_multiplier < 0.0) throw std::invalid_argument("noise multiplier must be >= 0");
    if (!(mech.sample_rate >= 0.0 && mech.sample_rate <= 1.0)) {
        throw std::invalid_argument("sample rate must be in [0,1]");
    }
    if (mech.steps < 1) throw std::invalid_argument("steps must be positive");
}

}  // namespace

RdpAccountant::RdpAccountant(const MechanismSpec& mech) : mech_(mech) {
    validate(mech_);
}

const std::vector<double>& RdpAccountant::default_orders() {
    static const std::vector<double> orders = [] {
        std::vector<double> o;
        for (double a = 1.25; a <= 64.0 + 1e-9; a += 0.25) o.push_back(a);
        return o;
    }();
    return orders;
}

double RdpAccountant::rdp_at(double order) const {
    if (order <= 1.0) throw std::invalid_argument("Renyi order must exceed 1");
    if (mech_.noise_multiplier == 0.0) {
        throw std::domain_error("sigma = 0: privacy budget is unbounded");
    }
    const double q = mech_.sample_rate;
    const double sigma = mech_.noise_multiplier;
    if (q == 0.0) return 0.0;
    if (q == 1.0) return order / (2.0 * sigma * sigma);  // plain Gaussian
    const long alpha = static_cast<long>(std::ceil(order - 1e-12));
    return integer_order_rdp(std::max<long>(alpha, 2), q, sigma);
}

double RdpAccountant::epsilon_for_delta(double delta) const {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
    double best = std::numeric_limits<double>::infinity();
    for (double order : default_orders()) {
        const double total = static_cast<double>(mech_.steps) * rdp_at(order);
        const double eps = total + std::log((order - 1.0) / order) +
                           (std::log(1.0 / delta) - std::log(order)) / (order - 1.0);
        best = std::min(best, std::max(0.0, eps));
    }
    return best;
}

double RdpAccountant::delta_for_epsilon(double epsilon) const {
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
    double best = 1.0;
    for (double order : default_orders()) {
        const double total = static_cast<double>(mech_.steps) * rdp_at(order);
        const double log_delta =
            (order - 1.0) * (total + std::log((order - 1.0) / order) - epsilon) - std::log(order);
        best = std::min(best, std::exp(std::min(0.0, log_delta)));
    }
    return best;
}

double dp_epsilon(const MechanismSpec& mech, double delta) {
    return RdpAccountant(mech).epsilon_for_delta(delta);
}

double calibrate_sigma(const PrivacyBudget& target, double sample_rate, long steps) {
    if (target.epsilon <= 0.0) throw std::invalid_argument("target epsilon must be positive");
    if (!(target.delta > 0.0 && target.delta < 1.0)) throw std::invalid_argument("target delta must be in (0,1)");

    auto eps_at = [&](double sigma) {
        return dp_epsilon({sigma, sample_rate, steps}, target.delta);
    };

    constexpr double kSigmaMax = 1e6;
    double lo = 1e-3;  // assumed above-target side
    double hi = 1.0;
    while (eps_at(hi) > target.epsilon) {
        hi *= 2.0;
        if (hi > kSigmaMax) {
            throw std::runtime_error("target epsilon unreachable within sigma bound");
        }
    }
    while (eps_at(lo) <= target.epsilon && lo > 1e-12) lo /= 2.0;

    // epsilon(sigma) is continuous and strictly decreasing; shrink until the
    // upper endpoint lands inside [target*(1-1e-4), target]
    for (int i = 0; i < 400; ++i) {
        const double eps_hi = eps_at(hi);
        if (eps_hi >= target.epsilon * (1.0 - 1e-4) && eps_hi <= target.epsilon) break;
        const double mid = 0.5 * (lo + hi);
        if (eps_at(mid) > target.epsilon) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return hi;
}

PerSecretGuarantee per_secret_confidentiality(const PrivacyBudget& base,
                                              bool detected_by_pi,
                                              bool covered_by_pi_c) {
    if (detected_by_pi) return {SecretGuaranteeKind::redacted, {0.0, 0.0}};
    if (covered_by_pi_c) return {SecretGuaranteeKind::protected_by_base, base};
    return {SecretGuaranteeKind::uncovered, {}};
}

PrivacyBudget group_confidentiality(const PrivacyBudget& base, double surviving_count) {
    if (surviving_count < 0.0) throw std::invalid_argument("surviving count must be >= 0");
    const double eps = surviving_count * base.epsilon;
    const double delta = surviving_count * std::exp(eps) * base.delta;
    return {eps, delta};
}

PrivacyBudget group_confidentiality_fraction(const PrivacyBudget& base,
                                             long unique_secrets,
                                             double undetected_fraction) {
    if (unique_secrets < 0) throw std::invalid_argument("unique secret count must be >= 0");
    if (!(undetected_fraction >= 0.0 && undetected_fraction <= 1.0)) {
        throw std::invalid_argument("undetected fraction must be in [0,1]");
    }
    return group_confidentiality(base, undetected_fraction * static_cast<double>(unique_secrets));
}

PrivacyBudget bayesian_amplify(const PrivacyBudget& base, double gamma, double delta2) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in [0,1]");
    if (!(delta2 >= 0.0 && delta2 < 1.0)) throw std::invalid_argument("delta2 must be in [0,1)");
    const double eps = std::log1p(gamma * std::expm1(base.epsilon));
    const double delta = gamma * base.delta + delta2;
    return {eps, delta};
}

double recalibrate_epsilon(const MechanismSpec& mech, double gamma, double delta2,
                           double target_delta) {
    if (!(target_delta > 0.0 && target_delta < 1.0)) {
        throw std::invalid_argument("target delta must be in (0,1)");
    }
    if (delta2 >= target_delta) throw std::invalid_argument("delta2 exceeds the target delta");
    if (gamma == 0.0) return 0.0;

    RdpAccountant accountant(mech);
    auto amplified_delta = [&](double base_eps) {
        return gamma * accountant.delta_for_epsilon(base_eps) + delta2;
    };

    if (amplified_delta(0.0) <= target_delta) {
        return bayesian_amplify({0.0, 0.0}, gamma, 0.0).epsilon;  // 0
    }
    // find the smallest base epsilon whose amplified delta meets the target
    double lo = 0.0;
    double hi = accountant.epsilon_for_delta((target_delta - delta2) / gamma);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (amplified_delta(mid) <= target_delta) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return std::log1p(gamma * std::expm1(hi));
}

ConfidentialityReport build_confidentiality_report(const MechanismSpec& mech, double delta,
                                                   const std::vector<SecretOutcome>& outcomes,
                                                   double gamma, double delta2) {
    ConfidentialityReport report;
    report.mechanism = mech;
    report.base = {dp_epsilon(mech, delta), delta};
    report.gamma = gamma;
    report.delta2 = delta2;

    report.unique_secrets = outcomes.size();
    for (const SecretOutcome& outcome : outcomes) {
        const PerSecretGuarantee g =
            per_secret_confidentiality(report.base, outcome.detected_by_pi, outcome.covered_by_pi_c);
        report.per_secret.push_back({outcome.secret_id, g.kind, g.budget});
        if (!outcome.detected_by_pi) ++report.undetected_secrets;
        if (g.kind == SecretGuaranteeKind::uncovered) ++report.uncovered_secrets;
    }
    report.group_bound_valid = report.uncovered_secrets == 0;
    report.group = group_confidentiality(report.base, static_cast<double>(report.undetected_secrets));
    report.bayesian = bayesian_amplify(report.base, gamma, delta2);
    report.bayesian_recalibrated = recalibrate_epsilon(mech, gamma, delta2, delta);
    return report;
}

std::string report_to_json(const ConfidentialityReport& report) {
    using nlohmann::json;
    auto kind_name = [](SecretGuaranteeKind kind) {
        switch (kind) {
            case SecretGuaranteeKind::redacted: return "redacted";
            case SecretGuaranteeKind::protected_by_base: return "protected";
            case SecretGuaranteeKind::uncovered: return "uncovered";
        }
        return "uncovered";
    };
    json doc;
    doc["inputs"] = {{"noise_multiplier", report.mechanism.noise_multiplier},
                     {"sample_rate", report.mechanism.sample_rate},
                     {"steps", report.mechanism.steps},
                     {"delta", report.base.delta},
                     {"gamma", report.gamma},
                     {"delta2", report.delta2},
                     {"unique_secrets", report.unique_secrets},
                     {"undetected_secrets", report.undetected_secrets},
                     {"uncovered_secrets", report.uncovered_secrets}};
    doc["base"] = {{"epsilon", report.base.epsilon}, {"delta", report.base.delta}};
    json per_secret = json::array();
    for (const auto& entry : report.per_secret) {
        json rec = {{"secret_id", entry.secret_id}, {"kind", kind_name(entry.kind)}};
        if (entry.kind != SecretGuaranteeKind::uncovered) {
            rec["epsilon"] = entry.budget.epsilon;
            rec["delta"] = entry.budget.delta;
        }
        per_secret.push_back(std::move(rec));
    }
    doc["per_secret"] = std::move(per_secret);
    doc["group"] = {{"epsilon", report.group.epsilon},
                    {"delta", report.group.delta},
                    {"valid", report.group_bound_valid}};
    doc["bayesian"] = {{"epsilon", report.bayesian.epsilon},
                       {"delta", report.bayesian.delta},
                       {"epsilon_recalibrated", report.bayesian_recalibrated}};
    return doc.dump(2);
}

}  // namespace crt
