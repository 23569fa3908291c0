#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmsurv {

// One subject's observed outcome: time in months and event indicator
// (1 = event observed, 0 = censored).
struct Outcome {
    double time = 0.0;
    uint8_t event = 0;
};

struct RiskBatch {
    std::vector<double> risk;      // model scores h_i, higher = earlier event
    std::vector<Outcome> outcome;  // same length
};

// Harrell's concordance: pair (i,j) comparable iff t_i < t_j and subject i
// had an event; concordant when h_i > h_j, ties in h count 0.5.
// Throws ContractError when no comparable pair exists.
// O(n log n) sweep; equals brute-force pair enumeration exactly.
double concordance_index(const RiskBatch& batch);

// Brute-force O(n^2) reference, kept for oracle comparisons.
double concordance_index_bruteforce(const RiskBatch& batch);

struct KmCurve {
    std::vector<double> event_time;  // ascending distinct event times
    std::vector<double> survival;    // S(t) just after each event time
    std::vector<size_t> at_risk;     // n_k at each event time
    std::vector<size_t> events;      // d_k at each event time

    // Product-limit value at time t (right-continuous step function).
    double value_at(double t) const;
    std::string to_csv() const;  // header: time,survival,at_risk,events
    std::string to_svg() const;  // step-plot rendering
};

KmCurve kaplan_meier(const std::vector<Outcome>& outcomes);

struct LogRankResult {
    double chi_square = 0.0;
    double p_value = 1.0;
};

// Two-group log-rank test with hypergeometric variance, 1 dof.
// Throws ContractError when the pooled variance is zero (degenerate test).
LogRankResult log_rank_test(const std::vector<Outcome>& group_a,
                            const std::vector<Outcome>& group_b);

struct MedianSplit {
    std::vector<size_t> high_risk;  // indices with h > median
    std::vector<size_t> low_risk;   // indices with h <= median
    double median = 0.0;
};

MedianSplit median_split(const RiskBatch& batch);

// Upper tail of the chi-square distribution with 1 dof, computed from the
// regularized incomplete gamma function (series + continued fraction).
double chi_square_sf_1dof(double x);

}  // namespace mmsurv
