#pragma once

// Early-stopping metrics: the smallest reasoning budget at which the answer
// first equals, and from then on keeps, the full-budget answer.

#include "lrmtrace/core.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace lrmtrace {

struct BudgetAnswers {
    std::map<int, std::string> answers; ///< budget -> answer, keys 0..L
    int full_budget = 0;                ///< L

    /// Throws InvalidRecord unless the keys are exactly 0..L.
    static BudgetAnswers make(std::map<int, std::string> answers);
    /// Throws InvalidRecord when the record has no budget answers.
    static BudgetAnswers of(const ProjectionRecord& record);
};

int first_match(const BudgetAnswers& b);
int stable_match(const BudgetAnswers& b);

/// Streaming mean and population standard deviation; merge uses Chan et
/// al.'s pairwise update so shards can be combined in any grouping.
class MeanStd {
public:
    void add(double x);
    void merge(const MeanStd& o);
    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double stddev() const;
    /// "12.3±4.5"
    std::string format(int decimals = 1) const;

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct StoppingStats {
    MeanStd first;          ///< budget counts
    MeanStd stable;
    MeanStd first_percent;  ///< per record, 100 * first / L
    MeanStd stable_percent;
    MeanStd full_budget;

    void add(const BudgetAnswers& b);
    void merge(const StoppingStats& o);
    std::size_t count() const { return first.count(); }
    /// Pooled variant: mean and std of the counts divided by the mean L.
    std::string pooled_first_percent() const;
    std::string pooled_stable_percent() const;
};

struct StoppingRow {
    std::string instance_id;
    int full_budget = 0;
    int first = 0;
    int stable = 0;
};

struct StoppingReport {
    /// method label -> statistics, in label order
    std::map<std::string, StoppingStats> methods;
    std::map<std::string, std::vector<StoppingRow>> rows;

    void add(const std::string& method, const ProjectionRecord& record);
    /// Table-style CSV: one row per metric, one column per method.
    std::string to_csv() const;
    /// instance_id, method, L, first, stable
    std::string rows_csv() const;
};

/// Records are processed in instance_id order.
StoppingReport aggregate(const std::string& method, std::span<const ProjectionRecord> records);

} // namespace lrmtrace
