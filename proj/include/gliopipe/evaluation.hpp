#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "gliopipe/volume.hpp"

namespace gliopipe {

// Dice similarity coefficient over nonzero voxels: 2|A n B| / (|A| + |B|).
// Both-empty masks give 1.0 by convention. Throws GridMismatch when the
// grids differ.
double dice(const Volume3D& a, const Volume3D& b);

// Rows are truth, columns are predicted, indexed by SequenceClass order
// (T1WI, GdT1WI, T2WI, FLAIR, NonSegmentable).
struct ConfusionMatrix {
    static constexpr int K = 5;
    std::array<std::array<std::int64_t, K>, K> counts{};

    void add(int truth, int predicted, std::int64_t n = 1);
    std::int64_t total() const;
    std::int64_t row_sum(int r) const;
    std::int64_t col_sum(int c) const;
};

struct ClassStats {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Set when the 0/0 -> 0 convention was applied.
    bool precision_undefined = false;
    bool recall_undefined = false;
};

struct ClassificationReport {
    double accuracy = 0.0;
    std::array<ClassStats, ConfusionMatrix::K> per_class{};
};

// Throws EmptyMatrix when the matrix has no counts.
ClassificationReport classification_report(const ConfusionMatrix& cm);

struct TTestResult {
    double t = 0.0;
    double df = 0.0;  // Welch-Satterthwaite
    double p_two_sided = 1.0;
    double alpha = 0.05;
    bool significant = false;
};

// Welch's unequal-variance t-test, two-sided. Requires two samples of size
// >= 2 with nonzero variance (DegenerateSample otherwise).
TTestResult welch_t(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

// Regularized incomplete beta I_x(a, b) via Lentz continued fraction,
// converged to 1e-12.
double regularized_incomplete_beta(double a, double b, double x);

// Student-t CDF with df degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace gliopipe
