#include "gliopipe/evaluation.hpp"

#include <cmath>

namespace gliopipe {

double dice(const Volume3D& a, const Volume3D& b) {
    if (a.dims != b.dims) throw GridMismatch("mask grids differ");
    std::size_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a.voxels[i] != 0.0f;
        const bool ib = b.voxels[i] != 0.0f;
        na += ia;
        nb += ib;
        ni += ia && ib;
    }
    if (na + nb == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
    counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)] += n;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto& row : counts)
        for (auto v : row) t += v;
    return t;
}

std::int64_t ConfusionMatrix::row_sum(int r) const {
    std::int64_t t = 0;
    for (auto v : counts[static_cast<std::size_t>(r)]) t += v;
    return t;
}

std::int64_t ConfusionMatrix::col_sum(int c) const {
    std::int64_t t = 0;
    for (const auto& row : counts) t += row[static_cast<std::size_t>(c)];
    return t;
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw EmptyMatrix("confusion matrix has no counts");

    ClassificationReport rep;
    std::int64_t trace = 0;
    for (int k = 0; k < ConfusionMatrix::K; ++k)
        trace += cm.counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(total);

    for (int k = 0; k < ConfusionMatrix::K; ++k) {
        auto& s = rep.per_class[static_cast<std::size_t>(k)];
        const auto tp = cm.counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
        const auto pred = cm.col_sum(k);
        const auto truth = cm.row_sum(k);
        if (pred == 0) {
            s.precision = 0.0;  // 0/0 convention, flagged
            s.precision_undefined = true;
        } else {
            s.precision = static_cast<double>(tp) / static_cast<double>(pred);
        }
        if (truth == 0) {
            s.recall = 0.0;
            s.recall_undefined = true;
        } else {
            s.recall = static_cast<double>(tp) / static_cast<double>(truth);
        }
        s.f1 = (s.precision + s.recall) > 0.0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
    }
    return rep;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-12;
    constexpr int max_iter = 1000;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw Error("incomplete beta requires x in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
        b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (df <= 0.0) throw Error("degrees of freedom must be positive");
    if (t == 0.0) return 0.5;
    const double x = df / (df + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult welch_t(std::span<const double> x, std::span<const double> y, double alpha) {
    const auto nx = x.size(), ny = y.size();
    if (nx < 2 || ny < 2) throw DegenerateSample("samples need at least 2 observations");

    auto mean_var = [](std::span<const double> v) {
        double m = 0.0;
        for (double s : v) m += s;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double s : v) ss += (s - m) * (s - m);
        return std::pair<double, double>{m, ss / static_cast<double>(v.size() - 1)};
    };
    const auto [mx, vx] = mean_var(x);
    const auto [my, vy] = mean_var(y);
    if (vx <= 0.0 || vy <= 0.0) throw DegenerateSample("sample variance is zero");

    const double sex = vx / static_cast<double>(nx);
    const double sey = vy / static_cast<double>(ny);
    TTestResult r;
    r.t = (mx - my) / std::sqrt(sex + sey);
    r.df = (sex + sey) * (sex + sey) /
           (sex * sex / static_cast<double>(nx - 1) + sey * sey / static_cast<double>(ny - 1));
    // Two-sided p: P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
    r.p_two_sided = (r.t == 0.0)
                        ? 1.0
                        : regularized_incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
    r.alpha = alpha;
    r.significant = r.p_two_sided < alpha;
    return r;
}

}  // namespace gliopipe
