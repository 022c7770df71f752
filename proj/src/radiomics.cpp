#include "gliopipe/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "gliopipe/util.hpp"

namespace gliopipe::radiomics {

const char* to_string(TextureFamily f) {
    switch (f) {
        case TextureFamily::GLCM: return "glcm";
        case TextureFamily::GLRLM: return "glrlm";
        case TextureFamily::GLSZM: return "glszm";
        case TextureFamily::GLDM: return "gldm";
        case TextureFamily::NGTDM: return "ngtdm";
    }
    return "?";
}

int feature_count(TextureFamily f) {
    switch (f) {
        case TextureFamily::GLCM: return 24;
        case TextureFamily::GLRLM: return 16;
        case TextureFamily::GLSZM: return 16;
        case TextureFamily::GLDM: return 14;
        case TextureFamily::NGTDM: return 5;
    }
    return 0;
}

const char* to_string(MaskClass c) {
    switch (c) {
        case MaskClass::ED: return "ED";
        case MaskClass::NC: return "NC";
        case MaskClass::ET: return "ET";
        case MaskClass::TC: return "TC";
        case MaskClass::WT: return "WT";
    }
    return "?";
}

namespace {

const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> names = {
        "MeshVolume",        "VoxelVolume",           "SurfaceArea",
        "SurfaceVolumeRatio", "Sphericity",           "Maximum3DDiameter",
        "Maximum2DDiameterSlice", "Maximum2DDiameterColumn", "Maximum2DDiameterRow",
        "MajorAxisLength",   "MinorAxisLength",       "LeastAxisLength",
        "Elongation",        "Flatness"};
    return names;
}

const std::vector<std::string>& first_order_names() {
    static const std::vector<std::string> names = {
        "Energy",      "Entropy",  "Minimum",       "Percentile10",
        "Percentile90", "Maximum", "Mean",          "Median",
        "InterquartileRange", "Range", "MeanAbsoluteDeviation",
        "RobustMeanAbsoluteDeviation", "RootMeanSquared", "StandardDeviation",
        "Skewness",    "Kurtosis", "Variance",      "Uniformity"};
    return names;
}

const std::vector<std::string>& family_names(TextureFamily f) {
    static const std::vector<std::string> glcm = {
        "Autocorrelation", "ClusterProminence", "ClusterShade", "ClusterTendency",
        "Contrast", "Correlation", "DifferenceAverage", "DifferenceEntropy",
        "DifferenceVariance", "Id", "Idm", "Idmn", "Idn", "Imc1", "Imc2",
        "InverseVariance", "JointAverage", "JointEnergy", "JointEntropy",
        "MaximalCorrelationCoefficient", "MaximumProbability", "SumAverage",
        "SumEntropy", "SumSquares"};
    static const std::vector<std::string> glrlm = {
        "ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity",
        "GrayLevelNonUniformityNormalized", "RunLengthNonUniformity",
        "RunLengthNonUniformityNormalized", "RunPercentage", "GrayLevelVariance",
        "RunVariance", "RunEntropy", "LowGrayLevelRunEmphasis",
        "HighGrayLevelRunEmphasis", "ShortRunLowGrayLevelEmphasis",
        "ShortRunHighGrayLevelEmphasis", "LongRunLowGrayLevelEmphasis",
        "LongRunHighGrayLevelEmphasis"};
    static const std::vector<std::string> glszm = {
        "SmallAreaEmphasis", "LargeAreaEmphasis", "GrayLevelNonUniformity",
        "GrayLevelNonUniformityNormalized", "SizeZoneNonUniformity",
        "SizeZoneNonUniformityNormalized", "ZonePercentage", "GrayLevelVariance",
        "ZoneVariance", "ZoneEntropy", "LowGrayLevelZoneEmphasis",
        "HighGrayLevelZoneEmphasis", "SmallAreaLowGrayLevelEmphasis",
        "SmallAreaHighGrayLevelEmphasis", "LargeAreaLowGrayLevelEmphasis",
        "LargeAreaHighGrayLevelEmphasis"};
    static const std::vector<std::string> gldm = {
        "SmallDependenceEmphasis", "LargeDependenceEmphasis", "GrayLevelNonUniformity",
        "DependenceNonUniformity", "DependenceNonUniformityNormalized",
        "GrayLevelVariance", "DependenceVariance", "DependenceEntropy",
        "LowGrayLevelEmphasis", "HighGrayLevelEmphasis",
        "SmallDependenceLowGrayLevelEmphasis", "SmallDependenceHighGrayLevelEmphasis",
        "LargeDependenceLowGrayLevelEmphasis", "LargeDependenceHighGrayLevelEmphasis"};
    static const std::vector<std::string> ngtdm = {"Coarseness", "Contrast", "Busyness",
                                                   "Complexity", "Strength"};
    switch (f) {
        case TextureFamily::GLCM: return glcm;
        case TextureFamily::GLRLM: return glrlm;
        case TextureFamily::GLSZM: return glszm;
        case TextureFamily::GLDM: return gldm;
        case TextureFamily::NGTDM: return ngtdm;
    }
    return ngtdm;
}

double plog2(double p) { return p > 0.0 ? p * std::log2(p) : 0.0; }

std::vector<std::array<int, 3>> unique_directions_3d() {
    std::vector<std::array<int, 3>> dirs;
    for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj)
            for (int dk = -1; dk <= 1; ++dk) {
                if (di == 0 && dj == 0 && dk == 0) continue;
                // keep one of each +/- pair
                if (di > 0 || (di == 0 && dj > 0) || (di == 0 && dj == 0 && dk > 0))
                    dirs.push_back({di, dj, dk});
            }
    return dirs;
}

std::vector<int> sorted_unique(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

// Cyclic Jacobi eigenvalues of a symmetric matrix (row-major, n x n).
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

}  // namespace

double TextureMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0.0);
}

DiscretizedROI discretize(const Volume3D& vol, const Volume3D& mask, double bin_width) {
    if (vol.dims != mask.dims) throw GridMismatch("image and mask grids differ");
    if (bin_width <= 0.0) throw Error("bin width must be positive");
    DiscretizedROI roi;
    roi.dims = vol.dims;
    roi.bin_width = bin_width;
    roi.levels.assign(vol.size(), 0);

    double min_v = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (mask.voxels[i] != 0.0f) {
            const double v = vol.voxels[i];
            if (!any || v < min_v) min_v = v;
            any = true;
        }
    if (!any) throw EmptyMask("discretize: empty mask");

    std::vector<int> present;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        if (mask.voxels[i] == 0.0f) continue;
        const int level =
            static_cast<int>(std::floor((static_cast<double>(vol.voxels[i]) - min_v) / bin_width)) + 1;
        roi.levels[i] = level;
        present.push_back(level);
        ++roi.n_voxels;
    }
    roi.present_levels = sorted_unique(std::move(present));
    return roi;
}

TextureMatrix glcm_matrix(const DiscretizedROI& roi,
                          const std::vector<std::array<int, 3>>& offsets_in) {
    const auto offsets = offsets_in.empty() ? unique_directions_3d() : offsets_in;
    TextureMatrix m;
    m.family = TextureFamily::GLCM;
    m.row_levels = roi.present_levels;
    m.col_values = roi.present_levels;
    m.n_voxels = roi.n_voxels;
    m.n_directions = static_cast<int>(offsets.size());
    const std::size_t ng = m.row_levels.size();
    m.counts.assign(ng * ng, 0.0);

    std::map<int, std::size_t> level_index;
    for (std::size_t i = 0; i < ng; ++i) level_index[m.row_levels[i]] = i;

    const auto [nx, ny, nz] = roi.dims;
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) {
                const int a = roi.at(i, j, k);
                if (a == 0) continue;
                for (const auto& d : offsets) {
                    const auto ii = static_cast<long>(i) + d[0];
                    const auto jj = static_cast<long>(j) + d[1];
                    const auto kk = static_cast<long>(k) + d[2];
                    if (ii < 0 || jj < 0 || kk < 0 || ii >= static_cast<long>(nx) ||
                        jj >= static_cast<long>(ny) || kk >= static_cast<long>(nz))
                        continue;
                    const int b = roi.at(static_cast<std::size_t>(ii),
                                         static_cast<std::size_t>(jj),
                                         static_cast<std::size_t>(kk));
                    if (b == 0) continue;
                    const std::size_t ra = level_index.at(a), rb = level_index.at(b);
                    m.counts[ra * ng + rb] += 1.0;  // symmetric aggregation
                    m.counts[rb * ng + ra] += 1.0;
                }
            }
    return m;
}

TextureMatrix glrlm_matrix(const DiscretizedROI& roi) {
    const auto dirs = unique_directions_3d();
    TextureMatrix m;
    m.family = TextureFamily::GLRLM;
    m.row_levels = roi.present_levels;
    m.n_voxels = roi.n_voxels;
    m.n_directions = static_cast<int>(dirs.size());

    std::map<int, std::size_t> level_index;
    for (std::size_t i = 0; i < m.row_levels.size(); ++i) level_index[m.row_levels[i]] = i;

    const auto [nx, ny, nz] = roi.dims;
    auto level_at = [&](long i, long j, long k) -> int {
        if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(nx) || j >= static_cast<long>(ny) ||
            k >= static_cast<long>(nz))
            return 0;
        return roi.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                      static_cast<std::size_t>(k));
    };

    // (level index, run length) -> count
    std::map<std::pair<std::size_t, int>, double> runs;
    for (const auto& d : dirs) {
        for (std::size_t k = 0; k < nz; ++k)
            for (std::size_t j = 0; j < ny; ++j)
                for (std::size_t i = 0; i < nx; ++i) {
                    const int lev = roi.at(i, j, k);
                    if (lev == 0) continue;
                    // a run starts where the previous voxel along d differs
                    if (level_at(static_cast<long>(i) - d[0], static_cast<long>(j) - d[1],
                                 static_cast<long>(k) - d[2]) == lev)
                        continue;
                    int len = 0;
                    long ii = static_cast<long>(i), jj = static_cast<long>(j),
                         kk = static_cast<long>(k);
                    while (level_at(ii, jj, kk) == lev) {
                        ++len;
                        ii += d[0];
                        jj += d[1];
                        kk += d[2];
                    }
                    runs[{level_index.at(lev), len}] += 1.0;
                }
    }

    std::vector<int> lengths;
    for (const auto& [key, cnt] : runs) lengths.push_back(key.second);
    m.col_values = sorted_unique(std::move(lengths));
    std::map<int, std::size_t> len_index;
    for (std::size_t i = 0; i < m.col_values.size(); ++i) len_index[m.col_values[i]] = i;
    m.counts.assign(m.row_levels.size() * m.col_values.size(), 0.0);
    for (const auto& [key, cnt] : runs)
        m.counts[key.first * m.col_values.size() + len_index.at(key.second)] += cnt;
    return m;
}

TextureMatrix glszm_matrix(const DiscretizedROI& roi) {
    TextureMatrix m;
    m.family = TextureFamily::GLSZM;
    m.row_levels = roi.present_levels;
    m.n_voxels = roi.n_voxels;
    m.n_directions = 1;

    std::map<int, std::size_t> level_index;
    for (std::size_t i = 0; i < m.row_levels.size(); ++i) level_index[m.row_levels[i]] = i;

    const auto [nx, ny, nz] = roi.dims;
    std::vector<char> seen(roi.levels.size(), 0);
    std::map<std::pair<std::size_t, int>, double> zones;

    for (std::size_t start = 0; start < roi.levels.size(); ++start) {
        if (roi.levels[start] == 0 || seen[start]) continue;
        const int lev = roi.levels[start];
        // 26-connected flood fill
        int size = 0;
        std::deque<std::size_t> queue{start};
        seen[start] = 1;
        while (!queue.empty()) {
            const std::size_t cur = queue.front();
            queue.pop_front();
            ++size;
            const long ci = static_cast<long>(cur % nx);
            const long cj = static_cast<long>((cur / nx) % ny);
            const long ck = static_cast<long>(cur / (nx * ny));
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int dk = -1; dk <= 1; ++dk) {
                        if (di == 0 && dj == 0 && dk == 0) continue;
                        const long ii = ci + di, jj = cj + dj, kk = ck + dk;
                        if (ii < 0 || jj < 0 || kk < 0 || ii >= static_cast<long>(nx) ||
                            jj >= static_cast<long>(ny) || kk >= static_cast<long>(nz))
                            continue;
                        const std::size_t nb = static_cast<std::size_t>(ii) +
                                               nx * (static_cast<std::size_t>(jj) +
                                                     ny * static_cast<std::size_t>(kk));
                        if (seen[nb] || roi.levels[nb] != lev) continue;
                        seen[nb] = 1;
                        queue.push_back(nb);
                    }
        }
        zones[{level_index.at(lev), size}] += 1.0;
    }

    std::vector<int> sizes;
    for (const auto& [key, cnt] : zones) sizes.push_back(key.second);
    m.col_values = sorted_unique(std::move(sizes));
    std::map<int, std::size_t> size_index;
    for (std::size_t i = 0; i < m.col_values.size(); ++i) size_index[m.col_values[i]] = i;
    m.counts.assign(m.row_levels.size() * m.col_values.size(), 0.0);
    for (const auto& [key, cnt] : zones)
        m.counts[key.first * m.col_values.size() + size_index.at(key.second)] += cnt;
    return m;
}

TextureMatrix gldm_matrix(const DiscretizedROI& roi, int alpha) {
    TextureMatrix m;
    m.family = TextureFamily::GLDM;
    m.row_levels = roi.present_levels;
    m.n_voxels = roi.n_voxels;
    m.n_directions = 1;

    std::map<int, std::size_t> level_index;
    for (std::size_t i = 0; i < m.row_levels.size(); ++i) level_index[m.row_levels[i]] = i;

    const auto [nx, ny, nz] = roi.dims;
    std::map<std::pair<std::size_t, int>, double> deps;
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) {
                const int lev = roi.at(i, j, k);
                if (lev == 0) continue;
                // dependence = center + neighbors within alpha of its level
                int dep = 1;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj)
                        for (int dk = -1; dk <= 1; ++dk) {
                            if (di == 0 && dj == 0 && dk == 0) continue;
                            const long ii = static_cast<long>(i) + di;
                            const long jj = static_cast<long>(j) + dj;
                            const long kk = static_cast<long>(k) + dk;
                            if (ii < 0 || jj < 0 || kk < 0 || ii >= static_cast<long>(nx) ||
                                jj >= static_cast<long>(ny) || kk >= static_cast<long>(nz))
                                continue;
                            const int nb = roi.at(static_cast<std::size_t>(ii),
                                                  static_cast<std::size_t>(jj),
                                                  static_cast<std::size_t>(kk));
                            if (nb != 0 && std::abs(nb - lev) <= alpha) ++dep;
                        }
                deps[{level_index.at(lev), dep}] += 1.0;
            }

    std::vector<int> sizes;
    for (const auto& [key, cnt] : deps) sizes.push_back(key.second);
    m.col_values = sorted_unique(std::move(sizes));
    std::map<int, std::size_t> dep_index;
    for (std::size_t i = 0; i < m.col_values.size(); ++i) dep_index[m.col_values[i]] = i;
    m.counts.assign(m.row_levels.size() * m.col_values.size(), 0.0);
    for (const auto& [key, cnt] : deps)
        m.counts[key.first * m.col_values.size() + dep_index.at(key.second)] += cnt;
    return m;
}

TextureMatrix ngtdm_matrix(const DiscretizedROI& roi) {
    TextureMatrix m;
    m.family = TextureFamily::NGTDM;
    m.n_directions = 1;

    const auto [nx, ny, nz] = roi.dims;
    std::map<int, std::pair<double, double>> acc;  // level -> (n_i, s_i)
    double nvp = 0.0;
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) {
                const int lev = roi.at(i, j, k);
                if (lev == 0) continue;
                double sum = 0.0;
                int count = 0;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj)
                        for (int dk = -1; dk <= 1; ++dk) {
                            if (di == 0 && dj == 0 && dk == 0) continue;
                            const long ii = static_cast<long>(i) + di;
                            const long jj = static_cast<long>(j) + dj;
                            const long kk = static_cast<long>(k) + dk;
                            if (ii < 0 || jj < 0 || kk < 0 || ii >= static_cast<long>(nx) ||
                                jj >= static_cast<long>(ny) || kk >= static_cast<long>(nz))
                                continue;
                            const int nb = roi.at(static_cast<std::size_t>(ii),
                                                  static_cast<std::size_t>(jj),
                                                  static_cast<std::size_t>(kk));
                            if (nb != 0) {
                                sum += nb;
                                ++count;
                            }
                        }
                // voxels with no in-mask neighbor carry no tone difference
                if (count == 0) continue;
                auto& [n_i, s_i] = acc[lev];
                n_i += 1.0;
                s_i += std::abs(static_cast<double>(lev) - sum / count);
                nvp += 1.0;
            }

    m.n_voxels = static_cast<std::size_t>(nvp);
    m.col_values = {0, 1};  // columns: n_i, s_i
    for (const auto& [lev, ns] : acc) m.row_levels.push_back(lev);
    m.counts.assign(m.row_levels.size() * 2, 0.0);
    for (std::size_t r = 0; r < m.row_levels.size(); ++r) {
        const auto& ns = acc.at(m.row_levels[r]);
        m.counts[r * 2 + 0] = ns.first;
        m.counts[r * 2 + 1] = ns.second;
    }
    return m;
}

TextureMatrix texture_matrix(const DiscretizedROI& roi, TextureFamily family,
                             const Params& params) {
    switch (family) {
        case TextureFamily::GLCM: return glcm_matrix(roi);
        case TextureFamily::GLRLM: return glrlm_matrix(roi);
        case TextureFamily::GLSZM: return glszm_matrix(roi);
        case TextureFamily::GLDM: return gldm_matrix(roi, params.gldm_alpha);
        case TextureFamily::NGTDM: return ngtdm_matrix(roi);
    }
    throw Error("unknown texture family");
}

namespace {

NamedValues glcm_features(const TextureMatrix& m) {
    const std::size_t ng = m.row_levels.size();
    const double total = m.total();
    if (total <= 0.0) throw DegenerateMatrix("GLCM has no co-occurrences");

    std::vector<double> p(m.counts.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = m.counts[i] / total;
    auto P = [&](std::size_t r, std::size_t c) { return p[r * ng + c]; };
    auto lev = [&](std::size_t r) { return static_cast<double>(m.row_levels[r]); };

    std::vector<double> px(ng, 0.0), py(ng, 0.0);
    for (std::size_t r = 0; r < ng; ++r)
        for (std::size_t c = 0; c < ng; ++c) {
            px[r] += P(r, c);
            py[c] += P(r, c);
        }
    double mu_x = 0.0, mu_y = 0.0;
    for (std::size_t r = 0; r < ng; ++r) mu_x += lev(r) * px[r];
    for (std::size_t c = 0; c < ng; ++c) mu_y += lev(c) * py[c];
    double var_x = 0.0, var_y = 0.0;
    for (std::size_t r = 0; r < ng; ++r) var_x += (lev(r) - mu_x) * (lev(r) - mu_x) * px[r];
    for (std::size_t c = 0; c < ng; ++c) var_y += (lev(c) - mu_y) * (lev(c) - mu_y) * py[c];

    // difference |i-j| and sum i+j distributions over level values
    std::map<int, double> pdiff, psum;
    for (std::size_t r = 0; r < ng; ++r)
        for (std::size_t c = 0; c < ng; ++c) {
            pdiff[std::abs(m.row_levels[r] - m.row_levels[c])] += P(r, c);
            psum[m.row_levels[r] + m.row_levels[c]] += P(r, c);
        }

    double autocorr = 0.0, contrast = 0.0, joint_avg = 0.0, joint_energy = 0.0;
    double hxy = 0.0, max_prob = 0.0, sum_squares = 0.0, corr_num = 0.0;
    double clus_prom = 0.0, clus_shade = 0.0, clus_tend = 0.0, inv_var = 0.0;
    double id = 0.0, idm = 0.0, idmn = 0.0, idn = 0.0;
    const double ng_d = static_cast<double>(ng);
    for (std::size_t r = 0; r < ng; ++r)
        for (std::size_t c = 0; c < ng; ++c) {
            const double pij = P(r, c);
            const double i = lev(r), j = lev(c);
            autocorr += pij * i * j;
            contrast += pij * (i - j) * (i - j);
            joint_avg += pij * i;
            joint_energy += pij * pij;
            hxy -= plog2(pij);
            max_prob = std::max(max_prob, pij);
            sum_squares += (i - mu_x) * (i - mu_x) * pij;
            corr_num += pij * i * j;
            const double spread = i + j - mu_x - mu_y;
            clus_prom += spread * spread * spread * spread * pij;
            clus_shade += spread * spread * spread * pij;
            clus_tend += spread * spread * pij;
        }
    for (const auto& [k, pk] : pdiff) {
        const double kd = k;
        id += pk / (1.0 + kd);
        idm += pk / (1.0 + kd * kd);
        idmn += pk / (1.0 + (kd * kd) / (ng_d * ng_d));
        idn += pk / (1.0 + kd / ng_d);
        if (k > 0) inv_var += pk / (kd * kd);
    }
    double diff_avg = 0.0, diff_ent = 0.0;
    for (const auto& [k, pk] : pdiff) {
        diff_avg += k * pk;
        diff_ent -= plog2(pk);
    }
    double diff_var = 0.0;
    for (const auto& [k, pk] : pdiff) diff_var += (k - diff_avg) * (k - diff_avg) * pk;
    double sum_avg = 0.0, sum_ent = 0.0;
    for (const auto& [k, pk] : psum) {
        sum_avg += k * pk;
        sum_ent -= plog2(pk);
    }

    const double sd_xy = std::sqrt(var_x) * std::sqrt(var_y);
    const double correlation = sd_xy > 0.0 ? (corr_num - mu_x * mu_y) / sd_xy : 1.0;

    double hx = 0.0, hy = 0.0, hxy1 = 0.0, hxy2 = 0.0;
    for (std::size_t r = 0; r < ng; ++r) hx -= plog2(px[r]);
    for (std::size_t c = 0; c < ng; ++c) hy -= plog2(py[c]);
    for (std::size_t r = 0; r < ng; ++r)
        for (std::size_t c = 0; c < ng; ++c) {
            const double prod = px[r] * py[c];
            if (prod > 0.0) {
                hxy1 -= P(r, c) * std::log2(prod);
                hxy2 -= prod * std::log2(prod);
            }
        }
    const double hmax = std::max(hx, hy);
    const double imc1 = hmax > 0.0 ? (hxy - hxy1) / hmax : 0.0;
    const double imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - hxy))));

    // MCC: second largest eigenvalue of Q(i,j) = sum_k p(i,k)p(j,k)/(px_i py_k),
    // over levels with nonzero marginal mass (Q is similar to a symmetric
    // matrix via D^1/2 Q D^-1/2).
    double mcc = 1.0;
    {
        std::vector<std::size_t> live;
        for (std::size_t r = 0; r < ng; ++r)
            if (px[r] > 0.0) live.push_back(r);
        const std::size_t n = live.size();
        if (n > 1) {
            std::vector<double> s(n * n, 0.0);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b) {
                    double q = 0.0;
                    for (std::size_t kk = 0; kk < n; ++kk) {
                        const double pyk = py[live[kk]];
                        if (pyk > 0.0)
                            q += P(live[a], live[kk]) * P(live[b], live[kk]) / pyk;
                    }
                    s[a * n + b] = q / std::sqrt(px[live[a]] * px[live[b]]);
                }
            const auto eig = symmetric_eigenvalues(std::move(s), n);
            mcc = std::sqrt(std::max(0.0, eig[1]));
        }
    }

    const auto& names = family_names(TextureFamily::GLCM);
    const double values[] = {autocorr, clus_prom,  clus_shade, clus_tend, contrast,
                             correlation, diff_avg, diff_ent,  diff_var,  id,
                             idm,       idmn,       idn,        imc1,      imc2,
                             inv_var,   joint_avg,  joint_energy, hxy,     mcc,
                             max_prob,  sum_avg,    sum_ent,    sum_squares};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

// Shared scaffolding for GLRLM/GLSZM/GLDM: a (gray level, attribute) count
// matrix with emphasis/non-uniformity/variance/entropy style features.
struct LevelAttributeStats {
    double total = 0.0;
    double sre = 0.0, lre = 0.0, gln = 0.0, glnn = 0.0, aln = 0.0, alnn = 0.0;
    double glv = 0.0, av = 0.0, entropy = 0.0;
    double lgle = 0.0, hgle = 0.0, s_l = 0.0, s_h = 0.0, l_l = 0.0, l_h = 0.0;
};

LevelAttributeStats level_attribute_stats(const TextureMatrix& m) {
    LevelAttributeStats st;
    st.total = m.total();
    if (st.total <= 0.0) throw DegenerateMatrix(std::string(to_string(m.family)) + " is empty");
    const std::size_t nr = m.row_levels.size(), nc = m.col_values.size();

    std::vector<double> row_sum(nr, 0.0), col_sum(nc, 0.0);
    double mu_g = 0.0, mu_a = 0.0;
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t c = 0; c < nc; ++c) {
            const double cnt = m.at(r, c);
            row_sum[r] += cnt;
            col_sum[c] += cnt;
            const double pr = cnt / st.total;
            mu_g += pr * m.row_levels[r];
            mu_a += pr * m.col_values[c];
        }
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t c = 0; c < nc; ++c) {
            const double cnt = m.at(r, c);
            if (cnt == 0.0) continue;
            const double g = m.row_levels[r], a = m.col_values[c];
            const double pr = cnt / st.total;
            st.sre += cnt / (a * a);
            st.lre += cnt * a * a;
            st.lgle += cnt / (g * g);
            st.hgle += cnt * g * g;
            st.s_l += cnt / (g * g * a * a);
            st.s_h += cnt * g * g / (a * a);
            st.l_l += cnt * a * a / (g * g);
            st.l_h += cnt * g * g * a * a;
            st.glv += pr * (g - mu_g) * (g - mu_g);
            st.av += pr * (a - mu_a) * (a - mu_a);
            st.entropy -= plog2(pr);
        }
    for (std::size_t r = 0; r < nr; ++r) st.gln += row_sum[r] * row_sum[r];
    for (std::size_t c = 0; c < nc; ++c) st.aln += col_sum[c] * col_sum[c];
    st.sre /= st.total;
    st.lre /= st.total;
    st.lgle /= st.total;
    st.hgle /= st.total;
    st.s_l /= st.total;
    st.s_h /= st.total;
    st.l_l /= st.total;
    st.l_h /= st.total;
    st.glnn = st.gln / (st.total * st.total);
    st.alnn = st.aln / (st.total * st.total);
    st.gln /= st.total;
    st.aln /= st.total;
    return st;
}

NamedValues glrlm_features(const TextureMatrix& m) {
    const auto st = level_attribute_stats(m);
    const double run_pct =
        st.total / (static_cast<double>(m.n_voxels) * static_cast<double>(m.n_directions));
    const auto& names = family_names(TextureFamily::GLRLM);
    const double values[] = {st.sre,  st.lre,  st.gln,  st.glnn, st.aln, st.alnn,
                             run_pct, st.glv,  st.av,   st.entropy, st.lgle, st.hgle,
                             st.s_l,  st.s_h,  st.l_l,  st.l_h};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

NamedValues glszm_features(const TextureMatrix& m) {
    const auto st = level_attribute_stats(m);
    const double zone_pct = st.total / static_cast<double>(m.n_voxels);
    const auto& names = family_names(TextureFamily::GLSZM);
    const double values[] = {st.sre,   st.lre, st.gln, st.glnn, st.aln, st.alnn,
                             zone_pct, st.glv, st.av,  st.entropy, st.lgle, st.hgle,
                             st.s_l,   st.s_h, st.l_l, st.l_h};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

NamedValues gldm_features(const TextureMatrix& m) {
    const auto st = level_attribute_stats(m);
    const auto& names = family_names(TextureFamily::GLDM);
    const double values[] = {st.sre, st.lre, st.gln,  st.aln,  st.alnn,
                             st.glv, st.av,  st.entropy, st.lgle, st.hgle,
                             st.s_l, st.s_h, st.l_l,  st.l_h};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

NamedValues ngtdm_features(const TextureMatrix& m) {
    const std::size_t nr = m.row_levels.size();
    double s_total = 0.0, n_total = 0.0;
    for (std::size_t r = 0; r < nr; ++r) {
        n_total += m.at(r, 0);
        s_total += m.at(r, 1);
    }
    if (n_total <= 0.0) throw DegenerateMatrix("NGTDM has no valid voxels");
    const double nvp = n_total;

    double coarseness_den = 0.0;
    for (std::size_t r = 0; r < nr; ++r) coarseness_den += (m.at(r, 0) / nvp) * m.at(r, 1);
    const double coarseness = coarseness_den > 0.0 ? 1.0 / coarseness_den : 1e6;

    const double ngp = static_cast<double>(nr);
    double contrast = 0.0;
    if (nr > 1) {
        double pair_sum = 0.0;
        for (std::size_t a = 0; a < nr; ++a)
            for (std::size_t b = 0; b < nr; ++b) {
                const double pi = m.at(a, 0) / nvp, pj = m.at(b, 0) / nvp;
                const double d = m.row_levels[a] - m.row_levels[b];
                pair_sum += pi * pj * d * d;
            }
        contrast = pair_sum / (ngp * (ngp - 1.0)) * (s_total / nvp);
    }

    double busy_den = 0.0;
    for (std::size_t a = 0; a < nr; ++a)
        for (std::size_t b = 0; b < nr; ++b)
            busy_den += std::abs(m.row_levels[a] * m.at(a, 0) / nvp -
                                 m.row_levels[b] * m.at(b, 0) / nvp);
    const double busyness = busy_den > 0.0 ? coarseness_den / busy_den : 0.0;

    double complexity = 0.0;
    for (std::size_t a = 0; a < nr; ++a)
        for (std::size_t b = 0; b < nr; ++b) {
            const double pi = m.at(a, 0) / nvp, pj = m.at(b, 0) / nvp;
            complexity += std::abs(m.row_levels[a] - m.row_levels[b]) *
                          (pi * m.at(a, 1) + pj * m.at(b, 1)) / (pi + pj);
        }
    complexity /= nvp;

    double strength = 0.0;
    if (s_total > 0.0) {
        for (std::size_t a = 0; a < nr; ++a)
            for (std::size_t b = 0; b < nr; ++b) {
                const double pi = m.at(a, 0) / nvp, pj = m.at(b, 0) / nvp;
                const double d = m.row_levels[a] - m.row_levels[b];
                strength += (pi + pj) * d * d;
            }
        strength /= s_total;
    }

    const auto& names = family_names(TextureFamily::NGTDM);
    const double values[] = {coarseness, contrast, busyness, complexity, strength};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

}  // namespace

NamedValues texture_features(const TextureMatrix& m) {
    switch (m.family) {
        case TextureFamily::GLCM: return glcm_features(m);
        case TextureFamily::GLRLM: return glrlm_features(m);
        case TextureFamily::GLSZM: return glszm_features(m);
        case TextureFamily::GLDM: return gldm_features(m);
        case TextureFamily::NGTDM: return ngtdm_features(m);
    }
    throw Error("unknown texture family");
}

NamedValues shape_features(const Volume3D& mask, const Vec3& spacing) {
    const auto [nx, ny, nz] = mask.dims;
    std::vector<std::array<std::size_t, 3>> voxels;
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i)
                if (mask.at(i, j, k) != 0.0f) voxels.push_back({i, j, k});
    if (voxels.empty()) throw EmptyMask("shape features of an empty mask");

    const double n = static_cast<double>(voxels.size());
    const double voxel_volume = spacing[0] * spacing[1] * spacing[2];
    const double volume = n * voxel_volume;

    auto in_mask = [&](long i, long j, long k) {
        if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(nx) ||
            j >= static_cast<long>(ny) || k >= static_cast<long>(nz))
            return false;
        return mask.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                       static_cast<std::size_t>(k)) != 0.0f;
    };

    // surface area by exposed-face counting
    const double face_area[3] = {spacing[1] * spacing[2], spacing[0] * spacing[2],
                                 spacing[0] * spacing[1]};
    double area = 0.0;
    std::vector<std::array<std::size_t, 3>> boundary;
    for (const auto& v : voxels) {
        bool exposed = false;
        const long i = static_cast<long>(v[0]), j = static_cast<long>(v[1]),
                   k = static_cast<long>(v[2]);
        const long nbs[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k},
                                {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
        for (int f = 0; f < 6; ++f) {
            if (!in_mask(nbs[f][0], nbs[f][1], nbs[f][2])) {
                area += face_area[f / 2];
                exposed = true;
            }
        }
        if (exposed) boundary.push_back(v);
    }

    const double sphericity = std::cbrt(36.0 * M_PI * volume * volume) / area;

    auto phys = [&](const std::array<std::size_t, 3>& v) {
        return Vec3{static_cast<double>(v[0]) * spacing[0],
                    static_cast<double>(v[1]) * spacing[1],
                    static_cast<double>(v[2]) * spacing[2]};
    };
    double max3d = 0.0, max_slice = 0.0, max_col = 0.0, max_row = 0.0;
    for (std::size_t a = 0; a < boundary.size(); ++a)
        for (std::size_t b = a + 1; b < boundary.size(); ++b) {
            const Vec3 pa = phys(boundary[a]), pb = phys(boundary[b]);
            const double dx = pa[0] - pb[0], dy = pa[1] - pb[1], dz = pa[2] - pb[2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            max3d = std::max(max3d, d2);
            if (boundary[a][2] == boundary[b][2]) max_slice = std::max(max_slice, dx * dx + dy * dy);
            if (boundary[a][1] == boundary[b][1]) max_col = std::max(max_col, dx * dx + dz * dz);
            if (boundary[a][0] == boundary[b][0]) max_row = std::max(max_row, dy * dy + dz * dz);
        }
    max3d = std::sqrt(max3d);
    max_slice = std::sqrt(max_slice);
    max_col = std::sqrt(max_col);
    max_row = std::sqrt(max_row);

    // principal axes from the population covariance of voxel centers
    Vec3 mean{0, 0, 0};
    for (const auto& v : voxels) {
        const Vec3 p = phys(v);
        for (int a = 0; a < 3; ++a) mean[static_cast<std::size_t>(a)] += p[static_cast<std::size_t>(a)];
    }
    for (auto& c : mean) c /= n;
    std::vector<double> cov(9, 0.0);
    for (const auto& v : voxels) {
        const Vec3 p = phys(v);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                cov[r * 3 + c] += (p[r] - mean[r]) * (p[c] - mean[c]);
    }
    for (auto& c : cov) c /= n;
    auto eig = symmetric_eigenvalues(std::move(cov), 3);
    for (auto& e : eig) e = std::max(0.0, e);
    const double major = 4.0 * std::sqrt(eig[0]);
    const double minor = 4.0 * std::sqrt(eig[1]);
    const double least = 4.0 * std::sqrt(eig[2]);
    const double elongation = eig[0] > 0.0 ? std::sqrt(eig[1] / eig[0]) : 1.0;
    const double flatness = eig[0] > 0.0 ? std::sqrt(eig[2] / eig[0]) : 1.0;

    const auto& names = shape_names();
    const double values[] = {volume,    volume, area,   area / volume, sphericity,
                             max3d,     max_slice, max_col, max_row,  major,
                             minor,     least,  elongation, flatness};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

NamedValues first_order_features(const Volume3D& vol, const Volume3D& mask, double bin_width) {
    if (vol.dims != mask.dims) throw GridMismatch("image and mask grids differ");
    std::vector<double> x;
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (mask.voxels[i] != 0.0f) x.push_back(vol.voxels[i]);
    if (x.empty()) throw EmptyMask("first-order features of an empty mask");

    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    const double minimum = x.front(), maximum = x.back();
    const double p10 = percentile_sorted(x, 10.0);
    const double p25 = percentile_sorted(x, 25.0);
    const double p50 = percentile_sorted(x, 50.0);
    const double p75 = percentile_sorted(x, 75.0);
    const double p90 = percentile_sorted(x, 90.0);

    double sum = 0.0, energy = 0.0;
    for (double v : x) {
        sum += v;
        energy += v * v;
    }
    const double mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;

    double rsum = 0.0, rn = 0.0;
    for (double v : x)
        if (v >= p10 && v <= p90) {
            rsum += v;
            rn += 1.0;
        }
    const double rmean = rn > 0.0 ? rsum / rn : mean;
    double rmad = 0.0;
    for (double v : x)
        if (v >= p10 && v <= p90) rmad += std::abs(v - rmean);
    rmad = rn > 0.0 ? rmad / rn : 0.0;

    const double skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    const double kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;

    // histogram-based entropy/uniformity on the discretized values
    std::map<int, double> hist;
    for (double v : x) hist[static_cast<int>(std::floor((v - minimum) / bin_width)) + 1] += 1.0;
    double entropy = 0.0, uniformity = 0.0;
    for (const auto& [lvl, cnt] : hist) {
        const double pg = cnt / n;
        entropy -= plog2(pg);
        uniformity += pg * pg;
    }

    const auto& names = first_order_names();
    const double values[] = {energy,
                             entropy,
                             minimum,
                             p10,
                             p90,
                             maximum,
                             mean,
                             p50,
                             p75 - p25,
                             maximum - minimum,
                             mad,
                             rmad,
                             std::sqrt(energy / n),
                             std::sqrt(m2),
                             skewness,
                             kurtosis,
                             m2,
                             uniformity};
    NamedValues out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace_back(names[i], values[i]);
    return out;
}

const std::vector<std::string>& feature_schema() {
    static const std::vector<std::string> schema = [] {
        std::vector<std::string> s;
        for (MaskClass c : kMaskClasses)
            for (const auto& f : shape_names())
                s.push_back(std::string(to_string(c)) + "_na_shape_" + f);
        for (SequenceClass img : kImageChannels)
            for (MaskClass c : kMaskClasses) {
                const std::string prefix =
                    std::string(to_string(c)) + "_" + to_string(img) + "_";
                for (const auto& f : first_order_names()) s.push_back(prefix + "firstorder_" + f);
                for (TextureFamily fam :
                     {TextureFamily::GLCM, TextureFamily::GLRLM, TextureFamily::GLSZM,
                      TextureFamily::GLDM, TextureFamily::NGTDM})
                    for (const auto& f : family_names(fam))
                        s.push_back(prefix + std::string(to_string(fam)) + "_" + f);
            }
        return s;
    }();
    return schema;
}

std::size_t FeatureVector::count_non_null() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries)
        if (v.has_value()) ++n;
    return n;
}

std::map<MaskClass, Volume3D> class_masks_from(const Volume3D& mask, bool binary_wt) {
    std::map<MaskClass, Volume3D> out;
    auto empty_like = [&] {
        Volume3D v = mask;
        v.kind = VoxelKind::Label;
        std::fill(v.voxels.begin(), v.voxels.end(), 0.0f);
        return v;
    };
    if (binary_wt) {
        Volume3D wt = empty_like();
        for (std::size_t i = 0; i < mask.size(); ++i)
            wt.voxels[i] = mask.voxels[i] != 0.0f ? 1.0f : 0.0f;
        out[MaskClass::ED] = empty_like();
        out[MaskClass::NC] = empty_like();
        out[MaskClass::ET] = empty_like();
        out[MaskClass::TC] = empty_like();
        out[MaskClass::WT] = std::move(wt);
        return out;
    }
    SegMask seg{mask};
    seg.validate();
    auto merged = merge_mask_classes(seg);
    out[MaskClass::ED] = seg.label_mask(seg_label::ED);
    out[MaskClass::NC] = seg.label_mask(seg_label::NC);
    out[MaskClass::ET] = seg.label_mask(seg_label::ET);
    out[MaskClass::TC] = std::move(merged.tc);
    out[MaskClass::WT] = std::move(merged.wt);
    return out;
}

FeatureVector extract_all(const std::string& session_id,
                          const std::map<SequenceClass, Volume3D>& images,
                          const std::map<MaskClass, Volume3D>& class_masks,
                          const Params& params) {
    FeatureVector fv;
    fv.session_id = session_id;
    for (const auto& name : feature_schema()) fv.entries.emplace_back(name, std::nullopt);

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < fv.entries.size(); ++i) index[fv.entries[i].first] = i;
    auto put = [&](const std::string& name, double v) { fv.entries[index.at(name)].second = v; };

    for (MaskClass c : kMaskClasses) {
        const auto mit = class_masks.find(c);
        if (mit == class_masks.end() || mit->second.count_nonzero() == 0) continue;
        const auto& mask = mit->second;
        for (const auto& [fname, v] : shape_features(mask, mask.spacing))
            put(std::string(to_string(c)) + "_na_shape_" + fname, v);

        for (SequenceClass img : kImageChannels) {
            const auto iit = images.find(img);
            if (iit == images.end()) continue;
            const auto& vol = iit->second;
            const std::string prefix = std::string(to_string(c)) + "_" + to_string(img) + "_";
            for (const auto& [fname, v] : first_order_features(vol, mask, params.bin_width))
                put(prefix + "firstorder_" + fname, v);
            const auto roi = discretize(vol, mask, params.bin_width);
            for (TextureFamily fam :
                 {TextureFamily::GLCM, TextureFamily::GLRLM, TextureFamily::GLSZM,
                  TextureFamily::GLDM, TextureFamily::NGTDM}) {
                try {
                    for (const auto& [fname, v] :
                         texture_features(texture_matrix(roi, fam, params)))
                        put(prefix + std::string(to_string(fam)) + "_" + fname, v);
                } catch (const DegenerateMatrix&) {
                    // matrix carries no mass (e.g. isolated voxels); the
                    // block stays null to keep the schema fixed-width
                }
            }
        }
    }
    return fv;
}

std::string feature_csv_header() {
    std::string out = "session_id";
    for (const auto& name : feature_schema()) out += "," + name;
    out += "\n";
    return out;
}

std::string feature_csv_row(const FeatureVector& fv) {
    std::ostringstream out;
    out.precision(17);
    out << fv.session_id;
    for (const auto& [name, v] : fv.entries) {
        out << ",";
        if (v) out << *v;
    }
    out << "\n";
    return out.str();
}

nlohmann::json feature_json(const FeatureVector& fv) {
    nlohmann::json j;
    j["session_id"] = fv.session_id;
    auto& f = j["features"];
    for (const auto& [name, v] : fv.entries) {
        if (v)
            f[name] = *v;
        else
            f[name] = nullptr;
    }
    return j;
}

}  // namespace gliopipe::radiomics
