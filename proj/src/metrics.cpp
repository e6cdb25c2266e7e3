#include "histostack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace histostack {

int intensity_bin(double v, int bins) {
    const int b = static_cast<int>(v * bins);
    return std::clamp(b, 0, bins - 1);
}

JointHistogram::JointHistogram(int bins) : bins_(bins) {
    if (bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
    counts_.assign(static_cast<std::size_t>(bins) * bins, 0);
}

namespace {

double entropy_of(const std::vector<std::uint64_t>& counts, std::uint64_t total) {
    if (total == 0) return 0.0;
    const double n = static_cast<double>(total);
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

double JointHistogram::entropy_a() const {
    std::vector<std::uint64_t> m(bins_, 0);
    for (int i = 0; i < bins_; ++i)
        for (int j = 0; j < bins_; ++j) m[i] += count(i, j);
    return entropy_of(m, total_);
}

double JointHistogram::entropy_b() const {
    std::vector<std::uint64_t> m(bins_, 0);
    for (int i = 0; i < bins_; ++i)
        for (int j = 0; j < bins_; ++j) m[j] += count(i, j);
    return entropy_of(m, total_);
}

double JointHistogram::joint_entropy() const { return entropy_of(counts_, total_); }

double JointHistogram::nmi() const {
    const double ha = entropy_a();
    const double hb = entropy_b();
    if (ha <= 0.0 || hb <= 0.0) throw DegenerateEntropyError();
    return (ha + hb) / joint_entropy();
}

template <int D>
double nmi(const Image<D>& a, const Image<D>& b, int bins) {
    if (a.size() != b.size()) throw std::invalid_argument("nmi requires images of equal dimensions");
    return nmi(a.values(), b.values(), {}, bins);
}

double nmi(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> support, int bins) {
    if (a.size() != b.size()) throw std::invalid_argument("nmi requires images of equal dimensions");
    if (!support.empty() && support.size() != a.size()) throw std::invalid_argument("support mask size mismatch");
    JointHistogram h(bins);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (support.empty() || support[i]) h.add(a[i], b[i]);
    return h.nmi();
}

template <int D>
double dice(const Mask<D>& a, const Mask<D>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dice requires masks of equal dimensions");
    std::size_t na = 0, nb = 0, both = 0;
    const auto ba = a.bits(), bb = b.bits();
    for (std::size_t i = 0; i < ba.size(); ++i) {
        na += ba[i];
        nb += bb[i];
        both += ba[i] & bb[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

FeatureBatch::FeatureBatch(std::vector<std::vector<double>> vectors, double temperature)
    : vectors_(std::move(vectors)), temperature_(temperature) {
    if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
        throw std::invalid_argument("temperature must be positive");
    if (vectors_.size() < 2 || vectors_.size() % 2 != 0)
        throw std::invalid_argument("feature batch needs 2N >= 2 vectors");
    const std::size_t dim = vectors_.front().size();
    if (dim == 0) throw std::invalid_argument("feature vectors must be non-empty");
    for (const auto& v : vectors_) {
        if (v.size() != dim) throw std::invalid_argument("feature vectors must share one dimension");
        double n2 = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) throw std::invalid_argument("feature vectors must be finite");
            n2 += x * x;
        }
        if (n2 == 0.0) throw std::invalid_argument("feature vectors must be nonzero");
    }
}

namespace {

std::vector<std::vector<double>> normalized(const FeatureBatch& batch) {
    std::vector<std::vector<double>> u = batch.vectors();
    for (auto& v : u) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double n = std::sqrt(n2);
        for (double& x : v) x /= n;
    }
    return u;
}

std::vector<std::vector<double>> similarities(const std::vector<std::vector<double>>& u) {
    const std::size_t m = u.size();
    std::vector<std::vector<double>> s(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = i; k < m; ++k) {
            const double d = std::inner_product(u[i].begin(), u[i].end(), u[k].begin(), 0.0);
            s[i][k] = s[k][i] = d;
        }
    return s;
}

}  // namespace

InfoNceResult info_nce(const FeatureBatch& batch) {
    const auto u = normalized(batch);
    const auto s = similarities(u);
    const std::size_t m = u.size();
    const double tau = batch.temperature();
    InfoNceResult r;
    r.per_anchor.resize(m);
    r.negatives_per_anchor = m - 2;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m; ++k)
            if (k != i) mx = std::max(mx, s[i][k] / tau);
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k)
            if (k != i) acc += std::exp(s[i][k] / tau - mx);
        const double log_denominator = mx + std::log(acc);
        r.per_anchor[i] = log_denominator - s[i][FeatureBatch::partner(i)] / tau;
        total += r.per_anchor[i];
    }
    r.loss = total / static_cast<double>(m);
    return r;
}

std::vector<std::vector<double>> info_nce_gradient(const FeatureBatch& batch) {
    const auto u = normalized(batch);
    const auto s = similarities(u);
    const std::size_t m = u.size();
    const std::size_t dim = batch.dimension();
    const double tau = batch.temperature();

    // coef[i][k] = d loss / d s_ik treating s_ik and s_ki as distinct entries.
    std::vector<std::vector<double>> coef(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m; ++k)
            if (k != i) mx = std::max(mx, s[i][k] / tau);
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k)
            if (k != i) acc += std::exp(s[i][k] / tau - mx);
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i) continue;
            const double p = std::exp(s[i][k] / tau - mx) / acc;
            coef[i][k] = (p - (k == FeatureBatch::partner(i) ? 1.0 : 0.0)) / (tau * static_cast<double>(m));
        }
    }

    std::vector<std::vector<double>> grad(m, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        // d loss / d u_i
        std::vector<double> gu(dim, 0.0);
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i) continue;
            const double c = coef[i][k] + coef[k][i];
            for (std::size_t d = 0; d < dim; ++d) gu[d] += c * u[k][d];
        }
        // Project through the normalization: (I - u u^T) / |z|
        double n2 = 0.0;
        for (double x : batch.vectors()[i]) n2 += x * x;
        const double norm = std::sqrt(n2);
        const double dot = std::inner_product(gu.begin(), gu.end(), u[i].begin(), 0.0);
        for (std::size_t d = 0; d < dim; ++d) grad[i][d] = (gu[d] - dot * u[i][d]) / norm;
    }
    return grad;
}

FeatureBatch load_feature_batch_csv(const std::filesystem::path& path, double temperature) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feature batch " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        bool numeric = true;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(field, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw std::runtime_error("non-numeric row in feature batch " + path.string());
        }
        first = false;
        rows.push_back(std::move(row));
    }
    return FeatureBatch(std::move(rows), temperature);
}

DiceSummary summarize_dice(std::string name, std::span<const double> scores) {
    DiceSummary r{std::move(name), 0.0, 0.0, scores.size()};
    if (scores.empty()) return r;
    r.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    if (scores.size() > 1) {
        double ss = 0.0;
        for (double v : scores) ss += (v - r.mean) * (v - r.mean);
        r.sd = std::sqrt(ss / static_cast<double>(scores.size() - 1));
    }
    return r;
}

std::string format_dice_row(const DiceSummary& row) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "mean %.4f, SD %.4f", row.mean, row.sd);
    return row.name + ": " + buf;
}

template double nmi<2>(const Image<2>&, const Image<2>&, int);
template double nmi<3>(const Image<3>&, const Image<3>&, int);
template double dice<2>(const Mask<2>&, const Mask<2>&);
template double dice<3>(const Mask<3>&, const Mask<3>&);

}  // namespace histostack
