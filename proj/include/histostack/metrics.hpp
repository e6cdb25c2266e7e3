#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "histostack/image.hpp"

namespace histostack {

// Raised when an image has zero marginal entropy, which leaves NMI undefined.
class DegenerateEntropyError : public std::domain_error {
public:
    DegenerateEntropyError() : std::domain_error("degenerate entropy") {}
};

// Equal-width bin of an intensity on [0,1].
int intensity_bin(double v, int bins);

class JointHistogram {
public:
    explicit JointHistogram(int bins = 64);

    void add(double a, double b) { ++counts_[static_cast<std::size_t>(intensity_bin(a, bins_)) * bins_ + intensity_bin(b, bins_)]; ++total_; }

    int bins() const { return bins_; }
    std::uint64_t total() const { return total_; }
    std::uint64_t count(int bin_a, int bin_b) const { return counts_[static_cast<std::size_t>(bin_a) * bins_ + bin_b]; }

    double entropy_a() const;
    double entropy_b() const;
    double joint_entropy() const;

    // (H(A) + H(B)) / H(A,B); throws DegenerateEntropyError if either marginal is constant.
    double nmi() const;

private:
    int bins_;
    std::uint64_t total_ = 0;
    std::vector<std::uint64_t> counts_;
};

// NMI over every voxel.
template <int D>
double nmi(const Image<D>& a, const Image<D>& b, int bins = 64);

// NMI over voxels where support[i] != 0 (all voxels if support is empty).
double nmi(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> support, int bins = 64);

// 2|A n B| / (|A| + |B|); two empty masks score 1.
template <int D>
double dice(const Mask<D>& a, const Mask<D>& b);

// 2N feature vectors; samples 2k and 2k+1 form a positive pair.
class FeatureBatch {
public:
    FeatureBatch(std::vector<std::vector<double>> vectors, double temperature);

    std::size_t size() const { return vectors_.size(); }
    std::size_t pairs() const { return vectors_.size() / 2; }
    std::size_t dimension() const { return vectors_.front().size(); }
    double temperature() const { return temperature_; }
    const std::vector<std::vector<double>>& vectors() const { return vectors_; }
    static std::size_t partner(std::size_t i) { return i ^ 1U; }

private:
    std::vector<std::vector<double>> vectors_;
    double temperature_;
};

struct InfoNceResult {
    double loss = 0.0;                // mean over all 2N anchors
    std::vector<double> per_anchor;
    std::size_t negatives_per_anchor = 0;
};

// NT-Xent with cosine similarity: the denominator runs over every k != i.
InfoNceResult info_nce(const FeatureBatch& batch);

// d loss / d z_i for the raw (unnormalized) vectors.
std::vector<std::vector<double>> info_nce_gradient(const FeatureBatch& batch);

// One row per sample, comma separated, pair-adjacent ordering. A header row
// is skipped when its first field is not numeric.
FeatureBatch load_feature_batch_csv(const std::filesystem::path& path, double temperature);

struct DiceSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation; 0 for fewer than two scores
    std::size_t count = 0;
};

DiceSummary summarize_dice(std::string name, std::span<const double> scores);

// "model vs gt*: mean 0.4948, SD 0.2512"
std::string format_dice_row(const DiceSummary& row);

}  // namespace histostack
