#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

struct Landmark {
    std::string name;
    std::vector<Point> points;  // 1 or 2 physical points, µm
};

struct LandmarkSet {
    std::string annotator;
    std::vector<Landmark> landmarks;

    // Names unique, 1 or 2 finite points each.
    void validate() const;
    std::size_t point_count() const;
    const Landmark* find(const std::string& name) const;
};

// Seven named landmarks, ten points, placed at fixed fractions of the volume extent.
LandmarkSet canonical_landmarks(const Geometry<3>& volume, const std::string& annotator = "template");

enum class MapDirection { forward, inverse };

struct MappedLandmarks {
    LandmarkSet set;
    std::vector<std::string> out_of_bounds;  // landmark names with a point outside `bounds`
};

// forward: p -> chain(p). inverse: solves chain(q) = p element by element,
// using fixed-point inversion for fields.
MappedLandmarks map_landmarks(const LandmarkSet& landmarks, const TransformChain& chain,
                              MapDirection direction = MapDirection::forward, const Geometry<3>* bounds = nullptr);

// Per landmark of a, in a's order: mean point distance in units of 100 µm.
std::vector<double> pairwise_displacement(const LandmarkSet& a, const LandmarkSet& b);

enum class ComparisonMode { manual_best, auto_median };
std::string to_string(ComparisonMode mode);

struct DisplacementEntry {
    std::string landmark;
    ComparisonMode mode;
    double displacement_100um;
};

struct DisplacementReport {
    std::vector<DisplacementEntry> manual_best;  // min over annotator pairs, ascending
    std::vector<DisplacementEntry> auto_median;  // median over annotators vs auto, ascending
};

DisplacementReport agreement_report(const std::vector<LandmarkSet>& manual, const LandmarkSet& automatic);

// CSV header: name,point_index,x_um,y_um,z_um,annotator
std::vector<LandmarkSet> read_landmarks_csv(const std::filesystem::path& path);
void write_landmarks_csv(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets);

std::string report_json(const DisplacementReport& report);
std::string report_table(const DisplacementReport& report);

}  // namespace histostack
