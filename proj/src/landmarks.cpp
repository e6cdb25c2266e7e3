#include "histostack/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace histostack {

void LandmarkSet::validate() const {
    std::set<std::string> names;
    for (const auto& lm : landmarks) {
        if (!names.insert(lm.name).second) throw std::invalid_argument("duplicate landmark name '" + lm.name + "'");
        if (lm.points.empty() || lm.points.size() > 2)
            throw std::invalid_argument("landmark '" + lm.name + "' must have 1 or 2 points");
        for (const auto& p : lm.points)
            for (double c : p)
                if (!std::isfinite(c)) throw std::invalid_argument("landmark '" + lm.name + "' has a non-finite point");
    }
}

std::size_t LandmarkSet::point_count() const {
    std::size_t n = 0;
    for (const auto& lm : landmarks) n += lm.points.size();
    return n;
}

const Landmark* LandmarkSet::find(const std::string& name) const {
    for (const auto& lm : landmarks)
        if (lm.name == name) return &lm;
    return nullptr;
}

LandmarkSet canonical_landmarks(const Geometry<3>& volume, const std::string& annotator) {
    auto at = [&](double fx, double fy, double fz) {
        return Point{fx * (volume.size[0] - 1) * volume.spacing[0], fy * (volume.size[1] - 1) * volume.spacing[1],
                     fz * (volume.size[2] - 1) * volume.spacing[2]};
    };
    LandmarkSet s;
    s.annotator = annotator;
    s.landmarks = {
        {"anterior commissure", {at(0.50, 0.45, 0.35)}},
        {"anterior thalamus", {at(0.50, 0.50, 0.50)}},
        {"midline", {at(0.50, 0.60, 0.45)}},
        {"CC", {at(0.50, 0.36, 0.50)}},
        {"MB", {at(0.45, 0.64, 0.62), at(0.55, 0.64, 0.62)}},
        {"STN", {at(0.42, 0.58, 0.58), at(0.58, 0.58, 0.58)}},
        {"intersection ALIC/AC", {at(0.38, 0.45, 0.36), at(0.62, 0.45, 0.36)}},
    };
    return s;
}

namespace {

Point inverse_apply(const TransformChain& chain, const Point& p) {
    Point q = p;
    const auto& el = chain.elements();
    for (auto it = el.rbegin(); it != el.rend(); ++it) {
        if (const auto* a = std::get_if<Affine>(&*it))
            q = invert_affine(*a).apply(q);
        else
            q = invert_point(std::get<DisplacementField>(*it), q).point;
    }
    return q;
}

bool in_bounds(const Geometry<3>& g, const Point& p) {
    for (int d = 0; d < 3; ++d) {
        const double hi = (g.size[d] - 1) * g.spacing[d];
        if (p[d] < -1e-9 || p[d] > hi + 1e-9) return false;
    }
    return true;
}

double distance(const Point& a, const Point& b) {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return std::sqrt(s);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void sort_ascending(std::vector<DisplacementEntry>& v) {
    std::stable_sort(v.begin(), v.end(), [](const DisplacementEntry& a, const DisplacementEntry& b) {
        return a.displacement_100um < b.displacement_100um;
    });
}

}  // namespace

MappedLandmarks map_landmarks(const LandmarkSet& landmarks, const TransformChain& chain, MapDirection direction,
                              const Geometry<3>* bounds) {
    if (chain.dim() != 3) throw std::invalid_argument("landmark mapping needs a 3D chain");
    MappedLandmarks out;
    out.set = landmarks;
    for (auto& lm : out.set.landmarks) {
        bool flagged = false;
        for (auto& p : lm.points) {
            p = direction == MapDirection::forward ? chain.apply(p) : inverse_apply(chain, p);
            if (bounds && !in_bounds(*bounds, p)) flagged = true;
        }
        if (flagged) out.out_of_bounds.push_back(lm.name);
    }
    return out;
}

std::vector<double> pairwise_displacement(const LandmarkSet& a, const LandmarkSet& b) {
    if (a.landmarks.size() != b.landmarks.size()) throw std::invalid_argument("landmark sets differ in size");
    std::vector<double> out;
    out.reserve(a.landmarks.size());
    for (const auto& la : a.landmarks) {
        const Landmark* lb = b.find(la.name);
        if (!lb) throw std::invalid_argument("landmark '" + la.name + "' missing from set " + b.annotator);
        if (lb->points.size() != la.points.size())
            throw std::invalid_argument("landmark '" + la.name + "' has different point counts");
        double acc = 0.0;
        for (std::size_t k = 0; k < la.points.size(); ++k) acc += distance(la.points[k], lb->points[k]);
        out.push_back(acc / static_cast<double>(la.points.size()) / 100.0);
    }
    return out;
}

std::string to_string(ComparisonMode mode) {
    return mode == ComparisonMode::manual_best ? "manual-vs-manual best" : "manual-vs-auto median";
}

DisplacementReport agreement_report(const std::vector<LandmarkSet>& manual, const LandmarkSet& automatic) {
    if (manual.size() < 2) throw std::invalid_argument("agreement report needs at least 2 manual sets");
    const auto& names = manual.front().landmarks;
    std::vector<std::vector<double>> to_auto;
    for (const auto& m : manual) to_auto.push_back(pairwise_displacement(m, automatic));
    std::vector<double> best(names.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < manual.size(); ++i)
        for (std::size_t k = i + 1; k < manual.size(); ++k) {
            const auto dik = pairwise_displacement(manual[i], manual[k]);
            // Reorder into the first set's landmark order.
            for (std::size_t l = 0; l < names.size(); ++l) {
                std::size_t pos = 0;
                while (manual[i].landmarks[pos].name != names[l].name) ++pos;
                best[l] = std::min(best[l], dik[pos]);
            }
        }
    DisplacementReport r;
    for (std::size_t l = 0; l < names.size(); ++l) {
        std::vector<double> per;
        for (std::size_t i = 0; i < manual.size(); ++i) {
            std::size_t pos = 0;
            while (manual[i].landmarks[pos].name != names[l].name) ++pos;
            per.push_back(to_auto[i][pos]);
        }
        r.manual_best.push_back({names[l].name, ComparisonMode::manual_best, best[l]});
        r.auto_median.push_back({names[l].name, ComparisonMode::auto_median, median(per)});
    }
    sort_ascending(r.manual_best);
    sort_ascending(r.auto_median);
    return r;
}

std::vector<LandmarkSet> read_landmarks_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open landmark file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty landmark file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "name,point_index,x_um,y_um,z_um,annotator")
        throw std::runtime_error("unexpected landmark header in " + path.string());
    std::vector<LandmarkSet> sets;
    std::map<std::string, std::size_t> set_of;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 6) throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": expected 6 fields");
        const std::string& annotator = f[5];
        auto [it, inserted] = set_of.try_emplace(annotator, sets.size());
        if (inserted) sets.push_back({annotator, {}});
        auto& set = sets[it->second];
        Landmark* lm = nullptr;
        for (auto& l : set.landmarks)
            if (l.name == f[0]) lm = &l;
        if (!lm) {
            set.landmarks.push_back({f[0], {}});
            lm = &set.landmarks.back();
        }
        const int index = std::stoi(f[1]);
        if (index != static_cast<int>(lm->points.size()))
            throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": point indices must count up from 0");
        lm->points.push_back({std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    }
    for (const auto& s : sets) s.validate();
    return sets;
}

void write_landmarks_csv(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write landmark file " + path.string());
    out << "name,point_index,x_um,y_um,z_um,annotator\n";
    char buf[128];
    for (const auto& s : sets)
        for (const auto& lm : s.landmarks)
            for (std::size_t k = 0; k < lm.points.size(); ++k) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", lm.points[k][0], lm.points[k][1], lm.points[k][2]);
                out << lm.name << ',' << k << ',' << buf << ',' << s.annotator << '\n';
            }
}

std::string report_json(const DisplacementReport& report) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto* rows : {&report.manual_best, &report.auto_median})
        for (const auto& e : *rows)
            arr.push_back({{"landmark", e.landmark}, {"mode", to_string(e.mode)}, {"displacement_100um", e.displacement_100um}});
    return arr.dump(2) + "\n";
}

std::string report_table(const DisplacementReport& report) {
    std::string out;
    char buf[160];
    for (const auto* rows : {&report.manual_best, &report.auto_median}) {
        if (rows->empty()) continue;
        out += to_string(rows->front().mode) + " (100 um)\n";
        for (const auto& e : *rows) {
            std::snprintf(buf, sizeof buf, "  %-24s %8.4f\n", e.landmark.c_str(), e.displacement_100um);
            out += buf;
        }
    }
    return out;
}

}  // namespace histostack
