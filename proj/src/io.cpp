#include "histostack/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <png.h>
#include <tiffio.h>

#include <json.hpp>

namespace histostack {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string to_string(Modality m) {
    switch (m) {
        case Modality::blockface: return "blockface";
        case Modality::backlit: return "backlit";
        case Modality::ish: return "ish";
        case Modality::mask: return "mask";
    }
    return "backlit";
}

Modality parse_modality(const std::string& s) {
    if (s == "blockface") return Modality::blockface;
    if (s == "backlit") return Modality::backlit;
    if (s == "ish") return Modality::ish;
    if (s == "mask") return Modality::mask;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

void StackManifest::validate() const {
    for (double s : spacing_um)
        if (!(s > 0.0)) throw std::invalid_argument("manifest spacing must be positive");
    if (!(slice_thickness_um > 0.0)) throw std::invalid_argument("manifest slice thickness must be positive");
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("manifest bit depth must be 8 or 16");
    std::map<Modality, int> last;
    for (const auto& e : sections) {
        auto it = last.find(e.modality);
        if (it != last.end() && e.index <= it->second)
            throw std::invalid_argument("manifest " + to_string(e.modality) + " indices must be strictly increasing");
        last[e.modality] = e.index;
    }
    const auto bl = entries(Modality::backlit);
    if (bl.empty()) return;
    std::string missing;
    for (const auto& e : entries(Modality::ish)) {
        const bool found = std::any_of(bl.begin(), bl.end(), [&](const ManifestEntry& b) { return b.index == e.index; });
        if (!found) missing += (missing.empty() ? "" : ", ") + std::to_string(e.index);
    }
    if (!missing.empty()) throw std::invalid_argument("ISH sections without a backlit counterpart: " + missing);
}

std::vector<ManifestEntry> StackManifest::entries(Modality m) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : sections)
        if (e.modality == m) out.push_back(e);
    return out;
}

fs::path StackManifest::resolve(const ManifestEntry& e) const { return e.path.is_absolute() ? e.path : base_dir / e.path; }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

namespace {

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

template <std::size_t N>
std::array<double, N> number_array(const json& j, const char* key, const fs::path& path) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != N)
        throw std::runtime_error(path.string() + ": '" + key + "' must be an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t k = 0; k < N; ++k) out[k] = j[key][k].get<double>();
    return out;
}

std::uint32_t swap32(std::uint32_t u) {
    return (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
}

void write_f32(std::ofstream& out, const std::vector<float>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    } else {
        for (float f : v) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = swap32(u);
            out.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
}

std::vector<float> read_f32(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<float> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw std::runtime_error(path.string() + ": expected " + std::to_string(count) + " float32 values");
    if constexpr (std::endian::native != std::endian::little)
        for (float& f : v) f = std::bit_cast<float>(swap32(std::bit_cast<std::uint32_t>(f)));
    return v;
}

fs::path data_path(const fs::path& header) {
    fs::path p = header;
    p.replace_extension(".raw");
    return p;
}

bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

// Interleaved samples of one image, as read from disk.
struct RawPixels {
    int width = 0, height = 0, channels = 1, bit_depth = 8;
    std::vector<std::uint16_t> samples;
};

RawPixels read_png_raw(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
    const bool sixteen = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
    const bool colour = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    RawPixels r;
    r.width = static_cast<int>(img.width);
    r.height = static_cast<int>(img.height);
    r.channels = colour ? 3 : 1;
    r.bit_depth = sixteen ? 16 : 8;
    img.format = sixteen ? (colour ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y) : (colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);
    const std::size_t n = PNG_IMAGE_SIZE(img);
    std::vector<std::uint8_t> buf(n);
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
    }
    const std::size_t count = static_cast<std::size_t>(r.width) * r.height * r.channels;
    r.samples.resize(count);
    if (sixteen) {
        std::memcpy(r.samples.data(), buf.data(), count * 2);
    } else {
        for (std::size_t i = 0; i < count; ++i) r.samples[i] = buf[i];
    }
    return r;
}

RawPixels read_tiff_raw(const fs::path& path) {
    TIFFSetWarningHandler(nullptr);
    TIFF* tif = TIFFOpen(path.string().c_str(), "r");
    if (!tif) throw std::runtime_error("cannot read TIFF " + path.string());
    std::uint32_t w = 0, h = 0;
    std::uint16_t bps = 8, spp = 1, planar = PLANARCONFIG_CONTIG;
    TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &bps);
    TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(tif, TIFFTAG_PLANARCONFIG, &planar);
    if ((bps != 8 && bps != 16) || planar != PLANARCONFIG_CONTIG || (spp != 1 && spp != 3 && spp != 4)) {
        TIFFClose(tif);
        throw std::runtime_error("unsupported TIFF layout in " + path.string() + " (need 8/16-bit gray or RGB)");
    }
    RawPixels r;
    r.width = static_cast<int>(w);
    r.height = static_cast<int>(h);
    r.channels = spp == 1 ? 1 : 3;
    r.bit_depth = bps;
    r.samples.resize(static_cast<std::size_t>(w) * h * r.channels);
    std::vector<std::uint8_t> line(static_cast<std::size_t>(TIFFScanlineSize(tif)));
    for (std::uint32_t y = 0; y < h; ++y) {
        if (TIFFReadScanline(tif, line.data(), y, 0) < 0) {
            TIFFClose(tif);
            throw std::runtime_error("cannot decode TIFF " + path.string());
        }
        for (std::uint32_t x = 0; x < w; ++x)
            for (int c = 0; c < r.channels; ++c) {
                const std::size_t s = static_cast<std::size_t>(x) * spp + c;
                std::uint16_t v = 0;
                if (bps == 8)
                    v = line[s];
                else
                    std::memcpy(&v, line.data() + 2 * s, 2);
                r.samples[(static_cast<std::size_t>(y) * w + x) * r.channels + c] = v;
            }
    }
    TIFFClose(tif);
    return r;
}

}  // namespace

LoadedImage read_image(const fs::path& path, const std::array<double, 2>& spacing_um, bool invert) {
    RawPixels raw;
    if (has_extension(path, {".png"}))
        raw = read_png_raw(path);
    else if (has_extension(path, {".tif", ".tiff"}))
        raw = read_tiff_raw(path);
    else
        throw std::runtime_error("unsupported image format: " + path.string());
    const double maxval = raw.bit_depth == 16 ? 65535.0 : 255.0;
    Geometry<2> g{{raw.width, raw.height}, spacing_um};
    std::vector<double> v(g.count());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (raw.channels == 1) {
            const double x = raw.samples[i] / maxval;
            v[i] = invert ? 1.0 - x : x;
        } else {
            const double mean = (raw.samples[3 * i] + raw.samples[3 * i + 1] + raw.samples[3 * i + 2]) / (3.0 * maxval);
            const double od = -std::log10(std::max(mean, 1.0 / maxval)) / std::log10(maxval);
            v[i] = std::clamp(od, 0.0, 1.0);
        }
    }
    return {Image2D(g, std::move(v)), raw.bit_depth};
}

void write_png(const fs::path& path, const Image2D& image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PNG bit depth must be 8 or 16");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    int ok = 0;
    if (bit_depth == 16) {
        img.format = PNG_FORMAT_LINEAR_Y;
        std::vector<std::uint16_t> buf(image.count());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<std::uint16_t>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 65535.0));
        ok = png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr);
    } else {
        img.format = PNG_FORMAT_GRAY;
        std::vector<std::uint8_t> buf(image.count());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
        ok = png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr);
    }
    if (!ok) throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

Mask<2> read_mask_png(const fs::path& path) {
    const RawPixels raw = read_png_raw(path);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(raw.width) * raw.height);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        bool on = false;
        for (int c = 0; c < raw.channels; ++c) on = on || raw.samples[i * raw.channels + c] != 0;
        bits[i] = on ? 1 : 0;
    }
    return Mask<2>({raw.width, raw.height}, std::move(bits));
}

void write_mask_png(const fs::path& path, const Mask<2>& mask) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(mask.size()[0]);
    img.height = static_cast<png_uint_32>(mask.size()[1]);
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(mask.count());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.bits()[i] ? 255 : 0;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}

StackManifest read_manifest(const fs::path& path) {
    const json j = parse_json_file(path);
    StackManifest m;
    m.base_dir = path.parent_path();
    if (!j.contains("sections") || !j["sections"].is_array())
        throw std::runtime_error(path.string() + ": 'sections' must be an array");
    for (const auto& s : j["sections"])
        m.sections.push_back({s.at("index").get<int>(), parse_modality(s.at("modality").get<std::string>()),
                              fs::path(s.at("path").get<std::string>())});
    m.spacing_um = number_array<2>(j, "spacing_um", path);
    m.slice_thickness_um = j.at("slice_thickness_um").get<double>();
    m.gene = j.value("gene", std::string());
    m.invert = j.value("invert", false);
    m.bit_depth = j.value("bit_depth", 8);
    m.validate();
    return m;
}

void write_manifest(const fs::path& path, const StackManifest& m) {
    json j;
    j["sections"] = json::array();
    for (const auto& e : m.sections)
        j["sections"].push_back({{"index", e.index}, {"modality", to_string(e.modality)}, {"path", e.path.generic_string()}});
    j["spacing_um"] = {m.spacing_um[0], m.spacing_um[1]};
    j["slice_thickness_um"] = m.slice_thickness_um;
    j["gene"] = m.gene;
    j["invert"] = m.invert;
    j["bit_depth"] = m.bit_depth;
    write_text(path, j.dump(2) + "\n");
}

void write_volume(const fs::path& header, const Image3D& volume) {
    const fs::path data = data_path(header);
    json j;
    j["dims"] = {volume.size()[0], volume.size()[1], volume.size()[2]};
    j["spacing_um"] = {volume.spacing()[0], volume.spacing()[1], volume.spacing()[2]};
    j["data_file"] = data.filename().string();
    write_text(header, j.dump(2) + "\n");
    std::vector<float> v(volume.values().begin(), volume.values().end());
    std::ofstream out(data, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + data.string());
    write_f32(out, v);
}

Image3D read_volume(const fs::path& header) {
    const json j = parse_json_file(header);
    const auto dims = number_array<3>(j, "dims", header);
    const auto spacing = number_array<3>(j, "spacing_um", header);
    const Geometry<3> g{{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])}, spacing};
    g.validate();
    const fs::path data = header.parent_path() / j.value("data_file", data_path(header).filename().string());
    const auto f = read_f32(data, g.count());
    std::vector<double> v(f.begin(), f.end());
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
    return Image3D(g, std::move(v));
}

void write_mask_volume(const fs::path& header, const Mask<3>& mask, const std::array<double, 3>& spacing_um) {
    std::vector<double> v(mask.bits().begin(), mask.bits().end());
    write_volume(header, Image3D(Geometry<3>{mask.size(), spacing_um}, std::move(v)));
}

void write_affine(const fs::path& path, const Affine& a) {
    const int d = a.dim();
    std::string s = "dim " + std::to_string(d) + "\n";
    char buf[32];
    auto line = [&](auto&& values) {
        for (int k = 0; k < static_cast<int>(values.size()); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", values[k]);
            s += (k ? " " : "") + std::string(buf);
        }
        s += "\n";
    };
    std::vector<double> m;
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) m.push_back(a.linear()[r][c]);
    line(m);
    line(std::vector<double>(a.translation().begin(), a.translation().begin() + d));
    line(std::vector<double>(a.center().begin(), a.center().begin() + d));
    write_text(path, s);
}

Affine read_affine(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string word;
    int d = 0;
    if (!(in >> word >> d) || word != "dim" || (d != 2 && d != 3))
        throw std::runtime_error(path.string() + ": expected 'dim 2' or 'dim 3'");
    Matrix3 l = identity_matrix();
    Point t{}, c{};
    auto get = [&](double& x) {
        if (!(in >> x)) throw std::runtime_error(path.string() + ": truncated affine file");
    };
    for (int r = 0; r < d; ++r)
        for (int k = 0; k < d; ++k) get(l[r][k]);
    for (int k = 0; k < d; ++k) get(t[k]);
    for (int k = 0; k < d; ++k) get(c[k]);
    return Affine(d, l, t, c);
}

void write_field(const fs::path& header, const DisplacementField& f) {
    const fs::path data = data_path(header);
    json j;
    const int d = f.dim();
    j["dims"] = json::array();
    j["spacing_um"] = json::array();
    for (int k = 0; k < d; ++k) {
        j["dims"].push_back(f.dims()[k]);
        j["spacing_um"].push_back(f.spacing()[k]);
    }
    j["components"] = d == 2 ? "xy" : "xyz";
    j["data_file"] = data.filename().string();
    write_text(header, j.dump(2) + "\n");
    std::vector<float> v(f.count() * d);
    for (std::size_t i = 0; i < f.count(); ++i)
        for (int k = 0; k < d; ++k) v[i * d + k] = static_cast<float>(f.component(k)[i]);
    std::ofstream out(data, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + data.string());
    write_f32(out, v);
}

DisplacementField read_field(const fs::path& header) {
    const json j = parse_json_file(header);
    const std::string comps = j.at("components").get<std::string>();
    const int d = comps == "xy" ? 2 : comps == "xyz" ? 3 : 0;
    if (d == 0) throw std::runtime_error(header.string() + ": components must be 'xy' or 'xyz'");
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    if (j.at("dims").size() != static_cast<std::size_t>(d) || j.at("spacing_um").size() != static_cast<std::size_t>(d))
        throw std::runtime_error(header.string() + ": dims/spacing do not match the component count");
    for (int k = 0; k < d; ++k) {
        dims[k] = j["dims"][k].get<int>();
        spacing[k] = j["spacing_um"][k].get<double>();
    }
    const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const fs::path data = header.parent_path() / j.value("data_file", data_path(header).filename().string());
    const auto v = read_f32(data, count * d);
    std::vector<std::vector<double>> c(d, std::vector<double>(count));
    for (std::size_t i = 0; i < count; ++i)
        for (int k = 0; k < d; ++k) c[k][i] = v[i * d + k];
    return DisplacementField(d, dims, spacing, std::move(c));
}

void write_chain(const fs::path& path, const TransformChain& chain) {
    json j;
    j["dim"] = chain.dim();
    j["elements"] = json::array();
    const std::string stem = path.stem().string();
    int k = 0;
    for (const auto& e : chain.elements()) {
        if (const auto* a = std::get_if<Affine>(&e)) {
            const std::string name = stem + "." + std::to_string(k) + ".affine";
            write_affine(path.parent_path() / name, *a);
            j["elements"].push_back({{"type", "affine"}, {"file", name}});
        } else {
            const std::string name = stem + "." + std::to_string(k) + ".field.json";
            write_field(path.parent_path() / name, std::get<DisplacementField>(e));
            j["elements"].push_back({{"type", "field"}, {"file", name}});
        }
        ++k;
    }
    write_text(path, j.dump(2) + "\n");
}

TransformChain read_chain(const fs::path& path) {
    const json j = parse_json_file(path);
    TransformChain chain(j.at("dim").get<int>());
    for (const auto& e : j.at("elements")) {
        const fs::path f = path.parent_path() / e.at("file").get<std::string>();
        const std::string type = e.at("type").get<std::string>();
        if (type == "affine")
            chain.append(read_affine(f));
        else if (type == "field")
            chain.append(read_field(f));
        else
            throw std::runtime_error(path.string() + ": unknown element type '" + type + "'");
    }
    return chain;
}

}  // namespace histostack
