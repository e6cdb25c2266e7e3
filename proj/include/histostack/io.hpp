#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

enum class Modality { blockface, backlit, ish, mask };
std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

struct ManifestEntry {
    int index = 0;
    Modality modality = Modality::backlit;
    std::filesystem::path path;  // relative paths resolve against the manifest's directory
};

struct StackManifest {
    std::vector<ManifestEntry> sections;
    std::array<double, 2> spacing_um{1.0, 1.0};
    double slice_thickness_um = 1.0;
    std::string gene;
    bool invert = false;  // grayscale images with dark tissue on a bright slide
    int bit_depth = 8;    // recorded on load
    std::filesystem::path base_dir;

    // Indices strictly increasing per modality; every ISH entry has a backlit entry.
    // The backlit check applies only when the manifest lists backlit sections.
    void validate() const;
    std::vector<ManifestEntry> entries(Modality m) const;
    std::filesystem::path resolve(const ManifestEntry& e) const;
};

StackManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const StackManifest& manifest);

struct LoadedImage {
    Image2D image;
    int bit_depth = 8;
};

// 8/16-bit PNG or TIFF, normalised to [0,1]. Colour is converted to optical
// density (dark stain -> high value); grayscale is inverted when asked.
LoadedImage read_image(const std::filesystem::path& path, const std::array<double, 2>& spacing_um, bool invert = false);
void write_png(const std::filesystem::path& path, const Image2D& image, int bit_depth = 16);

Mask<2> read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask<2>& mask);

// Raw little-endian float32 next to a JSON header {dims, spacing_um, data_file}.
void write_volume(const std::filesystem::path& header, const Image3D& volume);
Image3D read_volume(const std::filesystem::path& header);
void write_mask_volume(const std::filesystem::path& header, const Mask<3>& mask, const std::array<double, 3>& spacing_um);

// "dim d", then the d x d matrix row-major, translation and centre, one per line.
void write_affine(const std::filesystem::path& path, const Affine& a);
Affine read_affine(const std::filesystem::path& path);

// JSON header {dims, spacing_um, components, data_file}; float32 vectors interleaved, x-fastest.
void write_field(const std::filesystem::path& header, const DisplacementField& f);
DisplacementField read_field(const std::filesystem::path& header);

// JSON {dim, elements:[{type, file}]}; element files are written next to it as <stem>.<k>.affine / .field.json.
void write_chain(const std::filesystem::path& path, const TransformChain& chain);
TransformChain read_chain(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace histostack
