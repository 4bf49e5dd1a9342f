#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "memadapt/label_map.hpp"
#include "memadapt/rng.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

// Land-cover classes of the synthetic benchmark.
enum LandCover : int32_t {
    kLowVegetation = 0,
    kImpervious = 1,
    kBuilding = 2,
    kTree = 3,
    kCar = 4,
    kClutter = 5,
};
inline constexpr int kNumClasses = 6;
const std::vector<std::string>& class_names();

/// Planar 3xHxW 8-bit image.
struct Raster {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;

    Raster() = default;
    Raster(int h, int w) : height(h), width(w), data(3u * static_cast<size_t>(h) * w, 0) {}
    uint8_t at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    uint8_t& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    bool operator==(const Raster&) const = default;
};

struct Tile {
    Raster image;
    LabelMap label;
};

/// Rendering recipe for one domain: the same layouts drawn under a
/// different sensor/illumination/resolution model, optionally over shifted
/// geography (layout_seed_offset).
struct DomainSpec {
    std::array<int, 3> channel_permutation{0, 1, 2};
    std::array<double, 3> gain{1.0, 1.0, 1.0};
    std::array<double, 3> bias{0.0, 0.0, 0.0};
    double blur_sigma = 0.0;
    double noise_sigma = 0.0;
    int64_t layout_seed_offset = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static DomainSpec from_json(const nlohmann::json& j);
};

DomainSpec default_domain_a();
DomainSpec default_domain_b();

/// Procedural tiles: rectangles for buildings, blobs for trees, ribbons for
/// impervious surface, small rectangles for cars, speckle for clutter over a
/// low-vegetation background. Pure function of its arguments; the label map
/// depends only on the effective layout seed, so two domains rendered from
/// the same seed share labels pixel for pixel.
std::vector<Tile> generate_tiles(uint64_t layout_seed, const DomainSpec& domain, int n_tiles,
                                 int tile_size);

/// Sliding-window patches in row-major order; the final window per axis is
/// aligned to the image edge. Returns top-left coordinates.
std::vector<std::pair<int, int>> tile_crop_coords(int height, int width, int size, int stride);
std::vector<Tile> tile_crop(const Raster& image, const LabelMap& label, int size, int stride);

// Exact geometric transforms (used by the affine augmentation and tests).
Tile flip_horizontal(const Tile& tile);
Tile flip_vertical(const Tile& tile);
Tile rotate90(const Tile& tile, int quarter_turns);
/// Shift in pixels, isotropic scale, rotation in degrees about the center.
/// Image resamples bilinearly, labels nearest; out-of-frame becomes void/0.
Tile shift_scale_rotate(const Tile& tile, double shift_y, double shift_x, double scale,
                        double angle_deg);

/// Random flips, quarter-turn rotation, and shift-scale-rotate; geometry is
/// applied identically to image and label.
Tile augment_affine(const Tile& tile, Rng& rng);

// Photometric perturbations; labels untouched, values clamped to 8 bits.
Raster adjust_brightness(const Raster& image, double delta);
Raster adjust_contrast(const Raster& image, double factor);
Raster gaussian_blur(const Raster& image, double sigma);
Raster gaussian_noise(const Raster& image, double sigma, Rng& rng);

struct ColorAugmentParams {
    double max_noise_sigma = 8.0;
    double max_blur_sigma = 1.5;
    double max_brightness = 20.0;
    double max_contrast_delta = 0.2;
};

Raster augment_colorspace(const Raster& image, Rng& rng, const ColorAugmentParams& params = {});

/// Scales 8-bit pixels into [-1,1] as a [3,H,W] tensor.
Tensor image_to_tensor(const Raster& image);
/// Stacks per-sample [3,H,W] tensors into one [N,3,H,W] batch.
Tensor batch_images(const std::vector<const Raster*>& images);

// PPM (P6) / PGM (P5) raster files with strict parsing.
void write_ppm(const std::string& path, const Raster& image);
Raster read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& label);
LabelMap read_pgm(const std::string& path);

/// Two-domain dataset in a directory: images/*.ppm, labels/*.pgm, and a
/// manifest recording splits, domains, class names, and generator
/// parameters.
struct Dataset {
    int num_classes = kNumClasses;
    int tile_size = 0;
    std::vector<std::string> classes;
    std::map<std::string, std::map<std::string, std::vector<Tile>>> tiles;  // domain -> split -> tiles
    nlohmann::json manifest;

    const std::vector<Tile>& split(const std::string& domain, const std::string& split_name) const;
};

struct GenerateOptions {
    uint64_t seed = 1;
    int train_tiles = 200;
    int val_tiles = 48;
    int test_tiles = 48;
    int tile_size = 32;
    DomainSpec domain_a = default_domain_a();
    DomainSpec domain_b = default_domain_b();
};

/// Writes a complete dataset directory. Refuses to touch an existing
/// non-empty directory unless force is set.
void generate_dataset(const std::string& out_dir, const GenerateOptions& options, bool force = false);

Dataset load_dataset(const std::string& dir);

}  // namespace memadapt
