#include "memadapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace memadapt {

const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {"low_veg", "impervious", "building",
                                                   "tree",    "car",        "clutter"};
    return names;
}

void DomainSpec::validate() const {
    std::array<bool, 3> seen{false, false, false};
    for (int p : channel_permutation) {
        if (p < 0 || p > 2 || seen[static_cast<size_t>(p)]) {
            throw std::invalid_argument("domain spec: channel_permutation must permute {0,1,2}");
        }
        seen[static_cast<size_t>(p)] = true;
    }
    for (double g : gain)
        if (g <= 0) throw std::invalid_argument("domain spec: gain must be positive");
    if (blur_sigma < 0 || noise_sigma < 0) {
        throw std::invalid_argument("domain spec: sigmas must be nonnegative");
    }
}

nlohmann::json DomainSpec::to_json() const {
    return {{"channel_permutation", channel_permutation},
            {"gain", gain},
            {"bias", bias},
            {"blur_sigma", blur_sigma},
            {"noise_sigma", noise_sigma},
            {"layout_seed_offset", layout_seed_offset}};
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
    DomainSpec d;
    for (const auto& [key, value] : j.items()) {
        if (key == "channel_permutation")
            d.channel_permutation = value.get<std::array<int, 3>>();
        else if (key == "gain")
            d.gain = value.get<std::array<double, 3>>();
        else if (key == "bias")
            d.bias = value.get<std::array<double, 3>>();
        else if (key == "blur_sigma")
            d.blur_sigma = value.get<double>();
        else if (key == "noise_sigma")
            d.noise_sigma = value.get<double>();
        else if (key == "layout_seed_offset")
            d.layout_seed_offset = value.get<int64_t>();
        else
            throw std::invalid_argument("domain spec: unknown key '" + key + "'");
    }
    d.validate();
    return d;
}

DomainSpec default_domain_a() {
    DomainSpec d;
    d.blur_sigma = 0.4;
    d.noise_sigma = 3.0;
    return d;
}

DomainSpec default_domain_b() {
    DomainSpec d;
    d.gain = {0.78, 1.16, 0.88};
    d.bias = {24.0, -14.0, 10.0};
    d.blur_sigma = 1.1;
    d.noise_sigma = 6.0;
    d.layout_seed_offset = 104729;
    return d;
}

namespace {

struct FloatImage {
    int height = 0, width = 0;
    std::vector<double> data;  // planar 3xHxW
    FloatImage(int h, int w) : height(h), width(w), data(3u * static_cast<size_t>(h) * w, 0.0) {}
    double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

constexpr std::array<std::array<double, 3>, kNumClasses> kClassColors = {{
    {95, 150, 70},    // low vegetation
    {128, 128, 132},  // impervious surface
    {185, 92, 70},    // building
    {40, 100, 45},    // tree
    {210, 205, 60},   // car
    {200, 60, 200},   // clutter
}};

void draw_rect(LabelMap& label, int y0, int x0, int h, int w, int32_t cls) {
    for (int y = std::max(0, y0); y < std::min(label.height, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(label.width, x0 + w); ++x) label.at(y, x) = cls;
}

void draw_blob(LabelMap& label, double cy, double cx, double radius, double phase, int32_t cls) {
    const int lo_y = std::max(0, static_cast<int>(cy - radius * 1.4));
    const int hi_y = std::min(label.height - 1, static_cast<int>(cy + radius * 1.4));
    const int lo_x = std::max(0, static_cast<int>(cx - radius * 1.4));
    const int hi_x = std::min(label.width - 1, static_cast<int>(cx + radius * 1.4));
    for (int y = lo_y; y <= hi_y; ++y) {
        for (int x = lo_x; x <= hi_x; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double r = std::sqrt(dy * dy + dx * dx);
            const double theta = std::atan2(dy, dx);
            const double wobble = radius * (1.0 + 0.3 * std::sin(3.0 * theta + phase));
            if (r <= wobble) label.at(y, x) = cls;
        }
    }
}

LabelMap generate_layout(Rng& rng, int size) {
    LabelMap label(size, size, kLowVegetation);
    const double area_scale = static_cast<double>(size) * size / (32.0 * 32.0);

    // Impervious ribbons crossing the tile.
    const int n_roads = 1 + (rng.uniform() < 0.35 ? 1 : 0);
    for (int i = 0; i < n_roads; ++i) {
        const int width = rng.uniform_int(4, 7);
        const int pos = rng.uniform_int(0, size - width);
        const int orient = rng.uniform_int(0, 2);
        if (orient == 0) {
            draw_rect(label, pos, 0, width, size, kImpervious);
        } else if (orient == 1) {
            draw_rect(label, 0, pos, size, width, kImpervious);
        } else {
            const int offset = rng.uniform_int(-size / 2, size / 2);
            for (int y = 0; y < size; ++y) {
                const int x0 = y + offset;
                for (int x = std::max(0, x0); x < std::min(size, x0 + width); ++x)
                    label.at(y, x) = kImpervious;
            }
        }
    }

    // Tree blobs.
    const int n_trees = rng.uniform_int(1, std::max(1, static_cast<int>(3 * area_scale)));
    for (int i = 0; i < n_trees; ++i) {
        draw_blob(label, rng.uniform(2, size - 2), rng.uniform(2, size - 2), rng.uniform(3.0, 6.5),
                  rng.uniform(0, 6.283), kTree);
    }

    // Buildings: axis-aligned rectangles drawn over everything so far.
    const int n_buildings = rng.uniform_int(1, std::max(1, static_cast<int>(3 * area_scale)));
    for (int i = 0; i < n_buildings; ++i) {
        const int h = rng.uniform_int(6, 14);
        const int w = rng.uniform_int(6, 14);
        draw_rect(label, rng.uniform_int(0, size - h), rng.uniform_int(0, size - w), h, w, kBuilding);
    }

    // Cars: a couple of small rectangles. Their footprint is capped well
    // below 5% of the tile by construction.
    const int n_cars = rng.uniform_int(0, std::max(1, static_cast<int>(2 * area_scale)));
    for (int i = 0; i < n_cars; ++i) {
        const bool across = rng.uniform() < 0.5;
        const int h = across ? 2 : 4;
        const int w = across ? 4 : 2;
        draw_rect(label, rng.uniform_int(0, size - h), rng.uniform_int(0, size - w), h, w, kCar);
    }

    // Sparse clutter speckle.
    const int n_clutter = rng.uniform_int(0, std::max(1, static_cast<int>(3 * area_scale)));
    for (int i = 0; i < n_clutter; ++i) {
        const int n_px = rng.uniform_int(1, 6);
        const int cy = rng.uniform_int(0, size - 1);
        const int cx = rng.uniform_int(0, size - 1);
        for (int p = 0; p < n_px; ++p) {
            const int y = std::clamp(cy + rng.uniform_int(-1, 1), 0, size - 1);
            const int x = std::clamp(cx + rng.uniform_int(-1, 1), 0, size - 1);
            label.at(y, x) = kClutter;
        }
    }
    return label;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0) return {1.0};
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

void blur_inplace(FloatImage& img, double sigma) {
    if (sigma <= 0) return;
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);
    FloatImage tmp(img.height, img.width);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = std::clamp(x + i, 0, img.width - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * img.at(c, y, xx);
                }
                tmp.at(c, y, x) = acc;
            }
        }
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = std::clamp(y + i, 0, img.height - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(c, yy, x);
                }
                img.at(c, y, x) = acc;
            }
        }
    }
}

uint8_t quantize(double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

Raster render_tile(const LabelMap& label, const DomainSpec& domain, Rng& render_rng) {
    const int size = label.height;
    FloatImage base(size, size);

    // Low-frequency illumination field over a coarse grid.
    const int grid = 5;
    std::vector<double> field(static_cast<size_t>(grid) * grid);
    for (auto& v : field) v = render_rng.uniform(-10.0, 10.0);
    auto field_at = [&](int y, int x) {
        const double fy = static_cast<double>(y) / (size - 1) * (grid - 1);
        const double fx = static_cast<double>(x) / (size - 1) * (grid - 1);
        const int y0 = std::min(grid - 2, static_cast<int>(fy));
        const int x0 = std::min(grid - 2, static_cast<int>(fx));
        const double wy = fy - y0, wx = fx - x0;
        const double a = field[static_cast<size_t>(y0) * grid + x0];
        const double b = field[static_cast<size_t>(y0) * grid + x0 + 1];
        const double c = field[static_cast<size_t>(y0 + 1) * grid + x0];
        const double d = field[static_cast<size_t>(y0 + 1) * grid + x0 + 1];
        return (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy;
    };

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const auto& color = kClassColors[static_cast<size_t>(label.at(y, x))];
            const double shade = render_rng.uniform(-12.0, 12.0) + field_at(y, x);
            for (int c = 0; c < 3; ++c) {
                base.at(c, y, x) = color[static_cast<size_t>(c)] + shade + render_rng.uniform(-6.0, 6.0);
            }
        }
    }

    // Sensor model: channel permutation, per-channel affine, resolution blur,
    // additive noise.
    FloatImage shot(size, size);
    for (int c = 0; c < 3; ++c) {
        const int src = domain.channel_permutation[static_cast<size_t>(c)];
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                shot.at(c, y, x) =
                    domain.gain[static_cast<size_t>(c)] * base.at(src, y, x) + domain.bias[static_cast<size_t>(c)];
    }
    blur_inplace(shot, domain.blur_sigma);
    if (domain.noise_sigma > 0) {
        for (auto& v : shot.data) v += render_rng.normal(0.0, domain.noise_sigma);
    } else {
        // Keep the render stream aligned across domains with different noise
        // settings so layouts stay comparable.
        for (size_t i = 0; i < shot.data.size(); ++i) render_rng.normal();
    }

    Raster out(size, size);
    for (size_t i = 0; i < shot.data.size(); ++i) out.data[i] = quantize(shot.data[i]);
    return out;
}

}  // namespace

std::vector<Tile> generate_tiles(uint64_t layout_seed, const DomainSpec& domain, int n_tiles,
                                 int tile_size) {
    domain.validate();
    if (tile_size < 4 || tile_size % 4 != 0) {
        throw std::invalid_argument("generate_tiles: tile size must be a positive multiple of 4");
    }
    const uint64_t effective = layout_seed + static_cast<uint64_t>(domain.layout_seed_offset);
    std::vector<Tile> tiles;
    tiles.reserve(static_cast<size_t>(n_tiles));
    for (int i = 0; i < n_tiles; ++i) {
        Rng layout_rng(Rng::derive_seed(effective, static_cast<uint64_t>(i)));
        Rng render_rng(Rng::derive_seed(effective ^ 0x52454e44u, static_cast<uint64_t>(i)));
        Tile tile;
        tile.label = generate_layout(layout_rng, tile_size);
        tile.image = render_tile(tile.label, domain, render_rng);
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

std::vector<std::pair<int, int>> tile_crop_coords(int height, int width, int size, int stride) {
    if (stride < 1 || stride > size) throw std::invalid_argument("tile_crop: need 1 <= stride <= size");
    if (height < size || width < size) {
        throw std::invalid_argument("tile_crop: image " + std::to_string(height) + "x" +
                                    std::to_string(width) + " smaller than window " + std::to_string(size));
    }
    std::vector<int> ys, xs;
    for (int y = 0;; y += stride) {
        if (y + size >= height) {
            ys.push_back(height - size);  // align the final window to the edge
            break;
        }
        ys.push_back(y);
    }
    for (int x = 0;; x += stride) {
        if (x + size >= width) {
            xs.push_back(width - size);
            break;
        }
        xs.push_back(x);
    }
    std::vector<std::pair<int, int>> coords;
    for (int y : ys)
        for (int x : xs) coords.emplace_back(y, x);
    return coords;
}

std::vector<Tile> tile_crop(const Raster& image, const LabelMap& label, int size, int stride) {
    if (image.height != label.height || image.width != label.width) {
        throw std::invalid_argument("tile_crop: image and label sizes disagree");
    }
    std::vector<Tile> patches;
    for (const auto& [y0, x0] : tile_crop_coords(image.height, image.width, size, stride)) {
        Tile t;
        t.image = Raster(size, size);
        t.label = LabelMap(size, size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                for (int c = 0; c < 3; ++c) t.image.at(c, y, x) = image.at(c, y0 + y, x0 + x);
                t.label.at(y, x) = label.at(y0 + y, x0 + x);
            }
        }
        patches.push_back(std::move(t));
    }
    return patches;
}

Tile flip_horizontal(const Tile& tile) {
    Tile out = tile;
    const int h = tile.label.height, w = tile.label.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = tile.image.at(c, y, w - 1 - x);
            out.label.at(y, x) = tile.label.at(y, w - 1 - x);
        }
    }
    return out;
}

Tile flip_vertical(const Tile& tile) {
    Tile out = tile;
    const int h = tile.label.height, w = tile.label.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = tile.image.at(c, h - 1 - y, x);
            out.label.at(y, x) = tile.label.at(h - 1 - y, x);
        }
    }
    return out;
}

Tile rotate90(const Tile& tile, int quarter_turns) {
    Tile out = tile;
    int k = ((quarter_turns % 4) + 4) % 4;
    for (int r = 0; r < k; ++r) {
        const int h = out.label.height, w = out.label.width;
        Tile next;
        next.image = Raster(w, h);
        next.label = LabelMap(w, h);
        for (int y = 0; y < w; ++y) {
            for (int x = 0; x < h; ++x) {
                // 90 degrees counterclockwise
                for (int c = 0; c < 3; ++c) next.image.at(c, y, x) = out.image.at(c, x, w - 1 - y);
                next.label.at(y, x) = out.label.at(x, w - 1 - y);
            }
        }
        out = std::move(next);
    }
    return out;
}

Tile shift_scale_rotate(const Tile& tile, double shift_y, double shift_x, double scale,
                        double angle_deg) {
    const int h = tile.label.height, w = tile.label.width;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    const double cos_t = std::cos(rad), sin_t = std::sin(rad);
    if (scale <= 0) throw std::invalid_argument("shift_scale_rotate: scale must be positive");

    Tile out;
    out.image = Raster(h, w);
    out.label = LabelMap(h, w, kVoidLabel);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // invert: undo shift, rotation, scale about the center
            const double dy = y - cy - shift_y;
            const double dx = x - cx - shift_x;
            const double sy = (cos_t * dy - sin_t * dx) / scale + cy;
            const double sx = (sin_t * dy + cos_t * dx) / scale + cx;
            const int ny = static_cast<int>(std::lround(sy));
            const int nx = static_cast<int>(std::lround(sx));
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;  // stays void / black
            out.label.at(y, x) = tile.label.at(ny, nx);
            const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
            const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double fy = std::clamp(sy - y0, 0.0, 1.0), fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double top = tile.image.at(c, y0, x0) * (1 - fx) + tile.image.at(c, y0, x1) * fx;
                const double bot = tile.image.at(c, y1, x0) * (1 - fx) + tile.image.at(c, y1, x1) * fx;
                out.image.at(c, y, x) = quantize(top * (1 - fy) + bot * fy);
            }
        }
    }
    return out;
}

Tile augment_affine(const Tile& tile, Rng& rng) {
    Tile out = tile;
    if (rng.uniform() < 0.5) out = flip_horizontal(out);
    if (rng.uniform() < 0.5) out = flip_vertical(out);
    const int k = rng.uniform_int(0, 3);
    if (k) out = rotate90(out, k);
    if (rng.uniform() < 0.5) {
        const double max_shift = 0.125 * tile.label.height;
        out = shift_scale_rotate(out, rng.uniform(-max_shift, max_shift),
                                 rng.uniform(-max_shift, max_shift), rng.uniform(0.9, 1.1),
                                 rng.uniform(-15.0, 15.0));
    }
    return out;
}

Raster adjust_brightness(const Raster& image, double delta) {
    Raster out = image;
    for (auto& v : out.data) v = quantize(v + delta);
    return out;
}

Raster adjust_contrast(const Raster& image, double factor) {
    Raster out = image;
    for (auto& v : out.data) v = quantize(127.5 + factor * (v - 127.5));
    return out;
}

Raster gaussian_blur(const Raster& image, double sigma) {
    if (sigma <= 0) return image;
    FloatImage tmp(image.height, image.width);
    for (size_t i = 0; i < image.data.size(); ++i) tmp.data[i] = image.data[i];
    blur_inplace(tmp, sigma);
    Raster out(image.height, image.width);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = quantize(tmp.data[i]);
    return out;
}

Raster gaussian_noise(const Raster& image, double sigma, Rng& rng) {
    Raster out = image;
    if (sigma <= 0) return out;
    for (auto& v : out.data) v = quantize(v + rng.normal(0.0, sigma));
    return out;
}

Raster augment_colorspace(const Raster& image, Rng& rng, const ColorAugmentParams& params) {
    Raster out = image;
    if (params.max_brightness > 0 && rng.uniform() < 0.5)
        out = adjust_brightness(out, rng.uniform(-params.max_brightness, params.max_brightness));
    if (params.max_contrast_delta > 0 && rng.uniform() < 0.5)
        out = adjust_contrast(out, rng.uniform(1.0 - params.max_contrast_delta, 1.0 + params.max_contrast_delta));
    if (params.max_blur_sigma > 0 && rng.uniform() < 0.5)
        out = gaussian_blur(out, rng.uniform(0.0, params.max_blur_sigma));
    if (params.max_noise_sigma > 0 && rng.uniform() < 0.5)
        out = gaussian_noise(out, rng.uniform(0.0, params.max_noise_sigma), rng);
    return out;
}

Tensor image_to_tensor(const Raster& image) {
    Tensor t({3, image.height, image.width});
    double* p = t.data();
    for (size_t i = 0; i < image.data.size(); ++i) p[i] = image.data[i] / 127.5 - 1.0;
    return t;
}

Tensor batch_images(const std::vector<const Raster*>& images) {
    if (images.empty()) throw std::invalid_argument("batch_images: empty batch");
    const int h = images[0]->height, w = images[0]->width;
    Tensor t({static_cast<int>(images.size()), 3, h, w});
    double* p = t.data();
    for (const Raster* img : images) {
        if (img->height != h || img->width != w) {
            throw std::invalid_argument("batch_images: mixed tile sizes in batch");
        }
        for (size_t i = 0; i < img->data.size(); ++i) *p++ = img->data[i] / 127.5 - 1.0;
    }
    return t;
}

namespace {

void skip_pnm_whitespace(std::istream& in, const std::string& path) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else if (c == EOF) {
            throw std::runtime_error(path + ": truncated header");
        } else {
            return;
        }
    }
}

void read_pnm_header(std::istream& in, const std::string& path, const std::string& magic, int& h,
                     int& w) {
    std::string m(2, '\0');
    in.read(m.data(), 2);
    if (!in || m != magic) {
        throw std::runtime_error(path + ": bad magic number (expected " + magic + ")");
    }
    skip_pnm_whitespace(in, path);
    in >> w;
    skip_pnm_whitespace(in, path);
    in >> h;
    skip_pnm_whitespace(in, path);
    int maxval = 0;
    in >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error(path + ": unsupported header (need 8-bit, got maxval " +
                                 std::to_string(maxval) + ")");
    }
    in.get();  // single whitespace before payload
}

}  // namespace

void write_ppm(const std::string& path, const Raster& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) f.put(static_cast<char>(image.at(c, y, x)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Raster read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    int h = 0, w = 0;
    read_pnm_header(f, path, "P6", h, w);
    Raster image(h, w);
    std::vector<char> buf(3u * static_cast<size_t>(h) * w);
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw std::runtime_error(path + ": truncated payload at byte offset " +
                                 std::to_string(f.gcount()));
    }
    size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<uint8_t>(buf[i++]);
    return image;
}

void write_pgm(const std::string& path, const LabelMap& label) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P5\n" << label.width << ' ' << label.height << "\n255\n";
    for (int32_t v : label.labels) f.put(static_cast<char>(static_cast<uint8_t>(v)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

LabelMap read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    int h = 0, w = 0;
    read_pnm_header(f, path, "P5", h, w);
    LabelMap label(h, w);
    std::vector<char> buf(static_cast<size_t>(h) * w);
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw std::runtime_error(path + ": truncated payload at byte offset " +
                                 std::to_string(f.gcount()));
    }
    for (size_t i = 0; i < buf.size(); ++i) label.labels[i] = static_cast<uint8_t>(buf[i]);
    return label;
}

const std::vector<Tile>& Dataset::split(const std::string& domain, const std::string& split_name) const {
    auto d = tiles.find(domain);
    if (d == tiles.end()) throw std::runtime_error("dataset: unknown domain '" + domain + "'");
    auto s = d->second.find(split_name);
    if (s == d->second.end()) {
        throw std::runtime_error("dataset: domain '" + domain + "' has no split '" + split_name + "'");
    }
    return s->second;
}

void generate_dataset(const std::string& out_dir, const GenerateOptions& options, bool force) {
    const fs::path root(out_dir);
    if (fs::exists(root) && !fs::is_empty(root) && !force) {
        throw std::runtime_error("output directory " + out_dir +
                                 " exists and is not empty (use force to overwrite)");
    }
    fs::create_directories(root / "images");
    fs::create_directories(root / "labels");

    nlohmann::json manifest;
    manifest["format"] = "memadapt-dataset-v1";
    manifest["class_names"] = class_names();
    manifest["num_classes"] = kNumClasses;
    manifest["tile_size"] = options.tile_size;
    manifest["generator"] = {{"seed", options.seed},
                             {"train_tiles", options.train_tiles},
                             {"val_tiles", options.val_tiles},
                             {"test_tiles", options.test_tiles},
                             {"domain_a", options.domain_a.to_json()},
                             {"domain_b", options.domain_b.to_json()}};

    const std::array<std::pair<std::string, int>, 3> splits = {
        {{"train", options.train_tiles}, {"val", options.val_tiles}, {"test", options.test_tiles}}};
    const std::array<std::pair<std::string, const DomainSpec*>, 2> domains = {
        {{"a", &options.domain_a}, {"b", &options.domain_b}}};

    nlohmann::json listing;
    for (const auto& [domain_name, spec] : domains) {
        nlohmann::json split_json;
        for (size_t si = 0; si < splits.size(); ++si) {
            const auto& [split_name, count] = splits[si];
            // Independent layout stream per split.
            const uint64_t split_seed = Rng::derive_seed(options.seed, 1000 + si);
            const auto tiles = generate_tiles(split_seed, *spec, count, options.tile_size);
            nlohmann::json names = nlohmann::json::array();
            char buf[64];
            for (size_t i = 0; i < tiles.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%s_%s_%04zu", domain_name.c_str(), split_name.c_str(),
                              i);
                write_ppm((root / "images" / (std::string(buf) + ".ppm")).string(), tiles[i].image);
                write_pgm((root / "labels" / (std::string(buf) + ".pgm")).string(), tiles[i].label);
                names.push_back(buf);
            }
            split_json[split_name] = names;
        }
        listing[domain_name] = split_json;
    }
    manifest["domains"] = listing;

    std::ofstream mf(root / "manifest.json");
    if (!mf) throw std::runtime_error("cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "memadapt-dataset-v1") {
        throw std::runtime_error(manifest_path.string() + ": unrecognized dataset format");
    }

    Dataset ds;
    ds.manifest = manifest;
    ds.num_classes = manifest.at("num_classes").get<int>();
    ds.tile_size = manifest.at("tile_size").get<int>();
    ds.classes = manifest.at("class_names").get<std::vector<std::string>>();

    for (const auto& [domain_name, split_json] : manifest.at("domains").items()) {
        for (const auto& [split_name, names] : split_json.items()) {
            auto& tiles = ds.tiles[domain_name][split_name];
            for (const auto& name_json : names) {
                const std::string name = name_json.get<std::string>();
                const fs::path img = root / "images" / (name + ".ppm");
                const fs::path lab = root / "labels" / (name + ".pgm");
                if (!fs::exists(img)) {
                    throw std::runtime_error("dataset: manifest references missing file " + img.string());
                }
                if (!fs::exists(lab)) {
                    throw std::runtime_error("dataset: manifest references missing file " + lab.string());
                }
                Tile tile;
                tile.image = read_ppm(img.string());
                tile.label = read_pgm(lab.string());
                if (tile.image.height != ds.tile_size || tile.image.width != ds.tile_size) {
                    throw std::runtime_error("dataset: tile " + name + " has size " +
                                             std::to_string(tile.image.height) + "x" +
                                             std::to_string(tile.image.width) + ", manifest says " +
                                             std::to_string(ds.tile_size));
                }
                for (int32_t v : tile.label.labels) {
                    if (v != kVoidLabel && (v < 0 || v >= ds.num_classes)) {
                        throw std::runtime_error("dataset: label value " + std::to_string(v) + " in " +
                                                 lab.string() + " outside class range [0," +
                                                 std::to_string(ds.num_classes) + ")");
                    }
                }
                tiles.push_back(std::move(tile));
            }
        }
    }
    return ds;
}

}  // namespace memadapt
