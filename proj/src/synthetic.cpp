#include "hidiff/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace hidiff {

BlurKernel make_motion_kernel(int length, double angle_deg, double sigma) {
    if (length < 1) throw std::invalid_argument("motion kernel length must be >= 1");
    if (sigma < 0.0) throw std::invalid_argument("motion kernel sigma must be >= 0");
    const int base = length % 2 == 1 ? length : length + 1;
    const int grow = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
    const int size = base + 2 * grow;
    const int r = size / 2;
    std::vector<double> line(static_cast<size_t>(size) * size, 0.0);
    const double rad = angle_deg * std::numbers::pi / 180.0;
    const double ux = std::cos(rad), uy = -std::sin(rad);
    for (int i = 0; i < length; ++i) {
        const double s = i - 0.5 * (length - 1);
        double px = r + s * ux, py = r + s * uy;
        if (std::abs(px - std::round(px)) < 1e-9) px = std::round(px);
        if (std::abs(py - std::round(py)) < 1e-9) py = std::round(py);
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        const std::array<std::array<double, 3>, 4> taps{{
            {double(y0), double(x0), (1 - fy) * (1 - fx)},
            {double(y0), double(x0 + 1), (1 - fy) * fx},
            {double(y0 + 1), double(x0), fy * (1 - fx)},
            {double(y0 + 1), double(x0 + 1), fy * fx},
        }};
        for (const auto& [ty, tx, wt] : taps) {
            if (wt == 0.0) continue;
            line[static_cast<size_t>(ty) * size + static_cast<size_t>(tx)] += wt;
        }
    }
    BlurKernel k;
    k.size = size;
    k.length = length;
    k.angle = angle_deg;
    k.sigma = sigma;
    if (grow > 0) {
        std::vector<double> g(2 * grow + 1);
        for (int i = -grow; i <= grow; ++i) g[i + grow] = std::exp(-0.5 * i * i / (sigma * sigma));
        std::vector<double> tmp(line.size(), 0.0);
        k.weights.assign(line.size(), 0.0);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                for (int d = -grow; d <= grow; ++d)
                    if (x + d >= 0 && x + d < size) tmp[y * size + x] += g[d + grow] * line[y * size + x + d];
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                for (int d = -grow; d <= grow; ++d)
                    if (y + d >= 0 && y + d < size) k.weights[y * size + x] += g[d + grow] * tmp[(y + d) * size + x];
    } else {
        k.weights = std::move(line);
    }
    double total = 0.0;
    for (double v : k.weights) total += v;
    for (double& v : k.weights) v /= total;
    return k;
}

BlurKernel random_motion_kernel(const BlurRanges& ranges, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len(ranges.min_length, ranges.max_length);
    std::uniform_real_distribution<double> angle(0.0, 180.0);
    std::uniform_real_distribution<double> sig(0.0, ranges.max_sigma);
    const int l = len(rng);
    const double a = angle(rng);
    const double s = ranges.max_sigma > 0.0 ? sig(rng) : 0.0;
    return make_motion_kernel(l, a, s);
}

Image apply_blur(const Image& img, const BlurKernel& kernel, double noise_sigma, uint64_t seed) {
    check_image(img, "apply_blur");
    const int h = img.dim(1), w = img.dim(2), r = kernel.size / 2;
    Image out(img.shape());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < kernel.size; ++i) {
                    const int sy = std::clamp(y - (i - r), 0, h - 1);
                    for (int j = 0; j < kernel.size; ++j) {
                        const double k = kernel.at(i, j);
                        if (k == 0.0) continue;
                        const int sx = std::clamp(x - (j - r), 0, w - 1);
                        acc += k * img.at(c, sy, sx);
                    }
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
    if (noise_sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, noise_sigma);
        for (auto& v : out.values()) v = static_cast<float>(v + n(rng));
    }
    return clamp01(out);
}

Image dihedral(const Image& img, int code) {
    check_image(img, "dihedral");
    if (code < 0 || code > 7) throw std::invalid_argument("dihedral code must be in [0, 8)");
    const bool tr = code & 4, hf = code & 1, vf = code & 2;
    const int h = img.dim(1), w = img.dim(2);
    const int oh = tr ? w : h, ow = tr ? h : w;
    Image out({3, oh, ow});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const int yy = vf ? oh - 1 - y : y;
                const int xx = hf ? ow - 1 - x : x;
                out.at(c, y, x) = tr ? img.at(c, xx, yy) : img.at(c, yy, xx);
            }
    return out;
}

ImagePair augment_with(const ImagePair& pair, int code) {
    return {dihedral(pair.blur, code), dihedral(pair.sharp, code)};
}

ImagePair augment(const ImagePair& pair, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return augment_with(pair, std::uniform_int_distribution<int>(0, 7)(rng));
}

ImagePair random_crop(const ImagePair& pair, int size, std::mt19937_64& rng) {
    const int h = pair.sharp.dim(1), w = pair.sharp.dim(2);
    if (size > h || size > w) throw std::invalid_argument("crop larger than image");
    if (size == h && size == w) return pair;
    const int oy = std::uniform_int_distribution<int>(0, h - size)(rng);
    const int ox = std::uniform_int_distribution<int>(0, w - size)(rng);
    auto crop = [&](const Image& img) {
        Image out({3, size, size});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, oy + y, ox + x);
        return out;
    };
    return {crop(pair.blur), crop(pair.sharp)};
}

namespace {

using Rgb = std::array<float, 3>;

Rgb random_color(std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    return {u(rng), u(rng), u(rng)};
}

void blend(Image& img, int y, int x, const Rgb& col, float a) {
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - a) * img.at(c, y, x) + a * col[c];
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = ax + t * dx - px, qy = ay + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

}  // namespace

Image generate_sharp(int size, std::mt19937_64& rng) {
    if (size < 8) throw std::invalid_argument("synthetic images need size >= 8");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img({3, size, size});

    const Rgb c0 = random_color(rng), c1 = random_color(rng);
    const double ga = u(rng) * 2 * std::numbers::pi;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double t = 0.5 + 0.5 * ((x - size / 2.0) * std::cos(ga) + (y - size / 2.0) * std::sin(ga)) / size;
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>((1 - t) * c0[c] + t * c1[c]);
        }

    // hard-edged half planes, discs and rectangles
    const int regions = 2 + static_cast<int>(u(rng) * 3);
    for (int k = 0; k < regions; ++k) {
        const Rgb col = random_color(rng);
        const int kind = static_cast<int>(u(rng) * 3);
        const double cx = u(rng) * size, cy = u(rng) * size;
        const double a = u(rng) * 2 * std::numbers::pi;
        const double r = (0.1 + 0.3 * u(rng)) * size;
        const double hw = (0.1 + 0.3 * u(rng)) * size, hh = (0.1 + 0.3 * u(rng)) * size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                bool inside = false;
                if (kind == 0) inside = dx * std::cos(a) + dy * std::sin(a) > 0;
                else if (kind == 1) inside = dx * dx + dy * dy < r * r;
                else {
                    const double rx = dx * std::cos(a) + dy * std::sin(a), ry = -dx * std::sin(a) + dy * std::cos(a);
                    inside = std::abs(rx) < hw && std::abs(ry) < hh;
                }
                if (inside) blend(img, y, x, col, 1.0f);
            }
    }

    // text-like polyline strokes
    const int strokes = 2 + static_cast<int>(u(rng) * 4);
    for (int k = 0; k < strokes; ++k) {
        const Rgb col = random_color(rng);
        const double width = 1.0 + 1.5 * u(rng);
        const int segs = 2 + static_cast<int>(u(rng) * 3);
        std::vector<std::pair<double, double>> pts{{u(rng) * size, u(rng) * size}};
        for (int s = 0; s < segs; ++s) {
            const double a = u(rng) * 2 * std::numbers::pi, l = (0.1 + 0.25 * u(rng)) * size;
            pts.push_back({pts.back().first + l * std::cos(a), pts.back().second + l * std::sin(a)});
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double d = 1e9;
                for (size_t s = 0; s + 1 < pts.size(); ++s)
                    d = std::min(d, segment_distance(x + 0.5, y + 0.5, pts[s].first, pts[s].second, pts[s + 1].first,
                                                     pts[s + 1].second));
                const double cover = std::clamp(width / 2 + 0.5 - d, 0.0, 1.0);
                if (cover > 0) blend(img, y, x, col, static_cast<float>(cover));
            }
    }

    // band-limited texture: coarse noise grid, bilinearly upsampled
    const int g = 9;
    const double amp = 0.08 * u(rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> grid(static_cast<size_t>(3) * g * g);
    for (auto& v : grid) v = n(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double gy = double(y) * (g - 1) / (size - 1), gx = double(x) * (g - 1) / (size - 1);
            const int y0 = std::min(static_cast<int>(gy), g - 2), x0 = std::min(static_cast<int>(gx), g - 2);
            const double fy = gy - y0, fx = gx - x0;
            for (int c = 0; c < 3; ++c) {
                const double* p = grid.data() + static_cast<size_t>(c) * g * g;
                const double v = (1 - fy) * ((1 - fx) * p[y0 * g + x0] + fx * p[y0 * g + x0 + 1]) +
                                 fy * ((1 - fx) * p[(y0 + 1) * g + x0] + fx * p[(y0 + 1) * g + x0 + 1]);
                img.at(c, y, x) += static_cast<float>(amp * v);
            }
        }
    return clamp01(img);
}

uint64_t sample_seed(uint64_t seed, const std::string& split, uint64_t index) {
    uint64_t tag = 0;
    for (char ch : split) tag = tag * 131 + static_cast<unsigned char>(ch);
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(tag),
                      static_cast<uint32_t>(tag >> 32), static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
    std::array<uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (uint64_t(out[0]) << 32) | out[1];
}

ImagePair make_synthetic_pair(int size, const BlurRanges& ranges, uint64_t seed) {
    std::mt19937_64 rng(seed);
    Image sharp = generate_sharp(size, rng);
    const BlurKernel k = random_motion_kernel(ranges, rng);
    const uint64_t noise_seed = rng();
    return {apply_blur(sharp, k, ranges.noise_sigma, noise_seed), std::move(sharp)};
}

namespace {

std::string file_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d.png", i);
    return buf;
}

}  // namespace

void write_synthetic_dataset(const std::filesystem::path& root, int size, const SplitCounts& counts,
                             const BlurRanges& ranges, uint64_t seed) {
    const std::array<std::pair<std::string, int>, 3> splits{{{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}};
    for (const auto& [split, count] : splits) {
        std::filesystem::create_directories(root / split / "blur");
        std::filesystem::create_directories(root / split / "sharp");
        for (int i = 0; i < count; ++i) {
            const ImagePair p = make_synthetic_pair(size, ranges, sample_seed(seed, split, i));
            write_png(root / split / "blur" / file_name(i), p.blur);
            write_png(root / split / "sharp" / file_name(i), p.sharp);
        }
    }
}

PairedDataset load_split(const std::filesystem::path& root, const std::string& split, size_t limit) {
    const auto blur_dir = root / split / "blur", sharp_dir = root / split / "sharp";
    if (!std::filesystem::is_directory(blur_dir) || !std::filesystem::is_directory(sharp_dir)) {
        throw std::runtime_error("dataset split not found: " + (root / split).string());
    }
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(blur_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (limit && names.size() > limit) names.resize(limit);
    PairedDataset ds;
    ds.split = split;
    for (const auto& name : names) {
        if (!std::filesystem::exists(sharp_dir / name)) throw std::runtime_error("missing sharp image for " + name);
        ImagePair p{read_png(blur_dir / name), read_png(sharp_dir / name)};
        if (!p.blur.same_shape(p.sharp)) throw std::runtime_error("blur/sharp size mismatch for " + name);
        ds.pairs.push_back(std::move(p));
        ds.names.push_back(name);
    }
    if (ds.pairs.empty()) throw std::runtime_error("no images in " + blur_dir.string());
    return ds;
}

}  // namespace hidiff
