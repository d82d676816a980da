#pragma once

#include "hidiff/image.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace hidiff {

struct BlurKernel {
    int size = 1;                 // odd
    std::vector<double> weights;  // size x size, row-major, sums to 1
    int length = 1;
    double angle = 0.0;  // degrees, counter-clockwise from +x with y pointing up
    double sigma = 0.0;

    double at(int y, int x) const { return weights[static_cast<size_t>(y) * size + x]; }
};

// `length` sample points at unit spacing along the direction, centred on the
// kernel and splatted bilinearly. sigma > 0 additionally convolves with a
// Gaussian (the kernel grows by 2*ceil(3 sigma)).
BlurKernel make_motion_kernel(int length, double angle_deg, double sigma = 0.0);

struct BlurRanges {
    int min_length = 3;
    int max_length = 11;
    double max_sigma = 0.5;
    double noise_sigma = 0.01;
};

BlurKernel random_motion_kernel(const BlurRanges& ranges, std::mt19937_64& rng);

// Convolution with edge replication, optional N(0, noise_sigma^2) noise from
// `seed`, clamped to [0, 1].
Image apply_blur(const Image& img, const BlurKernel& kernel, double noise_sigma = 0.0, uint64_t seed = 0);

struct ImagePair {
    Image blur;
    Image sharp;
};

// Dihedral transform code in [0, 8): bit 0 horizontal flip, bit 1 vertical
// flip, bit 2 transpose (applied first). Codes 4..7 cover the 90 degree turns.
Image dihedral(const Image& img, int code);
ImagePair augment(const ImagePair& pair, uint64_t seed);
ImagePair augment_with(const ImagePair& pair, int code);

// Random size x size window taken at the same place from both images.
ImagePair random_crop(const ImagePair& pair, int size, std::mt19937_64& rng);

// Procedural sharp content: shaded background, hard-edged regions, strokes
// and band-limited texture.
Image generate_sharp(int size, std::mt19937_64& rng);

// Seed for sample `index` of `split`, independent of generation order.
uint64_t sample_seed(uint64_t seed, const std::string& split, uint64_t index);
ImagePair make_synthetic_pair(int size, const BlurRanges& ranges, uint64_t seed);

struct SplitCounts {
    int train = 500;
    int val = 100;
    int test = 100;
};

// Writes <root>/{train,val,test}/{blur,sharp}/NNNN.png.
void write_synthetic_dataset(const std::filesystem::path& root, int size, const SplitCounts& counts,
                             const BlurRanges& ranges, uint64_t seed);

struct PairedDataset {
    std::string split;
    std::vector<std::string> names;
    std::vector<ImagePair> pairs;

    size_t size() const noexcept { return pairs.size(); }
};

// Loads every matching blur/sharp file of a split, ordered by filename.
PairedDataset load_split(const std::filesystem::path& root, const std::string& split, size_t limit = 0);

}  // namespace hidiff
