#ifndef CXR_DATAIO_HPP
#define CXR_DATAIO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxr/graph.hpp"
#include "cxr/tensor.hpp"
#include "cxr/trainer.hpp"

namespace cxr {

extern const std::vector<std::string> kDefaultClassNames;
extern const char* const kSplitNames[3]; // train, val, test

struct SplitFiles {
    std::string name;
    std::vector<std::vector<std::filesystem::path>> per_class; // aligned with classes

    std::int64_t count() const;
    std::int64_t count(int class_index) const;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> classes;
    SplitFiles train, val, test;
    std::vector<std::string> warnings; // e.g. empty class dirs

    const SplitFiles& split(const std::string& name) const;
    std::int64_t total() const;
};

/// Walks root/{train,val,test}/{classes}/*.png|jpg|jpeg. Missing split dirs
/// and unknown class dirs are structure errors (ConfigError); empty class
/// dirs only warn. File lists are sorted for determinism.
DatasetManifest scan_dataset(const std::filesystem::path& root,
                             const std::vector<std::string>& classes = kDefaultClassNames);

std::string manifest_to_text(const DatasetManifest& m);

struct ImageBatch {
    Tensor images{std::vector<int>{1}};
    std::vector<int> labels;
    std::vector<std::string> filenames;
};

/// Indices address the split's class-major flattened file list (class 0's
/// files first, sorted, then class 1, ...).
ImageBatch load_batch(const DatasetManifest& m, const std::string& split,
                      const std::vector<int>& indices, const PreprocessSpec& spec);

/// Whole split, in flattened order.
ImageBatch load_split(const DatasetManifest& m, const std::string& split,
                      const PreprocessSpec& spec);

/// Loose files (no labels), for explain runs on arbitrary images.
ImageBatch load_files(const std::vector<std::filesystem::path>& files,
                      const PreprocessSpec& spec);

LabeledData to_labeled(const ImageBatch& batch);

struct FixtureCounts {
    int train = 50;
    int val = 20;
    int test = 20;
};

/// Writes a synthetic grayscale dataset under out_root with class-dependent
/// procedural texture (speckle patches / smooth gradient / diffuse blobs /
/// bright nodules) plus noise; deterministic per seed. with_confound replaces
/// class 0's texture with one borrowed per image from a random other class and
/// stamps a white corner marker, making the marker the only class-0 signal.
void gen_fixture(const std::filesystem::path& out_root, const FixtureCounts& counts,
                 int image_size, std::uint64_t seed, bool with_confound);

/// Side of the confound marker square stamped at the top-left corner.
int confound_marker_side(int image_size);

struct ClassDistribution {
    std::vector<std::string> classes;
    std::vector<std::int64_t> train, val, test, total;
    std::vector<double> percent;
    std::int64_t grand_total = 0;
};

ClassDistribution class_distribution(const DatasetManifest& m);

std::string distribution_to_text(const ClassDistribution& d);

} // namespace cxr

#endif
