#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cxr/dataio.hpp"
#include "cxr/errors.hpp"
#include "cxr/image_codec.hpp"
#include "cxr/kernels.hpp"

namespace fs = std::filesystem;

namespace cxr {

const std::vector<std::string> kDefaultClassNames = {"COVID19", "NORMAL", "PNEUMONIA",
                                                     "TUBERCULOSIS"};
const char* const kSplitNames[3] = {"train", "val", "test"};

namespace {

bool image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

SplitFiles scan_split(const fs::path& root, const std::string& name,
                      const std::vector<std::string>& classes,
                      std::vector<std::string>& warnings) {
    const fs::path dir = root / name;
    if (!fs::is_directory(dir)) {
        throw ConfigError("dataset structure: missing split directory " + dir.string());
    }

    std::vector<std::string> unknown;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const std::string cls = entry.path().filename().string();
        if (std::find(classes.begin(), classes.end(), cls) == classes.end()) {
            unknown.push_back(cls);
        }
    }
    if (!unknown.empty()) {
        std::sort(unknown.begin(), unknown.end());
        std::string msg = "dataset structure: unknown class dirs in " + dir.string() + ":";
        for (const auto& u : unknown) msg += " " + u;
        throw ConfigError(msg);
    }

    SplitFiles split;
    split.name = name;
    split.per_class.resize(classes.size());
    for (size_t c = 0; c < classes.size(); ++c) {
        const fs::path cdir = dir / classes[c];
        if (!fs::is_directory(cdir)) {
            warnings.push_back("missing class dir " + cdir.string() + " (treated as empty)");
            continue;
        }
        for (const auto& entry : fs::directory_iterator(cdir)) {
            if (entry.is_regular_file() && image_ext(entry.path())) {
                split.per_class[c].push_back(entry.path());
            }
        }
        std::sort(split.per_class[c].begin(), split.per_class[c].end());
        if (split.per_class[c].empty()) {
            warnings.push_back("empty class dir " + cdir.string());
        }
    }
    return split;
}

/// Decoded image as float [C,H,W] in 0..255.
Tensor to_chw(const ImageU8& img, int want_channels) {
    const int n = img.h * img.w;
    Tensor out({want_channels, img.h, img.w});
    if (img.channels == want_channels) {
        for (int c = 0; c < want_channels; ++c) {
            for (int i = 0; i < n; ++i) {
                out.data()[c * n + i] = img.pixels[static_cast<size_t>(i) * static_cast<size_t>(img.channels) + static_cast<size_t>(c)];
            }
        }
    } else if (img.channels == 1 && want_channels == 3) {
        for (int i = 0; i < n; ++i) {
            const float v = img.pixels[static_cast<size_t>(i)];
            out.data()[i] = v;
            out.data()[n + i] = v;
            out.data()[2 * n + i] = v;
        }
    } else if (img.channels == 3 && want_channels == 1) {
        for (int i = 0; i < n; ++i) {
            const size_t j = static_cast<size_t>(i) * 3;
            out.data()[i] = (static_cast<float>(img.pixels[j]) + img.pixels[j + 1] + img.pixels[j + 2]) / 3.0f;
        }
    } else {
        throw DataError("unsupported channel conversion " + std::to_string(img.channels) +
                        " -> " + std::to_string(want_channels));
    }
    return out;
}

Tensor load_one(const fs::path& file, const PreprocessSpec& spec) {
    Tensor chw = to_chw(read_image(file), spec.channels);
    if (chw.dim(1) != spec.size || chw.dim(2) != spec.size) {
        chw = kernels::bilinear_resize(chw, spec.size, spec.size);
    }
    if (spec.range == PreprocessSpec::Range::Unit) {
        for (std::int64_t e = 0; e < chw.numel(); ++e) chw.data()[e] /= 255.0f;
    }
    return chw;
}

void check_preprocess(const PreprocessSpec& spec) {
    if (spec.size <= 0) throw ConfigError("preprocess size must be positive");
    if (spec.channels != 1 && spec.channels != 3) {
        throw ConfigError("preprocess channels must be 1 or 3");
    }
}

double gaussian_bump(double dx, double dy, double sigma) {
    return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

/// Smooth intensity ramp.
void paint_gradient(std::vector<double>& px, int s, Rng& rng) {
    const double a = rng.uniform(70.0, 120.0);
    const double bx = rng.uniform(-60.0, 60.0);
    const double by = rng.uniform(-60.0, 60.0);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            px[static_cast<size_t>(y * s + x)] = a + bx * x / s + by * y / s;
        }
    }
}

void paint_class(std::vector<double>& px, int s, int cls, Rng& rng) {
    switch (cls) {
        case 0: { // high-frequency speckle patches
            std::fill(px.begin(), px.end(), 80.0);
            const int patches = 3 + static_cast<int>(rng.uniform_int(4));
            for (int p = 0; p < patches; ++p) {
                const int pw = s / 8 + static_cast<int>(rng.uniform_int(s / 8 + 1));
                const int ph = s / 8 + static_cast<int>(rng.uniform_int(s / 8 + 1));
                const int x0 = static_cast<int>(rng.uniform_int(std::max(1, s - pw)));
                const int y0 = static_cast<int>(rng.uniform_int(std::max(1, s - ph)));
                for (int y = y0; y < std::min(s, y0 + ph); ++y) {
                    for (int x = x0; x < std::min(s, x0 + pw); ++x) {
                        px[static_cast<size_t>(y * s + x)] = 128.0 + rng.uniform(-100.0, 100.0);
                    }
                }
            }
            break;
        }
        case 1:
            paint_gradient(px, s, rng);
            break;
        case 2: { // diffuse wide blobs
            std::fill(px.begin(), px.end(), 70.0);
            const int blobs = 4 + static_cast<int>(rng.uniform_int(4));
            for (int b = 0; b < blobs; ++b) {
                const double cx = rng.uniform(0.0, s - 1.0);
                const double cy = rng.uniform(0.0, s - 1.0);
                const double sigma = rng.uniform(s / 7.0, s / 4.0);
                const double amp = rng.uniform(30.0, 70.0);
                for (int y = 0; y < s; ++y) {
                    for (int x = 0; x < s; ++x) {
                        px[static_cast<size_t>(y * s + x)] += amp * gaussian_bump(x - cx, y - cy, sigma);
                    }
                }
            }
            break;
        }
        case 3: { // small bright nodules
            std::fill(px.begin(), px.end(), 60.0);
            const int nodules = 3 + static_cast<int>(rng.uniform_int(4));
            for (int b = 0; b < nodules; ++b) {
                const double cx = rng.uniform(0.0, s - 1.0);
                const double cy = rng.uniform(0.0, s - 1.0);
                const double sigma = rng.uniform(s / 22.0, s / 12.0);
                const double amp = rng.uniform(90.0, 150.0);
                for (int y = 0; y < s; ++y) {
                    for (int x = 0; x < s; ++x) {
                        px[static_cast<size_t>(y * s + x)] += amp * gaussian_bump(x - cx, y - cy, sigma);
                    }
                }
            }
            break;
        }
        default:
            throw ValueError("gen_fixture: unknown class index");
    }
}

} // namespace

std::int64_t SplitFiles::count() const {
    std::int64_t n = 0;
    for (const auto& files : per_class) n += static_cast<std::int64_t>(files.size());
    return n;
}

std::int64_t SplitFiles::count(int class_index) const {
    return static_cast<std::int64_t>(per_class[static_cast<size_t>(class_index)].size());
}

const SplitFiles& DatasetManifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ValueError("unknown split: " + name);
}

std::int64_t DatasetManifest::total() const {
    return train.count() + val.count() + test.count();
}

DatasetManifest scan_dataset(const fs::path& root, const std::vector<std::string>& classes) {
    if (classes.empty()) throw ConfigError("scan_dataset: class list is empty");
    if (!fs::is_directory(root)) {
        throw ConfigError("dataset structure: root is not a directory: " + root.string());
    }
    DatasetManifest m;
    m.root = root;
    m.classes = classes;
    m.train = scan_split(root, "train", classes, m.warnings);
    m.val = scan_split(root, "val", classes, m.warnings);
    m.test = scan_split(root, "test", classes, m.warnings);
    return m;
}

std::string manifest_to_text(const DatasetManifest& m) {
    std::string s = "root: " + m.root.string() + "\n";
    s += "classes:";
    for (const auto& c : m.classes) s += " " + c;
    s += "\n";
    for (const auto* split : {&m.train, &m.val, &m.test}) {
        s += split->name + ":";
        for (size_t c = 0; c < m.classes.size(); ++c) {
            s += " " + m.classes[c] + "=" + std::to_string(split->count(static_cast<int>(c)));
        }
        s += "\n";
    }
    s += "total: " + std::to_string(m.total()) + "\n";
    for (const auto& w : m.warnings) s += "warning: " + w + "\n";
    return s;
}

ImageBatch load_batch(const DatasetManifest& m, const std::string& split,
                      const std::vector<int>& indices, const PreprocessSpec& spec) {
    check_preprocess(spec);
    if (indices.empty()) throw ValueError("load_batch: no indices given");
    const SplitFiles& sf = m.split(split);

    std::vector<std::pair<const fs::path*, int>> flat; // file, label
    for (size_t c = 0; c < sf.per_class.size(); ++c) {
        for (const auto& p : sf.per_class[c]) flat.emplace_back(&p, static_cast<int>(c));
    }

    ImageBatch batch;
    const int n = static_cast<int>(indices.size());
    batch.images = Tensor({n, spec.channels, spec.size, spec.size});
    const std::int64_t row = batch.images.numel() / batch.images.dim(0);
    for (int i = 0; i < n; ++i) {
        const int idx = indices[static_cast<size_t>(i)];
        if (idx < 0 || idx >= static_cast<int>(flat.size())) {
            throw ValueError("load_batch: index " + std::to_string(idx) + " out of range for " +
                             split);
        }
        const fs::path& file = *flat[static_cast<size_t>(idx)].first;
        const Tensor chw = load_one(file, spec);
        std::copy(chw.data(), chw.data() + row, batch.images.data() + i * row);
        batch.labels.push_back(flat[static_cast<size_t>(idx)].second);
        batch.filenames.push_back(file.string());
    }
    return batch;
}

ImageBatch load_split(const DatasetManifest& m, const std::string& split,
                      const PreprocessSpec& spec) {
    const std::int64_t n = m.split(split).count();
    if (n == 0) throw DataError("split " + split + " of " + m.root.string() + " is empty");
    std::vector<int> idx(static_cast<size_t>(n));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return load_batch(m, split, idx, spec);
}

ImageBatch load_files(const std::vector<fs::path>& files, const PreprocessSpec& spec) {
    check_preprocess(spec);
    if (files.empty()) throw ValueError("load_files: no files given");

    ImageBatch batch;
    batch.images = Tensor({static_cast<int>(files.size()), spec.channels, spec.size, spec.size});
    const std::int64_t row = batch.images.numel() / batch.images.dim(0);
    for (size_t i = 0; i < files.size(); ++i) {
        const Tensor chw = load_one(files[i], spec);
        std::copy(chw.data(), chw.data() + row,
                  batch.images.data() + static_cast<std::int64_t>(i) * row);
        batch.filenames.push_back(files[i].string());
    }
    return batch;
}

LabeledData to_labeled(const ImageBatch& batch) {
    LabeledData d;
    d.images = batch.images;
    d.labels = batch.labels;
    return d;
}

int confound_marker_side(int image_size) { return std::max(6, image_size / 6); }

void gen_fixture(const fs::path& out_root, const FixtureCounts& counts, int image_size,
                 std::uint64_t seed, bool with_confound) {
    if (image_size < 16) throw ConfigError("gen_fixture: image size must be >= 16");
    if (counts.train < 1 || counts.val < 1 || counts.test < 1) {
        throw ConfigError("gen_fixture: per-split counts must be >= 1");
    }

    const int s = image_size;
    const int per_split[3] = {counts.train, counts.val, counts.test};
    std::vector<double> px(static_cast<size_t>(s) * static_cast<size_t>(s));
    std::vector<std::uint8_t> bytes(px.size());

    for (int sp = 0; sp < 3; ++sp) {
        for (size_t cls = 0; cls < kDefaultClassNames.size(); ++cls) {
            const fs::path dir = out_root / kSplitNames[sp] / kDefaultClassNames[cls];
            std::error_code ec;
            fs::create_directories(dir, ec);
            if (ec) throw Error("gen_fixture: cannot create " + dir.string());

            for (int i = 0; i < per_split[sp]; ++i) {
                Rng rng(Rng::mix(Rng::mix(Rng::mix(seed, static_cast<std::uint64_t>(sp)),
                                          static_cast<std::uint64_t>(cls)),
                                 static_cast<std::uint64_t>(i)));
                if (with_confound && cls == 0) {
                    // Replace the class texture with one borrowed uniformly from the
                    // other classes so the corner marker is the only class-0 evidence.
                    const int borrow = 1 + static_cast<int>(rng.uniform_int(3));
                    paint_class(px, s, borrow, rng);
                } else {
                    paint_class(px, s, static_cast<int>(cls), rng);
                }
                for (auto& v : px) v += rng.uniform(-8.0, 8.0);
                if (with_confound && cls == 0) {
                    const int m = confound_marker_side(s);
                    for (int y = 0; y < m; ++y) {
                        for (int x = 0; x < m; ++x) px[static_cast<size_t>(y * s + x)] = 255.0;
                    }
                }
                for (size_t e = 0; e < px.size(); ++e) {
                    bytes[e] = static_cast<std::uint8_t>(std::lround(std::clamp(px[e], 0.0, 255.0)));
                }
                char name[32];
                std::snprintf(name, sizeof(name), "img_%04d.png", i);
                write_png_gray(dir / name, s, s, bytes);
            }
        }
    }
}

ClassDistribution class_distribution(const DatasetManifest& m) {
    ClassDistribution d;
    d.classes = m.classes;
    const size_t k = m.classes.size();
    d.train.resize(k);
    d.val.resize(k);
    d.test.resize(k);
    d.total.resize(k);
    d.percent.resize(k);
    for (size_t c = 0; c < k; ++c) {
        d.train[c] = m.train.count(static_cast<int>(c));
        d.val[c] = m.val.count(static_cast<int>(c));
        d.test[c] = m.test.count(static_cast<int>(c));
        d.total[c] = d.train[c] + d.val[c] + d.test[c];
        d.grand_total += d.total[c];
    }
    for (size_t c = 0; c < k; ++c) {
        d.percent[c] = d.grand_total > 0
                           ? 100.0 * static_cast<double>(d.total[c]) / static_cast<double>(d.grand_total)
                           : 0.0;
    }
    return d;
}

std::string distribution_to_text(const ClassDistribution& d) {
    char buf[160];
    std::string s;
    std::snprintf(buf, sizeof(buf), "%-14s %7s %7s %7s %7s %8s\n", "class", "train", "val",
                  "test", "total", "percent");
    s += buf;
    std::int64_t tr = 0, va = 0, te = 0;
    for (size_t c = 0; c < d.classes.size(); ++c) {
        std::snprintf(buf, sizeof(buf), "%-14s %7lld %7lld %7lld %7lld %7.2f%%\n",
                      d.classes[c].c_str(), static_cast<long long>(d.train[c]),
                      static_cast<long long>(d.val[c]), static_cast<long long>(d.test[c]),
                      static_cast<long long>(d.total[c]), d.percent[c]);
        s += buf;
        tr += d.train[c];
        va += d.val[c];
        te += d.test[c];
    }
    std::snprintf(buf, sizeof(buf), "%-14s %7lld %7lld %7lld %7lld %7.2f%%\n", "total",
                  static_cast<long long>(tr), static_cast<long long>(va),
                  static_cast<long long>(te), static_cast<long long>(d.grand_total),
                  d.grand_total > 0 ? 100.0 : 0.0);
    s += buf;
    return s;
}

} // namespace cxr
