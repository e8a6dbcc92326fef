#include <bit>
#include <cstring>
#include <fstream>

#include "cxr/graph.hpp"

// Model file: little-endian binary, magic "CXRM", format version 1.
// Layout: header (template, input shape, classes, preprocess), layer specs,
// then per-layer parameter tensors with trainable flags.

namespace cxr {

namespace {

constexpr char kMagic[4] = {'C', 'X', 'R', 'M'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxString = 1u << 16;
constexpr std::uint64_t kMaxTensorElems = 1u << 28;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}
void put_i32(std::string& buf, std::int32_t v) { put_u32(buf, static_cast<std::uint32_t>(v)); }
void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }
void put_u8(std::string& buf, std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    std::string where;

    void need(size_t n) {
        if (pos + n > buf.size()) {
            throw DataError("model file truncated while reading " + where);
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<std::uint8_t>(buf[pos + static_cast<size_t>(i)]);
        }
        pos += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > kMaxString) throw DataError("model file: oversized string in " + where);
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void save_model(const std::filesystem::path& path, const ModelGraph& model,
                const ParamStore& params) {
    if (params.layers.size() != model.layers.size()) {
        throw ValueError("save_model: params not aligned with graph");
    }
    model.infer_shapes();

    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kFormatVersion);
    put_str(buf, model.template_name);
    put_i32(buf, model.in_channels);
    put_i32(buf, model.in_h);
    put_i32(buf, model.in_w);
    put_i32(buf, model.num_classes);
    put_u32(buf, static_cast<std::uint32_t>(model.class_names.size()));
    for (const auto& name : model.class_names) put_str(buf, name);
    put_i32(buf, model.preprocess.size);
    put_u8(buf, model.preprocess.range == PreprocessSpec::Range::Raw255 ? 1 : 0);
    put_i32(buf, model.preprocess.channels);

    put_u32(buf, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& spec : model.layers) {
        put_str(buf, spec.id);
        put_str(buf, layer_kind_name(spec.kind));
        put_i32(buf, spec.out_channels);
        put_i32(buf, spec.kernel);
        put_i32(buf, spec.stride);
        put_i32(buf, spec.padding);
        put_i32(buf, spec.units);
        put_f32(buf, spec.rate);
        put_f32(buf, spec.l2);
        put_str(buf, spec.skip_source);
        put_u8(buf, spec.head ? 1 : 0);
    }
    for (const auto& lp : params.layers) {
        put_u32(buf, static_cast<std::uint32_t>(lp.tensors.size()));
        for (const auto& pt : lp.tensors) {
            put_str(buf, pt.name);
            put_u8(buf, pt.trainable ? 1 : 0);
            put_u32(buf, static_cast<std::uint32_t>(pt.value.rank()));
            for (int d = 0; d < pt.value.rank(); ++d) put_i32(buf, pt.value.dim(d));
            for (std::int64_t i = 0; i < pt.value.numel(); ++i) {
                put_f32(buf, pt.value.data()[i]);
            }
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_model: cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw Error("save_model: write failed for " + path.string());
}

BuiltModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_model: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r{buf};
    r.where = "header";
    r.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw DataError("load_model: " + path.string() + " is not a model file (bad magic)");
    }
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw DataError("load_model: unsupported format version " + std::to_string(version));
    }

    BuiltModel built;
    ModelGraph& model = built.graph;
    model.template_name = r.str();
    model.in_channels = r.i32();
    model.in_h = r.i32();
    model.in_w = r.i32();
    model.num_classes = r.i32();
    const std::uint32_t n_classes = r.u32();
    if (n_classes > 1024) throw DataError("load_model: implausible class count");
    model.class_names.clear();
    for (std::uint32_t i = 0; i < n_classes; ++i) model.class_names.push_back(r.str());
    model.preprocess.size = r.i32();
    model.preprocess.range = r.u8() ? PreprocessSpec::Range::Raw255 : PreprocessSpec::Range::Unit;
    model.preprocess.channels = r.i32();

    const std::uint32_t n_layers = r.u32();
    if (n_layers > 4096) throw DataError("load_model: implausible layer count");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        r.where = "layer " + std::to_string(i);
        LayerSpec spec;
        spec.id = r.str();
        const std::string kind = r.str();
        try {
            spec.kind = layer_kind_from_name(kind);
        } catch (const Error&) {
            throw DataError("load_model: unknown layer kind '" + kind + "'");
        }
        spec.out_channels = r.i32();
        spec.kernel = r.i32();
        spec.stride = r.i32();
        spec.padding = r.i32();
        spec.units = r.i32();
        spec.rate = r.f32();
        spec.l2 = r.f32();
        spec.skip_source = r.str();
        spec.head = r.u8() != 0;
        model.layers.push_back(std::move(spec));
    }

    built.params.layers.resize(n_layers);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        r.where = "params of layer " + std::to_string(i);
        const std::uint32_t n_tensors = r.u32();
        if (n_tensors > 16) throw DataError("load_model: implausible tensor count");
        for (std::uint32_t t = 0; t < n_tensors; ++t) {
            ParamTensor pt;
            pt.name = r.str();
            pt.trainable = r.u8() != 0;
            const std::uint32_t rank = r.u32();
            if (rank < 1 || rank > 4) throw DataError("load_model: bad tensor rank");
            std::vector<int> shape;
            std::uint64_t numel = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                const std::int32_t ext = r.i32();
                if (ext <= 0) throw DataError("load_model: bad tensor extent");
                shape.push_back(ext);
                numel *= static_cast<std::uint64_t>(ext);
            }
            if (numel > kMaxTensorElems) throw DataError("load_model: oversized tensor");
            Tensor value(shape);
            for (std::uint64_t k = 0; k < numel; ++k) {
                value.data()[k] = r.f32();
            }
            pt.value = std::move(value);
            built.params.layers[i].tensors.push_back(std::move(pt));
        }
    }
    if (r.pos != buf.size()) {
        throw DataError("load_model: trailing bytes in " + path.string());
    }

    try {
        model.infer_shapes();
    } catch (const Error& e) {
        throw DataError(std::string("load_model: inconsistent graph: ") + e.what());
    }
    return built;
}

} // namespace cxr
