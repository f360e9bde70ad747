#include "ocuq/store.hpp"

#include "ocuq/config.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace ocuq {

static_assert(std::endian::native == std::endian::little, "artifact I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(ArtifactKind kind) {
    switch (kind) {
        case ArtifactKind::head: return "head";
        case ArtifactKind::gda: return "gda";
        case ArtifactKind::calib: return "calib";
        case ArtifactKind::dataset_manifest: return "dataset-manifest";
    }
    return "unknown";
}

const Tensor& Artifact::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw FormatError("artifact has no tensor '" + name + "'");
}

void Artifact::add(std::string name, DType dtype, std::vector<std::uint64_t> shape, std::vector<double> values) {
    tensors.push_back({std::move(name), dtype, std::move(shape), std::move(values)});
}

namespace {

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}
    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* take(std::size_t n) {
        need(n);
        const auto* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (n > buf_.size() - pos_) throw FormatError("artifact truncated");
    }
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u16: return 2;
        case DType::i64: return 8;
    }
    throw FormatError("unknown dtype");
}

void check_representable(const Tensor& t) {
    for (double v : t.values) {
        bool ok = true;
        switch (t.dtype) {
            case DType::f32: ok = static_cast<double>(static_cast<float>(v)) == v || std::isnan(v); break;
            case DType::f64: break;
            case DType::u16: ok = v >= 0 && v <= 65535 && v == std::floor(v); break;
            case DType::i64: ok = v == std::floor(v) && std::abs(v) <= 9007199254740992.0; break;
        }
        if (!ok)
            throw InputError("tensor '" + t.name + "' holds a value not exactly representable in its dtype");
    }
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) throw FormatError("tensor shape overflows");
        n *= d;
    }
    return n;
}

}  // namespace

std::vector<std::uint8_t> encode_artifact(const Artifact& artifact) {
    std::vector<const Tensor*> order;
    for (const auto& t : artifact.tensors) {
        if (element_count(t.shape) != t.values.size())
            throw ShapeError("tensor '" + t.name + "' shape does not match its value count");
        if (t.name.size() > 65535) throw InputError("tensor name too long");
        check_representable(t);
        order.push_back(&t);
    }
    std::sort(order.begin(), order.end(), [](const Tensor* a, const Tensor* b) { return a->name < b->name; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i]->name == order[i - 1]->name) throw InputError("duplicate tensor name '" + order[i]->name + "'");

    Writer w;
    w.put_bytes("OCUQ", 4);
    w.put<std::uint16_t>(kArtifactVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(artifact.kind));
    const std::string meta = artifact.metadata.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta.data(), meta.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(order.size()));
    for (const Tensor* t : order) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t->name.size()));
        w.put_bytes(t->name.data(), t->name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t->dtype));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t->shape.size()));
        for (auto d : t->shape) w.put<std::uint64_t>(d);
        for (double v : t->values) {
            switch (t->dtype) {
                case DType::f32: w.put<float>(static_cast<float>(v)); break;
                case DType::f64: w.put<double>(v); break;
                case DType::u16: w.put<std::uint16_t>(static_cast<std::uint16_t>(v)); break;
                case DType::i64: w.put<std::int64_t>(static_cast<std::int64_t>(v)); break;
            }
        }
    }
    return w.take();
}

Artifact decode_artifact(const std::vector<std::uint8_t>& bytes, ArtifactKind expected) {
    Reader r(bytes);
    if (r.get_string(4) != "OCUQ") throw FormatError("bad magic: not an OCUQ artifact");
    const auto version = r.get<std::uint16_t>();
    if (version > kArtifactVersion || version == 0)
        throw VersionError("unsupported artifact version " + std::to_string(version) + " (supported: " +
                           std::to_string(kArtifactVersion) + ")");
    const auto kind_raw = r.get<std::uint16_t>();
    if (kind_raw < 1 || kind_raw > 4) throw FormatError("unknown artifact kind " + std::to_string(kind_raw));
    Artifact a;
    a.kind = static_cast<ArtifactKind>(kind_raw);
    if (a.kind != expected)
        throw KindMismatchError(std::string("expected a ") + to_string(expected) + " artifact, found " +
                                to_string(a.kind));
    const auto meta_len = r.get<std::uint32_t>();
    try {
        a.metadata = json::parse(r.get_string(meta_len));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("artifact metadata is not valid JSON: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        t.name = r.get_string(r.get<std::uint16_t>());
        const auto dt = r.get<std::uint8_t>();
        if (dt < 1 || dt > 4) throw FormatError("tensor '" + t.name + "' has unknown dtype");
        t.dtype = static_cast<DType>(dt);
        const auto rank = r.get<std::uint8_t>();
        for (int k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>());
        const auto n = element_count(t.shape);
        if (n > bytes.size()) throw FormatError("artifact truncated");
        const std::uint8_t* p = r.take(static_cast<std::size_t>(n) * dtype_size(t.dtype));
        t.values.resize(static_cast<std::size_t>(n));
        for (std::size_t j = 0; j < t.values.size(); ++j) {
            switch (t.dtype) {
                case DType::f32: { float v; std::memcpy(&v, p + 4 * j, 4); t.values[j] = v; break; }
                case DType::f64: { double v; std::memcpy(&v, p + 8 * j, 8); t.values[j] = v; break; }
                case DType::u16: { std::uint16_t v; std::memcpy(&v, p + 2 * j, 2); t.values[j] = v; break; }
                case DType::i64: { std::int64_t v; std::memcpy(&v, p + 8 * j, 8); t.values[j] = static_cast<double>(v); break; }
            }
        }
        a.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after the last tensor");
    return a;
}

void save_artifact(const Artifact& artifact, const fs::path& path) {
    const auto bytes = encode_artifact(artifact);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }
std::vector<double> flat(const Vector& v) { return {v.data(), v.data() + v.size()}; }
std::vector<std::uint64_t> dims(Index r, Index c) {
    return {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)};
}
std::vector<std::uint64_t> dims(Index n) { return {static_cast<std::uint64_t>(n)}; }

Matrix to_matrix(const Tensor& t, Index rows, Index cols) {
    if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint64_t>(rows) ||
        t.shape[1] != static_cast<std::uint64_t>(cols))
        throw FormatError("tensor '" + t.name + "' has shape inconsistent with metadata");
    return Eigen::Map<const Matrix>(t.values.data(), rows, cols);
}

Vector to_vector(const Tensor& t, Index n) {
    if (t.shape.size() != 1 || t.shape[0] != static_cast<std::uint64_t>(n))
        throw FormatError("tensor '" + t.name + "' has shape inconsistent with metadata");
    return Eigen::Map<const Vector>(t.values.data(), n);
}

std::string layer_prefix(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "layer.%02zu.", i);
    return buf;
}

std::string class_prefix(Index c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "class.%03ld.", static_cast<long>(c));
    return buf;
}

template <typename F>
auto metadata_guard(F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(std::string("artifact metadata: ") + e.what());
    }
}

}  // namespace

Artifact to_artifact(const ResidualMlpHead& head) {
    Artifact a;
    a.kind = ArtifactKind::head;
    a.metadata = {{"config", to_json(head.config)}, {"num_linear", head.num_linear()}};
    for (std::size_t i = 0; i < head.num_linear(); ++i) {
        const auto& l = head.linear(i);
        const std::string p = layer_prefix(i);
        a.add(p + "weight", DType::f32, dims(l.out_dim(), l.in_dim()), flat(l.weight));
        a.add(p + "bias", DType::f32, dims(l.out_dim()), flat(l.bias));
        a.add(p + "sn_u", DType::f64, dims(l.sn.u.size()), flat(l.sn.u));
        a.add(p + "sn_v", DType::f64, dims(l.sn.v.size()), flat(l.sn.v));
        a.add(p + "sn_sigma", DType::f64, dims(1), {l.sn.sigma_hat});
    }
    return a;
}

ResidualMlpHead head_from_artifact(const Artifact& a) {
    const HeadConfig cfg = metadata_guard([&] { return head_config_from_json(a.metadata.at("config")); });
    validate(cfg);
    ResidualMlpHead head = make_head(cfg, 0);
    const auto expected = metadata_guard([&] { return a.metadata.at("num_linear").get<std::size_t>(); });
    if (expected != head.num_linear()) throw FormatError("head artifact layer count disagrees with its config");
    for (std::size_t i = 0; i < head.num_linear(); ++i) {
        auto& l = head.linear(i);
        const std::string p = layer_prefix(i);
        l.weight = to_matrix(a.tensor(p + "weight"), l.out_dim(), l.in_dim());
        l.bias = to_vector(a.tensor(p + "bias"), l.out_dim());
        l.sn.u = to_vector(a.tensor(p + "sn_u"), l.out_dim());
        l.sn.v = to_vector(a.tensor(p + "sn_v"), l.in_dim());
        l.sn.sigma_hat = to_vector(a.tensor(p + "sn_sigma"), 1)[0];
    }
    return head;
}

Artifact to_artifact(const GdaModel& m) {
    Artifact a;
    a.kind = ArtifactKind::gda;
    a.metadata = {{"dim", m.dim}, {"num_classes", m.num_classes()}};
    a.add("eps", DType::f64, dims(2), {m.eps, m.eps_absolute});
    a.add("log_priors", DType::f64, dims(m.log_priors.size()), flat(m.log_priors));
    for (Index c = 0; c < m.num_classes(); ++c) {
        const auto& g = m.classes[static_cast<std::size_t>(c)];
        const std::string p = class_prefix(c);
        a.add(p + "mean", DType::f64, dims(m.dim), flat(g.mean));
        a.add(p + "chol", DType::f64, dims(m.dim, m.dim), flat(g.chol));
        a.add(p + "log_det", DType::f64, dims(1), {g.log_det});
        a.add(p + "count", DType::i64, dims(1), {static_cast<double>(g.count)});
    }
    return a;
}

GdaModel gda_from_artifact(const Artifact& a) {
    GdaModel m;
    const Index k = metadata_guard([&] {
        m.dim = a.metadata.at("dim").get<Index>();
        return a.metadata.at("num_classes").get<Index>();
    });
    if (m.dim < 1 || k < 1) throw FormatError("gda artifact has invalid dims");
    const Vector eps = to_vector(a.tensor("eps"), 2);
    m.eps = eps[0];
    m.eps_absolute = eps[1];
    m.log_priors = to_vector(a.tensor("log_priors"), k);
    for (Index c = 0; c < k; ++c) {
        const std::string p = class_prefix(c);
        ClassGaussian g;
        g.mean = to_vector(a.tensor(p + "mean"), m.dim);
        g.chol = to_matrix(a.tensor(p + "chol"), m.dim, m.dim);
        g.count = static_cast<std::int64_t>(to_vector(a.tensor(p + "count"), 1)[0]);
        g.degenerate = g.count == 1;
        refresh_derived(g);
        g.log_det = to_vector(a.tensor(p + "log_det"), 1)[0];
        m.classes.push_back(std::move(g));
    }
    return m;
}

Artifact to_artifact(const CalibrationArtifact& c) {
    Artifact a;
    a.kind = ArtifactKind::calib;
    a.metadata = {{"method", c.method},
                  {"mode", c.params.mode == UgtsMode::additive ? "additive" : "multiplicative"},
                  {"params", {"t_train", "lambda", "u_bar_train", "t_min", "t_max"}}};
    const auto& p = c.params;
    a.add("params", DType::f64, dims(5), {p.t_train, p.lambda, p.u_bar_train, p.t_min, p.t_max});
    return a;
}

CalibrationArtifact calibration_from_artifact(const Artifact& a) {
    CalibrationArtifact c;
    metadata_guard([&] {
        c.method = a.metadata.at("method").get<std::string>();
        const auto mode = a.metadata.at("mode").get<std::string>();
        if (mode == "additive") c.params.mode = UgtsMode::additive;
        else if (mode == "multiplicative") c.params.mode = UgtsMode::multiplicative;
        else throw FormatError("calib artifact has unknown mode '" + mode + "'");
        return 0;
    });
    const Vector v = to_vector(a.tensor("params"), 5);
    c.params.t_train = v[0];
    c.params.lambda = v[1];
    c.params.u_bar_train = v[2];
    c.params.t_min = v[3];
    c.params.t_max = v[4];
    return c;
}

Artifact to_artifact(const World& w) {
    Artifact a;
    a.kind = ArtifactKind::dataset_manifest;
    a.metadata = {{"config", to_json(w.config)}};
    a.add("anchors", DType::f64, dims(w.anchors.rows(), w.anchors.cols()), flat(w.anchors));
    a.add("projection", DType::f64, dims(w.projection.rows(), w.projection.cols()), flat(w.projection));
    a.add("fog", DType::f64, dims(w.fog.size()), flat(w.fog));
    a.add("bias_direction", DType::f64, dims(w.bias_direction.size()), flat(w.bias_direction));
    a.add("feature_std", DType::f64, dims(1), {w.feature_std});
    return a;
}

World world_from_artifact(const Artifact& a) {
    World w;
    w.config = metadata_guard([&] { return world_config_from_json(a.metadata.at("config")); });
    const Index k = w.config.num_classes;
    const Index d = w.config.feature_dim;
    w.anchors = to_matrix(a.tensor("anchors"), k, d);
    w.projection = to_matrix(a.tensor("projection"), d, k);
    w.fog = to_vector(a.tensor("fog"), d);
    w.bias_direction = to_vector(a.tensor("bias_direction"), d);
    w.feature_std = to_vector(a.tensor("feature_std"), 1)[0];
    return w;
}

Artifact load_artifact(const fs::path& path, ArtifactKind expected) {
    return decode_artifact(read_file(path), expected);
}

void save_head(const ResidualMlpHead& head, const fs::path& path) { save_artifact(to_artifact(head), path); }
ResidualMlpHead load_head(const fs::path& path) {
    return head_from_artifact(load_artifact(path, ArtifactKind::head));
}
void save_gda(const GdaModel& model, const fs::path& path) { save_artifact(to_artifact(model), path); }
GdaModel load_gda(const fs::path& path) { return gda_from_artifact(load_artifact(path, ArtifactKind::gda)); }

// ---------------------------------------------------------------------------

const FeatureDataset& DatasetBundle::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw InputError("dataset has no split '" + name + "'");
    return it->second;
}

namespace {

std::vector<std::string> split_order(const DatasetBundle& b) {
    std::vector<std::string> order;
    for (const char* s : {"train", "val", "test"})
        if (b.splits.count(s)) order.emplace_back(s);
    for (const auto& [name, _] : b.splits)
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    return order;
}

}  // namespace

void write_dataset(const fs::path& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    const WorldConfig& c = bundle.world.config;
    std::ofstream feat(dir / "features.bin", std::ios::binary | std::ios::trunc);
    std::ofstream lab(dir / "labels.bin", std::ios::binary | std::ios::trunc);
    if (!feat || !lab) throw IoError("cannot write dataset files in " + dir.string());

    json manifest;
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["config"] = to_json(c);
    manifest["class_names"] = default_class_names(c.num_classes);
    manifest["voxel_order"] = "index = (x * grid_y + y) * grid_z + z; features then channel";
    manifest["splits"] = json::object();
    manifest["scenes"] = json::array();
    std::uint64_t feat_off = 0;
    std::uint64_t lab_off = 0;
    for (const auto& name : split_order(bundle)) {
        const auto& ds = bundle.splits.at(name);
        manifest["splits"][name] = ds.scenes.size();
        for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
            const auto& s = ds.scenes[i];
            require_shape(s.features.rows() == c.num_voxels() && s.features.cols() == c.feature_dim &&
                              static_cast<Index>(s.labels.size()) == c.num_voxels(),
                          "write_dataset: scene dims disagree with the world config");
            manifest["scenes"].push_back({{"split", name},
                                          {"index", i},
                                          {"scene_id", s.scene_id},
                                          {"seed", s.seed},
                                          {"feature_offset", feat_off},
                                          {"label_offset", lab_off}});
            const auto fbytes = static_cast<std::size_t>(s.features.size()) * sizeof(float);
            feat.write(reinterpret_cast<const char*>(s.features.data()), static_cast<std::streamsize>(fbytes));
            lab.write(reinterpret_cast<const char*>(s.labels.data()),
                      static_cast<std::streamsize>(s.labels.size() * sizeof(ClassId)));
            feat_off += fbytes;
            lab_off += s.labels.size() * sizeof(ClassId);
        }
    }
    if (!feat || !lab) throw IoError("write failed in " + dir.string());
    std::ofstream man(dir / "manifest.json", std::ios::trunc);
    if (!man) throw IoError("cannot write " + (dir / "manifest.json").string());
    man << manifest.dump(2) << "\n";
    save_artifact(to_artifact(bundle.world), dir / "world.ocuq");
}

DatasetBundle read_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw IoError("no dataset at " + dir.string() + " (manifest.json missing)");
    std::ifstream man(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(man);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    DatasetBundle bundle;
    bundle.world = world_from_artifact(load_artifact(dir / "world.ocuq", ArtifactKind::dataset_manifest));
    const auto feat = read_file(dir / "features.bin");
    const auto lab = read_file(dir / "labels.bin");
    metadata_guard([&] {
        if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
            throw VersionError("unsupported dataset schema_version");
        const WorldConfig c = world_config_from_json(manifest.at("config"));
        bundle.world.config = c;
        const auto nf = static_cast<std::size_t>(c.num_voxels() * c.feature_dim) * sizeof(float);
        const auto nl = static_cast<std::size_t>(c.num_voxels()) * sizeof(ClassId);
        for (const auto& [name, count] : manifest.at("splits").items()) {
            auto& ds = bundle.splits[name];
            ds.config = c;
            ds.split = name;
            ds.scenes.reserve(count.get<std::size_t>());
        }
        for (const auto& e : manifest.at("scenes")) {
            auto& ds = bundle.splits.at(e.at("split").get<std::string>());
            const auto fo = e.at("feature_offset").get<std::uint64_t>();
            const auto lo = e.at("label_offset").get<std::uint64_t>();
            if (fo + nf > feat.size() || lo + nl > lab.size()) throw FormatError("dataset binary files truncated");
            VoxelScene s;
            s.scene_id = e.at("scene_id").get<std::uint64_t>();
            s.seed = e.at("seed").get<std::uint64_t>();
            s.features.resize(c.num_voxels(), c.feature_dim);
            std::memcpy(s.features.data(), feat.data() + fo, nf);
            s.labels.resize(static_cast<std::size_t>(c.num_voxels()));
            std::memcpy(s.labels.data(), lab.data() + lo, nl);
            for (auto y : s.labels)
                if (y >= c.num_classes) throw FormatError("label out of range in labels.bin");
            ds.scenes.push_back(std::move(s));
        }
        return 0;
    });
    return bundle;
}

}  // namespace ocuq
