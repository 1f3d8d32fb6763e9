#include "fed/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fed/errors.hpp"

namespace fed::store {
namespace {

static_assert(std::endian::native == std::endian::little, "store codecs assume a little-endian host");

class Writer {
public:
    template <typename T>
    void put(T value) {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        bytes_.append(buf, sizeof(T));
    }
    void raw(const std::string& s) { bytes_ += s; }
    void magic(const char (&m)[5], std::uint16_t flags) {
        bytes_.append(m, 4);
        put<std::uint16_t>(kFormatVersion);
        put<std::uint16_t>(flags);
    }
    void json_block(const nlohmann::json& j) {
        const std::string text = j.dump();
        put<std::uint64_t>(text.size());
        raw(text);
    }
    std::string take() { return std::move(bytes_); }

private:
    std::string bytes_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    /// Checks magic and version, returns flags.
    std::uint16_t header(const char (&m)[5]) {
        if (bytes_.size() < 8 || bytes_.compare(0, 4, m, 4) != 0) {
            throw FormatError(std::string("bad magic: expected '") + m + "'");
        }
        pos_ = 4;
        const auto version = get<std::uint16_t>();
        if (version != kFormatVersion) {
            throw FormatError(std::string(m) + " format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kFormatVersion) + ")");
        }
        return get<std::uint16_t>();
    }
    nlohmann::json json_block() {
        const auto n = get<std::uint64_t>();
        try {
            return nlohmann::json::parse(raw(static_cast<std::size_t>(n)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("corrupt metadata block: ") + e.what());
        }
    }
    void finish() const {
        if (pos_ != bytes_.size()) {
            throw FormatError("trailing bytes: payload is " + std::to_string(bytes_.size() - pos_) + " bytes longer than the header declares");
        }
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("truncated file: payload shorter than the header declares");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void check_count(std::uint64_t count, std::size_t element_size, const Reader& r) {
    if (element_size && count > r.remaining() / element_size) {
        throw FormatError("declared sizes exceed the file length");
    }
}

void check_row(const float* row, std::size_t c, std::size_t which) {
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        if (!(row[k] >= 0.0f)) throw FormatError("negative or NaN probability in row " + std::to_string(which));
        total += row[k];
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw FormatError("probability row " + std::to_string(which) + " sums to " + std::to_string(total));
    }
}

}  // namespace

std::string encode_predictions(const Tensor& dense, const nlohmann::json& metadata) {
    if (dense.rank() != 3) throw DimensionError("prediction store needs an [N x M x C] tensor");
    Writer w;
    w.magic("FEDP", 0);
    w.put<std::uint64_t>(dense.dim(0));
    w.put<std::uint64_t>(dense.dim(1));
    w.put<std::uint64_t>(dense.dim(2));
    for (double v : dense.data()) w.put<float>(static_cast<float>(v));
    w.json_block(metadata);
    return w.take();
}

std::string encode_predictions(const posterior::RaggedPredictions& heldout, std::size_t total_points,
                               const nlohmann::json& metadata) {
    Writer w;
    w.magic("FEDP", 1);
    w.put<std::uint64_t>(total_points);
    w.put<std::uint64_t>(heldout.num_members);
    w.put<std::uint64_t>(heldout.num_classes);
    std::vector<std::uint32_t> counts(total_points, 0);
    for (std::size_t p = 0; p < heldout.num_points(); ++p) {
        if (heldout.point_index[p] >= total_points) throw DimensionError("ragged store: point index out of range");
        counts[heldout.point_index[p]] = static_cast<std::uint32_t>(heldout.count(p));
    }
    for (auto c : counts) w.put<std::uint32_t>(c);
    for (auto id : heldout.member_ids) w.put<std::uint32_t>(id);
    for (double v : heldout.probs) w.put<float>(static_cast<float>(v));
    w.json_block(metadata);
    return w.take();
}

PredictionStore decode_predictions(const std::string& bytes) {
    Reader r(bytes);
    const auto flags = r.header("FEDP");
    PredictionStore out;
    out.ragged = (flags & 1u) != 0;
    const auto n = r.get<std::uint64_t>(), m = r.get<std::uint64_t>(), c = r.get<std::uint64_t>();
    if (c == 0 || m == 0) throw FormatError("prediction store with zero members or classes");
    if (!out.ragged) {
        if (m != 0 && n > r.remaining() / 4 / m / c) throw FormatError("declared sizes exceed the file length");
        std::vector<float> raw(n * m * c);
        for (auto& v : raw) v = r.get<float>();
        for (std::size_t row = 0; row < n * m; ++row) check_row(raw.data() + row * c, c, row);
        out.dense = Tensor({n, m, c}, std::vector<double>(raw.begin(), raw.end()));
    } else {
        check_count(n, 4, r);
        std::vector<std::uint32_t> counts(n);
        std::uint64_t total = 0;
        for (auto& k : counts) {
            k = r.get<std::uint32_t>();
            total += k;
        }
        check_count(total, 4, r);
        auto& h = out.heldout;
        h.num_members = m;
        h.num_classes = c;
        h.member_ids.resize(total);
        for (auto& id : h.member_ids) {
            id = r.get<std::uint32_t>();
            if (id >= m) throw FormatError("member id out of range in ragged store");
        }
        check_count(total * c, 4, r);
        std::vector<float> raw(total * c);
        for (auto& v : raw) v = r.get<float>();
        for (std::size_t row = 0; row < total; ++row) check_row(raw.data() + row * c, c, row);
        h.probs.assign(raw.begin(), raw.end());
        for (std::size_t i = 0; i < n; ++i) {
            if (counts[i] == 0) {
                h.excluded.push_back(i);
                continue;
            }
            h.point_index.push_back(i);
            h.offsets.push_back(h.offsets.back() + counts[i]);
        }
    }
    out.metadata = r.json_block();
    r.finish();
    return out;
}

std::string encode_dataset(const data::LabeledDataset& ds, bool with_labels) {
    Writer w;
    w.magic("FEDD", with_labels ? 1 : 0);
    w.put<std::uint64_t>(ds.inputs.rows());
    w.put<std::uint64_t>(ds.inputs.cols());
    w.put<std::uint64_t>(ds.num_classes);
    for (double v : ds.inputs.data()) w.put<double>(v);
    if (with_labels) {
        for (std::size_t y : ds.labels) w.put<std::uint32_t>(static_cast<std::uint32_t>(y));
    }
    w.json_block({{"name", ds.name}});
    return w.take();
}

data::LabeledDataset decode_dataset(const std::string& bytes) {
    Reader r(bytes);
    const bool labels = (r.header("FEDD") & 1u) != 0;
    const auto n = r.get<std::uint64_t>(), d = r.get<std::uint64_t>(), c = r.get<std::uint64_t>();
    if (d && n > r.remaining() / 8 / d) throw FormatError("declared sizes exceed the file length");
    data::LabeledDataset ds;
    ds.num_classes = c;
    std::vector<double> values(n * d);
    for (auto& v : values) v = r.get<double>();
    ds.inputs = Tensor({n, d}, std::move(values));
    if (labels) {
        ds.labels.resize(n);
        for (auto& y : ds.labels) y = r.get<std::uint32_t>();
    }
    ds.name = r.json_block().value("name", "");
    r.finish();
    return ds;
}

std::string encode_members(const MlpSpec& spec, const std::vector<ModelParams>& members,
                           const nlohmann::json& metadata) {
    const ParamLayout layout(spec);
    Writer w;
    w.magic("FEDM", 0);
    w.put<std::uint64_t>(spec.widths.size());
    for (auto width : spec.widths) w.put<std::uint64_t>(width);
    w.put<std::uint64_t>(members.size());
    w.put<std::uint64_t>(layout.total());
    for (const auto& m : members) {
        if (m.flat.size() != layout.total() || !(m.spec == spec)) throw DimensionError("member does not match layout");
        for (double v : m.flat.data()) w.put<double>(v);
    }
    w.json_block(metadata);
    return w.take();
}

std::vector<ModelParams> decode_members(const std::string& bytes) {
    Reader r(bytes);
    r.header("FEDM");
    MlpSpec spec;
    const auto widths = r.get<std::uint64_t>();
    check_count(widths, 8, r);
    for (std::uint64_t k = 0; k < widths; ++k) spec.widths.push_back(r.get<std::uint64_t>());
    spec.validate(true);
    const auto m = r.get<std::uint64_t>(), p = r.get<std::uint64_t>();
    if (p != ParamLayout(spec).total()) throw FormatError("member parameter count does not match the layer widths");
    if (p && m > r.remaining() / 8 / p) throw FormatError("declared sizes exceed the file length");
    std::vector<ModelParams> out;
    for (std::uint64_t j = 0; j < m; ++j) {
        std::vector<double> flat(p);
        for (auto& v : flat) v = r.get<double>();
        out.push_back({spec, Tensor::vector(std::move(flat))});
    }
    r.json_block();
    r.finish();
    return out;
}

nlohmann::json spec_to_json(const gen::GeneratorSpec& spec) {
    return {{"widths", spec.base.widths},
            {"input_noise_dims", spec.input_noise_dims},
            {"hidden_noise_sites", spec.hidden_noise_sites},
            {"init_noise_scale", spec.init_noise_scale},
            {"share_hidden_noise", spec.share_hidden_noise}};
}

gen::GeneratorSpec spec_from_json(const nlohmann::json& j) {
    try {
        gen::GeneratorSpec spec;
        spec.base.widths = j.at("widths").get<std::vector<std::size_t>>();
        spec.input_noise_dims = j.at("input_noise_dims").get<std::size_t>();
        spec.hidden_noise_sites = j.at("hidden_noise_sites").get<std::vector<std::size_t>>();
        spec.init_noise_scale = j.at("init_noise_scale").get<double>();
        spec.share_hidden_noise = j.at("share_hidden_noise").get<bool>();
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("generator header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("generator header: ") + e.what());
    }
}

std::string encode_generator(const GeneratorFile& file) {
    Writer w;
    w.magic("FEDG", 0);
    w.json_block(spec_to_json(file.spec));
    w.put<std::uint64_t>(file.params.weights.size());
    for (double v : file.params.weights.data()) w.put<double>(v);
    w.put<std::uint64_t>(file.params.log_noise_scale.size());
    for (double v : file.params.log_noise_scale.data()) w.put<double>(v);
    w.json_block(file.metadata);
    return w.take();
}

GeneratorFile decode_generator(const std::string& bytes) {
    Reader r(bytes);
    r.header("FEDG");
    GeneratorFile file;
    file.spec = spec_from_json(r.json_block());
    const auto nw = r.get<std::uint64_t>();
    if (nw != ParamLayout(file.spec.network()).total()) throw FormatError("generator weight count does not match its spec");
    check_count(nw, 8, r);
    std::vector<double> weights(nw);
    for (auto& v : weights) v = r.get<double>();
    const auto ns = r.get<std::uint64_t>();
    if (ns != file.spec.hidden_noise_sites.size()) throw FormatError("generator noise-scale count does not match its spec");
    std::vector<double> scales(ns);
    for (auto& v : scales) v = r.get<double>();
    file.params.weights = Tensor::vector(std::move(weights));
    file.params.log_noise_scale = Tensor::vector(std::move(scales));
    file.metadata = r.json_block();
    r.finish();
    return file;
}

std::string read_file(const std::filesystem::path& path, const std::string& producer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("missing artifact " + path.string() + " (produced by `fed " + producer + "`)");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArtifactError("cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ArtifactError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fed::store
