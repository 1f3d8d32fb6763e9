#include "fed/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "fed/errors.hpp"

namespace fed {
namespace {

using nlohmann::json;

// Reads fields out of one JSON object and rejects whatever is left over.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown key '" + where(key) + "'");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type");
        }
    }
    template <typename T>
    void get(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T value{};
        get(key, value);
        out = std::move(value);
    }
    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    const json& at(const char* key) const { return j_.at(key); }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_sampler(const json& j, posterior::SamplerConfig& s) {
    Section sec(j, "ensemble.sampler");
    sec.get("cycles", s.cycles);
    sec.get("steps_per_cycle", s.steps_per_cycle);
    sec.get("base_lr", s.base_lr);
    sec.get("exploration_fraction", s.exploration_fraction);
    sec.get("momentum_decay", s.momentum_decay);
    sec.get("temperature", s.temperature);
    sec.get("samples_per_cycle", s.samples_per_cycle);
    sec.get("prior_std", s.prior_std);
    sec.get("batch_size", s.batch_size);
    sec.get("chains", s.chains);
}

void read_kernel(const json& j, mmd::KernelSpec& k) {
    Section sec(j, "distill.kernel");
    std::string kind = k.kind_name();
    sec.get("kind", kind);
    try {
        k.kind = mmd::KernelSpec::parse_kind(kind);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("distill.kernel.kind: ") + e.what());
    }
    sec.get("lengthscales", k.lengthscales);
    if (k.kind == mmd::KernelKind::kLinear && !sec.has("lengthscales")) k.lengthscales.clear();
}

json sampler_json(const posterior::SamplerConfig& s) {
    return {{"cycles", s.cycles},
            {"steps_per_cycle", s.steps_per_cycle},
            {"base_lr", s.base_lr},
            {"exploration_fraction", s.exploration_fraction},
            {"momentum_decay", s.momentum_decay},
            {"temperature", s.temperature},
            {"samples_per_cycle", s.samples_per_cycle},
            {"prior_std", s.prior_std},
            {"batch_size", s.batch_size},
            {"chains", s.chains}};
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    {
        Section root(j, "");
        root.get("seed", cfg.seed);
        root.get("output_dir", cfg.output_dir);
        if (root.has("dataset")) {
            Section s(root.at("dataset"), "dataset");
            s.get("kind", cfg.dataset.kind);
            s.get("n", cfg.dataset.n);
            s.get("noise", cfg.dataset.noise);
            s.get("centers", cfg.dataset.centers);
            s.get("radii", cfg.dataset.radii);
        }
        if (root.has("ensemble")) {
            Section s(root.at("ensemble"), "ensemble");
            s.get("hidden", cfg.ensemble.hidden);
            if (s.has("sampler")) read_sampler(s.at("sampler"), cfg.ensemble.sampler);
            if (s.has("partition")) {
                Section p(s.at("partition"), "ensemble.partition");
                p.get("kind", cfg.ensemble.partition.kind);
                p.get("groups", cfg.ensemble.partition.groups);
                p.get("members_per_group", cfg.ensemble.partition.members_per_group);
            }
        }
        if (root.has("mixup")) {
            Section s(root.at("mixup"), "mixup");
            s.get("alpha", cfg.mixup.alpha);
            s.get("ratio", cfg.mixup.ratio);
        }
        if (root.has("generator")) {
            Section s(root.at("generator"), "generator");
            s.get("hidden", cfg.generator.hidden);
            s.get("input_noise_dims", cfg.generator.input_noise_dims);
            s.get("hidden_noise_sites", cfg.generator.hidden_noise_sites);
            s.get("init_noise_scale", cfg.generator.init_noise_scale);
            s.get("share_hidden_noise", cfg.generator.share_hidden_noise);
        }
        if (root.has("distill")) {
            Section s(root.at("distill"), "distill");
            auto& d = cfg.distill.train;
            s.get("source", cfg.distill.source);
            s.get("batch_size", d.batch_size);
            s.get("virtual_members", d.virtual_members);
            s.get("epochs", d.epochs);
            s.get("base_lr", d.base_lr);
            s.get("milestones", d.milestones);
            s.get("factor", d.factor);
            s.get("train_noise_scales", d.train_noise_scales);
            if (s.has("kernel")) read_kernel(s.at("kernel"), d.kernel);
        }
        if (root.has("metrics")) {
            Section s(root.at("metrics"), "metrics");
            s.get("ece_bins", cfg.metrics.ece_bins);
            s.get("n_functions", cfg.metrics.n_functions);
            if (s.has("ood")) {
                Section o(s.at("ood"), "metrics.ood");
                auto& ood = cfg.metrics.ood;
                o.get("shift", ood.shift);
                o.get("n", ood.n);
                o.get("std", ood.std);
                o.get("offset", ood.offset);
                o.get("center", ood.center);
                o.get("factor", ood.factor);
                o.get("margin", ood.margin);
            }
        }
        if (root.has("bench")) {
            Section s(root.at("bench"), "bench");
            s.get("functions", cfg.bench.functions);
            s.get("batch", cfg.bench.batch);
            s.get("repeats", cfg.bench.repeats);
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
}

void ExperimentConfig::validate() const {
    const auto& ds = dataset;
    require(ds.kind == "two_moons" || ds.kind == "blobs" || ds.kind == "rings",
            "dataset.kind must be two_moons, blobs or rings");
    require(ds.n >= 10, "dataset.n must be at least 10");
    require(ds.noise >= 0.0, "dataset.noise must be non-negative");
    if (ds.kind == "blobs") {
        require(ds.centers.size() >= 2, "dataset.centers needs at least two centers");
        for (const auto& c : ds.centers) {
            require(!c.empty() && c.size() == ds.centers.front().size(), "dataset.centers must share one dimension");
        }
    }
    if (ds.kind == "rings") require(ds.radii.size() >= 2, "dataset.radii needs at least two radii");

    require(!ensemble.hidden.empty(), "ensemble.hidden needs at least one layer");
    try {
        ensemble.sampler.validate();
        distill.train.validate();
        generator_spec(2, 2).validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
    const auto& part = ensemble.partition;
    require(part.kind == "none" || part.kind == "kfold" || part.kind == "bagging",
            "ensemble.partition.kind must be none, kfold or bagging");
    if (part.kind != "none") {
        require(part.groups >= 2 || part.kind == "bagging", "ensemble.partition.groups must be at least 2 for kfold");
        require(part.groups >= 1 && part.members_per_group >= 1, "ensemble.partition sizes must be positive");
        require(ensemble.sampler.total_samples() == part.members_per_group,
                "ensemble.partition.members_per_group must equal sampler cycles * samples_per_cycle");
    }
    require(ensemble.sampler.total_samples() >= 2 || part.kind != "none", "the ensemble needs at least two members");
    require(mixup.alpha > 0.0, "mixup.alpha must be positive");
    require(mixup.ratio > 0.0, "mixup.ratio must be positive");
    require(distill.source == "mixup" || distill.source == "train" || distill.source == "heldout",
            "distill.source must be mixup, train or heldout");
    require(distill.source != "heldout" || part.kind != "none",
            "distill.source = heldout needs ensemble.partition.kind kfold or bagging");
    require(metrics.ece_bins >= 1, "metrics.ece_bins must be positive");
    require(metrics.n_functions != 1, "metrics.n_functions must be 0 or at least 2");
    const auto& ood = metrics.ood;
    require(ood.shift == "disjoint_blob" || ood.shift == "translate" || ood.shift == "scale_radius",
            "metrics.ood.shift must be disjoint_blob, translate or scale_radius");
    require(ood.std >= 0.0, "metrics.ood.std must be non-negative");
    require(!ood.margin || *ood.margin >= 0.0, "metrics.ood.margin must be non-negative");
    const std::size_t dim = ds.kind == "blobs" ? ds.centers.front().size() : 2;
    require(ood.center.empty() || ood.center.size() == dim, "metrics.ood.center must match the data dimension");
    require(ood.shift != "translate" || ood.offset.empty() || ood.offset.size() == dim,
            "metrics.ood.offset must match the data dimension");
    require(!bench.functions.empty() && bench.batch >= 1 && bench.repeats >= 1, "bench settings must be positive");
    for (auto f : bench.functions) require(f >= 1, "bench.functions entries must be positive");
}

std::size_t ExperimentConfig::num_classes() const {
    if (dataset.kind == "blobs") return dataset.centers.size();
    if (dataset.kind == "rings") return dataset.radii.size();
    return 2;
}

gen::GeneratorSpec ExperimentConfig::generator_spec(std::size_t data_dim, std::size_t classes) const {
    std::vector<std::size_t> hidden = generator.hidden;
    auto spec = gen::GeneratorSpec::with_defaults(data_dim, hidden, classes);
    if (generator.input_noise_dims) spec.input_noise_dims = *generator.input_noise_dims;
    if (generator.hidden_noise_sites) spec.hidden_noise_sites = *generator.hidden_noise_sites;
    spec.init_noise_scale = generator.init_noise_scale;
    spec.share_hidden_noise = generator.share_hidden_noise;
    return spec;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["dataset"] = {{"kind", cfg.dataset.kind},
                    {"n", cfg.dataset.n},
                    {"noise", cfg.dataset.noise},
                    {"centers", cfg.dataset.centers},
                    {"radii", cfg.dataset.radii}};
    j["ensemble"] = {{"hidden", cfg.ensemble.hidden},
                     {"sampler", sampler_json(cfg.ensemble.sampler)},
                     {"partition",
                      {{"kind", cfg.ensemble.partition.kind},
                       {"groups", cfg.ensemble.partition.groups},
                       {"members_per_group", cfg.ensemble.partition.members_per_group}}}};
    j["mixup"] = {{"alpha", cfg.mixup.alpha}, {"ratio", cfg.mixup.ratio}};
    json g = {{"hidden", cfg.generator.hidden},
              {"init_noise_scale", cfg.generator.init_noise_scale},
              {"share_hidden_noise", cfg.generator.share_hidden_noise}};
    g["input_noise_dims"] = cfg.generator.input_noise_dims ? json(*cfg.generator.input_noise_dims) : json(nullptr);
    g["hidden_noise_sites"] = cfg.generator.hidden_noise_sites ? json(*cfg.generator.hidden_noise_sites) : json(nullptr);
    j["generator"] = g;
    const auto& d = cfg.distill.train;
    j["distill"] = {{"source", cfg.distill.source},
                    {"batch_size", d.batch_size},
                    {"virtual_members", d.virtual_members},
                    {"epochs", d.epochs},
                    {"base_lr", d.base_lr},
                    {"milestones", d.milestones},
                    {"factor", d.factor},
                    {"train_noise_scales", d.train_noise_scales},
                    {"kernel", {{"kind", d.kernel.kind_name()}, {"lengthscales", d.kernel.lengthscales}}}};
    const auto& o = cfg.metrics.ood;
    j["metrics"] = {{"ece_bins", cfg.metrics.ece_bins},
                    {"n_functions", cfg.metrics.n_functions},
                    {"ood",
                     {{"shift", o.shift},
                      {"n", o.n},
                      {"std", o.std},
                      {"offset", o.offset},
                      {"center", o.center},
                      {"factor", o.factor},
                      {"margin", o.margin ? json(*o.margin) : json(nullptr)}}}};
    j["bench"] = {{"functions", cfg.bench.functions}, {"batch", cfg.bench.batch}, {"repeats", cfg.bench.repeats}};
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("output_dir");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace fed
