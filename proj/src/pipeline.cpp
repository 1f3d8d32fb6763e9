#include "fed/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fed/data.hpp"
#include "fed/dirichlet.hpp"
#include "fed/errors.hpp"
#include "fed/generator.hpp"
#include "fed/metrics.hpp"
#include "fed/posterior.hpp"
#include "fed/random.hpp"
#include "fed/store.hpp"

#ifndef FED_GIT_DESCRIBE
#define FED_GIT_DESCRIBE "unknown"
#endif

namespace fed::pipeline {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Artifact paths, relative to the run directory.
constexpr const char* kTrainData = "data/train.fedd";
constexpr const char* kTestData = "data/test.fedd";
constexpr const char* kOodData = "data/ood.fedd";
constexpr const char* kMembers = "ensemble/members.fedm";
constexpr const char* kBaseline = "ensemble/baseline.fedm";
constexpr const char* kPredTrain = "ensemble/train.fedp";
constexpr const char* kPredTest = "ensemble/test.fedp";
constexpr const char* kPredOod = "ensemble/ood.fedp";
constexpr const char* kPredHeldout = "ensemble/heldout.fedp";
constexpr const char* kAuxData = "mixup/aux.fedd";
constexpr const char* kPredAux = "mixup/aux.fedp";
constexpr const char* kGenerator = "generator/generator.fedg";
constexpr const char* kLossTrace = "generator/loss.json";

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_json(const Context& ctx, const std::string& rel, const json& j) {
    store::write_file_atomic(ctx.path(rel), dump(j));
}

json read_json(const Context& ctx, const std::string& rel, const std::string& producer) {
    return json::parse(store::read_file(ctx.path(rel), producer));
}

data::LabeledDataset load_dataset(const Context& ctx, const std::string& rel) {
    const std::string producer = rel == kAuxData ? "make-mixup" : "make-data";
    return store::decode_dataset(store::read_file(ctx.path(rel), producer));
}

Tensor load_dense(const Context& ctx, const std::string& rel, const std::string& producer) {
    auto st = store::decode_predictions(store::read_file(ctx.path(rel), producer));
    if (st.ragged) throw FormatError(rel + ": expected a dense prediction store");
    return std::move(st.dense);
}

std::vector<ModelParams> load_members(const Context& ctx, const std::string& rel) {
    return store::decode_members(store::read_file(ctx.path(rel), "train-ensemble"));
}

store::GeneratorFile load_generator(const Context& ctx) {
    return store::decode_generator(store::read_file(ctx.path(kGenerator), "distill"));
}

json store_meta(const Context& ctx, const std::string& dataset, const std::string& producer) {
    return {{"dataset", dataset}, {"seed", ctx.cfg.seed}, {"producer", producer}};
}

MlpSpec ensemble_spec(const ExperimentConfig& cfg, std::size_t d, std::size_t c) {
    MlpSpec spec;
    spec.widths.push_back(d);
    spec.widths.insert(spec.widths.end(), cfg.ensemble.hidden.begin(), cfg.ensemble.hidden.end());
    spec.widths.push_back(c);
    return spec;
}

std::size_t generator_functions(const ExperimentConfig& cfg, std::size_t ensemble_size) {
    return cfg.metrics.n_functions ? cfg.metrics.n_functions : ensemble_size;
}

json split_metrics(const Tensor& pt, const std::vector<std::size_t>* labels, std::size_t bins) {
    json j;
    if (pt.dim(1) >= 2) j["agreement"] = metrics::agreement(pt);
    if (labels) {
        j["accuracy"] = metrics::accuracy(pt, *labels);
        j["ece"] = metrics::ece(pt, *labels, bins);
    }
    return j;
}

std::vector<double> knowledge_scores(const Tensor& pt) { return metrics::uncertainty_decomposition(pt).knowledge; }

void write_roc(const Context& ctx, const std::string& rel, const metrics::RocCurve& roc) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "fpr,tpr,threshold\n";
    for (std::size_t k = 0; k < roc.fpr.size(); ++k) {
        csv << roc.fpr[k] << ',' << roc.tpr[k] << ',' << roc.thresholds[k] << '\n';
    }
    store::write_file_atomic(ctx.path(rel), csv.str());
}

}  // namespace

Context::Context(ExperimentConfig config, bool quiet_) : cfg(std::move(config)), out(cfg.output_dir), quiet(quiet_) {}

void Context::log(const std::string& message) const {
    if (!quiet) std::cerr << "[fed] " << message << '\n';
}

std::uint64_t stream_seed(const ExperimentConfig& cfg, Stream s) {
    return derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
}

std::string git_describe() { return FED_GIT_DESCRIBE; }

json cmd_make_data(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto& dc = cfg.dataset;
    const auto seed = stream_seed(cfg, Stream::kDataset);
    data::LabeledDataset full;
    if (dc.kind == "two_moons") {
        full = data::make_two_moons(dc.n, dc.noise, seed);
    } else if (dc.kind == "blobs") {
        full = data::make_blobs(dc.n, dc.centers, dc.noise, seed);
    } else {
        full = data::make_rings(dc.n, dc.radii, dc.noise, seed);
    }
    const auto plan = data::split(full, stream_seed(cfg, Stream::kSplit));
    auto train = full.subset(plan.train_idx);
    auto test = full.subset(plan.val_idx);
    train.name = dc.kind + "/train";
    test.name = dc.kind + "/test";

    const auto& oc = cfg.metrics.ood;
    data::OodShift shift;
    if (oc.shift == "disjoint_blob") {
        if (!oc.center.empty() && oc.center.size() != train.dim()) {
            throw ConfigError("metrics.ood.center must have one entry per input dimension");
        }
        shift = data::DisjointBlob{oc.n ? oc.n : test.size(), oc.std, oc.center};
    } else if (oc.shift == "translate") {
        if (oc.offset.size() != train.dim()) throw ConfigError("metrics.ood.offset must have one entry per input dimension");
        shift = data::Translate{oc.offset};
    } else {
        shift = data::ScaleRadius{oc.factor};
    }
    data::LabeledDataset ood;
    ood.inputs = data::make_ood(train, shift, stream_seed(cfg, Stream::kOod), oc.margin);
    ood.num_classes = train.num_classes;
    ood.name = dc.kind + "/ood-" + oc.shift;

    store::write_file_atomic(ctx.path(kTrainData), store::encode_dataset(train));
    store::write_file_atomic(ctx.path(kTestData), store::encode_dataset(test));
    store::write_file_atomic(ctx.path(kOodData), store::encode_dataset(ood, false));
    for (const auto* ds : {&train, &test}) {
        std::ostringstream csv;
        data::write_csv(csv, *ds);
        store::write_file_atomic(ctx.path(ds == &train ? "data/train.csv" : "data/test.csv"), csv.str());
    }
    ctx.log("make-data: " + std::to_string(train.size()) + " train, " + std::to_string(test.size()) + " test, " +
            std::to_string(ood.inputs.rows()) + " ood points");
    return {{"train", train.size()}, {"test", test.size()}, {"ood", ood.inputs.rows()}};
}

json cmd_train_ensemble(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto train = load_dataset(ctx, kTrainData);
    const auto test = load_dataset(ctx, kTestData);
    const auto ood = load_dataset(ctx, kOodData);
    const auto spec = ensemble_spec(cfg, train.dim(), train.num_classes);
    const auto seed = stream_seed(cfg, Stream::kEnsemble);
    const auto& pc = cfg.ensemble.partition;

    std::vector<ModelParams> members;
    std::optional<posterior::PartitionPlan> plan;
    if (pc.kind == "none") {
        ctx.log("train-ensemble: cSGHMC, " + std::to_string(cfg.ensemble.sampler.total_samples()) + " members");
        members = posterior::csghmc_sample(train, spec, cfg.ensemble.sampler, seed);
    } else {
        const auto kind = pc.kind == "kfold" ? posterior::PartitionKind::kFold : posterior::PartitionKind::kBagging;
        plan = posterior::make_partition(kind, train.size(), pc.groups, pc.members_per_group, seed);
        ctx.log("train-ensemble: " + pc.kind + " with " + std::to_string(plan->num_members()) + " members");
        members = posterior::sample_partitioned(train, spec, cfg.ensemble.sampler, *plan, seed);
    }

    // Single deterministic network on the same data and total step budget.
    auto baseline_cfg = cfg.ensemble.sampler;
    baseline_cfg.steps_per_cycle *= baseline_cfg.cycles;
    baseline_cfg.cycles = 1;
    baseline_cfg.samples_per_cycle = 1;
    baseline_cfg.temperature = 0.0;
    const auto baseline = posterior::train_deterministic(train, spec, baseline_cfg, stream_seed(cfg, Stream::kBaseline));

    const json meta = {{"seed", cfg.seed}, {"producer", "train-ensemble"}};
    store::write_file_atomic(ctx.path(kMembers), store::encode_members(spec, members, meta));
    store::write_file_atomic(ctx.path(kBaseline), store::encode_members(spec, {baseline}, meta));

    const Tensor pred_train = posterior::predict_ensemble(members, train.inputs);
    store::write_file_atomic(ctx.path(kPredTrain),
                             store::encode_predictions(pred_train, store_meta(ctx, train.name, "train-ensemble")));
    store::write_file_atomic(ctx.path(kPredTest),
                             store::encode_predictions(posterior::predict_ensemble(members, test.inputs),
                                                       store_meta(ctx, test.name, "train-ensemble")));
    store::write_file_atomic(ctx.path(kPredOod),
                             store::encode_predictions(posterior::predict_ensemble(members, ood.inputs),
                                                       store_meta(ctx, ood.name, "train-ensemble")));
    json summary = {{"members", members.size()}};
    if (plan) {
        const auto heldout = posterior::heldout_predictions(pred_train, *plan);
        json meta_h = store_meta(ctx, train.name, "train-ensemble");
        meta_h["excluded_points"] = heldout.excluded.size();
        store::write_file_atomic(ctx.path(kPredHeldout), store::encode_predictions(heldout, train.size(), meta_h));
        summary["heldout_excluded"] = heldout.excluded.size();
        if (!heldout.excluded.empty()) {
            ctx.log("train-ensemble: warning: " + std::to_string(heldout.excluded.size()) +
                    " points have no held-out members and are excluded");
        }
    }
    return summary;
}

json cmd_make_mixup(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto train = load_dataset(ctx, kTrainData);
    const auto members = load_members(ctx, kMembers);
    const auto n_aux = static_cast<std::size_t>(std::llround(cfg.mixup.ratio * static_cast<double>(train.size())));
    data::MixupOptions opts;
    opts.alpha = cfg.mixup.alpha;
    const auto mix = data::make_mixup(train, std::max<std::size_t>(n_aux, 1), opts, stream_seed(cfg, Stream::kMixup));

    data::LabeledDataset aux;
    aux.inputs = mix.inputs;
    aux.num_classes = train.num_classes;
    aux.name = cfg.dataset.kind + "/mixup";
    store::write_file_atomic(ctx.path(kAuxData), store::encode_dataset(aux, false));
    store::write_file_atomic(ctx.path(kPredAux),
                             store::encode_predictions(posterior::predict_ensemble(members, aux.inputs),
                                                       store_meta(ctx, aux.name, "make-mixup")));
    ctx.log("make-mixup: " + std::to_string(aux.inputs.rows()) + " auxiliary points");
    return {{"aux", aux.inputs.rows()}};
}

json cmd_distill(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto& source = cfg.distill.source;
    const auto train = load_dataset(ctx, kTrainData);
    const auto test = load_dataset(ctx, kTestData);

    Tensor inputs;
    std::optional<gen::TeacherSet> teachers;
    std::size_t ensemble_size = 0;
    if (source == "mixup") {
        inputs = load_dataset(ctx, kAuxData).inputs;
        const Tensor preds = load_dense(ctx, kPredAux, "make-mixup");
        ensemble_size = preds.dim(1);
        teachers = gen::TeacherSet::dense(preds);
    } else if (source == "train") {
        inputs = train.inputs;
        const Tensor preds = load_dense(ctx, kPredTrain, "train-ensemble");
        ensemble_size = preds.dim(1);
        teachers = gen::TeacherSet::dense(preds);
    } else {
        auto st = store::decode_predictions(store::read_file(ctx.path(kPredHeldout), "train-ensemble"));
        if (!st.ragged) throw FormatError(std::string(kPredHeldout) + ": expected a ragged prediction store");
        auto& h = st.heldout;
        inputs = Tensor({h.num_points(), train.dim()});
        for (std::size_t p = 0; p < h.num_points(); ++p) {
            const auto src = train.inputs.row(h.point_index[p]);
            std::copy(src.begin(), src.end(), inputs.row(p).begin());
        }
        ensemble_size = h.num_members;
        teachers = gen::TeacherSet::ragged(h);
    }
    if (teachers->num_points() != inputs.rows()) {
        throw FormatError("distill: teacher predictions do not align with the distillation inputs");
    }

    const auto spec = cfg.generator_spec(train.dim(), train.num_classes);
    Rng init_rng(stream_seed(cfg, Stream::kGenerator));
    auto dcfg = cfg.distill.train;
    dcfg.seed = derive_seed(stream_seed(cfg, Stream::kGenerator), 1);
    ctx.log("distill: " + std::to_string(inputs.rows()) + " " + source + " points, " + std::to_string(dcfg.epochs) +
            " epochs");
    auto result = gen::distill_train(spec, gen::init_generator(spec, init_rng), inputs, *teachers, dcfg);

    const auto n_fun = generator_functions(cfg, ensemble_size);
    const auto eval_seed = stream_seed(cfg, Stream::kEvalFunctions);
    const Tensor val_pred = gen::sample_predictions(spec, result.params, test.inputs, n_fun, eval_seed);
    store::GeneratorFile file{spec, result.params,
                              {{"val_accuracy", metrics::accuracy(val_pred, test.labels)},
                               {"eval_seed", eval_seed},
                               {"n_functions", n_fun},
                               {"source", source}}};
    store::write_file_atomic(ctx.path(kGenerator), store::encode_generator(file));
    json trace = {{"epoch_loss", result.epoch_loss},
                  {"steps", result.steps},
                  {"replacement_warnings", result.replacement_warnings},
                  {"noise_scales", json::array()}};
    for (std::size_t s = 0; s < spec.hidden_noise_sites.size(); ++s) {
        trace["noise_scales"].push_back(result.params.noise_scale(s));
    }
    write_json(ctx, kLossTrace, trace);
    if (result.replacement_warnings) {
        ctx.log("distill: warning: " + std::to_string(result.replacement_warnings) +
                " point draws had fewer teachers than virtual_members");
    }
    ctx.log("distill: final loss " + std::to_string(result.epoch_loss.back()));
    return {{"final_loss", result.epoch_loss.back()}, {"val_accuracy", file.metadata["val_accuracy"]}};
}

json cmd_evaluate(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto bins = cfg.metrics.ece_bins;
    const auto train = load_dataset(ctx, kTrainData);
    const auto test = load_dataset(ctx, kTestData);
    const auto aux = load_dataset(ctx, kAuxData);
    const Tensor ens_train = load_dense(ctx, kPredTrain, "train-ensemble");
    const Tensor ens_test = load_dense(ctx, kPredTest, "train-ensemble");
    const Tensor ens_aux = load_dense(ctx, kPredAux, "make-mixup");
    const auto baseline = load_members(ctx, kBaseline);
    const auto gfile = load_generator(ctx);
    const json trace = read_json(ctx, kLossTrace, "distill");

    const auto m = ens_train.dim(1);
    const auto n_fun = generator_functions(cfg, m);
    const auto seed = stream_seed(cfg, Stream::kEvalFunctions);
    const auto gen_pred = [&](const Tensor& x) { return gen::sample_predictions(gfile.spec, gfile.params, x, n_fun, seed); };

    json metrics_j;
    metrics_j["ensemble"] = {{"train", split_metrics(ens_train, &train.labels, bins)},
                             {"test", split_metrics(ens_test, &test.labels, bins)},
                             {"mixup", split_metrics(ens_aux, nullptr, bins)}};
    metrics_j["generator"] = {{"train", split_metrics(gen_pred(train.inputs), &train.labels, bins)},
                              {"test", split_metrics(gen_pred(test.inputs), &test.labels, bins)},
                              {"mixup", split_metrics(gen_pred(aux.inputs), nullptr, bins)}};
    metrics_j["baseline"] = {
        {"train", split_metrics(posterior::predict_ensemble(baseline, train.inputs), &train.labels, bins)},
        {"test", split_metrics(posterior::predict_ensemble(baseline, test.inputs), &test.labels, bins)}};

    json warnings = json::array();
    if (const auto w = trace.value("replacement_warnings", std::size_t{0})) {
        warnings.push_back("distill: " + std::to_string(w) + " point draws reused teachers (fewer than virtual_members)");
    }
    const json report = {{"config_hash", config_hash(cfg)},
                         {"version", git_describe()},
                         {"ensemble_size", m},
                         {"generator_functions", n_fun},
                         {"distill_source", gfile.metadata.value("source", "")},
                         {"final_distill_loss", trace.at("epoch_loss").back()},
                         {"metrics", metrics_j},
                         {"warnings", warnings}};
    write_json(ctx, "report.json", report);
    const auto& t = metrics_j["ensemble"]["test"];
    const auto& g = metrics_j["generator"]["test"];
    ctx.log("evaluate: test accuracy ensemble " + t["accuracy"].dump() + ", generator " + g["accuracy"].dump());
    return report;
}

json cmd_ood(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto test = load_dataset(ctx, kTestData);
    const auto ood = load_dataset(ctx, kOodData);
    const Tensor ens_test = load_dense(ctx, kPredTest, "train-ensemble");
    const Tensor ens_ood = load_dense(ctx, kPredOod, "train-ensemble");
    const auto gfile = load_generator(ctx);
    const auto n_fun = generator_functions(cfg, ens_test.dim(1));
    const auto seed = stream_seed(cfg, Stream::kEvalFunctions);

    const auto roc_ens = metrics::roc_auc(knowledge_scores(ens_test), knowledge_scores(ens_ood));
    const auto roc_gen =
        metrics::roc_auc(knowledge_scores(gen::sample_predictions(gfile.spec, gfile.params, test.inputs, n_fun, seed)),
                         knowledge_scores(gen::sample_predictions(gfile.spec, gfile.params, ood.inputs, n_fun, seed)));
    write_roc(ctx, "ood/roc_ensemble.csv", roc_ens);
    write_roc(ctx, "ood/roc_generator.csv", roc_gen);
    const json report = {{"config_hash", config_hash(cfg)},
                         {"version", git_describe()},
                         {"score", "knowledge_uncertainty"},
                         {"shift", cfg.metrics.ood.shift},
                         {"n_in", test.size()},
                         {"n_out", ood.inputs.rows()},
                         {"auc", {{"ensemble", roc_ens.auc}, {"generator", roc_gen.auc}}}};
    write_json(ctx, "ood/report.json", report);
    ctx.log("ood: AUC ensemble " + std::to_string(roc_ens.auc) + ", generator " + std::to_string(roc_gen.auc));
    return report;
}

json cmd_dirichlet_fit(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const Tensor ens_test = load_dense(ctx, kPredTest, "train-ensemble");
    const auto res = metrics::dirichlet_agreement_test(ens_test, stream_seed(cfg, Stream::kDirichlet));
    json report = {{"config_hash", config_hash(cfg)},
                   {"version", git_describe()},
                   {"dataset", "test"},
                   {"ensemble_agreement", res.ensemble_agreement},
                   {"dirichlet_agreement", res.dirichlet_agreement},
                   {"evaluated", res.evaluated},
                   {"skipped", res.skipped},
                   {"warnings", json::array()}};
    if (res.skipped) {
        report["warnings"].push_back(std::to_string(res.skipped) + " inputs skipped: Dirichlet fit did not converge");
    }
    write_json(ctx, "dirichlet/report.json", report);
    ctx.log("dirichlet-fit: ensemble agreement " + std::to_string(res.ensemble_agreement) + ", Dirichlet " +
            std::to_string(res.dirichlet_agreement));
    return report;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

json cmd_bench_eps(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const std::size_t d = cfg.dataset.kind == "blobs" ? cfg.dataset.centers.front().size() : 2;
    const auto spec = cfg.generator_spec(d, cfg.num_classes());
    Rng rng(stream_seed(cfg, Stream::kBench));
    const auto params = gen::init_generator(spec, rng);
    const auto b = cfg.bench.batch;
    Tensor inputs({b, d});
    for (double& v : inputs.data()) v = rng.normal();

    using clock = std::chrono::steady_clock;
    json rows = json::array();
    for (const auto f : cfg.bench.functions) {
        const auto eps = gen::draw_epsilon(spec, f, b, rng);
        std::vector<gen::EpsilonBatch> slices;
        for (std::size_t j = 0; j < f; ++j) slices.push_back(eps.slice(j));

        // Median over repeats keeps one slow repeat from skewing the ratio.
        Tensor batched, sequential({f, b, spec.num_classes()});
        std::vector<double> t_batched, t_sequential;
        for (std::size_t r = 0; r < cfg.bench.repeats; ++r) {
            auto t0 = clock::now();
            batched = gen::generator_forward(spec, params, inputs, eps);
            auto t1 = clock::now();
            for (std::size_t j = 0; j < f; ++j) {
                const Tensor one = gen::generator_forward(spec, params, inputs, slices[j]);
                std::copy(one.data().begin(), one.data().end(), sequential.row(j).begin());
            }
            auto t2 = clock::now();
            t_batched.push_back(std::chrono::duration<double>(t1 - t0).count());
            t_sequential.push_back(std::chrono::duration<double>(t2 - t1).count());
        }
        double max_diff = 0.0;
        for (std::size_t k = 0; k < batched.size(); ++k) {
            max_diff = std::max(max_diff, std::abs(batched[k] - sequential[k]));
        }
        const double med_b = median(t_batched), med_s = median(t_sequential);
        rows.push_back({{"functions", f},
                        {"batched_ms", 1e3 * med_b},
                        {"sequential_ms", 1e3 * med_s},
                        {"speedup", med_s / med_b},
                        {"max_abs_diff", max_diff}});
        ctx.log("bench-eps: M=" + std::to_string(f) + " speedup " + std::to_string(med_s / med_b) +
                ", max diff " + std::to_string(max_diff));
    }
    const json report = {{"version", git_describe()}, {"batch", b}, {"repeats", cfg.bench.repeats}, {"rows", rows}};
    write_json(ctx, "bench/eps.json", report);
    return report;
}

json timed(const Context& ctx, const std::string& name, const std::function<json(const Context&)>& command) {
    const auto t0 = std::chrono::steady_clock::now();
    json result = command(ctx);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json timings = json::object();
    if (fs::exists(ctx.path("timings.json"))) {
        try {
            timings = read_json(ctx, "timings.json", name);
        } catch (const json::exception&) {
            timings = json::object();
        }
    }
    timings[name] = seconds;
    write_json(ctx, "timings.json", timings);
    return result;
}

json run_all(const Context& ctx) {
    json out;
    out["make-data"] = timed(ctx, "make-data", cmd_make_data);
    out["train-ensemble"] = timed(ctx, "train-ensemble", cmd_train_ensemble);
    out["make-mixup"] = timed(ctx, "make-mixup", cmd_make_mixup);
    out["distill"] = timed(ctx, "distill", cmd_distill);
    out["evaluate"] = timed(ctx, "evaluate", cmd_evaluate);
    out["ood"] = timed(ctx, "ood", cmd_ood);
    out["dirichlet-fit"] = timed(ctx, "dirichlet-fit", cmd_dirichlet_fit);
    return out;
}

}  // namespace fed::pipeline
