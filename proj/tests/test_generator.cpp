#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fed/errors.hpp"
#include "fed/generator.hpp"
#include "fed/mlp.hpp"
#include "support.hpp"

using namespace fed;
using namespace fed::gen;

namespace {

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

GeneratorSpec small_spec(std::size_t d = 2, std::size_t c = 3) {
    auto spec = GeneratorSpec::with_defaults(d, {6, 5}, c);
    spec.init_noise_scale = 0.3;
    return spec;
}

// Scalar loop forward pass for one function and one input.
std::vector<double> oracle_forward(const GeneratorSpec& spec, const GeneratorParams& params, std::span<const double> x,
                                   const EpsilonBatch& eps, std::size_t j, std::size_t i) {
    const auto net = spec.network();
    const auto tensors = ParamLayout(net).unpack(params.weights.data());
    std::vector<double> z(x.begin(), x.end());
    for (std::size_t k = 0; k < spec.input_noise_dims; ++k) z.push_back(eps.input_noise(j, k));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const Tensor& w = tensors[2 * l];
        const Tensor& b = tensors[2 * l + 1];
        std::vector<double> next(w.cols());
        for (std::size_t o = 0; o < w.cols(); ++o) {
            double acc = b[o];
            for (std::size_t in = 0; in < z.size(); ++in) acc += z[in] * w(in, o);
            next[o] = acc;
        }
        if (l + 1 < net.num_layers()) {
            for (double& v : next) v = std::max(v, 0.0);
            for (std::size_t s = 0; s < spec.hidden_noise_sites.size(); ++s) {
                if (spec.hidden_noise_sites[s] != l) continue;
                const double scale = params.noise_scale(s);
                for (std::size_t o = 0; o < next.size(); ++o) next[o] += scale * eps.hidden_noise[s](j, i, o);
            }
        }
        z = std::move(next);
    }
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) total += v = std::exp(v - top);
    for (double& v : z) v /= total;
    return z;
}

// Central differences of distill_loss over both weights and log scales.
double distill_gradcheck(const GeneratorSpec& spec, const GeneratorParams& params, const Tensor& x,
                         const EpsilonBatch& eps, const Tensor& reps, const mmd::KernelSpec& kernel) {
    GeneratorParams analytic;
    {
        GeneratorGraph gg(spec, params);
        gg.graph().backward(distill_loss(gg, x, eps, reps, kernel));
        analytic = gg.gradients();
    }
    const auto eval = [&](const GeneratorParams& p) {
        GeneratorGraph gg(spec, p);
        return distill_loss(gg, x, eps, reps, kernel).value().item();
    };
    const double h = 1e-5;
    double worst = 0.0;
    auto work = params;
    for (int part = 0; part < 2; ++part) {
        Tensor& target = part == 0 ? work.weights : work.log_noise_scale;
        const Tensor& grad = part == 0 ? analytic.weights : analytic.log_noise_scale;
        double diff = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < target.size(); ++k) {
            const double v = target[k];
            target[k] = v + h;
            const double up = eval(work);
            target[k] = v - h;
            const double down = eval(work);
            target[k] = v;
            const double num = (up - down) / (2 * h);
            diff += (grad[k] - num) * (grad[k] - num);
            norm += num * num;
        }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8));
    }
    return worst;
}

}  // namespace

TEST_CASE("spec defaults and validation") {
    const auto spec = GeneratorSpec::with_defaults(3, {8, 8}, 4);
    CHECK(spec.input_noise_dims == 3);
    CHECK(spec.hidden_noise_sites == std::vector<std::size_t>{0, 1});
    CHECK(spec.network().widths == std::vector<std::size_t>{6, 8, 8, 4});
    auto bad = spec;
    bad.hidden_noise_sites = {2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.hidden_noise_sites = {1, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.init_noise_scale = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward pass matches the scalar oracle and rows are distributions") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        auto spec = small_spec(2 + rng.index(2), 2 + rng.index(3));
        spec.share_hidden_noise = trial % 2 == 1;
        const auto params = init_generator(spec, rng);
        const std::size_t m = 1 + rng.index(5), b = 1 + rng.index(6);
        const Tensor x = testing::random_tensor({b, spec.data_dim()}, rng);
        const auto eps = draw_epsilon(spec, m, b, rng);
        const Tensor probs = generator_forward(spec, params, x, eps);
        REQUIRE(probs.shape() == Shape{m, b, spec.num_classes()});
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < b; ++i) {
                const auto want = oracle_forward(spec, params, x.row(i), eps, j, i);
                double total = 0.0;
                for (std::size_t c = 0; c < want.size(); ++c) {
                    CHECK(std::abs(probs(j, i, c) - want[c]) < 1e-12);
                    total += probs(j, i, c);
                }
                CHECK(std::abs(total - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("batched evaluation equals one function at a time") {
    Rng rng(2);
    const auto spec = small_spec();
    const auto params = init_generator(spec, rng);
    const Tensor x = testing::random_tensor({7, 2}, rng);
    const auto eps = draw_epsilon(spec, 32, 7, rng);
    const Tensor all = generator_forward(spec, params, x, eps);
    for (std::size_t j = 0; j < 32; ++j) {
        const Tensor one = generator_forward(spec, params, x, eps.slice(j));
        for (std::size_t k = 0; k < one.size(); ++k) CHECK(std::abs(all[j * one.size() + k] - one[k]) < 1e-12);
    }
    std::vector<EpsilonBatch> parts;
    for (std::size_t j = 0; j < 32; ++j) parts.push_back(eps.slice(j));
    const auto restacked = stack(parts);
    CHECK(same(restacked.input_noise, eps.input_noise));
    CHECK(same(restacked.hidden_noise[1], eps.hidden_noise[1]));
}

TEST_CASE("graph forward equals the tensor forward") {
    Rng rng(3);
    const auto spec = small_spec();
    const auto params = init_generator(spec, rng);
    const Tensor x = testing::random_tensor({5, 2}, rng);
    const auto eps = draw_epsilon(spec, 4, 5, rng);
    const Tensor direct = generator_forward(spec, params, x, eps);
    GeneratorGraph gg(spec, params);
    const Tensor& via_graph = gg.probs(x, eps).value();
    REQUIRE(via_graph.size() == direct.size());
    for (std::size_t k = 0; k < direct.size(); ++k) CHECK(std::abs(via_graph[k] - direct[k]) < 1e-13);
}

TEST_CASE("no noise collapses every function draw to one") {
    Rng rng(4);
    auto spec = small_spec();
    spec.input_noise_dims = 0;
    const auto params = without_hidden_noise(init_generator(spec, rng));
    const Tensor x = testing::random_tensor({6, 2}, rng);
    const Tensor probs = sample_predictions(spec, params, x, 10, 99);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t f = 1; f < 10; ++f) {
            for (std::size_t c = 0; c < 3; ++c) CHECK(probs(i, f, c) == probs(i, 0, c));
        }
    }
    CHECK(std::abs(covariance_between_inputs(spec, params, x.row(0), x.row(1), 0, 0, 50, 5)) < 1e-25);
}

TEST_CASE("noise draws are seed-determined") {
    const auto spec = small_spec();
    Rng a(7), b(7), c(8);
    const auto ea = draw_epsilon(spec, 3, 4, a), eb = draw_epsilon(spec, 3, 4, b), ec = draw_epsilon(spec, 3, 4, c);
    CHECK(same(ea.input_noise, eb.input_noise));
    CHECK(same(ea.hidden_noise[0], eb.hidden_noise[0]));
    CHECK_FALSE(same(ea.input_noise, ec.input_noise));

    auto shared = spec;
    shared.share_hidden_noise = true;
    Rng d(9);
    const auto es = draw_epsilon(shared, 2, 5, d);
    for (std::size_t i = 1; i < 5; ++i) {
        for (std::size_t k = 0; k < 6; ++k) CHECK(es.hidden_noise[0](1, i, k) == es.hidden_noise[0](1, 0, k));
    }
}

TEST_CASE("sample_predictions does not depend on chunking") {
    Rng rng(10);
    const auto spec = small_spec();
    const auto params = init_generator(spec, rng);
    const Tensor x = testing::random_tensor({3, 2}, rng);
    const Tensor many = sample_predictions(spec, params, x, 12, 77);
    const Tensor few = sample_predictions(spec, params, x, 5, 77);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t f = 0; f < 5; ++f) {
            for (std::size_t c = 0; c < 3; ++c) CHECK(few(i, f, c) == many(i, f, c));
        }
    }
    // Function f is exactly the forward pass under Rng(derive_seed(seed, f)).
    Rng r3(derive_seed(77, 3));
    const Tensor f3 = generator_forward(spec, params, x, draw_epsilon(spec, 1, 3, r3));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(f3(0, i, c) == many(i, 3, c));
    }
}

TEST_CASE("distillation loss gradient matches finite differences including noise scales") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto spec = small_spec(2, 2 + rng.index(2));
        spec.share_hidden_noise = trial % 3 == 0;
        const auto params = init_generator(spec, rng);
        const std::size_t m = 2 + rng.index(3), b = 2 + rng.index(4);
        const Tensor x = testing::random_tensor({b, 2}, rng);
        const auto eps = draw_epsilon(spec, m, b, rng);
        const Tensor reps = testing::random_probs(m * b, spec.num_classes(), rng).reshaped({m, b * spec.num_classes()});
        const auto kernel = trial % 2 ? mmd::KernelSpec::rbf_mixture({0.5, 1.0, 2.0}) : mmd::KernelSpec::linear();
        CHECK(distill_gradcheck(spec, params, x, eps, reps, kernel) < 1e-4);
    }
}

TEST_CASE("pick_teachers follows priority and falls back to replacement") {
    Rng rng(12);
    const std::vector<std::size_t> rank{3, 0, 2, 1};  // priority order: 1, 3, 2, 0
    std::vector<std::size_t> slots;
    const std::vector<std::uint32_t> all{0, 1, 2, 3};
    CHECK_FALSE(pick_teachers(all, rank, 2, rng, slots));
    CHECK(slots == std::vector<std::size_t>{1, 3});
    const std::vector<std::uint32_t> two{0, 2};
    CHECK(pick_teachers(two, rank, 4, rng, slots));
    REQUIRE(slots.size() == 4);
    CHECK(slots[0] == 1);  // slot of member 2
    CHECK(slots[1] == 0);
    for (std::size_t s : slots) CHECK(s < 2);
}

TEST_CASE("teacher sets from dense and ragged predictions") {
    Tensor dense({2, 3, 2});
    for (std::size_t k = 0; k < dense.size(); ++k) dense[k] = (k % 2) ? 0.25 : 0.75;
    const auto t = TeacherSet::dense(dense);
    CHECK(t.num_points() == 2);
    CHECK(t.num_members() == 3);
    CHECK(t.members(1).size() == 3);
    CHECK(t.prob(1, 2)[0] == 0.75);

    posterior::RaggedPredictions rp;
    rp.num_members = 4;
    rp.num_classes = 2;
    rp.point_index = {0, 2};
    rp.offsets = {0, 1, 3};
    rp.member_ids = {2, 0, 3};
    rp.probs = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7};
    const auto r = TeacherSet::ragged(rp);
    CHECK(r.num_points() == 2);
    CHECK(r.members(1).size() == 2);
    CHECK(r.members(1)[1] == 3);
    CHECK(r.prob(1, 1)[0] == 0.3);
}

TEST_CASE("distillation on identical teachers learns them and shrinks diversity") {
    // Every member predicts the same fixed labelling, so the target has zero spread.
    Rng rng(13);
    const std::size_t n = 64, members = 8;
    const Tensor x = testing::random_tensor({n, 2}, rng);
    Tensor teach({n, members, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const double p = x(i, 0) > 0 ? 0.9 : 0.1;
        for (std::size_t m = 0; m < members; ++m) {
            teach(i, m, 0) = p;
            teach(i, m, 1) = 1 - p;
        }
    }
    auto spec = GeneratorSpec::with_defaults(2, {16, 16}, 2);
    spec.init_noise_scale = 0.5;
    const auto init = init_generator(spec, rng);
    DistillConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 200;
    cfg.base_lr = 1e-2;
    cfg.milestones = {150};
    cfg.seed = 3;
    const auto res = distill_train(spec, init, x, TeacherSet::dense(teach), cfg);
    CHECK(res.steps == 200 * 4);
    CHECK(res.replacement_warnings == 0);
    REQUIRE(res.epoch_loss.size() == 200);
    for (double v : res.epoch_loss) CHECK(v >= -1e-12);
    CHECK(res.epoch_loss.back() < 0.3 * res.epoch_loss.front());

    const Tensor before = sample_predictions(spec, init, x, 16, 1);
    const Tensor after = sample_predictions(spec, res.params, x, 16, 1);
    const auto spread = [&](const Tensor& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t f = 0; f < 16; ++f) mean += p(i, f, 0) / 16.0;
            for (std::size_t f = 0; f < 16; ++f) sq += (p(i, f, 0) - mean) * (p(i, f, 0) - mean);
            s += sq / 16.0;
        }
        return s / static_cast<double>(n);
    };
    CHECK(spread(after) < spread(before));
    std::size_t right = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t f = 0; f < 16; ++f) mean += after(i, f, 0) / 16.0;
        right += (mean > 0.5) == (x(i, 0) > 0);
    }
    CHECK(right >= 58);

    // Same seed, same result.
    const auto again = distill_train(spec, init, x, TeacherSet::dense(teach), cfg);
    CHECK(same(again.params.weights, res.params.weights));
    CHECK(again.epoch_loss == res.epoch_loss);
}

TEST_CASE("ragged teachers with too few members count replacement warnings") {
    Rng rng(14);
    posterior::RaggedPredictions rp;
    rp.num_members = 4;
    rp.num_classes = 2;
    rp.point_index = {0, 1, 2};
    rp.offsets = {0, 1, 3, 7};
    rp.member_ids = {0, 1, 2, 0, 1, 2, 3};
    rp.probs.assign(14, 0.5);
    auto spec = GeneratorSpec::with_defaults(2, {4}, 2);
    DistillConfig cfg;
    cfg.virtual_members = 3;
    cfg.epochs = 2;
    cfg.milestones = {};
    const auto res = distill_train(spec, init_generator(spec, rng), testing::random_tensor({3, 2}, rng),
                                   TeacherSet::ragged(rp), cfg);
    CHECK(res.replacement_warnings == 4);  // points 0 and 1, twice each
    CHECK_THROWS_AS(distill_train(spec, init_generator(spec, rng), testing::random_tensor({4, 2}, rng),
                                  TeacherSet::ragged(rp), cfg),
                    DimensionError);
}

TEST_CASE("function covariance matches a direct computation and grows with noise scale") {
    Rng rng(15);
    auto spec = small_spec();
    spec.input_noise_dims = 0;
    auto params = init_generator(spec, rng);
    const std::vector<double> x1{0.3, -0.5}, x2{0.4, -0.2};
    const Tensor table = paired_function_values(spec, params, x1, x2, 0, 1, 400, 21);
    double ma = 0, mb = 0;
    for (std::size_t f = 0; f < 400; ++f) {
        ma += table(f, 0) / 400.0;
        mb += table(f, 1) / 400.0;
    }
    double cov = 0;
    for (std::size_t f = 0; f < 400; ++f) cov += (table(f, 0) - ma) * (table(f, 1) - mb) / 399.0;
    CHECK(covariance_between_inputs(spec, params, x1, x2, 0, 1, 400, 21) == doctest::Approx(cov).epsilon(1e-12));

    double prev = -1.0;
    for (double scale : {0.05, 0.2, 0.8}) {
        for (double& v : params.log_noise_scale.data()) v = std::log(scale);
        const double var = covariance_between_inputs(spec, params, x1, x1, 0, 0, 400, 21);
        CHECK(var > prev);
        prev = var;
    }
}
