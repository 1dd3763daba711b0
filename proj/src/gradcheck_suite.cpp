#include "bcaps/gradcheck_suite.hpp"

#include "bcaps/batch_norm.hpp"
#include "bcaps/capsules.hpp"
#include "bcaps/gradcheck.hpp"
#include "bcaps/models.hpp"
#include "bcaps/ops.hpp"
#include "bcaps/rng.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <random>

namespace bcaps {

namespace {

using Td = Tensor<double>;

/// Gradients smaller than this are compared on absolute difference; batch norm
/// makes some of them exactly zero and finite differences only see rounding there.
constexpr double kNoiseFloor = 1e-6;
constexpr int kOpTrials = 5;

class Suite {
public:
    explicit Suite(const GradSuiteOptions& options) : options_(options), rng_(options.seed) {}

    Td uniform(Shape shape, double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = dist(rng_);
        return Td(std::move(shape), std::move(v));
    }

    /// Values with magnitude in [lo, hi] and random sign.
    Td away_from_zero(Shape shape, double lo, double hi) {
        Td t = uniform(std::move(shape), lo, hi);
        std::bernoulli_distribution coin(0.5);
        for (auto& x : t.mutable_data()) x = coin(rng_) ? x : -x;
        return t;
    }

    /// Reduces `y` to a scalar with fixed random weights so every output
    /// element contributes a distinct amount.
    Td weigh(const Td& y) {
        auto it = weights_.find(shape_str(y.shape()));
        if (it == weights_.end()) it = weights_.emplace(shape_str(y.shape()), uniform(y.shape(), 0.5, 1.5)).first;
        return sum(mul(y, it->second));
    }

    /// Checks d loss / d leaf for each leaf; records the worst error.
    void check(const std::string& name, const std::function<Td()>& loss, std::vector<Td*> leaves,
               double tolerance, const GradCheckOptions& fd = {}) {
        double worst = 0;
        for (Td* leaf : leaves) worst = std::max(worst, grad_check_leaf(loss, *leaf, fd).max_rel_error);
        entries_.push_back({name, worst, tolerance, worst <= tolerance});
    }

    void op(const std::string& name, const std::function<Td()>& loss, std::vector<Td*> leaves) {
        check(name, loss, std::move(leaves), options_.op_tolerance, {{1e-3}, kNoiseFloor});
    }

    /// Wraps a loss so the first call records the trace and later calls replay it.
    static std::function<Td()> frozen(ForwardTrace<double>& trace, std::function<Td()> loss) {
        return [&trace, loss = std::move(loss)] {
            if (trace.mode() == ForwardTrace<double>::Mode::record && trace.size() > 0) trace.freeze();
            trace.rewind();
            return loss();
        };
    }

    std::vector<GradSuiteEntry> run();

private:
    void elementwise_ops();
    void linear_algebra_ops();
    void reduction_ops();
    void normalization_ops();
    void capsule_ops();
    void latent_ops();
    void models();
    void corrupted_op();

    GradSuiteOptions options_;
    std::mt19937_64 rng_;
    std::map<std::string, Td> weights_;
    std::vector<GradSuiteEntry> entries_;
};

void Suite::elementwise_ops() {
    Td a = uniform({3, 4}, -1, 1);
    Td b = uniform({3, 4}, -1, 1);
    Td s = Td::scalar(0.7);
    op("add", [&] { return weigh(a + b); }, {&a, &b});
    op("add (scalar broadcast)", [&] { return weigh(add(a, s)); }, {&a, &s});
    op("sub", [&] { return weigh(a - b); }, {&a, &b});
    op("sub (scalar broadcast)", [&] { return weigh(sub(s, a)); }, {&a, &s});
    op("mul", [&] { return weigh(a * b); }, {&a, &b});
    op("mul (scalar broadcast)", [&] { return weigh(mul(a, s)); }, {&a, &s});
    op("scale", [&] { return weigh(scale(a, -1.3)); }, {&a});
    op("add_scalar", [&] { return weigh(add_scalar(a, 0.4)); }, {&a});
    op("neg", [&] { return weigh(-a); }, {&a});
    op("exp", [&] { return weigh(exp(a)); }, {&a});
    Td p = uniform({3, 4}, 0.5, 2.0);
    op("sqrt", [&] { return weigh(sqrt(p)); }, {&p});
    op("square", [&] { return weigh(square(a)); }, {&a});
    Td wide = uniform({3, 4}, -4, 4);
    op("sigmoid", [&] { return weigh(sigmoid(wide)); }, {&wide});
    Td r = away_from_zero({3, 4}, 0.1, 1.0);
    op("relu", [&] { return weigh(relu(r)); }, {&r});
}

void Suite::linear_algebra_ops() {
    Td a = uniform({3, 4}, -1, 1);
    Td b = uniform({4, 5}, -1, 1);
    op("matmul", [&] { return weigh(matmul(a, b)); }, {&a, &b});
    Td x = uniform({2, 3, 4}, -1, 1);
    Td bias = uniform({4}, -1, 1);
    op("add_bias", [&] { return weigh(add_bias(x, bias)); }, {&x, &bias});
}

void Suite::reduction_ops() {
    Td x = uniform({2, 3, 4}, -1, 1);
    op("sum", [&] { return square(sum(x)); }, {&x});
    op("sum (axis)", [&] { return weigh(sum(x, 1)); }, {&x});
    op("mean", [&] { return square(mean(x)); }, {&x});
    op("mean (axis)", [&] { return weigh(mean(x, 2)); }, {&x});
    op("softmax", [&] { return weigh(softmax(x, 1)); }, {&x});
    op("reshape", [&] { return weigh(reshape(x, {4, 6})); }, {&x});
}

void Suite::normalization_ops() {
    Td x = uniform({5, 3}, -1, 2);
    BatchNorm<double> bn(3);
    bn.gamma = uniform({3}, 0.5, 1.5);
    bn.beta = uniform({3}, -0.5, 0.5);
    op("batch_norm (train)", [&] { return weigh(batch_norm(x, bn, true)); }, {&x, &bn.gamma, &bn.beta});
    bn.running_mean = uniform({3}, -0.2, 0.2);
    bn.running_var = uniform({3}, 0.5, 1.5);
    op("batch_norm (eval)", [&] { return weigh(batch_norm(x, bn, false)); }, {&x, &bn.gamma, &bn.beta});
}

void Suite::capsule_ops() {
    Td s = uniform({2, 3, 4}, -1, 1);
    op("squash", [&] { return weigh(squash(s)); }, {&s});
    op("caps_norm", [&] { return weigh(caps_norm(s)); }, {&s});

    Td u = uniform({2, 3, 4}, -1, 1);
    Td w = uniform({3, 2, 4, 5}, -1, 1);
    op("predict", [&] { return weigh(predict(u, w)); }, {&u, &w});

    Td k = uniform({2, 3, 2}, 0, 1);
    Td uhat = uniform({2, 3, 2, 5}, -1, 1);
    op("couple", [&] { return weigh(couple(k, uhat)); }, {&k, &uhat});

    ForwardTrace<double> trace;
    op("route", frozen(trace, [&] { return weigh(route(uhat, 3, &trace).output); }), {&uhat});

    BatchNorm<double> bn(3 * 4);
    bn.gamma = uniform({12}, 0.5, 1.5);
    bn.beta = uniform({12}, -0.5, 0.5);
    Td caps = uniform({8, 3, 4}, -1, 1);
    op("caps_batchnorm", [&] { return weigh(caps_batchnorm(caps, bn, true)); }, {&caps, &bn.gamma, &bn.beta});

    std::mt19937_64 init(rng_());
    FcCapsuleLayer<double> layer({3, 4, 2, 5, 3, true}, init, 0.5);
    Td layer_in = uniform({6, 3, 4}, -1, 1);
    ForwardTrace<double> layer_trace;
    op("fc_capsule_layer",
       frozen(layer_trace, [&] { return weigh(layer.forward(layer_in, true, &layer_trace)); }),
       {&layer_in, &layer.weights, &layer.norm->gamma, &layer.norm->beta});
}

void Suite::latent_ops() {
    Td mu = uniform({3, 2}, -1, 1);
    Td sigma = uniform({3, 2}, 0.1, 1.5);
    op("kl_loss", [&] { return kl_loss(LatentHeads<double>{mu, sigma}); }, {&mu, &sigma});

    Td x = uniform({3, 6}, 0, 1);
    Td xhat = uniform({3, 6}, 0, 1);
    op("recon_loss", [&] { return recon_loss(x, xhat); }, {&xhat});

    for (auto strategy : {SamplingStrategy::standard_normal, SamplingStrategy::shifted_normal,
                          SamplingStrategy::data_driven}) {
        ForwardTrace<double> trace;
        Rng noise(options_.seed);
        op("sample_latent (" + to_string(strategy) + ")",
           frozen(trace, [&] { return weigh(sample_latent(LatentHeads<double>{mu, sigma}, strategy, noise, &trace)); }),
           {&mu, &sigma});
        op("expected_latent (" + to_string(strategy) + ")",
           [&] { return weigh(expected_latent(LatentHeads<double>{mu, sigma}, strategy)); }, {&mu, &sigma});
    }
}

void Suite::models() {
    BCapsConfig caps;
    caps.caps = 2;
    caps.desc = 8;
    caps.latent = 2;
    caps.desc_out = 4;
    caps.pixels = 8;
    caps.decoder_hidden = 16;
    caps.sampling = SamplingStrategy::data_driven;

    BaselineVaeConfig vae;
    vae.hidden = 6;
    vae.latent = 2;
    vae.pixels = 8;
    vae.decoder_hidden = 16;
    vae.sampling = SamplingStrategy::standard_normal;

    for (const ModelConfig& config : {ModelConfig(caps), ModelConfig(vae)}) {
        Autoencoder<double> model(config, options_.seed);
        // At init every batch-norm shift is 0, which parks the decoder ReLUs on
        // their kink whenever the two latents nearly coincide.
        for (const auto& p : model.parameters()) {
            if (p.name.ends_with(".bn.beta")) *p.tensor = uniform(p.tensor->shape(), -0.5, 0.5);
            if (p.name.ends_with(".bn.gamma")) *p.tensor = uniform(p.tensor->shape(), 0.5, 1.5);
        }
        Td x = uniform({2, 8}, 0, 1);
        ForwardTrace<double> trace;
        Rng noise(options_.seed + 1);
        auto loss = frozen(trace, [&] {
            auto out = model.forward(x, ForwardOptions{true, false}, noise, &trace);
            return total_loss(x, out.recon, out.heads, 1.0);
        });
        std::vector<Td*> leaves;
        for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
        check(model_kind(config) + " end-to-end", loss, leaves, options_.model_tolerance, {{1e-4, 1e-6}, kNoiseFloor});
    }
}

void Suite::corrupted_op() {
    Td a = uniform({3, 4}, -1, 1);
    auto bad_square = [](const Td& x) {
        std::vector<double> values(x.data().begin(), x.data().end());
        for (auto& v : values) v *= v;
        return Td::from_op("corrupted_square", x.shape(), std::move(values), {x}, [](Node<double>& n) {
            Node<double>& in = *n.inputs[0];
            if (!in.requires_grad) return;
            auto g = in.grad_span();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * in.data[i] * n.grad[i];
        });
    };
    op("corrupted_square (test hook)", [&] { return weigh(bad_square(a)); }, {&a});
}

std::vector<GradSuiteEntry> Suite::run() {
    for (int trial = 0; trial < kOpTrials; ++trial) {
        elementwise_ops();
        linear_algebra_ops();
        reduction_ops();
        normalization_ops();
        capsule_ops();
        latent_ops();
    }
    if (options_.include_models) models();
    if (options_.corrupt) corrupted_op();

    // Each op ran once per trial; keep its worst trial.
    std::vector<GradSuiteEntry> merged;
    for (const auto& e : entries_) {
        auto it = std::find_if(merged.begin(), merged.end(), [&](const GradSuiteEntry& m) { return m.name == e.name; });
        if (it == merged.end()) {
            merged.push_back(e);
        } else if (e.max_rel_error > it->max_rel_error || !e.passed) {
            it->max_rel_error = std::max(it->max_rel_error, e.max_rel_error);
            it->passed = it->passed && e.passed;
        }
    }
    return merged;
}

} // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options) {
    return Suite(options).run();
}

bool all_passed(const std::vector<GradSuiteEntry>& entries) {
    return std::all_of(entries.begin(), entries.end(), [](const GradSuiteEntry& e) { return e.passed; });
}

} // namespace bcaps
