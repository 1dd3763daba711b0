// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero if any criterion fails.

#include "support.hpp"

#include "bcaps/capsules.hpp"
#include "bcaps/checkpoint.hpp"
#include "bcaps/cli.hpp"
#include "bcaps/dataio.hpp"
#include "bcaps/error.hpp"
#include "bcaps/evaluation.hpp"
#include "bcaps/gradcheck_suite.hpp"
#include "bcaps/metrics.hpp"
#include "bcaps/models.hpp"
#include "bcaps/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace bcaps;
using bcaps::testing::random_tensor;
using Td = Tensor<double>;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

/// Collects failed sub-checks of one criterion.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    Outcome outcome(const std::string& summary) const {
        if (failed_ == 0) return {true, fmt::format("{} ({} checks)", summary, count_)};
        std::string detail = fmt::format("{} of {} checks failed", failed_, count_);
        for (const auto& f : failures_) detail += "; " + f;
        return {false, detail};
    }

private:
    std::size_t count_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
};

double norm_of(std::span<const double> v) {
    double q = 0;
    for (double x : v) q += x * x;
    return std::sqrt(q);
}

// ---------------------------------------------------------------- 1

Outcome parameter_counts() {
    struct Cell {
        std::size_t latent;
        const char* column;
        const char* shown;
    };
    const std::vector<Cell> table = {
        {2, "vae512", "405K"},   {2, "vae1024", "810K"},  {2, "bcaps", "532K"},  {4, "vae512", "407K"},
        {4, "vae1024", "814K"},  {4, "bcaps", "663K"},    {6, "vae512", "409K"}, {6, "vae1024", "818K"},
        {6, "bcaps", "794K"},    {8, "vae512", "411K"},   {8, "vae1024", "822K"}, {8, "bcaps", "925K"},
        {10, "vae512", "413K"},  {10, "vae1024", "826K"}, {10, "bcaps", "1.05M"},
    };

    std::ostringstream out, err;
    if (cli::run({"bcaps", "params", "--table"}, out, err) != 0) return {false, "params --table failed: " + err.str()};
    std::map<std::pair<std::size_t, std::string>, double> printed;
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        std::istringstream cells(line);
        std::size_t latent = 0;
        double a = 0, b = 0, c = 0;
        cells >> latent >> a >> b >> c;
        printed[{latent, "vae512"}] = a;
        printed[{latent, "vae1024"}] = b;
        printed[{latent, "bcaps"}] = c;
    }

    Checks checks;
    for (const auto& cell : table) {
        const std::string shown = cell.shown;
        const bool mega = shown.back() == 'M';
        const double scale = mega ? 1e6 : 1e3;
        const double unit = mega ? 0.01e6 : 1e3;
        const double value = std::stod(shown.substr(0, shown.size() - 1)) * scale;
        const auto it = printed.find({cell.latent, cell.column});
        const bool found = it != printed.end();
        checks.expect(found && std::abs(it->second - value) < unit,
                      fmt::format("L={} {}: {} vs {}", cell.latent, cell.column, found ? it->second : -1.0, shown));
    }
    std::ostringstream exact;
    cli::run({"bcaps", "params", "--caps", "8", "--desc", "64", "--latent", "2", "--desc-out", "64"}, exact, err);
    checks.expect(exact.str() == "532480\n", "B-Caps C=8 D=64 L=2 printed " + exact.str());
    return checks.outcome("15 table cells within display rounding; B-Caps L=2 = 532480");
}

// ---------------------------------------------------------------- 2

Outcome gradient_suite() {
    const auto entries = run_gradcheck_suite();
    double worst_op = 0, worst_model = 0;
    std::size_t models = 0;
    Checks checks;
    for (const auto& e : entries) {
        const bool model = e.name.ends_with("end-to-end");
        models += model ? 1 : 0;
        double& worst = model ? worst_model : worst_op;
        worst = std::max(worst, e.max_rel_error);
        checks.expect(e.max_rel_error <= (model ? 1e-4 : 1e-6), fmt::format("{} {:.2e}", e.name, e.max_rel_error));
    }
    checks.expect(models == 2, fmt::format("{} end-to-end entries", models));
    return checks.outcome(fmt::format("{} entries, worst op {:.2e} (tol 1e-6), worst end-to-end {:.2e} (tol 1e-4)",
                                      entries.size(), worst_op, worst_model));
}

// ---------------------------------------------------------------- 3

Outcome capsule_properties() {
    Checks checks;
    std::mt19937_64 rng(303);

    double worst_simplex = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Td uhat = random_tensor({3, 6, 5, 4}, rng, -3, 3);
        for (int iters = 1; iters <= 5; ++iters) {
            const Td k = route(uhat, iters).state.couplings;
            for (std::size_t b = 0; b < 3; ++b) {
                for (std::size_t i = 0; i < 6; ++i) {
                    double total = 0;
                    for (std::size_t j = 0; j < 5; ++j) total += k.at({b, i, j});
                    worst_simplex = std::max(worst_simplex, std::abs(total - 1.0));
                }
            }
        }
    }
    checks.expect(worst_simplex <= 1e-9, fmt::format("coupling sum off by {:.2e}", worst_simplex));

    std::uniform_real_distribution<double> log_scale(-4, 4);
    double worst_cos = 0, max_norm = 0;
    for (int trial = 0; trial < 500; ++trial) {
        Td s = random_tensor({1, 8}, rng);
        const double target = std::pow(10.0, log_scale(rng));
        const double n0 = norm_of(s.data());
        for (auto& v : s.mutable_data()) v *= target / n0;
        const Td v = squash(s);
        const double nv = norm_of(v.data());
        max_norm = std::max(max_norm, nv);
        double dot = 0;
        for (std::size_t d = 0; d < 8; ++d) dot += s.data()[d] * v.data()[d];
        worst_cos = std::max(worst_cos, std::abs(dot / (norm_of(s.data()) * nv) - 1.0));
    }
    checks.expect(max_norm < 1.0, fmt::format("squash norm reached {}", max_norm));
    checks.expect(worst_cos <= 1e-9, fmt::format("squash direction off by {:.2e}", worst_cos));

    Td uhat = random_tensor({4, 6, 5, 3}, rng);
    const Td v1 = route(uhat, 1).output;
    const Td uniform_sum = squash(couple(Td({4, 6, 5}, 1.0 / 5.0), uhat));
    bool same = true;
    for (std::size_t i = 0; i < v1.numel(); ++i) same = same && v1.data()[i] == uniform_sum.data()[i];
    checks.expect(same, "iters=1 differs from the uniform-coupling squash");

    for (const auto& [n_in, n_out, din, dout] : std::vector<std::array<std::size_t, 4>>{{2, 3, 2, 4}, {8, 2, 8, 16}}) {
        const Td u = random_tensor({3, n_in, din}, rng);
        const Td w = random_tensor({n_in, n_out, din, dout}, rng);
        const Td p = predict(u, w);
        std::size_t mismatches = 0;
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t i = 0; i < n_in; ++i) {
                for (std::size_t j = 0; j < n_out; ++j) {
                    for (std::size_t e = 0; e < dout; ++e) {
                        double acc = 0;
                        for (std::size_t d = 0; d < din; ++d) acc += u.at({b, i, d}) * w.at({i, j, d, e});
                        if (p.at({b, i, j, e}) != acc) ++mismatches;
                    }
                }
            }
        }
        checks.expect(mismatches == 0, fmt::format("predict [{},{},{},{}] differs from the naive loop at {} entries",
                                                   n_in, n_out, din, dout, mismatches));
    }
    return checks.outcome(
        fmt::format("simplex err {:.1e}, squash max norm {:.6f}, direction err {:.1e}", worst_simplex, max_norm, worst_cos));
}

// ---------------------------------------------------------------- 4

Outcome metric_identities() {
    Checks checks;
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> pixel(0, 1);
    std::uniform_int_distribution<int> label(0, 9), coin(0, 2);
    double worst_sym = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(784), b(784);
        for (auto& x : a) x = pixel(rng);
        for (auto& x : b) x = pixel(rng);
        checks.expect(ssim(a, a) == 1.0, "ssim(A,A) != 1");
        checks.expect(mse_metric(a, a) == 0.0, "mse(A,A) != 0");
        worst_sym = std::max(worst_sym, std::abs(ssim(a, b) - ssim(b, a)));

        std::vector<int> truth(200), pred(200);
        for (std::size_t i = 0; i < 200; ++i) {
            truth[i] = label(rng);
            pred[i] = coin(rng) == 0 ? label(rng) : truth[i];
        }
        double total = 0;
        int classes = 0;
        for (int c = 0; c < 10; ++c) {
            int tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < 200; ++i) {
                tp += truth[i] == c && pred[i] == c;
                fp += truth[i] != c && pred[i] == c;
                fn += truth[i] == c && pred[i] != c;
            }
            if (tp + fp + fn == 0) continue;
            ++classes;
            if (tp == 0) continue;
            const double p = static_cast<double>(tp) / (tp + fp);
            const double r = static_cast<double>(tp) / (tp + fn);
            total += 2 * p * r / (p + r);
        }
        const double oracle = total / classes;
        const double f1 = f1_macro(truth, pred);
        checks.expect(f1 == oracle, fmt::format("f1 {} vs counting oracle {}", f1, oracle));
    }
    checks.expect(worst_sym <= 1e-12, fmt::format("ssim asymmetry {:.2e}", worst_sym));
    return checks.outcome(fmt::format("100 random pairs, ssim asymmetry {:.1e}", worst_sym));
}

// ---------------------------------------------------------------- 5-7

/// Fixed-seed data and trained models shared by the desk-scale criteria.
struct DeskScale {
    static constexpr std::size_t kTrainSubset = 10000;
    static constexpr std::size_t kTestSubset = 5000;
    static constexpr std::uint64_t kSubsetSeed = 2024;
    static constexpr std::uint64_t kTrainSeed = 1;
    static constexpr int kEpochs = 20;

    Dataset train;
    Dataset test;

    struct Run {
        std::optional<TrainingHistory> history;  ///< empty when training diverged
        std::string divergence;
        ImageMatrix recon;
    };
    std::map<std::string, Run> runs;

    DeskScale()
        : train(random_subset(bcaps::testing::mnist_train(), kTrainSubset, kSubsetSeed)),
          test(random_subset(bcaps::testing::mnist_test(), kTestSubset, kSubsetSeed)) {}

    const Run& run(const std::string& key, const ModelConfig& config) {
        if (auto it = runs.find(key); it != runs.end()) return it->second;
        TrainConfig t;
        t.epochs = kEpochs;
        t.seed = kTrainSeed;
        t.precision = Precision::f32;
        auto model = make_model<float>(config, t.seed);
        Run r;
        const auto start = std::chrono::steady_clock::now();
        try {
            r.history = train_model(model, t);
            r.recon = reconstruct(model, test);
        } catch (const DivergenceError& e) {
            r.divergence = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << fmt::format("  trained {} in {:.0f} s{}\n", key, secs,
                                 r.history ? fmt::format(", final loss {:.6f}", r.history->back().total_loss)
                                           : ", diverged");
        return runs.emplace(key, std::move(r)).first->second;
    }

    TrainingHistory train_model(Autoencoder<float>& model, const TrainConfig& t) { return bcaps::train(model, train, t); }

    static BCapsConfig bcaps(std::size_t latent, SamplingStrategy s = SamplingStrategy::data_driven) {
        BCapsConfig c;
        c.caps = 8;
        c.desc = 64;
        c.latent = latent;
        c.desc_out = 64;
        c.sampling = s;
        return c;
    }
    static BaselineVaeConfig vae(std::size_t latent) {
        BaselineVaeConfig c;
        c.hidden = 512;
        c.latent = latent;
        return c;
    }
};

DeskScale& desk() {
    static DeskScale d;
    return d;
}

double mean_ssim(const Dataset& test, const ImageMatrix& recon) {
    return evaluate_reconstructions(test.to_matrix(), recon).ssim_summary.mean;
}

Outcome reconstruction_trend() {
    auto& d = desk();
    Checks checks;
    std::string summary;
    for (std::size_t latent : {2, 6, 10}) {
        const auto& b = d.run(fmt::format("bcaps-L{}", latent), DeskScale::bcaps(latent));
        const auto& v = d.run(fmt::format("vae-L{}", latent), DeskScale::vae(latent));
        if (!b.history || !v.history) {
            checks.expect(false, fmt::format("L={} training diverged: {}{}", latent, b.divergence, v.divergence));
            continue;
        }
        const double sb = mean_ssim(d.test, b.recon), sv = mean_ssim(d.test, v.recon);
        summary += fmt::format("{}L={}: B-Caps {:.4f} vs VAE {:.4f}", summary.empty() ? "" : ", ", latent, sb, sv);
        if (latent == 2) checks.expect(sb >= sv - 0.02, fmt::format("L=2 B-Caps {:.4f} < VAE {:.4f} - 0.02", sb, sv));
        if (latent == 10) checks.expect(sb >= sv + 0.01, fmt::format("L=10 B-Caps {:.4f} < VAE {:.4f} + 0.01", sb, sv));
    }
    return checks.outcome("mean SSIM " + summary);
}

Outcome sampling_ordering() {
    auto& d = desk();
    const auto& data_driven = d.run("bcaps-L2", DeskScale::bcaps(2));
    const auto& shifted = d.run("bcaps-L2-shifted", DeskScale::bcaps(2, SamplingStrategy::shifted_normal));
    const auto& standard = d.run("bcaps-L2-standard", DeskScale::bcaps(2, SamplingStrategy::standard_normal));
    if (!data_driven.history || !shifted.history) {
        return {false, "DataDriven or ShiftedNormal diverged: " + data_driven.divergence + shifted.divergence};
    }
    const double dd = data_driven.history->back().total_loss;
    const double sh = shifted.history->back().total_loss;
    Checks checks;
    checks.expect(dd <= sh, fmt::format("DataDriven {:.6f} > ShiftedNormal {:.6f}", dd, sh));
    std::string standard_text;
    if (standard.history) {
        const double st = standard.history->back().total_loss;
        checks.expect(st >= dd, fmt::format("StandardNormal {:.6f} < DataDriven {:.6f}", st, dd));
        standard_text = fmt::format("StandardNormal {:.6f}", st);
    } else {
        standard_text = "StandardNormal diverged (" + standard.divergence + ")";
    }
    return checks.outcome(fmt::format("final loss DataDriven {:.6f}, ShiftedNormal {:.6f}, {}", dd, sh, standard_text));
}

Outcome classification_trend() {
    auto& d = desk();
    const auto& b = d.run("bcaps-L10", DeskScale::bcaps(10));
    const auto& v = d.run("vae-L10", DeskScale::vae(10));
    if (!b.history || !v.history) return {false, "L=10 training diverged"};
    ClassifierOptions options;
    options.seed = DeskScale::kTrainSeed;
    const auto classifier = train_classifier(d.train.to_matrix(), d.train.labels, options);
    const auto raw = classify(*classifier, d.test.to_matrix());
    const auto pb = classify(*classifier, b.recon);
    const auto pv = classify(*classifier, v.recon);
    const double fb = f1_macro(d.test.labels, pb), fv = f1_macro(d.test.labels, pv);
    Checks checks;
    checks.expect(fb > fv, fmt::format("B-Caps F1 {:.4f} <= VAE F1 {:.4f}", fb, fv));
    return checks.outcome(fmt::format("macro-F1 at L=10: B-Caps {:.4f}, VAE {:.4f}, originals {:.4f}; accuracy {:.4f} / "
                                      "{:.4f} / {:.4f}",
                                      fb, fv, f1_macro(d.test.labels, raw), accuracy(d.test.labels, pb),
                                      accuracy(d.test.labels, pv), accuracy(d.test.labels, raw)));
}

// ---------------------------------------------------------------- 8

Outcome determinism_and_persistence() {
    Checks checks;
    const Dataset data = bcaps::testing::have_mnist() ? random_subset(bcaps::testing::mnist_train(), 512, 8)
                                                      : bcaps::testing::synthetic_dataset(512, 8);
    BCapsConfig small;
    small.caps = 4;
    small.desc = 16;
    small.desc_out = 16;
    small.decoder_hidden = 128;
    TrainConfig t;
    t.batch_size = 64;
    t.epochs = 3;
    t.seed = 88;
    t.precision = Precision::f64;

    auto history_csv = [&] {
        auto model = make_model<double>(small, t.seed);
        return format_csv(kHistoryHeader, history_rows(train(model, data, t)));
    };
    checks.expect(history_csv() == history_csv(), "same seed gave different history CSVs");

    const auto dir = bcaps::testing::scratch_dir("acceptance-persistence");
    auto straight_model = make_model<double>(small, t.seed);
    Trainer<double> straight(straight_model, t);
    straight.fit(data);
    save_checkpoint(straight.checkpoint(), dir / "a.bcap");
    save_checkpoint(load_checkpoint(dir / "a.bcap"), dir / "b.bcap");
    checks.expect(read_file(dir / "a.bcap") == read_file(dir / "b.bcap"), "checkpoint re-save is not bit-exact");

    TrainConfig first = t;
    first.epochs = 1;
    auto half_model = make_model<double>(small, t.seed);
    Trainer<double> half(half_model, first);
    half.fit(data);
    save_checkpoint(half.checkpoint(), dir / "epoch1.bcap");
    auto resumed_model = make_model<double>(small, t.seed + 1);
    Trainer<double> resumed(resumed_model, t);
    resumed.restore(load_checkpoint(dir / "epoch1.bcap"));
    resumed.fit(data);
    checks.expect(resumed.history() == straight.history(), "resumed history differs");
    checks.expect(encode_checkpoint(resumed.checkpoint()) == encode_checkpoint(straight.checkpoint()),
                  "resumed checkpoint differs");
    return checks.outcome("history CSV, checkpoint bytes and 1+2 epoch resume all identical (f64)");
}

// ---------------------------------------------------------------- 9

Outcome idx_parser() {
    Checks checks;
    const std::vector<std::uint8_t> labels{0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 0x07, 0x02};
    const std::vector<std::uint8_t> images{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0x00, 0xFF, 0x80, 0x40};
    const IdxFile l = parse_idx(labels);
    checks.expect(l.dims == std::vector<std::uint32_t>{2} && l.payload == std::vector<std::uint8_t>{7, 2},
                  "label fixture");
    const IdxFile i = parse_idx(images);
    checks.expect(i.dims == std::vector<std::uint32_t>{1, 2, 2} &&
                      i.payload == std::vector<std::uint8_t>{0, 255, 128, 64},
                  "image fixture");
    auto truncated = images;
    truncated.pop_back();
    bool threw = false;
    try {
        parse_idx(truncated);
    } catch (const ParseError&) {
        threw = true;
    }
    checks.expect(threw, "truncated fixture accepted");

    if (!bcaps::testing::have_mnist()) {
        checks.expect(false, "MNIST files not found under " + bcaps::testing::mnist_dir().string());
        return checks.outcome("");
    }
    const std::size_t n_train = bcaps::testing::mnist_train().size();
    const std::size_t n_test = bcaps::testing::mnist_test().size();
    checks.expect(n_train == 60000, fmt::format("train has {} items", n_train));
    checks.expect(n_test == 10000, fmt::format("test has {} items", n_test));
    return checks.outcome(fmt::format("fixtures parse; MNIST {} / {} items", n_train, n_test));
}

Outcome needs_mnist(const std::function<Outcome()>& f) {
    if (!bcaps::testing::have_mnist()) {
        return {false, "MNIST files not found under " + bcaps::testing::mnist_dir().string()};
    }
    return f();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"parameter counts", parameter_counts},
        {"gradient suite", gradient_suite},
        {"capsule properties", capsule_properties},
        {"metric identities", metric_identities},
        {"reconstruction trend", [] { return needs_mnist(reconstruction_trend); }},
        {"sampling-strategy ordering", [] { return needs_mnist(sampling_ordering); }},
        {"classification trend", [] { return needs_mnist(classification_trend); }},
        {"determinism and persistence", determinism_and_persistence},
        {"IDX parser", idx_parser},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int number = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(number)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += o.passed ? 0 : 1;
        std::cout << fmt::format("{} criterion {}: {} [{:.1f} s] {}\n", o.passed ? "PASS" : "FAIL", number,
                                 criteria[k].first, secs, o.detail)
                  << std::flush;
    }
    return failures == 0 ? 0 : 1;
}
