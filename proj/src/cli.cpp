#include "bcaps/cli.hpp"

#include "bcaps/checkpoint.hpp"
#include "bcaps/dataio.hpp"
#include "bcaps/error.hpp"
#include "bcaps/evaluation.hpp"
#include "bcaps/gradcheck_suite.hpp"
#include "bcaps/keyvalue.hpp"
#include "bcaps/metrics.hpp"
#include "bcaps/models.hpp"
#include "bcaps/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>

namespace bcaps::cli {

namespace fs = std::filesystem;

namespace {

/// Bad or missing command-line input detected after flag parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

struct DataFlags {
    std::string data_dir;
    std::string dataset = "mnist";
    std::string train_images, train_labels, test_images, test_labels;
};

struct ModelFlags {
    std::string model = "bcaps";
    std::size_t caps = 8, desc = 64, latent = 2, desc_out = 64, hidden = 512;
    int routing_iters = 3;
    bool primary_batchnorm = true;
    std::string sampling;
    std::vector<CLI::Option*> options;
};

struct Flags {
    DataFlags data;
    ModelFlags model;

    // train
    int epochs = 100;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double kl_weight = 1.0;
    int kl_warmup_epochs = 0;
    std::string precision = "f64";
    std::size_t subset = 0;
    std::uint64_t subset_seed = 0;
    bool resume = false;
    std::string grid_epochs;
    bool quiet = false;

    // shared outputs
    std::string out_dir;
    std::string checkpoint;

    // eval / classify / export-latent
    std::size_t test_subset = 0;
    bool expected_latent = false;
    std::uint64_t eval_seed = 0;

    // classify
    std::string classifier = "softmax-linear";
    int classifier_epochs = 10;
    std::size_t classifier_subset = 0;
    std::optional<double> svm_c;
    bool identity = false;

    // params
    bool table = false;

    // gradcheck
    bool corrupt = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& d, bool train, bool test) {
    cmd->add_option("--data-dir", d.data_dir,
                    "Directory holding the four standard IDX files (train/t10k images and labels)");
    cmd->add_option("--dataset", d.dataset, "Dataset name")->check(CLI::IsMember({"mnist", "fashion-mnist"}));
    if (train) {
        cmd->add_option("--train-images", d.train_images, "Training image IDX file (overrides --data-dir)");
        cmd->add_option("--train-labels", d.train_labels, "Training label IDX file (overrides --data-dir)");
    }
    if (test) {
        cmd->add_option("--test-images", d.test_images, "Test image IDX file (overrides --data-dir)");
        cmd->add_option("--test-labels", d.test_labels, "Test label IDX file (overrides --data-dir)");
    }
}

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
    const std::vector<CLI::Option*> added{
        cmd->add_option("--model", m.model, "Encoder kind")->check(CLI::IsMember({"bcaps", "vae"})),
        cmd->add_option("--caps", m.caps, "B-Caps primary capsule types C"),
        cmd->add_option("--desc", m.desc, "B-Caps primary description length D"),
        cmd->add_option("--latent", m.latent, "Latent dimension L"),
        cmd->add_option("--desc-out", m.desc_out, "B-Caps latent description length D1"),
        cmd->add_option("--routing-iters", m.routing_iters, "Dynamic routing iterations"),
        cmd->add_option("--primary-batchnorm", m.primary_batchnorm, "Batch-normalize primary capsules (B-Caps)"),
        cmd->add_option("--hidden", m.hidden, "Baseline hidden width"),
        cmd->add_option("--sampling", m.sampling,
                        "standard-normal | shifted-normal | data-driven (default: data-driven for bcaps, "
                        "standard-normal for vae)"),
    };
    m.options.insert(m.options.end(), added.begin(), added.end());
}

bool model_flags_given(const ModelFlags& m) {
    for (const auto* o : m.options) {
        if (o->count() > 0) return true;
    }
    return false;
}

ModelConfig model_config(const ModelFlags& m) {
    ModelConfig config;
    try {
        if (m.model == "bcaps") {
            BCapsConfig c;
            c.caps = m.caps;
            c.desc = m.desc;
            c.latent = m.latent;
            c.desc_out = m.desc_out;
            c.routing_iters = m.routing_iters;
            c.primary_batchnorm = m.primary_batchnorm;
            if (!m.sampling.empty()) c.sampling = parse_sampling(m.sampling);
            config = c;
        } else {
            BaselineVaeConfig c;
            c.hidden = m.hidden;
            c.latent = m.latent;
            if (!m.sampling.empty()) c.sampling = parse_sampling(m.sampling);
            config = c;
        }
        validate(config);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    return config;
}

std::string default_out_dir() {
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return "bcaps-out";
}

fs::path out_dir(const Flags& f) {
    return f.out_dir.empty() ? fs::path(default_out_dir()) : fs::path(f.out_dir);
}

fs::path checkpoint_path(const Flags& f) {
    return f.checkpoint.empty() ? out_dir(f) / "checkpoint.bcap" : fs::path(f.checkpoint);
}

std::string resolve(const std::string& explicit_path, const DataFlags& d, const char* file, const char* flag) {
    fs::path path;
    if (!explicit_path.empty()) {
        path = explicit_path;
    } else if (!d.data_dir.empty()) {
        path = fs::path(d.data_dir) / file;
    } else {
        throw UsageError(fmt::format("missing dataset path: pass --data-dir or {}", flag));
    }
    if (!fs::exists(path)) {
        throw UsageError(fmt::format("dataset file '{}' does not exist (from {})", path.string(),
                                     explicit_path.empty() ? "--data-dir" : flag));
    }
    return path.string();
}

Dataset load_train(const DataFlags& d) {
    const std::string images = resolve(d.train_images, d, "train-images-idx3-ubyte", "--train-images");
    const std::string labels = resolve(d.train_labels, d, "train-labels-idx1-ubyte", "--train-labels");
    return load_dataset(images, labels, d.dataset, "train");
}

Dataset load_test(const DataFlags& d) {
    const std::string images = resolve(d.test_images, d, "t10k-images-idx3-ubyte", "--test-images");
    const std::string labels = resolve(d.test_labels, d, "t10k-labels-idx1-ubyte", "--test-labels");
    return load_dataset(images, labels, d.dataset, "test");
}

Dataset test_data(const Flags& f) {
    Dataset test = load_test(f.data);
    return f.test_subset > 0 ? test.head(f.test_subset) : test;
}

std::vector<std::vector<double>> rows_of(const ImageMatrix& m, std::size_t count) {
    std::vector<std::vector<double>> images;
    for (std::size_t r = 0; r < std::min(count, m.rows); ++r) {
        images.emplace_back(m.row(r).begin(), m.row(r).end());
    }
    return images;
}

Checkpoint read_checkpoint(const Flags& f) {
    const fs::path path = checkpoint_path(f);
    if (!fs::exists(path)) throw UsageError(fmt::format("checkpoint '{}' does not exist (--checkpoint)", path.string()));
    return load_checkpoint(path);
}

/// Model config stored in the checkpoint; explicit model flags must agree.
ModelConfig checked_config(const Checkpoint& ckpt, const Flags& f) {
    const ModelConfig stored = checkpoint_model_config(ckpt);
    if (model_flags_given(f.model)) {
        const ModelConfig requested = model_config(f.model);
        if (requested != stored) {
            throw CheckpointMismatch(fmt::format("checkpoint model does not match the requested architecture.\n"
                                                 "checkpoint:\n{}requested:\n{}",
                                                 serialize_model_config(stored), serialize_model_config(requested)));
        }
    }
    return stored;
}

std::vector<int> parse_epoch_list(const std::string& text, int final_epoch) {
    std::set<int> epochs;
    if (text.empty()) {
        epochs.insert(final_epoch);
    } else {
        std::size_t pos = 0;
        while (pos <= text.size()) {
            std::size_t end = text.find(',', pos);
            if (end == std::string::npos) end = text.size();
            const std::string item = text.substr(pos, end - pos);
            pos = end + 1;
            if (item.empty()) continue;
            try {
                epochs.insert(std::stoi(item));
            } catch (const std::exception&) {
                throw UsageError(fmt::format("--grid-epochs: '{}' is not an epoch number", item));
            }
        }
    }
    return {epochs.begin(), epochs.end()};
}

template <class T>
void write_grids(Autoencoder<T>& model, const Dataset& grid_source, const fs::path& dir, const std::string& stem,
                 const EvalOptions& eval) {
    const ImageMatrix recon = reconstruct(model, grid_source, eval);
    write_image_grid(rows_of(recon, 16), 8, dir / (stem + ".pgm"));
}

template <class T>
int train_impl(const Flags& f, std::ostream& out) {
    TrainConfig tc;
    tc.batch_size = f.batch_size;
    tc.epochs = f.epochs;
    tc.learning_rate = f.lr;
    tc.seed = f.seed;
    tc.kl_weight = f.kl_weight;
    tc.kl_warmup_epochs = f.kl_warmup_epochs;
    tc.precision = parse_precision(f.precision);
    try {
        validate(tc);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    const ModelConfig config = model_config(f.model);

    Dataset train = load_train(f.data);
    if (f.subset > 0) train = random_subset(train, f.subset, f.subset_seed);
    const Dataset grid_source = load_test(f.data).head(16);

    const fs::path dir = out_dir(f);
    fs::create_directories(dir);
    const fs::path ckpt_path = checkpoint_path(f);

    Autoencoder<T> model = make_model<T>(config, tc.seed);
    Trainer<T> trainer(model, tc);
    if (f.resume) {
        const Checkpoint ckpt = read_checkpoint(f);
        if (checkpoint_model_config(ckpt) != config) {
            throw CheckpointMismatch(fmt::format("cannot resume: checkpoint holds a different model:\n{}",
                                                 serialize_model_config(checkpoint_model_config(ckpt))));
        }
        trainer.restore(ckpt);
        if (!f.quiet) out << fmt::format("resumed from {} at epoch {}\n", ckpt_path.string(), trainer.epoch());
    }

    const std::vector<int> milestones = parse_epoch_list(f.grid_epochs, tc.epochs);
    write_image_grid(rows_of(grid_source.to_matrix(), 16), 8, dir / "originals.pgm");
    const EvalOptions eval{500, f.expected_latent, f.eval_seed};

    auto write_history = [&] { write_csv(kHistoryHeader, history_rows(trainer.history()), dir / "history.csv"); };
    try {
        trainer.fit(train, [&](const EpochStats& s) {
            if (!f.quiet) {
                out << fmt::format("epoch {}/{}  recon={:.6f}  kl={:.6f}  total={:.6f}\n", s.epoch, tc.epochs,
                                   s.recon_loss, s.kl_loss, s.total_loss);
                out.flush();
            }
            if (std::find(milestones.begin(), milestones.end(), s.epoch) != milestones.end()) {
                write_grids(model, grid_source, dir, fmt::format("recon_epoch{:03}", s.epoch), eval);
            }
        });
    } catch (const DivergenceError&) {
        write_history();
        throw;
    }
    write_history();
    save_checkpoint(trainer.checkpoint(), ckpt_path);
    if (!f.quiet) out << fmt::format("wrote {} and {}\n", (dir / "history.csv").string(), ckpt_path.string());
    return kOk;
}

template <class T>
Autoencoder<T> restore_model(const Checkpoint& ckpt, const ModelConfig& config) {
    Autoencoder<T> model(config, 0);
    load_model(ckpt, model);
    return model;
}

template <class T>
ImageMatrix reconstruct_from(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& data,
                             const EvalOptions& eval) {
    Autoencoder<T> model = restore_model<T>(ckpt, config);
    return reconstruct(model, data, eval);
}

ImageMatrix reconstruct_checkpoint(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& data,
                                   const EvalOptions& eval) {
    return checkpoint_precision(ckpt) == Precision::f32 ? reconstruct_from<float>(ckpt, config, data, eval)
                                                         : reconstruct_from<double>(ckpt, config, data, eval);
}

int cmd_train(const Flags& f, std::ostream& out) {
    return parse_precision(f.precision) == Precision::f32 ? train_impl<float>(f, out) : train_impl<double>(f, out);
}

int cmd_eval(const Flags& f, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(f);
    const ModelConfig config = checked_config(ckpt, f);
    const Dataset test = test_data(f);
    const EvalOptions eval{500, f.expected_latent, f.eval_seed};
    const ImageMatrix originals = test.to_matrix();
    const ImageMatrix recon = reconstruct_checkpoint(ckpt, config, test, eval);
    const MetricsReport report = evaluate_reconstructions(originals, recon);

    const fs::path dir = out_dir(f);
    std::vector<CsvRow> rows;
    for (std::size_t i = 0; i < report.n; ++i) {
        rows.push_back({static_cast<long long>(i), static_cast<long long>(test.labels[i]), report.mse[i],
                        report.ssim[i]});
    }
    write_csv({"index", "label", "mse", "ssim"}, rows, dir / "metrics_per_image.csv");
    write_csv({"metric", "mean", "std", "n"},
              {{std::string("mse"), report.mse_summary.mean, report.mse_summary.std, static_cast<long long>(report.n)},
               {std::string("ssim"), report.ssim_summary.mean, report.ssim_summary.std,
                static_cast<long long>(report.n)}},
              dir / "metrics_summary.csv");
    write_image_grid(rows_of(originals, 16), 8, dir / "eval_originals.pgm");
    write_image_grid(rows_of(recon, 16), 8, dir / "eval_recon.pgm");
    out << fmt::format("n={}  SSIM {:.4f} ± {:.4f}  MSE {:.5f} ± {:.5f}\n", report.n, report.ssim_summary.mean,
                       report.ssim_summary.std, report.mse_summary.mean, report.mse_summary.std);
    return kOk;
}

int cmd_classify(const Flags& f, std::ostream& out) {
    const Dataset test = test_data(f);
    ImageMatrix evaluated;
    std::optional<Checkpoint> ckpt;
    std::optional<ModelConfig> config;
    if (f.identity) {
        evaluated = test.to_matrix();
    } else {
        ckpt = read_checkpoint(f);
        config = checked_config(*ckpt, f);
    }

    Dataset train = load_train(f.data);
    if (f.classifier_subset > 0) train = random_subset(train, f.classifier_subset, f.subset_seed);
    ClassifierOptions options;
    try {
        options.kind = parse_classifier(f.classifier);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    options.seed = f.seed;
    options.epochs = f.classifier_epochs;
    options.svm_c = f.svm_c.value_or(f.data.dataset == "fashion-mnist" ? 10.0 : 100.0);
    const auto classifier = train_classifier(train.to_matrix(), train.labels, options);

    if (!f.identity) evaluated = reconstruct_checkpoint(*ckpt, *config, test, EvalOptions{500, f.expected_latent, f.eval_seed});
    const std::vector<int> predicted = classify(*classifier, evaluated);
    const ConfusionMatrix cm = confusion(test.labels, predicted);
    const double f1 = f1_macro(test.labels, predicted);
    const double acc = accuracy(test.labels, predicted);

    const fs::path dir = out_dir(f);
    write_csv({"metric", "value"},
              {{std::string("f1_macro"), f1}, {std::string("accuracy"), acc},
               {std::string("n"), static_cast<double>(test.size())}},
              dir / "classification.csv");
    std::vector<std::string> header{"true"};
    for (std::size_t p = 0; p < kNumClasses; ++p) header.push_back(fmt::format("pred_{}", p));
    std::vector<CsvRow> rows;
    for (std::size_t t = 0; t < kNumClasses; ++t) {
        CsvRow row{static_cast<long long>(t)};
        for (std::size_t p = 0; p < kNumClasses; ++p) row.emplace_back(static_cast<long long>(cm.counts[t][p]));
        rows.push_back(std::move(row));
    }
    write_csv(header, rows, dir / "confusion.csv");
    out << fmt::format("classifier={}  n={}  F1(macro)={:.4f}  accuracy={:.4f}\n", to_string(options.kind),
                       test.size(), f1, acc);
    return kOk;
}

template <class T>
ImageMatrix latents_from(const Checkpoint& ckpt, const ModelConfig& config, const Dataset& data,
                         const EvalOptions& eval) {
    Autoencoder<T> model = restore_model<T>(ckpt, config);
    return encode_latents(model, data, eval);
}

int cmd_export_latent(const Flags& f, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = read_checkpoint(f);
    const ModelConfig config = checked_config(ckpt, f);
    const Dataset test = test_data(f);
    const EvalOptions eval{500, f.expected_latent, f.eval_seed};
    const ImageMatrix z = checkpoint_precision(ckpt) == Precision::f32 ? latents_from<float>(ckpt, config, test, eval)
                                                                       : latents_from<double>(ckpt, config, test, eval);
    if (z.cols > 2) err << fmt::format("warning: latent dimension is {}; exporting the first two\n", z.cols);
    const std::size_t dims = std::min<std::size_t>(2, z.cols);
    std::vector<std::string> header;
    for (std::size_t d = 0; d < dims; ++d) header.push_back(fmt::format("z{}", d + 1));
    header.push_back("label");
    std::vector<CsvRow> rows;
    rows.reserve(z.rows);
    for (std::size_t i = 0; i < z.rows; ++i) {
        CsvRow row;
        for (std::size_t d = 0; d < dims; ++d) row.emplace_back(z.row(i)[d]);
        row.emplace_back(static_cast<long long>(test.labels[i]));
        rows.push_back(std::move(row));
    }
    const fs::path path = out_dir(f) / "latent.csv";
    write_csv(header, rows, path);
    out << fmt::format("wrote {} rows to {}\n", rows.size(), path.string());
    return kOk;
}

int cmd_params(const Flags& f, std::ostream& out) {
    if (!f.table) {
        out << param_count(model_config(f.model)) << '\n';
        return kOk;
    }
    out << fmt::format("{:>6} {:>16} {:>16} {:>16}\n", "L", "vae hidden=512", "vae hidden=1024", "bcaps C=8 D=64");
    for (std::size_t latent : {2, 4, 6, 8, 10}) {
        BaselineVaeConfig small;
        small.latent = latent;
        BaselineVaeConfig large = small;
        large.hidden = 1024;
        BCapsConfig caps;
        caps.latent = latent;
        out << fmt::format("{:>6} {:>16} {:>16} {:>16}\n", latent, param_count(small), param_count(large),
                           param_count(caps));
    }
    return kOk;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
    GradSuiteOptions options;
    options.seed = f.seed == 0 ? options.seed : f.seed;
    options.corrupt = f.corrupt;
    const auto entries = run_gradcheck_suite(options);
    for (const auto& e : entries) {
        out << fmt::format("{:<40} max_rel_err={:.3e}  tol={:.0e}  {}\n", e.name, e.max_rel_error, e.tolerance,
                           e.passed ? "PASS" : "FAIL");
    }
    const bool ok = all_passed(entries);
    out << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
    return ok ? kOk : kCheckFailed;
}

/// Tokens from a `--config` file, as `--key=value`, placed before the user's
/// own flags so that explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::vector<std::string> from_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file path");
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
            continue;
        }
        std::vector<std::uint8_t> bytes;
        try {
            bytes = read_file(path);
        } catch (const IoError& e) {
            throw UsageError(fmt::format("--config: {}", e.what()));
        }
        const auto kv = KeyValues::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                         "config file '" + path + "'");
        for (const auto& [key, value] : kv.entries()) from_file.push_back(fmt::format("--{}={}", key, value));
    }
    if (from_file.empty()) return args;
    // argv[0], subcommand, config tokens, remaining user tokens
    std::vector<std::string> merged;
    std::size_t sub = 1;
    while (sub < rest.size() && rest[sub].rfind("-", 0) == 0) ++sub;
    merged.insert(merged.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(std::min(sub + 1, rest.size())));
    merged.insert(merged.end(), from_file.begin(), from_file.end());
    if (sub + 1 < rest.size()) merged.insert(merged.end(), rest.begin() + static_cast<std::ptrdiff_t>(sub + 1), rest.end());
    return merged;
}

} // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    Flags f;
    CLI::App app{"Capsule-encoder and baseline variational autoencoders on IDX image data", "bcaps"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");

    auto* train = app.add_subcommand("train", "Train a model; writes checkpoint, history.csv and reconstruction grids");
    add_data_flags(train, f.data, true, true);
    add_model_flags(train, f.model);
    train->add_option("--epochs", f.epochs, "Total epochs");
    train->add_option("--batch-size", f.batch_size, "Mini-batch size (>= 2)");
    train->add_option("--lr", f.lr, "Adam learning rate");
    train->add_option("--seed", f.seed, "Seed for initialization, shuffling and latent noise");
    train->add_option("--kl-weight", f.kl_weight, "Weight of the KL term");
    train->add_option("--kl-warmup-epochs", f.kl_warmup_epochs, "Epochs trained without the KL term");
    train->add_option("--precision", f.precision, "Floating-point precision")->check(CLI::IsMember({"f32", "f64"}));
    train->add_option("--subset", f.subset, "Train on a random subset of N images (0 = all)");
    train->add_option("--subset-seed", f.subset_seed, "Seed of the --subset draw");
    train->add_flag("--resume", f.resume, "Continue from --checkpoint");
    train->add_option("--grid-epochs", f.grid_epochs, "Comma-separated epochs that get a reconstruction grid "
                                                      "(default: the last)");
    train->add_flag("--quiet", f.quiet, "No per-epoch progress");

    auto* eval = app.add_subcommand("eval", "Reconstruct the test set; writes per-image and summary metrics");
    auto* classify_cmd = app.add_subcommand("classify", "Classify reconstructed test images with a classifier "
                                                        "trained on the original training images");
    auto* export_cmd = app.add_subcommand("export-latent", "Write latent codes of the test set to latent.csv");
    for (auto* cmd : {eval, classify_cmd, export_cmd}) {
        add_data_flags(cmd, f.data, cmd == classify_cmd, true);
        add_model_flags(cmd, f.model);
        cmd->add_option("--test-subset", f.test_subset, "Use the first N test images (0 = all)");
        cmd->add_flag("--expected-latent", f.expected_latent, "Decode E[z] instead of a seeded draw");
        cmd->add_option("--eval-seed", f.eval_seed, "Seed of the latent draws");
    }
    classify_cmd->add_option("--classifier", f.classifier, "softmax-linear | rbf-svm-subset");
    classify_cmd->add_option("--classifier-epochs", f.classifier_epochs, "softmax-linear training epochs");
    classify_cmd->add_option("--classifier-subset", f.classifier_subset,
                             "Train the classifier on a random subset of N images (0 = all)");
    classify_cmd->add_option("--subset-seed", f.subset_seed, "Seed of the --classifier-subset draw");
    classify_cmd->add_option("--seed", f.seed, "Classifier training seed");
    classify_cmd->add_option("--svm-c", f.svm_c, "SVM box constraint (default 100 for mnist, 10 for fashion-mnist)");
    classify_cmd->add_flag("--identity", f.identity, "Classify the original test images (no model)");

    auto* params = app.add_subcommand("params", "Print the trainable encoder parameter count");
    add_model_flags(params, f.model);
    params->add_flag("--table", f.table, "Counts for the standard architectures at L = 2..10");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and both models");
    gradcheck->add_option("--seed", f.seed, "Seed of the random probe inputs");
    gradcheck->add_flag("--corrupt", f.corrupt, "Add an op with a deliberately wrong gradient (must fail)");

    for (auto* cmd : {train, eval, classify_cmd, export_cmd}) {
        cmd->add_option("--out", f.out_dir, fmt::format("Output directory (default ${} or ./bcaps-out)", kOutDirEnv));
        cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file (default <out>/checkpoint.bcap)");
    }

    try {
        const std::vector<std::string> args = expand_config(raw_args);
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());

        if (train->parsed()) return cmd_train(f, out);
        if (eval->parsed()) return cmd_eval(f, out);
        if (classify_cmd->parsed()) return cmd_classify(f, out);
        if (export_cmd->parsed()) return cmd_export_latent(f, out, err);
        if (params->parsed()) return cmd_params(f, out);
        if (gradcheck->parsed()) return cmd_gradcheck(f, out);
        return kUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const CheckpointMismatch& e) {
        err << "error: " << e.what() << '\n';
        return kCheckpointMismatch;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kCheckFailed;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return run(std::vector<std::string>(argv, argv + argc), out, err);
}

} // namespace bcaps::cli
