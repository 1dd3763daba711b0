#include "bcaps/training.hpp"

#include "bcaps/error.hpp"
#include "bcaps/keyvalue.hpp"
#include "bcaps/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bcaps {

std::string to_string(Precision p) {
    return p == Precision::f32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view text) {
    if (text == "f32" || text == "float") return Precision::f32;
    if (text == "f64" || text == "double") return Precision::f64;
    throw ContractError(fmt::format("unknown precision '{}' (expected f32 or f64)", text));
}

void validate(const TrainConfig& config) {
    if (config.batch_size < 2) throw ContractError("batch_size must be >= 2 (batch norm)");
    if (config.epochs < 1) throw ContractError("epochs must be >= 1");
    if (!(config.learning_rate > 0)) throw ContractError("learning_rate must be positive");
    if (!(config.kl_weight >= 0)) throw ContractError("kl_weight must be non-negative");
    if (config.kl_warmup_epochs < 0) throw ContractError("kl_warmup_epochs must be non-negative");
}

std::string serialize_train_config(const TrainConfig& c) {
    return fmt::format("batch_size={}\nepochs={}\nlearning_rate={:.17g}\nseed={}\nkl_weight={:.17g}\n"
                       "kl_warmup_epochs={}\nprecision={}\n",
                       c.batch_size, c.epochs, c.learning_rate, c.seed, c.kl_weight, c.kl_warmup_epochs,
                       to_string(c.precision));
}

TrainConfig parse_train_config(std::string_view text) {
    const auto kv = KeyValues::parse(text, "train config");
    TrainConfig c;
    c.batch_size = kv.unsigned_integer("batch_size");
    c.epochs = static_cast<int>(kv.integer("epochs"));
    c.learning_rate = kv.real("learning_rate");
    c.seed = kv.unsigned_integer("seed");
    c.kl_weight = kv.real("kl_weight");
    c.kl_warmup_epochs = static_cast<int>(kv.integer("kl_warmup_epochs"));
    c.precision = parse_precision(kv.text("precision"));
    validate(c);
    return c;
}

std::vector<CsvRow> history_rows(const TrainingHistory& history) {
    std::vector<CsvRow> rows;
    rows.reserve(history.size());
    for (const auto& e : history) {
        rows.push_back({static_cast<long long>(e.epoch), e.recon_loss, e.kl_loss, e.total_loss});
    }
    return rows;
}

template <class T>
void store_model(Checkpoint& ckpt, Autoencoder<T>& model) {
    ckpt.put_text("model/config", serialize_model_config(model.config()));
    for (const auto& p : model.parameters()) ckpt.put_tensor("param/" + p.name, *p.tensor);
    for (const auto& b : model.buffers()) ckpt.put_tensor("buffer/" + b.name, *b.tensor);
}

template <class T>
void load_model(const Checkpoint& ckpt, Autoencoder<T>& model) {
    const ModelConfig stored = checkpoint_model_config(ckpt);
    if (stored != model.config()) {
        throw CheckpointMismatch(fmt::format("checkpoint holds a different model:\n{}expected:\n{}",
                                             serialize_model_config(stored), serialize_model_config(model.config())));
    }
    for (const auto& p : model.parameters()) ckpt.load_tensor("param/" + p.name, *p.tensor);
    for (const auto& b : model.buffers()) ckpt.load_tensor("buffer/" + b.name, *b.tensor);
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
    try {
        return parse_model_config(ckpt.get_text("model/config"));
    } catch (const ContractError& e) {
        throw CheckpointMismatch(e.what());
    }
}

Precision checkpoint_precision(const Checkpoint& ckpt) {
    for (const auto& r : ckpt.records) {
        if (r.name.rfind("param/", 0) == 0) {
            if (r.dtype == DType::f32) return Precision::f32;
            if (r.dtype == DType::f64) return Precision::f64;
            throw CheckpointMismatch(fmt::format("parameter record '{}' has dtype {}", r.name, to_string(r.dtype)));
        }
    }
    throw CheckpointMismatch("checkpoint holds no parameters");
}

template <class T>
Trainer<T>::Trainer(Autoencoder<T>& model, const TrainConfig& config)
    : model_(model),
      config_((validate(config), config)),
      adam_(model.parameters(), config.learning_rate),
      shuffle_rng_(derive_seed(config.seed, streams::shuffle)),
      noise_rng_(derive_seed(config.seed, streams::noise)) {}

template <class T>
EpochStats Trainer<T>::train_epoch(const Dataset& data) {
    const std::size_t batches = data.size() / config_.batch_size;
    if (batches == 0) {
        throw ContractError(fmt::format("dataset of {} items is smaller than one batch of {}", data.size(),
                                        config_.batch_size));
    }
    const int epoch = epoch_ + 1;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng_.engine());

    const T kl_weight = epoch_ < config_.kl_warmup_epochs ? T(0) : static_cast<T>(config_.kl_weight);
    ForwardOptions options;
    options.training = true;

    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
        const std::span<const std::size_t> rows(order.data() + b * config_.batch_size, config_.batch_size);
        const Tensor<T> x = data.batch<T>(rows);

        adam_.zero_grad();
        auto out = model_.forward(x, options, noise_rng_);
        const Tensor<T> recon = recon_loss(x, out.recon);
        const Tensor<T> kl = kl_loss(out.heads);
        const Tensor<T> total = recon + scale(kl, kl_weight);
        const double total_value = static_cast<double>(total.item());
        if (!std::isfinite(total_value)) {
            throw DivergenceError(fmt::format("training diverged: loss is {} at epoch {}, batch {}", total_value,
                                              epoch, b + 1),
                                  epoch, static_cast<int>(b + 1));
        }
        total.backward();
        try {
            adam_.step();
        } catch (const DivergenceError& e) {
            throw DivergenceError(fmt::format("training diverged at epoch {}, batch {}: {}", epoch, b + 1, e.what()),
                                  epoch, static_cast<int>(b + 1));
        }
        stats.recon_loss += static_cast<double>(recon.item());
        stats.kl_loss += static_cast<double>(kl.item());
        stats.total_loss += total_value;
    }
    stats.recon_loss /= static_cast<double>(batches);
    stats.kl_loss /= static_cast<double>(batches);
    stats.total_loss /= static_cast<double>(batches);
    epoch_ = epoch;
    history_.push_back(stats);
    return stats;
}

template <class T>
const TrainingHistory& Trainer<T>::fit(const Dataset& data, const std::function<void(const EpochStats&)>& on_epoch) {
    while (epoch_ < config_.epochs) {
        const EpochStats stats = train_epoch(data);
        if (on_epoch) on_epoch(stats);
    }
    return history_;
}

template <class T>
Checkpoint Trainer<T>::checkpoint() {
    Checkpoint ckpt;
    store_model(ckpt, model_);
    ckpt.put_text("train/config", serialize_train_config(config_));
    const std::int64_t epoch = epoch_;
    ckpt.put_values<std::int64_t>("train/epoch", std::span(&epoch, 1));
    const std::int64_t steps = adam_.steps();
    ckpt.put_values<std::int64_t>("adam/t", std::span(&steps, 1));
    const auto& params = adam_.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::vector<std::uint64_t> shape(params[k].tensor->shape().begin(), params[k].tensor->shape().end());
        ckpt.put_values<T>("adam/m/" + params[k].name, adam_.slots()[k].m, shape);
        ckpt.put_values<T>("adam/v/" + params[k].name, adam_.slots()[k].v, shape);
    }
    ckpt.put_text("rng/shuffle", shuffle_rng_.state());
    ckpt.put_text("rng/noise", noise_rng_.state());
    std::vector<double> hist;
    for (const auto& e : history_) {
        hist.insert(hist.end(), {static_cast<double>(e.epoch), e.recon_loss, e.kl_loss, e.total_loss});
    }
    ckpt.put_values<double>("train/history", hist, {history_.size(), 4});
    return ckpt;
}

template <class T>
void Trainer<T>::restore(const Checkpoint& ckpt) {
    TrainConfig stored;
    try {
        stored = parse_train_config(ckpt.get_text("train/config"));
    } catch (const ContractError& e) {
        throw CheckpointMismatch(e.what());
    }
    stored.epochs = config_.epochs;
    if (stored != config_) {
        throw CheckpointMismatch(fmt::format("checkpoint was trained with a different configuration:\n{}",
                                             serialize_train_config(stored)));
    }
    load_model(ckpt, model_);

    const auto epoch = ckpt.get_values<std::int64_t>("train/epoch");
    const auto steps = ckpt.get_values<std::int64_t>("adam/t");
    if (epoch.size() != 1 || steps.size() != 1) throw CheckpointMismatch("malformed epoch or step record");
    const auto& params = adam_.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto m = ckpt.get_values<T>("adam/m/" + params[k].name);
        auto v = ckpt.get_values<T>("adam/v/" + params[k].name);
        if (m.size() != params[k].tensor->numel() || v.size() != params[k].tensor->numel()) {
            throw CheckpointMismatch(fmt::format("Adam moments for '{}' have the wrong size", params[k].name));
        }
        adam_.slots()[k] = {std::move(m), std::move(v)};
    }
    adam_.set_steps(steps[0]);
    shuffle_rng_.restore(ckpt.get_text("rng/shuffle"));
    noise_rng_.restore(ckpt.get_text("rng/noise"));

    const auto hist = ckpt.get_values<double>("train/history");
    if (hist.size() % 4 != 0) throw CheckpointMismatch("malformed history record");
    history_.clear();
    for (std::size_t i = 0; i < hist.size(); i += 4) {
        history_.push_back({static_cast<int>(hist[i]), hist[i + 1], hist[i + 2], hist[i + 3]});
    }
    epoch_ = static_cast<int>(epoch[0]);
}

template <class T>
TrainingHistory train(Autoencoder<T>& model, const Dataset& data, const TrainConfig& config) {
    Trainer<T> trainer(model, config);
    return trainer.fit(data);
}

template void store_model<float>(Checkpoint&, Autoencoder<float>&);
template void store_model<double>(Checkpoint&, Autoencoder<double>&);
template void load_model<float>(const Checkpoint&, Autoencoder<float>&);
template void load_model<double>(const Checkpoint&, Autoencoder<double>&);
template TrainingHistory train<float>(Autoencoder<float>&, const Dataset&, const TrainConfig&);
template TrainingHistory train<double>(Autoencoder<double>&, const Dataset&, const TrainConfig&);
template class Trainer<float>;
template class Trainer<double>;

} // namespace bcaps
