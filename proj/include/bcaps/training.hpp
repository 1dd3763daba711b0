#pragma once

#include "bcaps/checkpoint.hpp"
#include "bcaps/dataio.hpp"
#include "bcaps/models.hpp"
#include "bcaps/optim.hpp"
#include "bcaps/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bcaps {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(std::string_view text);

struct TrainConfig {
    std::size_t batch_size = 128;
    int epochs = 100;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    double kl_weight = 1.0;
    /// Epochs trained on the reconstruction loss alone before the KL term
    /// switches on.
    int kl_warmup_epochs = 0;
    Precision precision = Precision::f64;

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);
std::string serialize_train_config(const TrainConfig& config);
TrainConfig parse_train_config(std::string_view text);

struct EpochStats {
    int epoch = 0;  ///< 1-based
    double recon_loss = 0;
    double kl_loss = 0;
    double total_loss = 0;

    bool operator==(const EpochStats&) const = default;
};

using TrainingHistory = std::vector<EpochStats>;

inline const std::vector<std::string> kHistoryHeader = {"epoch", "recon_loss", "kl_loss", "total_loss"};
std::vector<CsvRow> history_rows(const TrainingHistory& history);

/// Builds a model whose initialization draws from the seed's init stream.
template <class T>
Autoencoder<T> make_model(const ModelConfig& config, std::uint64_t seed) {
    return Autoencoder<T>(config, derive_seed(seed, streams::init));
}

/// Model config, parameters and batch-norm statistics.
template <class T>
void store_model(Checkpoint& ckpt, Autoencoder<T>& model);
/// Restores parameters and statistics; the stored model config must equal
/// the model's.
template <class T>
void load_model(const Checkpoint& ckpt, Autoencoder<T>& model);

ModelConfig checkpoint_model_config(const Checkpoint& ckpt);
/// Element type of the stored parameters.
Precision checkpoint_precision(const Checkpoint& ckpt);

/// Mini-batch trainer. Each epoch visits a fresh seeded permutation of the
/// data and drops the last incomplete batch. Shuffling and latent noise use
/// separate streams derived from the seed.
template <class T>
class Trainer {
public:
    Trainer(Autoencoder<T>& model, const TrainConfig& config);

    /// Trains one more epoch. Throws DivergenceError on a non-finite loss or
    /// gradient, naming the epoch and batch.
    EpochStats train_epoch(const Dataset& data);
    /// Trains until `config.epochs` epochs are complete.
    const TrainingHistory& fit(const Dataset& data, const std::function<void(const EpochStats&)>& on_epoch = {});

    int epoch() const { return epoch_; }
    const TrainingHistory& history() const { return history_; }
    const TrainConfig& config() const { return config_; }
    Adam<T>& optimizer() { return adam_; }

    /// Everything needed to continue this run bit-identically.
    Checkpoint checkpoint();
    /// Inverse of checkpoint(). The training config may differ only in the
    /// epoch budget.
    void restore(const Checkpoint& ckpt);

private:
    Autoencoder<T>& model_;
    TrainConfig config_;
    Adam<T> adam_;
    Rng shuffle_rng_;
    Rng noise_rng_;
    int epoch_ = 0;
    TrainingHistory history_;
};

template <class T>
TrainingHistory train(Autoencoder<T>& model, const Dataset& data, const TrainConfig& config);

extern template class Trainer<float>;
extern template class Trainer<double>;

} // namespace bcaps
