#pragma once

#include "bcaps/batch_norm.hpp"
#include "bcaps/capsules.hpp"
#include "bcaps/rng.hpp"
#include "bcaps/tensor.hpp"
#include "bcaps/trace.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bcaps {

inline constexpr std::size_t kImagePixels = 784;
inline constexpr std::size_t kDecoderHidden = 512;

enum class SamplingStrategy {
    standard_normal,  ///< eps ~ N(0, 1)
    shifted_normal,   ///< eps ~ N(0.5, 0.5)
    data_driven,      ///< eps ~ N(mu, sigma), elementwise from the encoder heads
};

std::string to_string(SamplingStrategy s);
/// Accepts "standard-normal", "shifted-normal", "data-driven" (underscores too).
SamplingStrategy parse_sampling(std::string_view text);

/// {{C, D}, {L, D1}} capsule encoder.
struct BCapsConfig {
    std::size_t caps = 8;       ///< C, primary capsule types
    std::size_t desc = 64;      ///< D, primary description length
    std::size_t latent = 2;     ///< L
    std::size_t desc_out = 64;  ///< D1
    int routing_iters = 3;
    bool primary_batchnorm = true;
    SamplingStrategy sampling = SamplingStrategy::data_driven;
    std::size_t pixels = kImagePixels;
    std::size_t decoder_hidden = kDecoderHidden;

    bool operator==(const BCapsConfig&) const = default;
};

struct BaselineVaeConfig {
    std::size_t hidden = 512;
    std::size_t latent = 2;
    SamplingStrategy sampling = SamplingStrategy::standard_normal;
    std::size_t pixels = kImagePixels;
    std::size_t decoder_hidden = kDecoderHidden;

    bool operator==(const BaselineVaeConfig&) const = default;
};

using ModelConfig = std::variant<BCapsConfig, BaselineVaeConfig>;

void validate(const ModelConfig& config);
std::size_t latent_dim(const ModelConfig& config);
std::size_t input_dim(const ModelConfig& config);
SamplingStrategy sampling_of(const ModelConfig& config);
std::string model_kind(const ModelConfig& config);  ///< "bcaps" or "vae"

/// key=value lines, one per field; parse_model_config is its inverse.
std::string serialize_model_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

/// Trainable encoder scalars. B-Caps: capsule transformation matrices only
/// (capsule batch-norm scale/shift excluded). Baseline: FC weights and biases
/// plus the batch-norm scale/shift.
std::uint64_t param_count(const ModelConfig& config);

template <class T>
struct LatentHeads {
    Tensor<T> mu;     ///< [batch, L]
    Tensor<T> sigma;  ///< [batch, L]
};

template <class T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

/// Draws z = mu + sigma * eps. eps is a constant of the graph in every
/// strategy. For data-driven sampling eps = mu + sigma * n with n ~ N(0, 1),
/// which requires sigma >= 0. With a trace, eps is recorded/replayed.
template <class T>
Tensor<T> sample_latent(const LatentHeads<T>& heads, SamplingStrategy strategy, Rng& rng,
                        ForwardTrace<T>* trace = nullptr);

/// Expected value of the sample: z = mu + sigma * E[eps].
template <class T>
Tensor<T> expected_latent(const LatentHeads<T>& heads, SamplingStrategy strategy);

/// Batch mean of 0.5 * sum_l (exp(sigma) + mu^2 - 1 - sigma).
template <class T> Tensor<T> kl_loss(const LatentHeads<T>& heads);
/// Mean squared error over every pixel of the batch.
template <class T> Tensor<T> recon_loss(const Tensor<T>& x, const Tensor<T>& xhat);
template <class T>
Tensor<T> total_loss(const Tensor<T>& x, const Tensor<T>& xhat, const LatentHeads<T>& heads, T kl_weight = T(1));

/// Fully connected layer y = x W + b with Glorot-uniform W and zero b.
template <class T>
struct Linear {
    Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;

    Tensor<T> weight;  ///< [in, out]
    Tensor<T> bias;    ///< [out]
};

struct ForwardOptions {
    bool training = true;
    /// Use E[z] instead of a random draw.
    bool expected_latent = false;
};

/// Flattened image -> one single capsule of all pixels -> C primary capsules of length D
/// (batch-normalized along the description dimension) -> mean and std heads
/// of L capsules of length D1 -> capsule norms.
template <class T>
class BCapsEncoder {
public:
    BCapsEncoder(const BCapsConfig& config, std::mt19937_64& init_rng);

    LatentHeads<T> encode(const Tensor<T>& x, bool training, ForwardTrace<T>* trace = nullptr);
    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers);

    std::size_t pixels;
    FcCapsuleLayer<T> primary;
    FcCapsuleLayer<T> mean_head;
    FcCapsuleLayer<T> std_head;
};

/// FC(pixels -> hidden) + batch norm + ReLU, then two FC(hidden -> L) heads.
template <class T>
class VaeEncoder {
public:
    VaeEncoder(const BaselineVaeConfig& config, std::mt19937_64& init_rng);

    LatentHeads<T> encode(const Tensor<T>& x, bool training);
    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers);

    std::size_t pixels;
    Linear<T> hidden;
    BatchNorm<T> norm;
    Linear<T> mean_head;
    Linear<T> std_head;
};

/// FC(L -> hidden_width) + batch norm + ReLU -> FC(hidden_width -> pixels) + sigmoid.
template <class T>
class Decoder {
public:
    Decoder(std::size_t latent, std::size_t hidden_width, std::size_t pixels, std::mt19937_64& init_rng);

    Tensor<T> decode(const Tensor<T>& z, bool training);
    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers);

    Linear<T> hidden;
    BatchNorm<T> norm;
    Linear<T> output;
};

/// Encoder (B-Caps or baseline) plus the shared decoder.
template <class T>
class Autoencoder {
public:
    Autoencoder(const ModelConfig& config, std::uint64_t init_seed);

    struct Output {
        LatentHeads<T> heads;
        Tensor<T> z;
        Tensor<T> recon;
    };

    const ModelConfig& config() const { return config_; }

    LatentHeads<T> encode(const Tensor<T>& x, bool training, ForwardTrace<T>* trace = nullptr);
    Tensor<T> decode(const Tensor<T>& z, bool training) { return decoder_.decode(z, training); }
    Output forward(const Tensor<T>& x, const ForwardOptions& options, Rng& noise, ForwardTrace<T>* trace = nullptr);

    /// Trainable tensors with stable names ("encoder.*", "decoder.*").
    std::vector<NamedTensor<T>> parameters();
    /// Batch-norm running statistics.
    std::vector<NamedTensor<T>> buffers();

    /// Encoder parameter count by enumeration, same convention as param_count().
    std::uint64_t encoder_parameter_count();

private:
    ModelConfig config_;
    std::mt19937_64 init_rng_;
    std::variant<BCapsEncoder<T>, VaeEncoder<T>> encoder_;
    Decoder<T> decoder_;
};

extern template class Autoencoder<float>;
extern template class Autoencoder<double>;

} // namespace bcaps
