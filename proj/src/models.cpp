#include "bcaps/models.hpp"

#include "bcaps/error.hpp"
#include "bcaps/keyvalue.hpp"
#include "bcaps/ops.hpp"

#include <fmt/format.h>

#include <cmath>

namespace bcaps {

std::string to_string(SamplingStrategy s) {
    switch (s) {
    case SamplingStrategy::standard_normal: return "standard-normal";
    case SamplingStrategy::shifted_normal: return "shifted-normal";
    case SamplingStrategy::data_driven: return "data-driven";
    }
    return "unknown";
}

SamplingStrategy parse_sampling(std::string_view text) {
    std::string norm(text);
    for (auto& c : norm) {
        if (c == '_') c = '-';
    }
    if (norm == "standard-normal") return SamplingStrategy::standard_normal;
    if (norm == "shifted-normal" || norm == "random-normal") return SamplingStrategy::shifted_normal;
    if (norm == "data-driven") return SamplingStrategy::data_driven;
    throw ContractError(fmt::format("unknown sampling strategy '{}'", text));
}

void validate(const ModelConfig& config) {
    std::visit(
        [](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, BCapsConfig>) {
                if (c.pixels < 1 || c.decoder_hidden < 1) throw ContractError("pixels and decoder width must be >= 1");
                if (c.caps < 1 || c.desc < 1 || c.latent < 1 || c.desc_out < 1) {
                    throw ContractError("B-Caps config needs C, D, L, D1 >= 1");
                }
                if (c.routing_iters < 1) throw ContractError("routing_iters must be >= 1");
            } else {
                if (c.pixels < 1 || c.decoder_hidden < 1) throw ContractError("pixels and decoder width must be >= 1");
                if (c.hidden < 1 || c.latent < 1) throw ContractError("baseline config needs hidden, L >= 1");
            }
        },
        config);
}

std::size_t latent_dim(const ModelConfig& config) {
    return std::visit([](const auto& c) { return c.latent; }, config);
}

std::size_t input_dim(const ModelConfig& config) {
    return std::visit([](const auto& c) { return c.pixels; }, config);
}

SamplingStrategy sampling_of(const ModelConfig& config) {
    return std::visit([](const auto& c) { return c.sampling; }, config);
}

std::string model_kind(const ModelConfig& config) {
    return std::holds_alternative<BCapsConfig>(config) ? "bcaps" : "vae";
}

std::string serialize_model_config(const ModelConfig& config) {
    if (const auto* c = std::get_if<BCapsConfig>(&config)) {
        return fmt::format("kind=bcaps\ncaps={}\ndesc={}\nlatent={}\ndesc_out={}\nrouting_iters={}\n"
                           "primary_batchnorm={}\nsampling={}\npixels={}\ndecoder_hidden={}\n",
                           c->caps, c->desc, c->latent, c->desc_out, c->routing_iters,
                           c->primary_batchnorm ? 1 : 0, to_string(c->sampling), c->pixels, c->decoder_hidden);
    }
    const auto& v = std::get<BaselineVaeConfig>(config);
    return fmt::format("kind=vae\nhidden={}\nlatent={}\nsampling={}\npixels={}\ndecoder_hidden={}\n", v.hidden,
                       v.latent, to_string(v.sampling), v.pixels, v.decoder_hidden);
}

ModelConfig parse_model_config(std::string_view text) {
    const auto kv = KeyValues::parse(text, "model config");
    ModelConfig config;
    const std::string& kind = kv.text("kind");
    if (kind == "bcaps") {
        BCapsConfig c;
        c.caps = kv.unsigned_integer("caps");
        c.desc = kv.unsigned_integer("desc");
        c.latent = kv.unsigned_integer("latent");
        c.desc_out = kv.unsigned_integer("desc_out");
        c.routing_iters = static_cast<int>(kv.integer("routing_iters"));
        c.primary_batchnorm = kv.boolean("primary_batchnorm");
        c.sampling = parse_sampling(kv.text("sampling"));
        if (kv.has("pixels")) c.pixels = kv.unsigned_integer("pixels");
        if (kv.has("decoder_hidden")) c.decoder_hidden = kv.unsigned_integer("decoder_hidden");
        config = c;
    } else if (kind == "vae") {
        BaselineVaeConfig c;
        c.hidden = kv.unsigned_integer("hidden");
        c.latent = kv.unsigned_integer("latent");
        c.sampling = parse_sampling(kv.text("sampling"));
        if (kv.has("pixels")) c.pixels = kv.unsigned_integer("pixels");
        if (kv.has("decoder_hidden")) c.decoder_hidden = kv.unsigned_integer("decoder_hidden");
        config = c;
    } else {
        throw ContractError(fmt::format("unknown model kind '{}'", kind));
    }
    validate(config);
    return config;
}

std::uint64_t param_count(const ModelConfig& config) {
    validate(config);
    if (const auto* c = std::get_if<BCapsConfig>(&config)) {
        const std::uint64_t primary = 1ull * c->caps * c->pixels * c->desc;
        const std::uint64_t head = 1ull * c->caps * c->latent * c->desc * c->desc_out;
        return primary + 2 * head;
    }
    const auto& v = std::get<BaselineVaeConfig>(config);
    const std::uint64_t hidden = 1ull * v.pixels * v.hidden + v.hidden;
    const std::uint64_t norm = 2ull * v.hidden;
    const std::uint64_t head = 1ull * v.hidden * v.latent + v.latent;
    return hidden + norm + 2 * head;
}

template <class T>
Tensor<T> sample_latent(const LatentHeads<T>& heads, SamplingStrategy strategy, Rng& rng, ForwardTrace<T>* trace) {
    const auto& mu = heads.mu;
    const auto& sigma = heads.sigma;
    if (mu.shape() != sigma.shape()) {
        throw DimensionError(fmt::format("latent heads disagree: mu {} vs sigma {}", shape_str(mu.shape()),
                                         shape_str(sigma.shape())));
    }
    auto draw = [&]() {
        std::vector<T> eps(mu.numel());
        auto mv = mu.data();
        auto sv = sigma.data();
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double n = rng.normal();
            switch (strategy) {
            case SamplingStrategy::standard_normal: eps[i] = static_cast<T>(n); break;
            case SamplingStrategy::shifted_normal: eps[i] = static_cast<T>(0.5 + 0.5 * n); break;
            case SamplingStrategy::data_driven:
                if (sv[i] < T(0)) {
                    throw ContractError(fmt::format("data-driven sampling needs sigma >= 0, got {} at {}", sv[i], i));
                }
                eps[i] = mv[i] + sv[i] * static_cast<T>(n);
                break;
            }
        }
        return eps;
    };
    std::vector<T> eps = trace ? trace->capture(draw) : draw();
    return add(mu, mul(sigma, Tensor<T>(mu.shape(), std::move(eps))));
}

template <class T>
Tensor<T> expected_latent(const LatentHeads<T>& heads, SamplingStrategy strategy) {
    switch (strategy) {
    case SamplingStrategy::standard_normal: return add(heads.mu, scale(heads.sigma, T(0)));
    case SamplingStrategy::shifted_normal: return add(heads.mu, scale(heads.sigma, T(0.5)));
    case SamplingStrategy::data_driven: return add(heads.mu, mul(heads.sigma, heads.mu));
    }
    throw ContractError("unknown sampling strategy");
}

template <class T>
Tensor<T> kl_loss(const LatentHeads<T>& heads) {
    if (heads.mu.rank() != 2 || heads.mu.shape() != heads.sigma.shape()) {
        throw DimensionError("kl_loss expects matching [batch, L] heads");
    }
    const auto batch = static_cast<T>(heads.mu.dim(0));
    Tensor<T> terms = sub(add_scalar(add(exp(heads.sigma), square(heads.mu)), T(-1)), heads.sigma);
    return scale(sum(terms), T(0.5) / batch);
}

template <class T>
Tensor<T> recon_loss(const Tensor<T>& x, const Tensor<T>& xhat) {
    if (x.shape() != xhat.shape()) {
        throw DimensionError(fmt::format("recon_loss: {} vs {}", shape_str(x.shape()), shape_str(xhat.shape())));
    }
    return mean(square(sub(x, xhat)));
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& x, const Tensor<T>& xhat, const LatentHeads<T>& heads, T kl_weight) {
    return add(recon_loss(x, xhat), scale(kl_loss(heads), kl_weight));
}

template <class T>
Linear<T>::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : bias({out}, T(0), true) {
    const T limit = std::sqrt(T(6) / static_cast<T>(in + out));
    std::uniform_real_distribution<T> uniform(-limit, limit);
    std::vector<T> values(in * out);
    for (auto& v : values) v = uniform(rng);
    weight = Tensor<T>({in, out}, std::move(values), true);
}

template <class T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
    return add_bias(matmul(x, weight), bias);
}

namespace {

void check_images(const Shape& shape, std::size_t pixels) {
    if (shape.size() != 2 || shape[1] != pixels) {
        throw DimensionError(fmt::format("encoder expects [batch, {}], got {}", pixels, shape_str(shape)));
    }
}

FcCapsuleConfig primary_config(const BCapsConfig& c) {
    return {1, c.pixels, c.caps, c.desc, c.routing_iters, c.primary_batchnorm};
}

FcCapsuleConfig head_config(const BCapsConfig& c) {
    return {c.caps, c.desc, c.latent, c.desc_out, c.routing_iters, false};
}

} // namespace

template <class T>
BCapsEncoder<T>::BCapsEncoder(const BCapsConfig& config, std::mt19937_64& init_rng)
    : pixels(config.pixels),
      primary(primary_config(config), init_rng),
      mean_head(head_config(config), init_rng),
      std_head(head_config(config), init_rng) {}

template <class T>
LatentHeads<T> BCapsEncoder<T>::encode(const Tensor<T>& x, bool training, ForwardTrace<T>* trace) {
    check_images(x.shape(), pixels);
    const Tensor<T> image_capsule = reshape(x, {x.dim(0), 1, pixels});
    const Tensor<T> parts = primary.forward(image_capsule, training, trace);
    return {caps_norm(mean_head.forward(parts, training, trace)), caps_norm(std_head.forward(parts, training, trace))};
}

template <class T>
void BCapsEncoder<T>::collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) {
    params.push_back({"encoder.primary.weight", &primary.weights});
    if (primary.norm) {
        params.push_back({"encoder.primary.bn.gamma", &primary.norm->gamma});
        params.push_back({"encoder.primary.bn.beta", &primary.norm->beta});
        buffers.push_back({"encoder.primary.bn.running_mean", &primary.norm->running_mean});
        buffers.push_back({"encoder.primary.bn.running_var", &primary.norm->running_var});
    }
    params.push_back({"encoder.mean_head.weight", &mean_head.weights});
    params.push_back({"encoder.std_head.weight", &std_head.weights});
}

template <class T>
VaeEncoder<T>::VaeEncoder(const BaselineVaeConfig& config, std::mt19937_64& init_rng)
    : pixels(config.pixels),
      hidden(config.pixels, config.hidden, init_rng),
      norm(config.hidden),
      mean_head(config.hidden, config.latent, init_rng),
      std_head(config.hidden, config.latent, init_rng) {}

template <class T>
LatentHeads<T> VaeEncoder<T>::encode(const Tensor<T>& x, bool training) {
    check_images(x.shape(), pixels);
    const Tensor<T> h = relu(batch_norm(hidden(x), norm, training));
    return {mean_head(h), std_head(h)};
}

template <class T>
void VaeEncoder<T>::collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) {
    params.push_back({"encoder.hidden.weight", &hidden.weight});
    params.push_back({"encoder.hidden.bias", &hidden.bias});
    params.push_back({"encoder.bn.gamma", &norm.gamma});
    params.push_back({"encoder.bn.beta", &norm.beta});
    params.push_back({"encoder.mean_head.weight", &mean_head.weight});
    params.push_back({"encoder.mean_head.bias", &mean_head.bias});
    params.push_back({"encoder.std_head.weight", &std_head.weight});
    params.push_back({"encoder.std_head.bias", &std_head.bias});
    buffers.push_back({"encoder.bn.running_mean", &norm.running_mean});
    buffers.push_back({"encoder.bn.running_var", &norm.running_var});
}

template <class T>
Decoder<T>::Decoder(std::size_t latent, std::size_t hidden_width, std::size_t pixels, std::mt19937_64& init_rng)
    : hidden(latent, hidden_width, init_rng), norm(hidden_width), output(hidden_width, pixels, init_rng) {}

template <class T>
Tensor<T> Decoder<T>::decode(const Tensor<T>& z, bool training) {
    if (z.rank() != 2 || z.dim(1) != hidden.weight.dim(0)) {
        throw DimensionError(fmt::format("decoder expects [batch, {}], got {}", hidden.weight.dim(0), shape_str(z.shape())));
    }
    return sigmoid(output(relu(batch_norm(hidden(z), norm, training))));
}

template <class T>
void Decoder<T>::collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) {
    params.push_back({"decoder.hidden.weight", &hidden.weight});
    params.push_back({"decoder.hidden.bias", &hidden.bias});
    params.push_back({"decoder.bn.gamma", &norm.gamma});
    params.push_back({"decoder.bn.beta", &norm.beta});
    params.push_back({"decoder.output.weight", &output.weight});
    params.push_back({"decoder.output.bias", &output.bias});
    buffers.push_back({"decoder.bn.running_mean", &norm.running_mean});
    buffers.push_back({"decoder.bn.running_var", &norm.running_var});
}

namespace {

template <class T>
std::variant<BCapsEncoder<T>, VaeEncoder<T>> make_encoder(const ModelConfig& config, std::mt19937_64& rng) {
    validate(config);
    if (const auto* c = std::get_if<BCapsConfig>(&config)) {
        return std::variant<BCapsEncoder<T>, VaeEncoder<T>>(std::in_place_index<0>, *c, rng);
    }
    return std::variant<BCapsEncoder<T>, VaeEncoder<T>>(std::in_place_index<1>, std::get<BaselineVaeConfig>(config), rng);
}

} // namespace

template <class T>
Autoencoder<T>::Autoencoder(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config),
      init_rng_(init_seed),
      encoder_(make_encoder<T>(config, init_rng_)),
      decoder_(latent_dim(config), std::visit([](const auto& c) { return c.decoder_hidden; }, config),
               input_dim(config), init_rng_) {}

template <class T>
LatentHeads<T> Autoencoder<T>::encode(const Tensor<T>& x, bool training, ForwardTrace<T>* trace) {
    if (auto* caps = std::get_if<BCapsEncoder<T>>(&encoder_)) return caps->encode(x, training, trace);
    return std::get<VaeEncoder<T>>(encoder_).encode(x, training);
}

template <class T>
typename Autoencoder<T>::Output Autoencoder<T>::forward(const Tensor<T>& x, const ForwardOptions& options, Rng& noise,
                                                        ForwardTrace<T>* trace) {
    Output out;
    out.heads = encode(x, options.training, trace);
    const SamplingStrategy strategy = sampling_of(config_);
    out.z = options.expected_latent ? expected_latent(out.heads, strategy)
                                    : sample_latent(out.heads, strategy, noise, trace);
    out.recon = decoder_.decode(out.z, options.training);
    return out;
}

template <class T>
std::vector<NamedTensor<T>> Autoencoder<T>::parameters() {
    std::vector<NamedTensor<T>> params, buffers;
    std::visit([&](auto& enc) { enc.collect(params, buffers); }, encoder_);
    decoder_.collect(params, buffers);
    return params;
}

template <class T>
std::vector<NamedTensor<T>> Autoencoder<T>::buffers() {
    std::vector<NamedTensor<T>> params, buffers;
    std::visit([&](auto& enc) { enc.collect(params, buffers); }, encoder_);
    decoder_.collect(params, buffers);
    return buffers;
}

template <class T>
std::uint64_t Autoencoder<T>::encoder_parameter_count() {
    std::uint64_t total = 0;
    for (const auto& p : parameters()) {
        if (!p.name.starts_with("encoder.")) continue;
        if (p.name.starts_with("encoder.primary.bn.")) continue;
        total += p.tensor->numel();
    }
    return total;
}

#define BCAPS_INSTANTIATE_MODELS(T)                                                                        \
    template Tensor<T> sample_latent(const LatentHeads<T>&, SamplingStrategy, Rng&, ForwardTrace<T>*);     \
    template Tensor<T> expected_latent(const LatentHeads<T>&, SamplingStrategy);                           \
    template Tensor<T> kl_loss(const LatentHeads<T>&);                                                     \
    template Tensor<T> recon_loss(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const LatentHeads<T>&, T);           \
    template struct Linear<T>;                                                                             \
    template class BCapsEncoder<T>;                                                                        \
    template class VaeEncoder<T>;                                                                          \
    template class Decoder<T>;                                                                             \
    template class Autoencoder<T>;

BCAPS_INSTANTIATE_MODELS(float)
BCAPS_INSTANTIATE_MODELS(double)

} // namespace bcaps
