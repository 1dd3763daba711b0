#pragma once

#include "bcaps/dataio.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bcaps {

inline constexpr std::size_t kNumClasses = 10;

/// Mean squared difference over all pixels of one image pair.
double mse_metric(std::span<const double> a, std::span<const double> b);

/// Single-window SSIM over the whole image, data range 1:
/// C1 = 0.01^2, C2 = 0.03^2, population (co)variances.
double ssim(std::span<const double> a, std::span<const double> b);

struct Summary {
    double mean = 0;
    double std = 0;  ///< population standard deviation
};

Summary summarize(std::span<const double> values);

struct MetricsReport {
    std::vector<double> mse;
    std::vector<double> ssim;
    Summary mse_summary;
    Summary ssim_summary;
    std::size_t n = 0;
};

/// Per-image metrics between matching rows of `originals` and `recons`.
MetricsReport evaluate_reconstructions(const ImageMatrix& originals, const ImageMatrix& recons);

struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};  ///< [true][predicted]

    std::uint64_t total() const;
    std::uint64_t row_sum(std::size_t true_class) const;
    std::uint64_t col_sum(std::size_t predicted_class) const;
    /// Macro-averaged F1 over the classes that occur as a true or predicted label.
    double f1_macro() const;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

/// One-vs-rest F1 per class, macro-averaged over the classes that occur in
/// either label list. A class with no true positives scores 0.
double f1_macro(std::span<const int> truth, std::span<const int> predicted);

enum class ClassifierKind { softmax_linear, rbf_svm_subset };

std::string to_string(ClassifierKind k);
ClassifierKind parse_classifier(std::string_view text);

struct ClassifierOptions {
    ClassifierKind kind = ClassifierKind::softmax_linear;
    std::uint64_t seed = 0;
    // softmax_linear
    int epochs = 10;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    // rbf_svm_subset
    std::size_t svm_subset = 5000;
    double svm_gamma = 0.01;
    double svm_c = 100.0;  ///< 100 for MNIST, 10 for Fashion-MNIST
    double svm_tolerance = 1e-3;
};

class Classifier {
public:
    virtual ~Classifier() = default;
    virtual std::vector<int> predict(const ImageMatrix& images) const = 0;
};

/// Fits a classifier on images in [0, 1] with labels in 0..9.
std::unique_ptr<Classifier> train_classifier(const ImageMatrix& images, std::span<const int> labels,
                                             const ClassifierOptions& options = {});

std::vector<int> classify(const Classifier& classifier, const ImageMatrix& images);

double accuracy(std::span<const int> truth, std::span<const int> predicted);

} // namespace bcaps
