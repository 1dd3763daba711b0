#include "bcaps/metrics.hpp"

#include "bcaps/error.hpp"
#include "bcaps/optim.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace bcaps {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError(fmt::format("image sizes differ: {} vs {}", a.size(), b.size()));
    if (a.empty()) throw DimensionError("empty image");
}

void check_labels(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) {
        throw DimensionError(fmt::format("label lists differ in length: {} vs {}", truth.size(), predicted.size()));
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= static_cast<int>(kNumClasses) || predicted[i] < 0 ||
            predicted[i] >= static_cast<int>(kNumClasses)) {
            throw DomainError(fmt::format("label out of range 0..9 at position {}", i));
        }
    }
}

Eigen::Map<const RowMatrix> as_matrix(const ImageMatrix& m) {
    return {m.values.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

class ConstantClassifier final : public Classifier {
public:
    explicit ConstantClassifier(int label) : label_(label) {}
    std::vector<int> predict(const ImageMatrix& images) const override {
        return std::vector<int>(images.rows, label_);
    }

private:
    int label_;
};

std::vector<int> argmax_rows(const RowMatrix& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index best = 0;
        scores.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

/// Multinomial logistic regression, zero-initialized, trained with Adam on
/// the mean cross-entropy of shuffled mini-batches.
class SoftmaxLinear final : public Classifier {
public:
    SoftmaxLinear(const ImageMatrix& images, std::span<const int> labels, const ClassifierOptions& options)
        : weight_(RowMatrix::Zero(static_cast<Eigen::Index>(images.cols), kNumClasses)),
          bias_(Eigen::RowVectorXd::Zero(kNumClasses)) {
        const auto X = as_matrix(images);
        AdamSlot<double> wslot{std::vector<double>(static_cast<std::size_t>(weight_.size())),
                               std::vector<double>(static_cast<std::size_t>(weight_.size()))};
        AdamSlot<double> bslot{std::vector<double>(kNumClasses), std::vector<double>(kNumClasses)};
        std::vector<std::size_t> order(images.rows);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(options.seed);
        std::int64_t t = 0;
        const std::size_t bs = std::max<std::size_t>(1, options.batch_size);

        for (int epoch = 0; epoch < options.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += bs) {
                const std::size_t n = std::min(bs, order.size() - start);
                RowMatrix xb(static_cast<Eigen::Index>(n), X.cols());
                for (std::size_t r = 0; r < n; ++r) xb.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(order[start + r]));
                RowMatrix delta = probabilities(xb);
                for (std::size_t r = 0; r < n; ++r) delta(static_cast<Eigen::Index>(r), labels[order[start + r]]) -= 1.0;
                delta /= static_cast<double>(n);
                const RowMatrix gw = xb.transpose() * delta;
                const Eigen::RowVectorXd gb = delta.colwise().sum();
                ++t;
                adam_update<double>(std::span(weight_.data(), static_cast<std::size_t>(weight_.size())),
                                    std::span(gw.data(), static_cast<std::size_t>(gw.size())), wslot, t,
                                    options.learning_rate);
                adam_update<double>(std::span(bias_.data(), kNumClasses), std::span(gb.data(), kNumClasses), bslot,
                                    t, options.learning_rate);
            }
        }
    }

    std::vector<int> predict(const ImageMatrix& images) const override {
        if (images.cols != static_cast<std::size_t>(weight_.rows())) {
            throw DimensionError(fmt::format("classifier expects {} features, got {}", weight_.rows(), images.cols));
        }
        RowMatrix scores = as_matrix(images) * weight_;
        scores.rowwise() += bias_;
        return argmax_rows(scores);
    }

private:
    RowMatrix probabilities(const RowMatrix& x) const {
        RowMatrix logits = x * weight_;
        logits.rowwise() += bias_;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const double m = logits.row(r).maxCoeff();
            logits.row(r) = (logits.row(r).array() - m).exp();
            logits.row(r) /= logits.row(r).sum();
        }
        return logits;
    }

    RowMatrix weight_;
    Eigen::RowVectorXd bias_;
};

RowMatrix rbf_kernel(const RowMatrix& a, const RowMatrix& b, double gamma) {
    const Eigen::VectorXd na = a.rowwise().squaredNorm();
    const Eigen::RowVectorXd nb = b.rowwise().squaredNorm().transpose();
    RowMatrix k = -2.0 * (a * b.transpose());
    k.colwise() += na;
    k.rowwise() += nb;
    return (-gamma * k.array().max(0.0)).exp().matrix();
}

/// One-vs-rest kernel SVM. Each binary problem is solved by SMO with
/// second-order working-set selection.
class RbfSvm final : public Classifier {
public:
    RbfSvm(const ImageMatrix& images, std::span<const int> labels, const ClassifierOptions& options)
        : gamma_(options.svm_gamma) {
        std::vector<std::size_t> rows(images.rows);
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        if (rows.size() > options.svm_subset) {
            std::mt19937_64 rng(options.seed);
            std::shuffle(rows.begin(), rows.end(), rng);
            rows.resize(options.svm_subset);
        }
        const auto X = as_matrix(images);
        support_.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
        std::vector<int> y(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            support_.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(rows[r]));
            y[r] = labels[rows[r]];
        }
        const RowMatrix K = rbf_kernel(support_, support_, gamma_);
        coef_ = RowMatrix::Zero(static_cast<Eigen::Index>(rows.size()), kNumClasses);
        rho_ = Eigen::RowVectorXd::Zero(kNumClasses);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            std::vector<double> sign(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) sign[r] = y[r] == static_cast<int>(c) ? 1.0 : -1.0;
            solve(K, sign, options.svm_c, options.svm_tolerance, c);
        }
    }

    std::vector<int> predict(const ImageMatrix& images) const override {
        if (images.cols != static_cast<std::size_t>(support_.cols())) {
            throw DimensionError(fmt::format("classifier expects {} features, got {}", support_.cols(), images.cols));
        }
        std::vector<int> out;
        out.reserve(images.rows);
        const auto X = as_matrix(images);
        constexpr Eigen::Index kBlock = 1024;
        for (Eigen::Index start = 0; start < X.rows(); start += kBlock) {
            const Eigen::Index n = std::min(kBlock, X.rows() - start);
            const RowMatrix block = X.middleRows(start, n);
            RowMatrix scores = rbf_kernel(block, support_, gamma_) * coef_;
            scores.rowwise() -= rho_;
            const auto labels = argmax_rows(scores);
            out.insert(out.end(), labels.begin(), labels.end());
        }
        return out;
    }

private:
    void solve(const RowMatrix& K, const std::vector<double>& y, double C, double tol, std::size_t cls) {
        const std::size_t n = y.size();
        std::vector<double> alpha(n, 0.0);
        std::vector<double> grad(n, -1.0);
        constexpr double tau = 1e-12;
        const std::size_t max_iter = std::max<std::size_t>(10'000'000, 100 * n);
        auto up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
        auto low = [&](std::size_t t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C); };

        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            double gmax = -INFINITY;
            std::size_t i = n;
            for (std::size_t t = 0; t < n; ++t) {
                if (up(t) && -y[t] * grad[t] >= gmax) {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
            double gmin = INFINITY;
            double best = INFINITY;
            std::size_t j = n;
            for (std::size_t t = 0; t < n; ++t) {
                if (!low(t)) continue;
                const double v = -y[t] * grad[t];
                gmin = std::min(gmin, v);
                if (i < n && v < gmax) {
                    const double b = gmax - v;
                    double a = K(i, i) + K(t, t) - 2.0 * K(i, t);
                    if (a <= 0) a = tau;
                    const double obj = -(b * b) / a;
                    if (obj <= best) {
                        best = obj;
                        j = t;
                    }
                }
            }
            if (i == n || j == n || gmax - gmin < tol) break;

            const double ai = alpha[i];
            const double aj = alpha[j];
            double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
            if (quad <= 0) quad = tau;
            if (y[i] != y[j]) {
                const double delta = (-grad[i] - grad[j]) / quad;
                const double diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if (diff > 0) {
                    if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
                } else {
                    if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
                }
                if (diff > 0) {
                    if (alpha[i] > C) { alpha[i] = C; alpha[j] = C - diff; }
                } else {
                    if (alpha[j] > C) { alpha[j] = C; alpha[i] = C + diff; }
                }
            } else {
                const double delta = (grad[i] - grad[j]) / quad;
                const double sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if (sum > C) {
                    if (alpha[i] > C) { alpha[i] = C; alpha[j] = sum - C; }
                } else {
                    if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
                }
                if (sum > C) {
                    if (alpha[j] > C) { alpha[j] = C; alpha[i] = sum - C; }
                } else {
                    if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
                }
            }
            const double di = alpha[i] - ai;
            const double dj = alpha[j] - aj;
            for (std::size_t t = 0; t < n; ++t) {
                grad[t] += y[t] * (y[i] * K(t, i) * di + y[j] * K(t, j) * dj);
            }
        }

        double ub = INFINITY, lb = -INFINITY, sum_free = 0;
        std::size_t free = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const double yg = y[t] * grad[t];
            if (alpha[t] > 0 && alpha[t] < C) {
                sum_free += yg;
                ++free;
            } else if ((y[t] > 0 && alpha[t] >= C) || (y[t] < 0 && alpha[t] <= 0)) {
                lb = std::max(lb, yg);
            } else {
                ub = std::min(ub, yg);
            }
        }
        double rho = free > 0 ? sum_free / static_cast<double>(free) : (ub + lb) / 2;
        if (free == 0 && !std::isfinite(ub)) rho = lb;
        if (free == 0 && !std::isfinite(lb)) rho = ub;
        rho_(static_cast<Eigen::Index>(cls)) = std::isfinite(rho) ? rho : 0.0;
        for (std::size_t t = 0; t < n; ++t) coef_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(cls)) = y[t] * alpha[t];
    }

    double gamma_;
    RowMatrix support_;
    RowMatrix coef_;  ///< [support, class], y * alpha
    Eigen::RowVectorXd rho_;
};

} // namespace

double mse_metric(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

double ssim(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const double n = static_cast<double>(a.size());
    double mu_a = 0, mu_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mu_a += a[i];
        mu_b += b[i];
    }
    mu_a /= n;
    mu_b /= n;
    double var_a = 0, var_b = 0, cov = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - mu_a;
        const double db = b[i] - mu_b;
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

Summary summarize(std::span<const double> values) {
    if (values.empty()) throw ContractError("cannot summarize an empty sample");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double sq = 0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / n)};
}

MetricsReport evaluate_reconstructions(const ImageMatrix& originals, const ImageMatrix& recons) {
    if (originals.rows != recons.rows || originals.cols != recons.cols) {
        throw DimensionError(fmt::format("original [{}, {}] and reconstruction [{}, {}] sets differ", originals.rows,
                                         originals.cols, recons.rows, recons.cols));
    }
    MetricsReport report;
    report.n = originals.rows;
    report.mse.reserve(report.n);
    report.ssim.reserve(report.n);
    for (std::size_t r = 0; r < report.n; ++r) {
        report.mse.push_back(mse_metric(originals.row(r), recons.row(r)));
        report.ssim.push_back(ssim(originals.row(r), recons.row(r)));
    }
    report.mse_summary = summarize(report.mse);
    report.ssim_summary = summarize(report.ssim);
    return report;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t true_class) const {
    const auto& row = counts.at(true_class);
    return std::accumulate(row.begin(), row.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted_class) const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t += row.at(predicted_class);
    return t;
}

double ConfusionMatrix::f1_macro() const {
    if (total() == 0) throw ContractError("F1 of an empty confusion matrix");
    double acc = 0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double support = static_cast<double>(row_sum(c));
        const double predicted = static_cast<double>(col_sum(c));
        if (support == 0 && predicted == 0) continue;
        ++classes;
        const double tp = static_cast<double>(counts[c][c]);
        if (tp == 0) continue;
        const double precision = tp / predicted;
        const double recall = tp / support;
        acc += 2 * precision * recall / (precision + recall);
    }
    return acc / static_cast<double>(classes);
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
    check_labels(truth, predicted);
    ConfusionMatrix m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    }
    return m;
}

double f1_macro(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.empty()) throw ContractError("F1 of an empty label list");
    return confusion(truth, predicted).f1_macro();
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
    check_labels(truth, predicted);
    if (truth.empty()) throw ContractError("accuracy of an empty label list");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string to_string(ClassifierKind k) {
    return k == ClassifierKind::softmax_linear ? "softmax-linear" : "rbf-svm-subset";
}

ClassifierKind parse_classifier(std::string_view text) {
    std::string norm(text);
    std::replace(norm.begin(), norm.end(), '_', '-');
    if (norm == "softmax-linear") return ClassifierKind::softmax_linear;
    if (norm == "rbf-svm-subset" || norm == "rbf-svm") return ClassifierKind::rbf_svm_subset;
    throw ContractError(fmt::format("unknown classifier '{}'", text));
}

std::unique_ptr<Classifier> train_classifier(const ImageMatrix& images, std::span<const int> labels,
                                             const ClassifierOptions& options) {
    if (images.rows == 0) throw ContractError("empty classifier training set");
    if (images.rows != labels.size()) {
        throw DimensionError(fmt::format("{} images but {} labels", images.rows, labels.size()));
    }
    std::set<int> classes;
    for (int l : labels) {
        if (l < 0 || l >= static_cast<int>(kNumClasses)) throw DomainError(fmt::format("label {} out of range", l));
        classes.insert(l);
    }
    if (classes.size() == 1) return std::make_unique<ConstantClassifier>(*classes.begin());
    if (options.kind == ClassifierKind::softmax_linear) return std::make_unique<SoftmaxLinear>(images, labels, options);
    return std::make_unique<RbfSvm>(images, labels, options);
}

std::vector<int> classify(const Classifier& classifier, const ImageMatrix& images) {
    return classifier.predict(images);
}

} // namespace bcaps
