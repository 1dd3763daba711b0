#include "support.hpp"

#include "bcaps/error.hpp"
#include "bcaps/metrics.hpp"
#include "bcaps/models.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace bcaps;

namespace {

std::vector<double> random_image(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(784);
    for (auto& x : v) x = dist(rng);
    return v;
}

/// SSIM written out from sample moments with two-pass sums kept separate.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    long double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
    }
    const long double ma = sa / n, mb = sb / n;
    long double va = 0, vb = 0, c = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        c += (a[i] - ma) * (b[i] - mb);
    }
    va /= n;
    vb /= n;
    c /= n;
    const long double c1 = 1e-4L, c2 = 9e-4L;
    return static_cast<double>((2 * ma * mb + c1) * (2 * c + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
}

/// Macro F1 by direct counting over the classes seen in either list.
double f1_oracle(const std::vector<int>& truth, const std::vector<int>& pred) {
    double total = 0;
    int classes = 0;
    for (int c = 0; c < 10; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c && pred[i] == c) ++tp;
            if (truth[i] != c && pred[i] == c) ++fp;
            if (truth[i] == c && pred[i] != c) ++fn;
        }
        if (tp + fp + fn == 0) continue;
        ++classes;
        if (tp == 0) continue;
        const double p = static_cast<double>(tp) / (tp + fp);
        const double r = static_cast<double>(tp) / (tp + fn);
        total += 2 * p * r / (p + r);
    }
    return total / classes;
}

ImageMatrix matrix_of(const Dataset& d) { return d.to_matrix(); }

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("ssim: identity, constants, symmetry") {
    std::mt19937_64 rng(61);
    const auto a = random_image(rng), b = random_image(rng);
    CHECK(ssim(a, a) == 1.0);
    const std::vector<double> half(784, 0.5);
    CHECK(ssim(half, half) == 1.0);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
    CHECK(ssim(a, b) < 1.0);
    CHECK_THROWS_AS(ssim(a, std::vector<double>(10, 0.0)), DimensionError);
}

TEST_CASE("ssim: matches the moment formula") {
    std::mt19937_64 rng(62);
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = random_image(rng);
        auto b = a;
        std::normal_distribution<double> noise(0.0, 0.1 * trial);
        for (auto& x : b) x = std::clamp(x + noise(rng), 0.0, 1.0);
        CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-12);
    }
    const std::vector<double> zeros(784, 0.0), ones(784, 1.0);
    CHECK(std::abs(ssim(zeros, ones) - 1e-4 / (1 + 1e-4)) <= 1e-15);
}

TEST_CASE("mse: examples and agreement with the reconstruction loss") {
    const std::vector<double> zeros(784, 0.0), ones(784, 1.0);
    CHECK(mse_metric(zeros, zeros) == 0.0);
    CHECK(mse_metric(ones, zeros) == 1.0);

    std::mt19937_64 rng(63);
    const auto a = random_image(rng), b = random_image(rng);
    const double loss = recon_loss(Tensor<double>({1, 784}, a), Tensor<double>({1, 784}, b)).item();
    CHECK(std::abs(mse_metric(a, b) - loss) <= 1e-12);

    auto c = a;
    CHECK(mse_metric(a, c) == 0.0);
    c[400] = std::nextafter(c[400], 2.0);
    CHECK(mse_metric(a, c) > 0.0);
}

TEST_CASE("summary uses the population deviation") {
    const std::vector<double> v{1, 2, 3, 4};
    const Summary s = summarize(v);
    CHECK(std::abs(s.mean - 2.5) <= 1e-12);
    CHECK(std::abs(s.std - std::sqrt(1.25)) <= 1e-12);
    CHECK_THROWS_AS(summarize(std::vector<double>{}), ContractError);
}

TEST_CASE("evaluate_reconstructions pairs rows") {
    std::mt19937_64 rng(64);
    ImageMatrix x{3, 784, {}}, y{3, 784, {}};
    for (int r = 0; r < 3; ++r) {
        const auto a = random_image(rng), b = random_image(rng);
        x.values.insert(x.values.end(), a.begin(), a.end());
        y.values.insert(y.values.end(), b.begin(), b.end());
    }
    const MetricsReport report = evaluate_reconstructions(x, y);
    REQUIRE(report.n == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(report.mse[r] == mse_metric(x.row(r), y.row(r)));
        CHECK(report.ssim[r] == ssim(x.row(r), y.row(r)));
    }
    CHECK(report.mse_summary.mean == summarize(report.mse).mean);
    const MetricsReport self = evaluate_reconstructions(x, x);
    CHECK(self.ssim_summary.mean == 1.0);
    CHECK(self.mse_summary.mean == 0.0);
    ImageMatrix shorter{2, 784, std::vector<double>(2 * 784)};
    CHECK_THROWS_AS(evaluate_reconstructions(x, shorter), DimensionError);
}

TEST_CASE("f1: examples") {
    const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 3, 3};
    CHECK(f1_macro(labels, labels) == 1.0);
    CHECK(f1_macro(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 0}) == 0.25);
    CHECK_THROWS_AS(f1_macro(std::vector<int>{}, std::vector<int>{}), ContractError);
    CHECK_THROWS_AS(f1_macro(std::vector<int>{0, 10}, std::vector<int>{0, 1}), DomainError);
    CHECK_THROWS_AS(f1_macro(std::vector<int>{0}, std::vector<int>{0, 1}), DimensionError);
}

TEST_CASE("f1: counting oracle and permutation invariance") {
    std::mt19937_64 rng(65);
    std::uniform_int_distribution<int> label(0, 9), coin(0, 2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> truth(100), pred(100);
        for (std::size_t i = 0; i < 100; ++i) {
            truth[i] = label(rng);
            pred[i] = coin(rng) == 0 ? label(rng) : truth[i];
        }
        const double f1 = f1_macro(truth, pred);
        CHECK(f1 == doctest::Approx(f1_oracle(truth, pred)).epsilon(1e-15));
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);

        std::vector<std::size_t> order(100);
        for (std::size_t i = 0; i < 100; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> t2(100), p2(100);
        for (std::size_t i = 0; i < 100; ++i) {
            t2[i] = truth[order[i]];
            p2[i] = pred[order[i]];
        }
        CHECK(f1_macro(t2, p2) == f1);
    }
}

TEST_CASE("confusion matrix invariants") {
    std::mt19937_64 rng(66);
    std::uniform_int_distribution<int> label(0, 9);
    std::vector<int> truth(200), pred(200);
    for (std::size_t i = 0; i < 200; ++i) {
        truth[i] = label(rng);
        pred[i] = label(rng);
    }
    const ConfusionMatrix m = confusion(truth, pred);
    CHECK(m.total() == 200);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        CHECK(m.row_sum(c) == static_cast<std::uint64_t>(std::count(truth.begin(), truth.end(), static_cast<int>(c))));
        CHECK(m.col_sum(c) == static_cast<std::uint64_t>(std::count(pred.begin(), pred.end(), static_cast<int>(c))));
    }
    CHECK(m.f1_macro() == f1_macro(truth, pred));

    const ConfusionMatrix diag = confusion(truth, truth);
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        for (std::size_t j = 0; j < kNumClasses; ++j) {
            if (i != j) CHECK(diag.counts[i][j] == 0);
        }
    }
    CHECK_THROWS_AS(confusion(std::vector<int>{-1}, std::vector<int>{0}), DomainError);
    CHECK_THROWS_AS(ConfusionMatrix{}.f1_macro(), ContractError);
}

TEST_CASE("classifier names round-trip") {
    for (auto k : {ClassifierKind::softmax_linear, ClassifierKind::rbf_svm_subset}) {
        CHECK(parse_classifier(to_string(k)) == k);
    }
    CHECK(parse_classifier("softmax_linear") == ClassifierKind::softmax_linear);
    CHECK_THROWS_AS(parse_classifier("knn"), ContractError);
}

TEST_CASE("single-class training data predicts that class") {
    Dataset d = bcaps::testing::synthetic_dataset(20, 67);
    std::fill(d.labels.begin(), d.labels.end(), 4);
    const ImageMatrix m = matrix_of(d);
    for (auto kind : {ClassifierKind::softmax_linear, ClassifierKind::rbf_svm_subset}) {
        ClassifierOptions o;
        o.kind = kind;
        auto clf = train_classifier(m, d.labels, o);
        for (int p : classify(*clf, m)) CHECK(p == 4);
    }
}

TEST_CASE("classifiers fit a small training set") {
    const Dataset d = bcaps::testing::have_mnist() ? random_subset(bcaps::testing::mnist_train(), 100, 68)
                                                  : bcaps::testing::synthetic_dataset(100, 68);
    const ImageMatrix m = matrix_of(d);
    ClassifierOptions softmax;
    softmax.epochs = 200;
    softmax.batch_size = 20;
    softmax.learning_rate = 1e-2;
    CHECK(accuracy(d.labels, classify(*train_classifier(m, d.labels, softmax), m)) >= 0.95);

    ClassifierOptions svm;
    svm.kind = ClassifierKind::rbf_svm_subset;
    CHECK(accuracy(d.labels, classify(*train_classifier(m, d.labels, svm), m)) >= 0.95);
}

TEST_CASE("softmax classifier on raw MNIST") {
    if (!bcaps::testing::have_mnist()) {
        MESSAGE("MNIST not found; skipped");
        return;
    }
    const Dataset train = bcaps::testing::mnist_train();
    const Dataset test = bcaps::testing::mnist_test();
    ClassifierOptions o;
    o.seed = 3;
    auto clf = train_classifier(train.to_matrix(), train.labels, o);
    const auto predicted = classify(*clf, test.to_matrix());
    const double acc = accuracy(test.labels, predicted);
    MESSAGE("raw MNIST accuracy " << acc << ", macro F1 " << f1_macro(test.labels, predicted));
    CHECK(acc >= 0.90);
}

}
