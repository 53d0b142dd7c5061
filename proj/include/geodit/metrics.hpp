#pragma once

#include "geodit/rng.hpp"
#include "geodit/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace geodit {

/// Mean structural similarity over channels and all 7x7 windows lying inside
/// the image. Inputs in [-1, 1] are mapped to [0, 1] (L = 1), C1 = 0.01^2,
/// C2 = 0.03^2, unbiased window variances.
double ssim(const Image &a, const Image &b);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2) between
/// Gaussian fits of two feature sets (rows are samples). The square roots use
/// symmetric eigendecompositions with eigenvalues floored at zero; 1e-6 I is
/// added to a covariance whose sample count does not exceed the dimension.
double frechet_distance(const MatrixXd &feats_a, const MatrixXd &feats_b);

struct DetectorOptions {
    int channels = 8;
    int epochs = 15;
    int batch_size = 128;
    double learning_rate = 3e-4;
    double train_fraction = 0.8;
    double val_fraction = 0.05;
    std::uint64_t seed = 0;
};

struct DetectorResult {
    double f1_fake = 0.0;
    double test_accuracy = 0.0;
    int best_epoch = 0;
    int n_train = 0, n_val = 0, n_test = 0;
};

/// Real-versus-generated probe: 3x3 same-padded convolution, global max pool,
/// linear layer to two logits, trained with Adam on cross-entropy. The
/// parameters of the epoch with the lowest validation loss are evaluated on
/// the test split; returns F1 of the generated ("fake") class.
DetectorResult train_detector(const std::vector<Image> &real, const std::vector<Image> &fake,
                              const DetectorOptions &opt = {});

/// F1 of the positive class from predicted and true labels.
double f1_score(const std::vector<int> &predicted, const std::vector<int> &truth, int positive = 1);

struct MetricsReport {
    double fid = 0.0;
    double ssim_mean = 0.0;
    double fidelity_mean = 0.0;
    double detector_f1_fake = 0.0;
    int n_samples = 0;
};

std::string format_report_csv(const std::vector<std::pair<std::string, MetricsReport>> &rows);

} // namespace geodit
