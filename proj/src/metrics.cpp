#include "geodit/metrics.hpp"

#include "geodit/autodiff.hpp"
#include "geodit/parameters.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace geodit {

double ssim(const Image &a, const Image &b)
{
    constexpr int win = 7;
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.height < win || a.width < win) throw ShapeError("ssim: image smaller than the 7x7 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    constexpr double np = win * win, cov_norm = np / (np - 1.0);
    double total = 0.0;
    long count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y0 = 0; y0 + win <= a.height; ++y0)
            for (int x0 = 0; x0 + win <= a.width; ++x0) {
                double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) {
                        const double u = (a(y, x, c) + 1.0) / 2.0, v = (b(y, x, c) + 1.0) / 2.0;
                        sx += u;
                        sy += v;
                        sxx += u * u;
                        syy += v * v;
                        sxy += u * v;
                    }
                const double ux = sx / np, uy = sy / np;
                const double vx = cov_norm * (sxx / np - ux * ux);
                const double vy = cov_norm * (syy / np - uy * uy);
                const double vxy = cov_norm * (sxy / np - ux * uy);
                total += ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

namespace {

Eigen::MatrixXd covariance(const MatrixXd &x, const Eigen::RowVectorXd &mean)
{
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
    if (x.rows() <= x.cols()) cov += 1e-6 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    return cov;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd &m)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double frechet_distance(const MatrixXd &feats_a, const MatrixXd &feats_b)
{
    if (feats_a.cols() != feats_b.cols()) throw ShapeError("frechet_distance: feature dimensions differ");
    if (feats_a.rows() < 2 || feats_b.rows() < 2) throw std::invalid_argument("frechet_distance: need at least 2 samples per set");
    if (!feats_a.allFinite() || !feats_b.allFinite()) throw DomainError("frechet_distance: non-finite features");
    const Eigen::RowVectorXd mu_a = feats_a.colwise().mean(), mu_b = feats_b.colwise().mean();
    const Eigen::MatrixXd sa = covariance(feats_a, mu_a), sb = covariance(feats_b, mu_b);
    const Eigen::MatrixXd ra = sqrt_psd(sa);
    const Eigen::MatrixXd cross = sqrt_psd(ra * sb * ra);
    const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
    return std::max(d, 0.0);
}

double f1_score(const std::vector<int> &predicted, const std::vector<int> &truth, int positive)
{
    if (predicted.size() != truth.size()) throw std::invalid_argument("f1_score: length mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == positive, t = truth[i] == positive;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

namespace {

/// Rows: pixels of every image in order; columns: 3x3 neighborhood x channel,
/// zero outside the image.
MatrixXd im2col(const std::vector<const Image *> &images)
{
    const int h = images.front()->height, w = images.front()->width, c = images.front()->channels;
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(images.size()) * h * w, 9 * c);
    Eigen::Index row = 0;
    for (const auto *img : images)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x, ++row)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        const int k = (dy + 1) * 3 + (dx + 1);
                        for (int ch = 0; ch < c; ++ch) out(row, k * c + ch) = (*img)(yy, xx, ch);
                    }
    return out;
}

struct Probe {
    ParameterSet<double> params;
    int pixels = 0;

    ad::Var<double> logits(ad::Tape<double> &tape, const std::vector<const Image *> &batch)
    {
        auto cols = tape.constant(im2col(batch));
        auto maps = params.linear(tape, "conv", cols);
        return params.linear(tape, "head", ad::group_max_rows(maps, pixels));
    }
};

} // namespace

DetectorResult train_detector(const std::vector<Image> &real, const std::vector<Image> &fake, const DetectorOptions &opt)
{
    if (real.size() < 200 || fake.size() < 200) throw std::invalid_argument("train_detector: need at least 200 images per class");
    const double ratio = static_cast<double>(std::max(real.size(), fake.size())) / static_cast<double>(std::min(real.size(), fake.size()));
    if (ratio > 10.0) throw std::invalid_argument("train_detector: class imbalance beyond 10:1");
    const Image &ref = real.front();
    for (const auto *set : {&real, &fake})
        for (const auto &img : *set)
            if (!img.same_shape(ref)) throw ShapeError("train_detector: images differ in shape");

    std::vector<std::pair<const Image *, int>> all;
    for (const auto &img : real) all.emplace_back(&img, 0);
    for (const auto &img : fake) all.emplace_back(&img, 1);
    Rng rng(derive_seed(opt.seed, hash_name("detector.split")));
    std::shuffle(all.begin(), all.end(), rng.engine());
    const auto n = all.size();
    const auto n_train = static_cast<std::size_t>(opt.train_fraction * static_cast<double>(n));
    const auto n_val = static_cast<std::size_t>(opt.val_fraction * static_cast<double>(n));
    const std::vector<std::pair<const Image *, int>> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<std::pair<const Image *, int>> val(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                                                         all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    const std::vector<std::pair<const Image *, int>> test(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
    if (train.empty() || val.empty() || test.empty()) throw std::invalid_argument("train_detector: a split is empty");

    Probe probe;
    probe.pixels = ref.height * ref.width;
    probe.params.create_linear("conv", 9 * ref.channels, opt.channels, Init::xavier, derive_seed(opt.seed, 1));
    probe.params.create_linear("head", opt.channels, 2, Init::xavier, derive_seed(opt.seed, 2));
    AdamW<double> adam({opt.learning_rate, 0.9, 0.999, 1e-8, 0.0});

    auto evaluate = [&](const std::vector<std::pair<const Image *, int>> &split, std::vector<int> *pred) {
        double loss = 0.0;
        for (std::size_t at = 0; at < split.size(); at += static_cast<std::size_t>(opt.batch_size)) {
            const auto end = std::min(split.size(), at + static_cast<std::size_t>(opt.batch_size));
            std::vector<const Image *> imgs;
            std::vector<int> labels;
            for (auto i = at; i < end; ++i) {
                imgs.push_back(split[i].first);
                labels.push_back(split[i].second);
            }
            ad::Tape<double> tape(false);
            auto z = probe.logits(tape, imgs);
            loss += ad::softmax_cross_entropy(z, labels).scalar() * static_cast<double>(labels.size());
            if (pred)
                for (Eigen::Index r = 0; r < z.rows(); ++r) pred->push_back(z.value()(r, 1) > z.value()(r, 0) ? 1 : 0);
        }
        return loss / static_cast<double>(split.size());
    };

    auto order = train;
    double best_val = std::numeric_limits<double>::infinity();
    ParameterSet<double> best = probe.params;
    int best_epoch = 0;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opt.batch_size)) {
            const auto end = std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
            std::vector<const Image *> imgs;
            std::vector<int> labels;
            for (auto i = at; i < end; ++i) {
                imgs.push_back(order[i].first);
                labels.push_back(order[i].second);
            }
            ad::Tape<double> tape;
            auto loss = ad::softmax_cross_entropy(probe.logits(tape, imgs), labels);
            probe.params.zero_grad();
            tape.backward(loss);
            adam.step(probe.params);
        }
        const double v = evaluate(val, nullptr);
        if (v < best_val) {
            best_val = v;
            best = probe.params;
            best_epoch = epoch;
        }
    }
    probe.params = best;
    std::vector<int> pred, truth;
    evaluate(test, &pred);
    for (const auto &[img, label] : test) truth.push_back(label);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    return {f1_score(pred, truth, 1), static_cast<double>(correct) / static_cast<double>(pred.size()), best_epoch,
            static_cast<int>(train.size()), static_cast<int>(val.size()), static_cast<int>(test.size())};
}

std::string format_report_csv(const std::vector<std::pair<std::string, MetricsReport>> &rows)
{
    std::ostringstream os;
    os.precision(10);
    os << "label,fid,ssim_mean,fidelity_mean,detector_f1_fake,n_samples\n";
    for (const auto &[label, r] : rows)
        os << label << ',' << r.fid << ',' << r.ssim_mean << ',' << r.fidelity_mean << ',' << r.detector_f1_fake << ','
           << r.n_samples << '\n';
    return os.str();
}

} // namespace geodit
