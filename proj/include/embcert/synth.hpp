#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "embcert/random.hpp"
#include "embcert/types.hpp"

/**
 * @file synth.hpp
 *
 * @brief Synthetic hypersphere worlds with known ground truth: von
 * Mises-Fisher clusters, noisy labels, out-of-distribution samples, views
 * jittered in the tangent space, and a nearest-centroid softmax classifier.
 */

namespace embcert {

namespace detail {

inline Eigen::RowVectorXd gaussian_row(Index m, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::RowVectorXd v(m);
    for (Index d = 0; d < m; ++d) {
        v[d] = normal(rng);
    }
    return v;
}

inline Eigen::RowVectorXd uniform_on_sphere(Index m, Rng& rng) {
    for (;;) {
        Eigen::RowVectorXd v = gaussian_row(m, rng);
        const double n = v.norm();
        if (n > 1e-12) {
            return v / n;
        }
    }
}

/// Uniform unit vector orthogonal to the unit vector `mu`.
inline Eigen::RowVectorXd orthogonal_direction(const Eigen::RowVectorXd& mu, Rng& rng) {
    for (;;) {
        Eigen::RowVectorXd v = gaussian_row(mu.size(), rng);
        v -= v.dot(mu) * mu;
        const double n = v.norm();
        if (n > 1e-12) {
            return v / n;
        }
    }
}

inline double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

inline void renormalize_rows(Matrix& x) {
    for (Index i = 0; i < x.rows(); ++i) {
        x.row(i) /= x.row(i).norm();
    }
}

}  // namespace detail

/**
 * n i.i.d. von Mises-Fisher samples around unit vector `mu`. The cosine to
 * `mu` is drawn with Wood's rejection sampler, the orthogonal part uniformly;
 * kappa = 0 gives the uniform distribution on the sphere.
 */
inline Matrix sample_vmf(const Eigen::RowVectorXd& mu, double kappa, Index n, Rng& rng) {
    const Index m = mu.size();
    if (m < 2) {
        throw Error("vMF sampling needs dimension >= 2");
    }
    if (std::abs(mu.norm() - 1.0) > 1e-9) {
        throw Error("vMF mean direction must be a unit vector");
    }
    if (!(kappa >= 0)) {
        throw Error("vMF concentration must be >= 0");
    }
    Matrix out(n, m);
    if (kappa == 0) {
        for (Index i = 0; i < n; ++i) {
            out.row(i) = detail::uniform_on_sphere(m, rng);
        }
        return out;
    }

    const double dm1 = static_cast<double>(m - 1);
    const double b = dm1 / (2 * kappa + std::sqrt(4 * kappa * kappa + dm1 * dm1));
    const double x0 = (1 - b) / (1 + b);
    const double c = kappa * x0 + dm1 * std::log(1 - x0 * x0);
    for (Index i = 0; i < n; ++i) {
        double w = 0;
        for (;;) {
            const double z = detail::sample_beta(dm1 / 2, dm1 / 2, rng);
            w = (1 - (1 + b) * z) / (1 - (1 - b) * z);
            const double u = uniform01(rng);
            if (kappa * w + dm1 * std::log(1 - x0 * w) - c >= std::log(u)) {
                break;
            }
        }
        const Eigen::RowVectorXd v = detail::orthogonal_direction(mu, rng);
        out.row(i) = w * mu + std::sqrt(std::max(0.0, 1 - w * w)) * v;
    }
    detail::renormalize_rows(out);
    return out;
}

enum class OodMode { uniform_sphere, shifted_clusters };

struct SynthConfig {
    Index m = 16;
    Index n_clusters = 10;
    Index per_cluster_n = 500;
    double kappa = 50;
    double label_noise = 0;
    Index n_views = 4;
    double view_noise_sigma = 0.05;
    OodMode ood_mode = OodMode::uniform_sphere;
    /// Rotation of each center for shifted_clusters, radians.
    double ood_angle = std::numbers::pi / 4;
    /// Test samples per cluster; 0 means per_cluster_n / 5 (at least 1).
    Index test_per_cluster_n = 0;
    /// OOD sample count; 0 means the same as the in-distribution test count.
    Index n_ood = 0;
    std::uint64_t seed = 0;
};

struct SynthWorld {
    SynthConfig config;
    Matrix centers;
    EmbeddingSet train;
    std::vector<int> train_true_labels;
    std::vector<bool> train_corrupted;
    std::vector<AugmentedBatch> test_batches;
    std::vector<int> test_labels;
    EmbeddingSet ood;
    std::vector<AugmentedBatch> ood_batches;
    std::vector<DownstreamRecord> downstream_test;
    std::vector<DownstreamRecord> downstream_ood;
};

namespace detail {

inline void validate(const SynthConfig& cfg) {
    if (cfg.m < 2) throw UsageError("synth: m must be >= 2");
    if (cfg.n_clusters < 1) throw UsageError("synth: n_clusters must be >= 1");
    if (cfg.per_cluster_n < 1) throw UsageError("synth: per_cluster_n must be >= 1");
    if (!(cfg.kappa >= 0)) throw UsageError("synth: kappa must be >= 0");
    if (!(cfg.label_noise >= 0 && cfg.label_noise < 1)) throw UsageError("synth: label_noise must be in [0, 1)");
    if (cfg.n_views < 1) throw UsageError("synth: n_views must be >= 1");
    if (!(cfg.view_noise_sigma >= 0)) throw UsageError("synth: view_noise_sigma must be >= 0");
    if (cfg.test_per_cluster_n < 0 || cfg.n_ood < 0) throw UsageError("synth: sample counts must be >= 0");
}

inline double min_pairwise_angle(const Matrix& centers) {
    double best = std::numbers::pi;
    for (Index i = 0; i < centers.rows(); ++i) {
        for (Index j = i + 1; j < centers.rows(); ++j) {
            const double cosv = std::clamp(centers.row(i).dot(centers.row(j)), -1.0, 1.0);
            best = std::min(best, std::acos(cosv));
        }
    }
    return best;
}

/// Cluster centers; for C <= 12 every pair is at least 30 degrees apart.
inline Matrix draw_centers(const SynthConfig& cfg, Rng& rng) {
    constexpr int kDraws = 1000;
    const double min_angle = std::numbers::pi / 6;
    Matrix best;
    double best_angle = -1;
    for (int draw = 0; draw < kDraws; ++draw) {
        Matrix c(cfg.n_clusters, cfg.m);
        for (Index i = 0; i < cfg.n_clusters; ++i) {
            c.row(i) = uniform_on_sphere(cfg.m, rng);
        }
        const double angle = min_pairwise_angle(c);
        if (cfg.n_clusters <= 12 && angle >= min_angle) {
            return c;
        }
        if (angle > best_angle) {
            best_angle = angle;
            best = std::move(c);
        }
    }
    if (cfg.n_clusters <= 12) {
        throw Error("synth: could not place " + std::to_string(cfg.n_clusters) + " centers at least 30 degrees apart in m=" +
                    std::to_string(cfg.m) + " after " + std::to_string(kDraws) + " draws");
    }
    return best;
}

/// View 0 is the sample itself; further views add tangent-space noise and renormalize.
inline Matrix make_views(const Eigen::RowVectorXd& z, Index l, double sigma, Rng& rng) {
    Matrix views(l, z.size());
    views.row(0) = z;
    for (Index v = 1; v < l; ++v) {
        Eigen::RowVectorXd noise = gaussian_row(z.size(), rng) * sigma;
        noise -= noise.dot(z) * z;
        Eigen::RowVectorXd jittered = z + noise;
        views.row(v) = jittered / jittered.norm();
    }
    return views;
}

/// Nearest-centroid softmax over kappa * <z, center_c>.
inline std::vector<double> centroid_softmax(const Eigen::RowVectorXd& z, const Matrix& centers, double kappa) {
    std::vector<double> logits(static_cast<std::size_t>(centers.rows()));
    double hi = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centers.rows(); ++c) {
        logits[static_cast<std::size_t>(c)] = kappa * z.dot(centers.row(c));
        hi = std::max(hi, logits[static_cast<std::size_t>(c)]);
    }
    double sum = 0;
    for (auto& v : logits) {
        v = std::exp(v - hi);
        sum += v;
    }
    for (auto& v : logits) {
        v /= sum;
    }
    return logits;
}

inline std::string sample_name(const char* prefix, Index i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 6) {
        digits.insert(0, 6 - digits.size(), '0');
    }
    return std::string(prefix) + "-" + digits;
}

}  // namespace detail

/**
 * Generates a labeled training set, augmented test samples with a simulated
 * downstream classifier, and an OOD set, all bit-reproducible from the config.
 * Each stage draws from its own seeded stream.
 */
inline SynthWorld generate_world(const SynthConfig& cfg) {
    detail::validate(cfg);
    Rng center_rng = make_rng(cfg.seed, 1);
    Rng train_rng = make_rng(cfg.seed, 2);
    Rng noise_rng = make_rng(cfg.seed, 3);
    Rng test_rng = make_rng(cfg.seed, 4);
    Rng ood_rng = make_rng(cfg.seed, 5);

    const Index C = cfg.n_clusters;
    const Matrix centers = detail::draw_centers(cfg, center_rng);

    // Training set.
    const Index n_train = C * cfg.per_cluster_n;
    Matrix train(n_train, cfg.m);
    std::vector<int> true_labels(static_cast<std::size_t>(n_train));
    for (Index c = 0; c < C; ++c) {
        train.middleRows(c * cfg.per_cluster_n, cfg.per_cluster_n) =
            sample_vmf(centers.row(c), cfg.kappa, cfg.per_cluster_n, train_rng);
        std::fill_n(true_labels.begin() + c * cfg.per_cluster_n, cfg.per_cluster_n, static_cast<int>(c));
    }
    std::vector<int> labels = true_labels;
    std::vector<bool> corrupted(static_cast<std::size_t>(n_train), false);
    const auto n_noisy = static_cast<Index>(std::llround(cfg.label_noise * static_cast<double>(n_train)));
    if (n_noisy > 0 && C > 1) {
        std::vector<Index> order(static_cast<std::size_t>(n_train));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), noise_rng);
        for (Index t = 0; t < n_noisy; ++t) {
            const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(t)]);
            std::uniform_int_distribution<int> other(0, static_cast<int>(C) - 2);
            int lab = other(noise_rng);
            if (lab >= true_labels[i]) {
                ++lab;
            }
            labels[i] = lab;
            corrupted[i] = true;
        }
    }

    // In-distribution test samples.
    const Index per_test = cfg.test_per_cluster_n > 0 ? cfg.test_per_cluster_n
                                                      : std::max<Index>(1, cfg.per_cluster_n / 5);
    std::vector<AugmentedBatch> test_batches;
    std::vector<int> test_labels;
    std::vector<DownstreamRecord> downstream_test;
    for (Index c = 0; c < C; ++c) {
        const Matrix draws = sample_vmf(centers.row(c), cfg.kappa, per_test, test_rng);
        for (Index i = 0; i < per_test; ++i) {
            const std::string id = detail::sample_name("test", c * per_test + i);
            test_batches.emplace_back(id, detail::make_views(draws.row(i), cfg.n_views, cfg.view_noise_sigma, test_rng));
            test_labels.push_back(static_cast<int>(c));
            downstream_test.push_back(DownstreamRecord::make(
                id, detail::centroid_softmax(draws.row(i), centers, cfg.kappa), static_cast<int>(c)));
        }
    }

    // Out-of-distribution samples.
    const Index n_ood = cfg.n_ood > 0 ? cfg.n_ood : C * per_test;
    Matrix ood(n_ood, cfg.m);
    if (cfg.ood_mode == OodMode::uniform_sphere) {
        ood = sample_vmf(centers.row(0), 0.0, n_ood, ood_rng);
    } else {
        Matrix shifted(C, cfg.m);
        for (Index c = 0; c < C; ++c) {
            const Eigen::RowVectorXd dir = detail::orthogonal_direction(centers.row(c), ood_rng);
            shifted.row(c) = std::cos(cfg.ood_angle) * centers.row(c) + std::sin(cfg.ood_angle) * dir;
            shifted.row(c) /= shifted.row(c).norm();
        }
        for (Index i = 0; i < n_ood; ++i) {
            ood.row(i) = sample_vmf(shifted.row(i % C), cfg.kappa, 1, ood_rng).row(0);
        }
    }
    std::vector<AugmentedBatch> ood_batches;
    std::vector<DownstreamRecord> downstream_ood;
    for (Index i = 0; i < n_ood; ++i) {
        const std::string id = detail::sample_name("ood", i);
        ood_batches.emplace_back(id, detail::make_views(ood.row(i), cfg.n_views, cfg.view_noise_sigma, ood_rng));
        downstream_ood.push_back(DownstreamRecord::make(id, detail::centroid_softmax(ood.row(i), centers, cfg.kappa)));
    }

    return SynthWorld{cfg,
                      centers,
                      EmbeddingSet(std::move(train), std::move(labels), "train"),
                      std::move(true_labels),
                      std::move(corrupted),
                      std::move(test_batches),
                      std::move(test_labels),
                      EmbeddingSet(std::move(ood), std::nullopt, "ood"),
                      std::move(ood_batches),
                      std::move(downstream_test),
                      std::move(downstream_ood)};
}

/// Fraction of test samples the simulated classifier gets right.
inline double downstream_accuracy(const std::vector<DownstreamRecord>& records) {
    std::size_t right = 0;
    std::size_t known = 0;
    for (const auto& r : records) {
        if (r.correct) {
            ++known;
            right += *r.correct;
        }
    }
    return known ? static_cast<double>(right) / static_cast<double>(known) : 0.0;
}

}  // namespace embcert
