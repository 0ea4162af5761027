#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "embcert/kmeanspp.hpp"
#include "embcert/parallel.hpp"
#include "embcert/random.hpp"
#include "embcert/types.hpp"

/**
 * @file gmm.hpp
 *
 * @brief Expectation-maximization for Gaussian mixtures on embedding sets and
 * log-density evaluation of fitted mixtures.
 *
 * Everything is evaluated in log space. Per-point work is split into fixed
 * row chunks and every reduction runs sequentially in row order, so results
 * are bit-identical for any thread count.
 */

namespace embcert {

struct GmmFitConfig {
    Index n_comp = 1;
    CovStructure cov_structure = CovStructure::full;
    double ridge_eps = 1e-6;
    int max_iters = 200;
    double rel_tol = 1e-6;
    int n_restarts = 1;
    std::uint64_t seed = 0;
    /// Workers for per-point evaluation; does not change results.
    int threads = 1;
};

inline constexpr double kCollapsedWeight = 1e-12;
inline constexpr int kMaxReseeds = 10;

namespace detail {

inline constexpr Index kRowChunk = 256;

/// Responsibilities below exp(-460) (about 1e-200) are flushed to zero so
/// that the M-step never touches subnormal products.
inline constexpr double kNegligibleLogResp = -460.0;

inline void normalize_row_to_resp(double* row, Index count, double lse) {
    for (Index c = 0; c < count; ++c) {
        const double v = row[c] - lse;
        row[c] = v < kNegligibleLogResp ? 0.0 : std::exp(v);
    }
}

inline double log_sum_exp(const double* values, Index count) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < count; ++i) {
        hi = std::max(hi, values[i]);
    }
    if (!std::isfinite(hi)) {
        return hi;
    }
    double sum = 0;
    for (Index i = 0; i < count; ++i) {
        sum += std::exp(values[i] - hi);
    }
    return hi + std::log(sum);
}

struct Components {
    Vector log_weights;
    const Matrix* means;
    const std::vector<Eigen::MatrixXd>* chol;
    Vector log_dets;
    CovStructure cov;
};

/// N x K matrix of log w_c + log N(x_i; mu_c, Sigma_c).
inline Matrix weighted_log_densities(const Components& comps, const Matrix& points, int threads) {
    const Index n = points.rows();
    const Index m = points.cols();
    const Index k = comps.log_weights.size();
    const double log_norm = 0.5 * static_cast<double>(m) * std::log(2 * std::numbers::pi);
    Matrix out(n, k);

    const auto n_chunks = static_cast<std::size_t>((n + kRowChunk - 1) / kRowChunk);
    parallel_for(n_chunks, threads, [&](std::size_t chunk) {
        const Index begin = static_cast<Index>(chunk) * kRowChunk;
        const Index len = std::min(kRowChunk, n - begin);
        for (Index c = 0; c < k; ++c) {
            const auto& L = (*comps.chol)[static_cast<std::size_t>(c)];
            Eigen::MatrixXd centered = (points.middleRows(begin, len).rowwise() - comps.means->row(c)).transpose();
            Eigen::VectorXd maha;
            if (comps.cov == CovStructure::diagonal) {
                maha = (centered.array().colwise() / L.diagonal().array()).square().colwise().sum().transpose();
            } else {
                L.triangularView<Eigen::Lower>().solveInPlace(centered);
                maha = centered.colwise().squaredNorm().transpose();
            }
            const double offset = comps.log_weights[c] - log_norm - 0.5 * comps.log_dets[c];
            for (Index i = 0; i < len; ++i) {
                out(begin + i, c) = offset - 0.5 * maha[i];
            }
        }
    });
    return out;
}

inline Components components_of(const GmmModel& model) {
    Vector log_dets(model.n_comp());
    for (Index c = 0; c < model.n_comp(); ++c) {
        log_dets[c] = model.log_det(c);
    }
    return Components{model.log_weights(), &model.means(), &model.cholesky_factors(), std::move(log_dets),
                      model.cov_structure()};
}

inline void check_dim(const GmmModel& model, const Matrix& points) {
    if (points.cols() != model.dim()) {
        throw Error("dimension mismatch: model has m=" + std::to_string(model.dim()) + ", points have " +
                    std::to_string(points.cols()) + " columns");
    }
}

}  // namespace detail

/// log p(z_j) for every row z_j of `points`, via per-row log-sum-exp.
inline Vector log_density(const GmmModel& model, const Matrix& points, int threads = 1) {
    detail::check_dim(model, points);
    const Matrix weighted = detail::weighted_log_densities(detail::components_of(model), points, threads);
    Vector out(points.rows());
    for (Index i = 0; i < points.rows(); ++i) {
        out[i] = detail::log_sum_exp(weighted.row(i).data(), weighted.cols());
    }
    return out;
}

/// Posterior component probabilities (E-step responsibilities), N x K.
inline Matrix responsibilities(const GmmModel& model, const Matrix& points, int threads = 1) {
    detail::check_dim(model, points);
    Matrix weighted = detail::weighted_log_densities(detail::components_of(model), points, threads);
    for (Index i = 0; i < weighted.rows(); ++i) {
        const double lse = detail::log_sum_exp(weighted.row(i).data(), weighted.cols());
        detail::normalize_row_to_resp(weighted.row(i).data(), weighted.cols(), lse);
    }
    return weighted;
}

namespace detail {

struct EmState {
    Vector weights;
    Matrix means;
    std::vector<Eigen::MatrixXd> chol;
    Vector log_dets;

    Components view(CovStructure cov) const {
        return Components{weights.array().log().matrix(), &means, &chol, log_dets, cov};
    }
};

struct EmRun {
    EmState state;
    std::vector<double> history;
    std::vector<int> reseeds;
    int iterations = 0;
    bool converged = false;
};

inline Eigen::MatrixXd cholesky_with_ridge(Eigen::MatrixXd cov, double ridge, Index component) {
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw Error("covariance of component " + std::to_string(component) + " is not positive definite");
    }
    Eigen::MatrixXd L = llt.matrixL();
    return L;
}

inline Eigen::MatrixXd diagonal_factor(const Eigen::VectorXd& variances, double ridge) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(variances.size(), variances.size());
    for (Index d = 0; d < variances.size(); ++d) {
        L(d, d) = std::sqrt(variances[d] + ridge);
    }
    return L;
}

/// Weighted mean and ridge-regularized covariance factor of `points` under weights `r`.
inline void weighted_moments(const Matrix& points, const Eigen::VectorXd& r, double mass, CovStructure cov,
                             double ridge, Index component, Eigen::RowVectorXd& mean, Eigen::MatrixXd& chol) {
    mean = (r.transpose() * points) / mass;
    const Matrix centered = points.rowwise() - mean;
    if (cov == CovStructure::diagonal) {
        Eigen::VectorXd var = (centered.array().square().colwise() * r.array()).colwise().sum().transpose() / mass;
        chol = diagonal_factor(var, ridge);
    } else {
        const Matrix weighted = centered.array().colwise() * r.array();
        Eigen::MatrixXd scatter = centered.transpose() * weighted;
        chol = cholesky_with_ridge(scatter / mass, ridge, component);
    }
}

inline double log_det_of(const Eigen::MatrixXd& L) {
    return 2 * L.diagonal().array().log().sum();
}

/**
 * M-step from responsibilities. Components whose mass falls below the
 * collapse threshold are re-seeded at the worst-explained points.
 */
inline EmState m_step(const Matrix& points, const Matrix& resp, const Vector& point_log_lik,
                      const GmmFitConfig& cfg, int iteration, std::vector<int>& reseeds) {
    const Index n = points.rows();
    const Index k = resp.cols();
    EmState s;
    s.weights.resize(k);
    s.means.resize(k, points.cols());
    s.chol.assign(static_cast<std::size_t>(k), Eigen::MatrixXd());
    s.log_dets.resize(k);

    std::vector<double> mass(static_cast<std::size_t>(k), 0.0);
    for (Index c = 0; c < k; ++c) {
        double sum = 0;
        for (Index i = 0; i < n; ++i) {
            sum += resp(i, c);
        }
        mass[static_cast<std::size_t>(c)] = sum;
    }

    std::vector<Index> collapsed;
    for (Index c = 0; c < k; ++c) {
        if (mass[static_cast<std::size_t>(c)] / static_cast<double>(n) < kCollapsedWeight) {
            collapsed.push_back(c);
        }
    }

    parallel_for(static_cast<std::size_t>(k), cfg.threads, [&](std::size_t cu) {
        const auto c = static_cast<Index>(cu);
        if (std::find(collapsed.begin(), collapsed.end(), c) != collapsed.end()) {
            return;
        }
        Eigen::RowVectorXd mean;
        Eigen::MatrixXd L;
        weighted_moments(points, resp.col(c), mass[cu], cfg.cov_structure, cfg.ridge_eps, c, mean, L);
        s.means.row(c) = mean;
        s.chol[cu] = std::move(L);
        s.weights[c] = mass[cu] / static_cast<double>(n);
    });

    if (!collapsed.empty()) {
        // Re-seed from the lowest-likelihood points with the pooled covariance.
        const Eigen::VectorXd uniform = Eigen::VectorXd::Ones(n);
        Eigen::RowVectorXd pooled_mean;
        Eigen::MatrixXd pooled_chol;
        weighted_moments(points, uniform, static_cast<double>(n), cfg.cov_structure, cfg.ridge_eps, -1,
                         pooled_mean, pooled_chol);
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return point_log_lik[a] < point_log_lik[b]; });
        std::size_t next = 0;
        for (Index c : collapsed) {
            reseeds.push_back(iteration);
            if (static_cast<int>(reseeds.size()) > kMaxReseeds) {
                throw Error("mixture component collapse recurred " + std::to_string(reseeds.size()) +
                            " times (limit " + std::to_string(kMaxReseeds) + ")");
            }
            s.means.row(c) = points.row(order[next++ % order.size()]);
            s.chol[static_cast<std::size_t>(c)] = pooled_chol;
            s.weights[c] = 1.0 / static_cast<double>(n);
        }
    }

    s.weights /= s.weights.sum();
    for (Index c = 0; c < k; ++c) {
        s.log_dets[c] = log_det_of(s.chol[static_cast<std::size_t>(c)]);
    }
    return s;
}

/// Responsibilities and per-point log-likelihood; returns the total.
inline double e_step(const EmState& s, CovStructure cov, const Matrix& points, int threads, Matrix& resp,
                     Vector& point_log_lik) {
    resp = weighted_log_densities(s.view(cov), points, threads);
    point_log_lik.resize(points.rows());
    double total = 0;
    for (Index i = 0; i < resp.rows(); ++i) {
        const double lse = log_sum_exp(resp.row(i).data(), resp.cols());
        point_log_lik[i] = lse;
        total += lse;
        normalize_row_to_resp(resp.row(i).data(), resp.cols(), lse);
    }
    return total;
}

inline EmRun run_em(const Matrix& points, const GmmFitConfig& cfg, Rng& rng) {
    const Index n = points.rows();
    const Index k = cfg.n_comp;
    EmRun run;

    // Hard assignment to the k-means++ seeds gives the initial parameters.
    const std::vector<Index> seeds = kmeanspp_seeds(points, k, rng);
    Matrix resp = Matrix::Zero(n, k);
    for (Index i = 0; i < n; ++i) {
        Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index c = 0; c < k; ++c) {
            const double d = squared_distance(points.row(i).data(),
                                              points.row(seeds[static_cast<std::size_t>(c)]).data(), points.cols());
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        resp(i, best) = 1.0;
    }
    Vector point_log_lik = Vector::Zero(n);
    run.state = m_step(points, resp, point_log_lik, cfg, 0, run.reseeds);

    double total = e_step(run.state, cfg.cov_structure, points, cfg.threads, resp, point_log_lik);
    run.history.push_back(total);

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        const std::size_t reseeds_before = run.reseeds.size();
        EmState next = m_step(points, resp, point_log_lik, cfg, iter, run.reseeds);
        Matrix next_resp;
        Vector next_point_log_lik;
        const double next_total = e_step(next, cfg.cov_structure, points, cfg.threads, next_resp, next_point_log_lik);
        const bool reseeded = run.reseeds.size() != reseeds_before;

        // The covariance ridge makes each update a slightly perturbed EM step,
        // so near the optimum it can lower the likelihood. Such a step counts
        // as convergence and is discarded.
        if (!reseeded && next_total < total) {
            run.converged = true;
            break;
        }
        const double prev = total;
        run.state = std::move(next);
        resp = std::move(next_resp);
        point_log_lik = std::move(next_point_log_lik);
        total = next_total;
        run.history.push_back(total);
        run.iterations = iter;
        if (reseeded) {
            continue;
        }
        const double prev_mean = prev / static_cast<double>(n);
        const double improvement = (total - prev) / static_cast<double>(n);
        if (improvement <= cfg.rel_tol * std::abs(prev_mean)) {
            run.converged = true;
            break;
        }
    }
    return run;
}

}  // namespace detail

/**
 * Fits a Gaussian mixture by EM with k-means++ initialization.
 *
 * The ridge `cfg.ridge_eps` is added to every covariance diagonal in every
 * M-step; embeddings live on a sphere, so unregularized covariances are
 * singular. With several restarts the best final log-likelihood wins, ties
 * going to the lowest restart index. A consistency filter tag on `train` is
 * copied into the fit metadata.
 */
inline GmmModel fit_gmm(const EmbeddingSet& train, const GmmFitConfig& cfg) {
    if (cfg.n_comp < 1) {
        throw UsageError("n_comp must be positive");
    }
    if (cfg.n_comp > train.size()) {
        throw Error("n_comp (" + std::to_string(cfg.n_comp) + ") exceeds the number of training points (" +
                    std::to_string(train.size()) + ")");
    }
    if (!(cfg.ridge_eps > 0)) {
        throw UsageError("ridge_eps must be positive");
    }
    if (cfg.max_iters < 1 || cfg.n_restarts < 1 || !(cfg.rel_tol > 0)) {
        throw UsageError("max_iters, n_restarts and rel_tol must be positive");
    }

    std::optional<detail::EmRun> best;
    int best_restart = 0;
    for (int r = 0; r < cfg.n_restarts; ++r) {
        Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(r));
        detail::EmRun run = detail::run_em(train.data(), cfg, rng);
        if (!best || run.history.back() > best->history.back()) {
            best = std::move(run);
            best_restart = r;
        }
    }

    FitMeta meta;
    meta.seed = cfg.seed;
    meta.iterations = best->iterations;
    meta.final_log_likelihood = best->history.back();
    meta.ridge_eps = cfg.ridge_eps;
    meta.filter = train.filter();
    meta.n_train = train.size();
    meta.restart = best_restart;
    meta.log_likelihood_history = std::move(best->history);
    meta.reseed_iterations = std::move(best->reseeds);
    meta.converged = best->converged;
    return GmmModel(std::move(best->state.weights), std::move(best->state.means), std::move(best->state.chol),
                    cfg.cov_structure, std::move(meta));
}

/// Number of free parameters of a mixture.
inline double gmm_parameter_count(Index n_comp, Index dim, CovStructure cov) {
    const double per_cov = cov == CovStructure::full ? static_cast<double>(dim * (dim + 1) / 2)
                                                     : static_cast<double>(dim);
    return static_cast<double>(n_comp - 1) + static_cast<double>(n_comp * dim) +
           static_cast<double>(n_comp) * per_cov;
}

/// Bayesian information criterion of `model` on its training set.
inline double bic(const GmmModel& model, const EmbeddingSet& train) {
    const double total = log_density(model, train.data()).sum();
    return gmm_parameter_count(model.n_comp(), model.dim(), model.cov_structure()) *
               std::log(static_cast<double>(train.size())) -
           2 * total;
}

}  // namespace embcert
