#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "embcert/error.hpp"

/**
 * @file types.hpp
 *
 * @brief Domain types shared by every stage: embedding sets, augmented views,
 * fitted mixtures, score vectors, downstream classifier records and
 * evaluation cells.
 *
 * All types validate their invariants on construction and are immutable
 * afterwards, so they can be shared freely across threads.
 */

namespace embcert {

/// Row-major so that one embedding is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kNormTolerance = 1e-4;
inline constexpr double kZeroNorm = 1e-12;

namespace detail {

inline std::string row_context(std::string_view what, Index row) {
    return std::string(what) + " row " + std::to_string(row);
}

/// Checks every row is unit norm, or divides it by its norm when `renormalize`
/// is set. Returns whether any row was rescaled.
inline bool enforce_unit_rows(Matrix& data, bool renormalize, std::string_view what) {
    bool rescaled = false;
    for (Index i = 0; i < data.rows(); ++i) {
        double sq = 0;
        for (Index d = 0; d < data.cols(); ++d) {
            const double v = data(i, d);
            if (!std::isfinite(v)) {
                throw Error(row_context(what, i) + ": non-finite coordinate");
            }
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm < kZeroNorm) {
            throw Error(row_context(what, i) + ": zero-norm row (norm " + std::to_string(norm) + ")");
        }
        if (renormalize) {
            data.row(i) /= norm;
            rescaled = true;
        } else if (std::abs(norm - 1.0) > kNormTolerance) {
            throw Error(row_context(what, i) + ": norm " + std::to_string(norm) +
                        " deviates from 1 by more than 1e-4 (use renormalization)");
        }
    }
    return rescaled;
}

}  // namespace detail

/// Consistency filter parameters attached to a filtered training subset.
struct FilterTag {
    int k = 0;
    double tau = 0;
    bool operator==(const FilterTag&) const = default;
};

/**
 * N x m matrix of l2-normalized embeddings with optional dense class labels.
 */
class EmbeddingSet {
public:
    EmbeddingSet(Matrix data, std::optional<std::vector<int>> labels = std::nullopt,
                 std::string dataset_id = {}, bool renormalize = false)
        : data_(std::move(data)), labels_(std::move(labels)), dataset_id_(std::move(dataset_id)) {
        if (data_.rows() < 1) {
            throw Error("embedding set '" + dataset_id_ + "' must contain at least one row");
        }
        if (data_.cols() < 2) {
            throw Error("embedding set '" + dataset_id_ + "' must have dimension >= 2, got " +
                        std::to_string(data_.cols()));
        }
        if (labels_) {
            if (static_cast<Index>(labels_->size()) != data_.rows()) {
                throw Error("embedding set '" + dataset_id_ + "': " + std::to_string(labels_->size()) +
                            " labels for " + std::to_string(data_.rows()) + " rows");
            }
            for (std::size_t i = 0; i < labels_->size(); ++i) {
                if ((*labels_)[i] < 0) {
                    throw Error("embedding set '" + dataset_id_ + "': negative label at row " +
                                std::to_string(i));
                }
            }
        }
        normalized_at_ingest_ = detail::enforce_unit_rows(data_, renormalize, "embedding set '" + dataset_id_ + "'");
    }

    const Matrix& data() const { return data_; }
    Index size() const { return data_.rows(); }
    Index dim() const { return data_.cols(); }

    bool has_labels() const { return labels_.has_value(); }
    const std::optional<std::vector<int>>& labels() const { return labels_; }

    const std::string& dataset_id() const { return dataset_id_; }
    bool normalized_at_ingest() const { return normalized_at_ingest_; }

    /// Class names for labels that arrived as strings; index = label id.
    const std::vector<std::string>& class_names() const { return class_names_; }
    EmbeddingSet with_class_names(std::vector<std::string> names) const {
        EmbeddingSet out = *this;
        out.class_names_ = std::move(names);
        return out;
    }

    const std::optional<FilterTag>& filter() const { return filter_; }

    /// Rows in the given order; metadata is carried over.
    EmbeddingSet subset(std::span<const Index> rows, std::optional<FilterTag> tag = std::nullopt) const {
        EmbeddingSet out = *this;
        out.data_.resize(static_cast<Index>(rows.size()), data_.cols());
        std::optional<std::vector<int>> labels;
        if (labels_) {
            labels.emplace();
            labels->reserve(rows.size());
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out.data_.row(static_cast<Index>(r)) = data_.row(rows[r]);
            if (labels) {
                labels->push_back((*labels_)[static_cast<std::size_t>(rows[r])]);
            }
        }
        out.labels_ = std::move(labels);
        if (tag) {
            out.filter_ = tag;
        }
        return out;
    }

    EmbeddingSet with_dataset_id(std::string id) const {
        EmbeddingSet out = *this;
        out.dataset_id_ = std::move(id);
        return out;
    }

private:
    Matrix data_;
    std::optional<std::vector<int>> labels_;
    std::string dataset_id_;
    bool normalized_at_ingest_ = false;
    std::vector<std::string> class_names_;
    std::optional<FilterTag> filter_;
};

/**
 * Embeddings of l transformed views of one test sample; row i is the
 * embedding of the i-th transformation. Row 0 is the canonical view.
 */
class AugmentedBatch {
public:
    AugmentedBatch(std::string sample_id, Matrix views, bool renormalize = false)
        : sample_id_(std::move(sample_id)), views_(std::move(views)) {
        if (views_.rows() < 1) {
            throw Error("batch '" + sample_id_ + "' has no views");
        }
        if (views_.cols() < 2) {
            throw Error("batch '" + sample_id_ + "' must have dimension >= 2");
        }
        normalized_at_ingest_ = detail::enforce_unit_rows(views_, renormalize, "batch '" + sample_id_ + "'");
    }

    const std::string& sample_id() const { return sample_id_; }
    const Matrix& views() const { return views_; }
    Index n_views() const { return views_.rows(); }
    Index dim() const { return views_.cols(); }
    bool normalized_at_ingest() const { return normalized_at_ingest_; }

    /// First `count` views. Requires 1 <= count <= n_views().
    AugmentedBatch prefix(Index count) const {
        if (count < 1 || count > views_.rows()) {
            throw Error("batch '" + sample_id_ + "' has " + std::to_string(views_.rows()) +
                        " views, cannot take " + std::to_string(count));
        }
        AugmentedBatch out = *this;
        out.views_ = views_.topRows(count);
        return out;
    }

private:
    std::string sample_id_;
    Matrix views_;
    bool normalized_at_ingest_ = false;
};

enum class CovStructure { full, diagonal };

inline std::string_view to_string(CovStructure c) {
    return c == CovStructure::full ? "full" : "diagonal";
}

inline CovStructure parse_cov_structure(std::string_view s) {
    if (s == "full") return CovStructure::full;
    if (s == "diagonal" || s == "diag") return CovStructure::diagonal;
    throw UsageError("unknown covariance structure '" + std::string(s) + "'");
}

struct FitMeta {
    std::uint64_t seed = 0;
    int iterations = 0;
    double final_log_likelihood = 0;
    double ridge_eps = 0;
    std::optional<FilterTag> filter;
    Index n_train = 0;
    int restart = 0;
    /// Total training log-likelihood after initialization and after every M-step.
    std::vector<double> log_likelihood_history;
    /// Iterations at which a collapsed component was re-seeded; the likelihood
    /// trace is only monotone between these points.
    std::vector<int> reseed_iterations;
    bool converged = false;

    bool operator==(const FitMeta&) const = default;
};

/**
 * Fitted Gaussian mixture. Covariances are held as lower Cholesky factors so
 * that evaluation needs no factorization.
 */
class GmmModel {
public:
    GmmModel(Vector weights, Matrix means, std::vector<Eigen::MatrixXd> cholesky,
             CovStructure cov_structure, FitMeta meta)
        : weights_(std::move(weights)), means_(std::move(means)), chol_(std::move(cholesky)),
          cov_structure_(cov_structure), meta_(std::move(meta)) {
        const Index k = weights_.size();
        if (k < 1) {
            throw Error("mixture needs at least one component");
        }
        if (means_.rows() != k || static_cast<Index>(chol_.size()) != k) {
            throw Error("mixture component counts disagree");
        }
        const Index m = means_.cols();
        double total = 0;
        for (Index c = 0; c < k; ++c) {
            if (!(weights_[c] > 0)) {
                throw Error("mixture weight " + std::to_string(c) + " is not positive");
            }
            total += weights_[c];
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw Error("mixture weights sum to " + std::to_string(total));
        }
        log_weights_ = weights_.array().log().matrix();
        log_dets_.resize(k);
        for (Index c = 0; c < k; ++c) {
            const auto& L = chol_[static_cast<std::size_t>(c)];
            if (L.rows() != m || L.cols() != m) {
                throw Error("Cholesky factor " + std::to_string(c) + " has wrong shape");
            }
            double logdet = 0;
            for (Index d = 0; d < m; ++d) {
                if (!(L(d, d) > 0)) {
                    throw Error("Cholesky factor " + std::to_string(c) + " has non-positive diagonal");
                }
                logdet += std::log(L(d, d));
                for (Index e = d + 1; e < m; ++e) {
                    if (L(d, e) != 0) {
                        throw Error("Cholesky factor " + std::to_string(c) + " is not lower triangular");
                    }
                    if (cov_structure_ == CovStructure::diagonal && L(e, d) != 0) {
                        throw Error("diagonal model has off-diagonal Cholesky entries");
                    }
                }
            }
            log_dets_[c] = 2 * logdet;
        }
    }

    Index n_comp() const { return weights_.size(); }
    Index dim() const { return means_.cols(); }
    const Vector& weights() const { return weights_; }
    const Vector& log_weights() const { return log_weights_; }
    const Matrix& means() const { return means_; }
    const Eigen::MatrixXd& cholesky(Index c) const { return chol_[static_cast<std::size_t>(c)]; }
    const std::vector<Eigen::MatrixXd>& cholesky_factors() const { return chol_; }
    /// log det of covariance c.
    double log_det(Index c) const { return log_dets_[c]; }
    Eigen::MatrixXd covariance(Index c) const {
        const auto& L = cholesky(c);
        return L * L.transpose();
    }
    CovStructure cov_structure() const { return cov_structure_; }
    const FitMeta& fit_meta() const { return meta_; }

private:
    Vector weights_;
    Vector log_weights_;
    Matrix means_;
    std::vector<Eigen::MatrixXd> chol_;
    Vector log_dets_;
    CovStructure cov_structure_;
    FitMeta meta_;
};

enum class Measure { delta, p_emb, p_emb_ens, p_emb_ktau, p_emb_ens_ktau, entropy, max_score };
enum class Orientation { uncertainty_high, certainty_high };

inline constexpr Measure kAllMeasures[] = {Measure::delta,      Measure::p_emb,          Measure::p_emb_ens,
                                           Measure::p_emb_ktau, Measure::p_emb_ens_ktau, Measure::entropy,
                                           Measure::max_score};

inline std::string_view to_string(Measure m) {
    switch (m) {
        case Measure::delta: return "delta";
        case Measure::p_emb: return "p_emb";
        case Measure::p_emb_ens: return "p_emb_ens";
        case Measure::p_emb_ktau: return "p_emb_ktau";
        case Measure::p_emb_ens_ktau: return "p_emb_ens_ktau";
        case Measure::entropy: return "entropy";
        case Measure::max_score: return "max_score";
    }
    return "?";
}

inline Measure parse_measure(std::string_view s) {
    for (Measure m : kAllMeasures) {
        if (to_string(m) == s) return m;
    }
    throw UsageError("unknown measure '" + std::string(s) + "'");
}

inline std::string_view to_string(Orientation o) {
    return o == Orientation::uncertainty_high ? "uncertainty_high" : "certainty_high";
}

inline Orientation parse_orientation(std::string_view s) {
    if (s == "uncertainty_high") return Orientation::uncertainty_high;
    if (s == "certainty_high") return Orientation::certainty_high;
    throw Error("unknown orientation '" + std::string(s) + "'");
}

constexpr Orientation orientation_of(Measure m) {
    return (m == Measure::delta || m == Measure::entropy) ? Orientation::uncertainty_high
                                                          : Orientation::certainty_high;
}

constexpr bool is_density(Measure m) {
    return m == Measure::p_emb || m == Measure::p_emb_ens || m == Measure::p_emb_ktau ||
           m == Measure::p_emb_ens_ktau;
}

constexpr bool is_ensembled(Measure m) { return m == Measure::p_emb_ens || m == Measure::p_emb_ens_ktau; }
constexpr bool is_consistency_filtered(Measure m) {
    return m == Measure::p_emb_ktau || m == Measure::p_emb_ens_ktau;
}
constexpr bool is_downstream(Measure m) { return m == Measure::entropy || m == Measure::max_score; }

/**
 * Per-sample scores of one measure on one dataset. Density measures hold
 * log-densities.
 */
class ScoreVector {
public:
    ScoreVector(Measure measure, std::vector<double> values, std::vector<std::string> sample_ids,
                std::string dataset_id)
        : measure_(measure), values_(std::move(values)), sample_ids_(std::move(sample_ids)),
          dataset_id_(std::move(dataset_id)) {
        if (values_.size() != sample_ids_.size()) {
            throw Error("score vector '" + dataset_id_ + "': " + std::to_string(values_.size()) + " values for " +
                        std::to_string(sample_ids_.size()) + " sample ids");
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (std::isnan(values_[i])) {
                throw Error("score vector '" + dataset_id_ + "' has NaN for sample '" + sample_ids_[i] + "'");
            }
            if (is_density(measure_) && !std::isfinite(values_[i])) {
                throw Error("score vector '" + dataset_id_ + "' has non-finite log-density for sample '" +
                            sample_ids_[i] + "'");
            }
        }
    }

    Measure measure() const { return measure_; }
    Orientation orientation() const { return orientation_of(measure_); }
    const std::vector<double>& values() const { return values_; }
    const std::vector<std::string>& sample_ids() const { return sample_ids_; }
    const std::string& dataset_id() const { return dataset_id_; }
    std::size_t size() const { return values_.size(); }

private:
    Measure measure_;
    std::vector<double> values_;
    std::vector<std::string> sample_ids_;
    std::string dataset_id_;
};

/// Output of a downstream classifier on one sample.
struct DownstreamRecord {
    std::string sample_id;
    std::vector<double> class_probs;
    int predicted = 0;
    std::optional<int> true_label;
    std::optional<bool> correct;

    static DownstreamRecord make(std::string sample_id, std::vector<double> probs,
                                 std::optional<int> true_label = std::nullopt) {
        if (probs.empty()) {
            throw Error("downstream record '" + sample_id + "' has no class probabilities");
        }
        double sum = 0;
        for (double p : probs) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw Error("downstream record '" + sample_id + "' has probability " + std::to_string(p) +
                            " outside [0,1]");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw Error("downstream record '" + sample_id + "' probabilities sum to " + std::to_string(sum));
        }
        if (true_label && *true_label < 0) {
            throw Error("downstream record '" + sample_id + "' has negative true_label");
        }
        DownstreamRecord rec;
        rec.sample_id = std::move(sample_id);
        rec.predicted =
            static_cast<int>(std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
        rec.class_probs = std::move(probs);
        rec.true_label = true_label;
        if (true_label) {
            rec.correct = rec.predicted == *true_label;
        }
        return rec;
    }
};

enum class Notion { aleatoric, epistemic, overall };

inline constexpr Notion kAllNotions[] = {Notion::aleatoric, Notion::epistemic, Notion::overall};

inline std::string_view to_string(Notion n) {
    switch (n) {
        case Notion::aleatoric: return "aleatoric";
        case Notion::epistemic: return "epistemic";
        case Notion::overall: return "overall";
    }
    return "?";
}

inline Notion parse_notion(std::string_view s) {
    for (Notion n : kAllNotions) {
        if (to_string(n) == s) return n;
    }
    throw UsageError("unknown uncertainty notion '" + std::string(s) + "'");
}

/// One (measure, notion, dataset pair) evaluation cell.
struct EvalInstance {
    Measure measure = Measure::delta;
    Notion notion = Notion::aleatoric;
    std::string in_dist_id;
    std::string out_dist_id;  // empty for aleatoric
    std::vector<std::uint8_t> gt_labels;
    double auroc = 0.5;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

}  // namespace embcert
