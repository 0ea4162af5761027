#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "embcert/gmm.hpp"
#include "embcert/types.hpp"

/**
 * @file scorers.hpp
 *
 * @brief Per-sample uncertainty measures: feature variation across views,
 * single-view and view-ensembled embedding density, and the downstream
 * entropy / max-score baselines.
 */

namespace embcert {

/// Trace of the unbiased sample covariance of the views.
inline double delta(const AugmentedBatch& batch) {
    const Index l = batch.n_views();
    if (l < 2) {
        throw Error("delta requires at least 2 views (sample '" + batch.sample_id() + "' has " +
                    std::to_string(l) + ")");
    }
    // Shifting by view 0 leaves the covariance unchanged and makes identical views exactly zero.
    const Matrix v = batch.views().rowwise() - batch.views().row(0);
    const Eigen::RowVectorXd mean = v.colwise().mean();
    double sum = 0;
    for (Index i = 0; i < l; ++i) {
        for (Index d = 0; d < v.cols(); ++d) {
            const double diff = v(i, d) - mean[d];
            sum += diff * diff;
        }
    }
    return sum / static_cast<double>(l - 1);
}

/// log p(z) of a single embedding.
inline double density_score(const GmmModel& model, const Eigen::RowVectorXd& point) {
    Matrix one = point;
    return log_density(model, one)[0];
}

/// log of the mean density over views, computed as logsumexp - log l.
inline double ensembled_density_score(const GmmModel& model, const Matrix& views) {
    const Vector per_view = log_density(model, views);
    const double hi = per_view.maxCoeff();
    double sum = 0;
    for (Index i = 0; i < per_view.size(); ++i) {
        sum += std::exp(per_view[i] - hi);
    }
    // sum lies in [1, l], so the shift is in [-log l, 0] and the result stays within the per-view range.
    return hi + (std::log(sum) - std::log(static_cast<double>(views.rows())));
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy_score(const DownstreamRecord& rec) {
    double h = 0;
    for (double p : rec.class_probs) {
        if (p > 0) {
            h -= p * std::log(p);
        }
    }
    return h;
}

inline double max_score(const DownstreamRecord& rec) {
    return *std::max_element(rec.class_probs.begin(), rec.class_probs.end());
}

/**
 * A measure together with the fitted model it needs (density measures only).
 * The model's consistency-filter metadata must match the measure variant.
 */
class ScorerSpec {
public:
    explicit ScorerSpec(Measure measure, std::shared_ptr<const GmmModel> model = nullptr)
        : measure_(measure), model_(std::move(model)) {
        if (is_density(measure_)) {
            if (!model_) {
                throw UsageError("measure " + std::string(to_string(measure_)) + " requires a fitted model");
            }
            const bool filtered = model_->fit_meta().filter.has_value();
            if (is_consistency_filtered(measure_) && !filtered) {
                throw UsageError("measure " + std::string(to_string(measure_)) +
                                 " requires a consistency-filtered model (fit with k and tau)");
            }
            if (!is_consistency_filtered(measure_) && filtered) {
                throw UsageError("measure " + std::string(to_string(measure_)) +
                                 " requires an unfiltered model, got one fit with k and tau");
            }
        } else if (model_) {
            throw UsageError("measure " + std::string(to_string(measure_)) + " does not use a model");
        }
    }

    Measure measure() const { return measure_; }
    const std::shared_ptr<const GmmModel>& model() const { return model_; }
    bool requires_batches() const { return measure_ == Measure::delta || is_ensembled(measure_); }
    bool requires_downstream() const { return is_downstream(measure_); }

private:
    Measure measure_;
    std::shared_ptr<const GmmModel> model_;
};

/// Everything known about one dataset; each measure draws what it needs.
struct DatasetInputs {
    std::string id;
    std::optional<EmbeddingSet> embeddings;
    std::optional<std::vector<AugmentedBatch>> batches;
    std::optional<std::vector<DownstreamRecord>> downstream;
};

namespace detail {

inline std::vector<std::string> row_ids(Index n) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        ids.push_back(std::to_string(i));
    }
    return ids;
}

inline void check_batch_dims(const std::vector<AugmentedBatch>& batches, Index dim, const std::string& id) {
    for (const auto& b : batches) {
        if (b.dim() != dim) {
            throw Error("dataset '" + id + "': batch '" + b.sample_id() + "' has m=" + std::to_string(b.dim()) +
                        ", model expects m=" + std::to_string(dim));
        }
    }
}

}  // namespace detail

/**
 * Scores every sample of a dataset with one measure, preserving input order.
 *
 * Density measures on a plain embedding set use each row as a single view.
 * On batches, p_emb and p_emb_ktau use view 0 and the ensembled variants use
 * all views. Downstream baselines score the downstream records.
 */
inline ScoreVector score_dataset(const ScorerSpec& spec, const DatasetInputs& in, int threads = 1) {
    const Measure m = spec.measure();
    const std::string name(to_string(m));

    if (spec.requires_downstream()) {
        if (!in.downstream) {
            throw UsageError("measure " + name + " on dataset '" + in.id + "' needs downstream records");
        }
        std::vector<double> values;
        std::vector<std::string> ids;
        for (const auto& rec : *in.downstream) {
            values.push_back(m == Measure::entropy ? entropy_score(rec) : max_score(rec));
            ids.push_back(rec.sample_id);
        }
        return ScoreVector(m, std::move(values), std::move(ids), in.id);
    }

    if (m == Measure::delta) {
        if (!in.batches) {
            throw UsageError("measure delta on dataset '" + in.id + "' needs augmented batches");
        }
        std::vector<double> values(in.batches->size());
        std::vector<std::string> ids;
        for (const auto& b : *in.batches) {
            ids.push_back(b.sample_id());
        }
        parallel_for(values.size(), threads, [&](std::size_t i) { values[i] = delta((*in.batches)[i]); });
        return ScoreVector(m, std::move(values), std::move(ids), in.id);
    }

    const GmmModel& model = *spec.model();
    if (is_ensembled(m)) {
        if (!in.batches) {
            throw UsageError("measure " + name + " on dataset '" + in.id + "' needs augmented batches");
        }
        detail::check_batch_dims(*in.batches, model.dim(), in.id);
        std::vector<double> values(in.batches->size());
        std::vector<std::string> ids;
        for (const auto& b : *in.batches) {
            ids.push_back(b.sample_id());
        }
        parallel_for(values.size(), threads,
                     [&](std::size_t i) { values[i] = ensembled_density_score(model, (*in.batches)[i].views()); });
        return ScoreVector(m, std::move(values), std::move(ids), in.id);
    }

    // Single-view density: view 0 of batches when present, otherwise embedding rows.
    Matrix points;
    std::vector<std::string> ids;
    if (in.batches) {
        detail::check_batch_dims(*in.batches, model.dim(), in.id);
        points.resize(static_cast<Index>(in.batches->size()), model.dim());
        for (std::size_t i = 0; i < in.batches->size(); ++i) {
            points.row(static_cast<Index>(i)) = (*in.batches)[i].views().row(0);
            ids.push_back((*in.batches)[i].sample_id());
        }
    } else if (in.embeddings) {
        if (in.embeddings->dim() != model.dim()) {
            throw Error("dataset '" + in.id + "' has m=" + std::to_string(in.embeddings->dim()) +
                        ", model expects m=" + std::to_string(model.dim()));
        }
        points = in.embeddings->data();
        ids = detail::row_ids(points.rows());
    } else {
        throw UsageError("measure " + name + " on dataset '" + in.id + "' needs embeddings or batches");
    }
    const Vector lp = log_density(model, points, threads);
    return ScoreVector(m, std::vector<double>(lp.data(), lp.data() + lp.size()), std::move(ids), in.id);
}

}  // namespace embcert
