#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "embcert/scorers.hpp"
#include "embcert/types.hpp"

/**
 * @file eval.hpp
 *
 * @brief Ground-truth labels for the aleatoric, epistemic and overall
 * uncertainty notions, rank-based AUROC, and the driver that evaluates every
 * (measure, notion, dataset pair) cell.
 */

namespace embcert {

/**
 * Area under the ROC curve of `scores` for predicting label 1, via the
 * Mann-Whitney rank sum with midranks for ties.
 */
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw Error("auroc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                    " labels");
    }
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (auto l : labels) {
        n_pos += l != 0;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error("auroc needs both classes, got " + std::to_string(n_pos) + " positive and " +
                    std::to_string(n_neg) + " negative labels");
    }
    for (double s : scores) {
        if (std::isnan(s)) {
            throw Error("auroc: NaN score");
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of (doubled) midranks of the positives keeps everything integral.
    std::uint64_t twice_rank_sum = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const std::uint64_t twice_midrank = static_cast<std::uint64_t>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]]) {
                twice_rank_sum += twice_midrank;
            }
        }
        i = j + 1;
    }
    const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct EvalSetup {
    Notion notion = Notion::aleatoric;
    ScoreVector in_dist;
    std::optional<ScoreVector> out_dist;
    /// Downstream correctness aligned with in_dist samples.
    std::optional<std::vector<bool>> in_dist_correct;
};

/// Binary ground truth (1 = should be flagged uncertain) and uncertainty-oriented scores.
struct LabeledScores {
    std::vector<std::uint8_t> labels;
    std::vector<double> scores;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

/**
 * Ground-truth construction:
 *   aleatoric  in-dist incorrect = 1, in-dist correct = 0, no OOD samples
 *   epistemic  OOD = 1, in-dist = 0
 *   overall    OOD = 1, in-dist incorrect = 1, in-dist correct = 0
 * Certainty-oriented scores are negated so that higher always means more uncertain.
 */
inline LabeledScores build_labels(const EvalSetup& setup) {
    const bool needs_ood = setup.notion != Notion::aleatoric;
    const bool needs_correct = setup.notion != Notion::epistemic;
    const std::string notion(to_string(setup.notion));

    if (needs_ood && !setup.out_dist) {
        throw UsageError(notion + " evaluation needs out-of-distribution scores");
    }
    if (!needs_ood && setup.out_dist) {
        throw UsageError("aleatoric evaluation must not be given out-of-distribution scores");
    }
    if (needs_correct && !setup.in_dist_correct) {
        throw UsageError(notion + " evaluation needs downstream correctness of in-distribution samples");
    }
    if (setup.in_dist_correct && setup.in_dist_correct->size() != setup.in_dist.size()) {
        throw Error("correctness vector has " + std::to_string(setup.in_dist_correct->size()) + " entries for " +
                    std::to_string(setup.in_dist.size()) + " in-distribution samples");
    }
    if (setup.out_dist && (setup.out_dist->measure() != setup.in_dist.measure())) {
        throw Error("in- and out-of-distribution scores come from different measures (" +
                    std::string(to_string(setup.in_dist.measure())) + " vs " +
                    std::string(to_string(setup.out_dist->measure())) + ")");
    }

    const double sign = setup.in_dist.orientation() == Orientation::certainty_high ? -1.0 : 1.0;
    LabeledScores out;
    const std::size_t n_in = setup.in_dist.size();
    const std::size_t n_out = setup.out_dist ? setup.out_dist->size() : 0;
    out.labels.reserve(n_in + n_out);
    out.scores.reserve(n_in + n_out);

    for (std::size_t i = 0; i < n_in; ++i) {
        const bool incorrect = needs_correct && !(*setup.in_dist_correct)[i];
        out.labels.push_back(incorrect ? 1 : 0);
        out.scores.push_back(sign * setup.in_dist.values()[i]);
    }
    for (std::size_t i = 0; i < n_out; ++i) {
        out.labels.push_back(1);
        out.scores.push_back(sign * setup.out_dist->values()[i]);
    }
    for (auto l : out.labels) {
        (l ? out.n_pos : out.n_neg)++;
    }
    if (out.n_pos == 0 || out.n_neg == 0) {
        throw Error(notion + " ground truth has " + std::to_string(out.n_pos) + " uncertain and " +
                    std::to_string(out.n_neg) + " certain samples; both classes are required");
    }
    return out;
}

/// Scores of one dataset under several measures.
struct ScoredDataset {
    std::string id;
    std::vector<ScoreVector> scores;

    const ScoreVector* find(Measure m) const {
        for (const auto& s : scores) {
            if (s.measure() == m) return &s;
        }
        return nullptr;
    }
};

/// Correctness of each sample in `ids`, looked up by sample id in the downstream records.
inline std::vector<bool> correctness_for(const std::vector<std::string>& ids,
                                         const std::vector<DownstreamRecord>& records) {
    std::unordered_map<std::string, const DownstreamRecord*> by_id;
    for (const auto& r : records) {
        by_id.emplace(r.sample_id, &r);
    }
    std::vector<bool> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw Error("no downstream record for sample '" + id + "'");
        }
        if (!it->second->correct) {
            throw Error("downstream record for sample '" + id + "' has no true_label, correctness unknown");
        }
        out.push_back(*it->second->correct);
    }
    return out;
}

namespace detail {

inline std::string cell_name(Measure m, Notion n, const std::string& in, const std::string& out) {
    std::string s = "[" + std::string(to_string(m)) + ", " + std::string(to_string(n)) + ", " + in;
    if (!out.empty()) {
        s += " vs " + out;
    }
    return s + "]";
}

template <class Fn>
auto in_cell(Measure m, Notion n, const std::string& in, const std::string& out, Fn&& fn) {
    try {
        return fn();
    } catch (const UsageError& e) {
        throw UsageError("cell " + cell_name(m, n, in, out) + ": " + e.what());
    } catch (const Error& e) {
        throw Error("cell " + cell_name(m, n, in, out) + ": " + e.what());
    }
}

inline EvalInstance make_instance(Measure m, Notion n, const std::string& in, const std::string& out,
                                  const EvalSetup& setup) {
    LabeledScores ls = build_labels(setup);
    EvalInstance inst;
    inst.measure = m;
    inst.notion = n;
    inst.in_dist_id = in;
    inst.out_dist_id = out;
    inst.auroc = auroc(ls.scores, ls.labels);
    inst.n_pos = ls.n_pos;
    inst.n_neg = ls.n_neg;
    inst.gt_labels = std::move(ls.labels);
    return inst;
}

}  // namespace detail

/**
 * Evaluates precomputed scores: one instance per (measure, notion, dataset
 * pair). Aleatoric cells use the in-distribution set only; epistemic and
 * overall cells are computed once per out-of-distribution set. Measures are
 * taken from the in-distribution scores, in their order.
 */
inline std::vector<EvalInstance> evaluate_scored(const ScoredDataset& in_dist, const std::vector<ScoredDataset>& ood,
                                                 const std::optional<std::vector<DownstreamRecord>>& in_downstream,
                                                 std::span<const Notion> notions = kAllNotions) {
    std::vector<EvalInstance> out;
    for (const auto& in_scores : in_dist.scores) {
        const Measure m = in_scores.measure();
        std::optional<std::vector<bool>> correct;
        auto get_correct = [&](Notion n, const std::string& out_id) {
            if (!correct) {
                correct = detail::in_cell(m, n, in_dist.id, out_id, [&] {
                    if (!in_downstream) {
                        throw UsageError("downstream records for '" + in_dist.id +
                                         "' are required to derive correctness");
                    }
                    return correctness_for(in_scores.sample_ids(), *in_downstream);
                });
            }
            return *correct;
        };

        for (Notion n : notions) {
            if (n == Notion::aleatoric) {
                EvalSetup setup{n, in_scores, std::nullopt, get_correct(n, "")};
                out.push_back(detail::in_cell(m, n, in_dist.id, "",
                                              [&] { return detail::make_instance(m, n, in_dist.id, "", setup); }));
                continue;
            }
            for (const auto& o : ood) {
                const ScoreVector* o_scores = o.find(m);
                if (!o_scores) {
                    throw UsageError("cell " + detail::cell_name(m, n, in_dist.id, o.id) +
                                     ": no scores for this measure on the out-of-distribution set");
                }
                std::optional<std::vector<bool>> c;
                if (n == Notion::overall) {
                    c = get_correct(n, o.id);
                }
                EvalSetup setup{n, in_scores, *o_scores, std::move(c)};
                out.push_back(detail::in_cell(m, n, in_dist.id, o.id,
                                              [&] { return detail::make_instance(m, n, in_dist.id, o.id, setup); }));
            }
        }
    }
    return out;
}

/// Scores every dataset with every measure, then evaluates all cells.
inline std::vector<EvalInstance> evaluate(const std::vector<ScorerSpec>& measures, const DatasetInputs& in_dist,
                                          const std::vector<DatasetInputs>& ood,
                                          std::span<const Notion> notions = kAllNotions, int threads = 1) {
    auto score_all = [&](const DatasetInputs& d) {
        ScoredDataset sd{d.id, {}};
        for (const auto& spec : measures) {
            sd.scores.push_back(detail::in_cell(spec.measure(), notions.empty() ? Notion::aleatoric : notions[0],
                                                in_dist.id, d.id == in_dist.id ? "" : d.id,
                                                [&] { return score_dataset(spec, d, threads); }));
        }
        return sd;
    };
    const ScoredDataset in_scored = score_all(in_dist);
    std::vector<ScoredDataset> ood_scored;
    const bool any_ood_notion = std::any_of(notions.begin(), notions.end(), [](Notion n) { return n != Notion::aleatoric; });
    if (any_ood_notion) {
        for (const auto& o : ood) {
            ood_scored.push_back(score_all(o));
        }
    }
    return evaluate_scored(in_scored, ood_scored, in_dist.downstream, notions);
}

}  // namespace embcert
