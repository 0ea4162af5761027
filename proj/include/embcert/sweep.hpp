#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "embcert/eval.hpp"
#include "embcert/gmm.hpp"
#include "embcert/neighbors.hpp"
#include "embcert/parallel.hpp"

/**
 * @file sweep.hpp
 *
 * @brief Ablation sweeps over the mixture size, the consistency filter (tau
 * and k/N) and the number of views. Every (value, repeat) cell refits its
 * models with seed = base seed + repeat, so cells are independent and the
 * table does not depend on how they are scheduled.
 */

namespace embcert {

enum class SweepAxis { n_comp, tau, k_frac, n_transforms };

inline std::string_view to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::n_comp: return "n_comp";
        case SweepAxis::tau: return "tau";
        case SweepAxis::k_frac: return "k_frac";
        case SweepAxis::n_transforms: return "n_transforms";
    }
    return "?";
}

inline SweepAxis parse_sweep_axis(std::string_view s) {
    for (SweepAxis a : {SweepAxis::n_comp, SweepAxis::tau, SweepAxis::k_frac, SweepAxis::n_transforms}) {
        if (to_string(a) == s) return a;
    }
    throw UsageError("unknown sweep axis '" + std::string(s) + "'");
}

struct SweepGrid {
    SweepAxis axis = SweepAxis::n_comp;
    std::vector<double> values;
    int repeats = 1;
};

/// Everything held fixed while one axis varies.
struct SweepInputs {
    EmbeddingSet train;
    DatasetInputs in_dist;
    std::vector<DatasetInputs> ood;
    GmmFitConfig fit;
    ConsistencyConfig consistency;
    std::vector<Measure> measures;
    std::vector<Notion> notions{std::begin(kAllNotions), std::end(kAllNotions)};
    /// Cells evaluated concurrently; each cell runs single-threaded.
    int threads = 1;
};

struct SweepRow {
    double value = 0;
    int repeat = 0;
    Measure measure = Measure::p_emb;
    Notion notion = Notion::aleatoric;
    std::string in_dist;
    std::string out_dist;
    double auroc = 0;
};

/// Mean and sample standard deviation over repeats of one (value, measure, notion, pair).
struct SweepSummary {
    double value = 0;
    Measure measure = Measure::p_emb;
    Notion notion = Notion::aleatoric;
    std::string in_dist;
    std::string out_dist;
    double mean = 0;
    double stddev = 0;
};

struct SweepTable {
    SweepAxis axis = SweepAxis::n_comp;
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
};

namespace detail {

inline void validate_sweep(const SweepGrid& grid, const SweepInputs& in) {
    if (grid.values.empty()) {
        throw UsageError("sweep grid has no values");
    }
    if (grid.repeats < 1) {
        throw UsageError("sweep repeats must be >= 1");
    }
    for (std::size_t i = 1; i < grid.values.size(); ++i) {
        if (!(grid.values[i] > grid.values[i - 1])) {
            throw UsageError("sweep values must be strictly increasing");
        }
    }
    if (in.measures.empty()) {
        throw UsageError("sweep needs at least one measure");
    }
    const bool any_filtered = std::any_of(in.measures.begin(), in.measures.end(), is_consistency_filtered);
    switch (grid.axis) {
        case SweepAxis::n_comp:
            for (double v : grid.values) {
                if (v < 1 || v != std::floor(v)) {
                    throw UsageError("n_comp sweep values must be positive integers");
                }
            }
            break;
        case SweepAxis::tau:
        case SweepAxis::k_frac:
            if (!any_filtered) {
                throw UsageError(std::string(to_string(grid.axis)) +
                                 " sweep needs a consistency-filtered measure (p_emb_ktau or p_emb_ens_ktau)");
            }
            if (!in.train.has_labels()) {
                throw UsageError(std::string(to_string(grid.axis)) + " sweep needs labeled training embeddings");
            }
            break;
        case SweepAxis::n_transforms: {
            const double max_t = grid.values.back();
            if (grid.values.front() < 1 || std::any_of(grid.values.begin(), grid.values.end(),
                                                       [](double v) { return v != std::floor(v); })) {
                throw UsageError("n_transforms sweep values must be positive integers");
            }
            auto check = [&](const DatasetInputs& d) {
                if (!d.batches) {
                    throw UsageError("n_transforms sweep needs augmented batches for '" + d.id + "'");
                }
                for (const auto& b : *d.batches) {
                    if (static_cast<double>(b.n_views()) < max_t) {
                        throw UsageError("n_transforms sweep up to " + std::to_string(static_cast<int>(max_t)) +
                                         " views, but sample '" + b.sample_id() + "' of '" + d.id + "' has " +
                                         std::to_string(b.n_views()));
                    }
                }
            };
            check(in.in_dist);
            for (const auto& o : in.ood) check(o);
            break;
        }
    }
    if (any_filtered && !in.train.has_labels()) {
        throw UsageError("consistency-filtered measures need labeled training embeddings");
    }
}

inline DatasetInputs truncate_views(const DatasetInputs& d, Index t) {
    DatasetInputs out = d;
    if (out.batches) {
        for (auto& b : *out.batches) {
            b = b.prefix(t);
        }
    }
    return out;
}

inline std::vector<EvalInstance> run_cell(const SweepGrid& grid, const SweepInputs& in, double value, int repeat) {
    GmmFitConfig fit = in.fit;
    fit.seed = in.fit.seed + static_cast<std::uint64_t>(repeat);
    fit.threads = 1;
    ConsistencyConfig cons = in.consistency;
    switch (grid.axis) {
        case SweepAxis::n_comp: fit.n_comp = static_cast<Index>(value); break;
        case SweepAxis::tau: cons.tau = value; break;
        case SweepAxis::k_frac: cons.k = KSpec::fraction(value); break;
        case SweepAxis::n_transforms: break;
    }

    const bool need_plain = std::any_of(in.measures.begin(), in.measures.end(),
                                        [](Measure m) { return is_density(m) && !is_consistency_filtered(m); });
    const bool need_filtered = std::any_of(in.measures.begin(), in.measures.end(), is_consistency_filtered);

    std::shared_ptr<const GmmModel> plain;
    std::shared_ptr<const GmmModel> filtered;
    if (need_plain) {
        plain = std::make_shared<const GmmModel>(fit_gmm(in.train, fit));
    }
    if (need_filtered) {
        filtered = std::make_shared<const GmmModel>(fit_gmm(filter_consistent(in.train, cons).kept, fit));
    }

    std::vector<ScorerSpec> specs;
    for (Measure m : in.measures) {
        if (!is_density(m)) {
            specs.emplace_back(m);
        } else {
            specs.emplace_back(m, is_consistency_filtered(m) ? filtered : plain);
        }
    }

    if (grid.axis == SweepAxis::n_transforms) {
        const auto t = static_cast<Index>(value);
        std::vector<DatasetInputs> ood;
        for (const auto& o : in.ood) {
            ood.push_back(truncate_views(o, t));
        }
        return evaluate(specs, truncate_views(in.in_dist, t), ood, in.notions);
    }
    return evaluate(specs, in.in_dist, in.ood, in.notions);
}

}  // namespace detail

/**
 * Runs every (value, repeat) cell and collects one row per evaluation cell,
 * in grid order (value, then repeat, then the evaluation order), followed by
 * per-value summaries over repeats.
 */
inline SweepTable sweep(const SweepGrid& grid, const SweepInputs& in) {
    detail::validate_sweep(grid, in);
    const std::size_t n_values = grid.values.size();
    const auto repeats = static_cast<std::size_t>(grid.repeats);
    std::vector<std::vector<EvalInstance>> cells(n_values * repeats);

    parallel_for(cells.size(), in.threads, [&](std::size_t idx) {
        const std::size_t v = idx / repeats;
        const int r = static_cast<int>(idx % repeats);
        cells[idx] = detail::run_cell(grid, in, grid.values[v], r);
    });

    SweepTable table;
    table.axis = grid.axis;
    for (std::size_t v = 0; v < n_values; ++v) {
        for (std::size_t r = 0; r < repeats; ++r) {
            for (const auto& inst : cells[v * repeats + r]) {
                table.rows.push_back(SweepRow{grid.values[v], static_cast<int>(r), inst.measure, inst.notion,
                                              inst.in_dist_id, inst.out_dist_id, inst.auroc});
            }
        }
        // Every repeat produces the same cell layout.
        const auto& layout = cells[v * repeats];
        for (std::size_t c = 0; c < layout.size(); ++c) {
            double sum = 0;
            for (std::size_t r = 0; r < repeats; ++r) {
                sum += cells[v * repeats + r][c].auroc;
            }
            const double mean = sum / static_cast<double>(repeats);
            double ss = 0;
            for (std::size_t r = 0; r < repeats; ++r) {
                const double d = cells[v * repeats + r][c].auroc - mean;
                ss += d * d;
            }
            const double sd = repeats > 1 ? std::sqrt(ss / static_cast<double>(repeats - 1)) : 0.0;
            table.summary.push_back(SweepSummary{grid.values[v], layout[c].measure, layout[c].notion,
                                                 layout[c].in_dist_id, layout[c].out_dist_id, mean, sd});
        }
    }
    return table;
}

/**
 * Plot-ready series: one figure per notion (named "<notion>_<axis>"), one
 * series per (measure, dataset pair) with x = axis value, y = mean AUROC and
 * err = standard deviation over repeats.
 */
inline nlohmann::ordered_json sweep_plot_data(const SweepTable& table) {
    using json = nlohmann::ordered_json;
    std::map<std::string, std::map<std::string, json>> figures;
    for (const auto& s : table.summary) {
        const std::string fig = std::string(to_string(s.notion)) + "_" + std::string(to_string(table.axis));
        std::string series = std::string(to_string(s.measure)) + ":" + s.in_dist;
        if (!s.out_dist.empty()) {
            series += " vs " + s.out_dist;
        }
        json& entry = figures[fig][series];
        if (entry.is_null()) {
            entry = json{{"measure", to_string(s.measure)},
                         {"in_dist", s.in_dist},
                         {"out_dist", s.out_dist},
                         {"x", json::array()},
                         {"y", json::array()},
                         {"err", json::array()}};
        }
        entry["x"].push_back(s.value);
        entry["y"].push_back(s.mean);
        entry["err"].push_back(s.stddev);
    }
    json out = json::object();
    out["axis"] = to_string(table.axis);
    json figs = json::object();
    for (auto& [name, series] : figures) {
        json list = json::array();
        for (auto& [label, entry] : series) {
            entry["label"] = label;
            list.push_back(entry);
        }
        figs[name] = json{{"notion", name.substr(0, name.find('_'))},
                          {"x_label", to_string(table.axis)},
                          {"y_label", "AUROC"},
                          {"series", list}};
    }
    out["figures"] = figs;
    return out;
}

}  // namespace embcert
