#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include "json.hpp"

#include "embcert/eval.hpp"
#include "embcert/sweep.hpp"
#include "embcert/types.hpp"

/**
 * @file io.hpp
 *
 * @brief File formats: EMB1 binary embeddings, CSV embeddings, JSON-lines
 * batch manifests and downstream records, JSON mixture models, score CSVs,
 * and evaluation / sweep reports.
 *
 * EMB1 layout (little-endian):
 *
 *     "EMB1" | u32 count | u32 dim | u32 flags | payload | [labels]
 *
 * flags bit 0: a trailing i32 label per row follows the payload (-1 =
 * unlabeled; either every row is -1 or none is). bit 1: payload is float32,
 * otherwise float64. The payload is count * dim values in row order.
 *
 * Every writer goes through atomic_write (temp file + rename).
 */

namespace embcert {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kModelSchemaVersion = 1;

enum class PayloadWidth { f64, f32 };
enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(std::string_view s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    throw UsageError("unknown report format '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Plumbing

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

/// Writes `contents` to a temporary sibling and renames it over `path`.
inline void atomic_write(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write '" + tmp.string() + "'");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("write to '" + tmp.string() + "' failed");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
    }
}

/// FNV-1a 64-bit hash of a file's bytes, as 16 hex digits.
inline std::string file_hash(const fs::path& path) {
    const std::string bytes = read_file(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// 17 significant digits: parses back to the identical double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
void put_raw(std::string& out, T v) {
    static_assert(std::endian::native == std::endian::little, "EMB1 I/O assumes a little-endian host");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get_raw(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

inline double parse_double(std::string_view s, const std::string& where) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(where + ": cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) {
            out.push_back(line);
        }
    }
    return out;
}

struct RawEmb {
    Matrix data;
    std::optional<std::vector<int>> labels;
};

inline RawEmb parse_emb1(const std::string& bytes, const std::string& name) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || std::memcmp(p, "EMB1", 4) != 0) {
        throw Error("'" + name + "': bad magic (expected EMB1)");
    }
    const std::uint32_t count = get_u32(p + 4);
    const std::uint32_t dim = get_u32(p + 8);
    const std::uint32_t flags = get_u32(p + 12);
    if (flags & ~0x3u) {
        throw Error("'" + name + "': unknown flag bits " + std::to_string(flags));
    }
    const bool has_labels = flags & 0x1u;
    const std::size_t width = (flags & 0x2u) ? 4 : 8;
    const std::size_t payload = static_cast<std::size_t>(count) * dim * width;
    const std::size_t expected = 16 + payload + (has_labels ? static_cast<std::size_t>(count) * 4 : 0);
    if (bytes.size() < expected) {
        throw Error("'" + name + "': truncated payload (" + std::to_string(bytes.size()) + " bytes, header implies " +
                    std::to_string(expected) + ")");
    }
    if (bytes.size() > expected) {
        throw Error("'" + name + "': " + std::to_string(bytes.size() - expected) + " trailing bytes after payload");
    }
    RawEmb raw;
    raw.data.resize(count, dim);
    const unsigned char* q = p + 16;
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t d = 0; d < dim; ++d, q += width) {
            raw.data(i, d) = width == 4 ? static_cast<double>(get_raw<float>(q)) : get_raw<double>(q);
        }
    }
    if (has_labels) {
        std::vector<int> labels(count);
        std::size_t unlabeled = 0;
        for (std::uint32_t i = 0; i < count; ++i, q += 4) {
            labels[i] = get_raw<std::int32_t>(q);
            if (labels[i] == -1) {
                ++unlabeled;
            } else if (labels[i] < 0) {
                throw Error("'" + name + "': invalid label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i));
            }
        }
        if (unlabeled != 0 && unlabeled != count) {
            throw Error("'" + name + "': mixed labeled and unlabeled rows (" + std::to_string(unlabeled) + " of " +
                        std::to_string(count) + " are -1)");
        }
        if (unlabeled == 0) {
            raw.labels = std::move(labels);
        }
    }
    return raw;
}

inline std::string encode_emb1(const Matrix& data, const std::optional<std::vector<int>>& labels,
                               PayloadWidth width) {
    std::string out;
    out.reserve(16 + static_cast<std::size_t>(data.size()) * 8);
    out.append("EMB1", 4);
    put_u32(out, static_cast<std::uint32_t>(data.rows()));
    put_u32(out, static_cast<std::uint32_t>(data.cols()));
    std::uint32_t flags = 0;
    if (labels) flags |= 0x1u;
    if (width == PayloadWidth::f32) flags |= 0x2u;
    put_u32(out, flags);
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index d = 0; d < data.cols(); ++d) {
            if (width == PayloadWidth::f32) {
                put_raw<float>(out, static_cast<float>(data(i, d)));
            } else {
                put_raw<double>(out, data(i, d));
            }
        }
    }
    if (labels) {
        for (int l : *labels) {
            put_raw<std::int32_t>(out, static_cast<std::int32_t>(l));
        }
    }
    return out;
}

inline fs::path classes_sidecar(const fs::path& path) {
    fs::path p = path;
    p += ".classes.json";
    return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings

/**
 * Reads an EMB1 file or a CSV with header dim0..dim{m-1}[,label]. String
 * labels in a CSV are mapped to dense ids in sorted order of the names.
 */
inline EmbeddingSet read_embeddings(const fs::path& path, bool renormalize = false) {
    const std::string bytes = read_file(path);
    const std::string name = path.string();
    const std::string id = path.stem().string();

    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "EMB1", 4) == 0) {
        detail::RawEmb raw = detail::parse_emb1(bytes, name);
        EmbeddingSet set(std::move(raw.data), std::move(raw.labels), id, renormalize);
        const fs::path sidecar = detail::classes_sidecar(path);
        if (fs::exists(sidecar)) {
            set = set.with_class_names(json::parse(read_file(sidecar)).get<std::vector<std::string>>());
        }
        return set;
    }
    if (path.extension() != ".csv") {
        throw Error("'" + name + "': bad magic (expected EMB1) and not a .csv file");
    }

    const std::vector<std::string> lines = detail::lines_of(bytes);
    if (lines.empty()) {
        throw Error("'" + name + "': empty CSV");
    }
    const auto header = detail::split(lines[0], ',');
    Index dim = 0;
    bool label_col = false;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto h = detail::trim(header[c]);
        if (h == "dim" + std::to_string(c)) {
            ++dim;
        } else if (h == "label" && c + 1 == header.size()) {
            label_col = true;
        } else {
            throw Error("'" + name + "': unexpected CSV header column '" + std::string(h) + "'");
        }
    }
    const std::size_t n = lines.size() - 1;
    Matrix data(static_cast<Index>(n), dim);
    std::vector<std::string> raw_labels;
    for (std::size_t r = 0; r < n; ++r) {
        const auto cells = detail::split(lines[r + 1], ',');
        const std::string where = name + " line " + std::to_string(r + 2);
        if (cells.size() != header.size()) {
            throw Error(where + ": " + std::to_string(cells.size()) + " columns, header has " +
                        std::to_string(header.size()));
        }
        for (Index d = 0; d < dim; ++d) {
            data(static_cast<Index>(r), d) = detail::parse_double(cells[static_cast<std::size_t>(d)], where);
        }
        if (label_col) {
            raw_labels.emplace_back(detail::trim(cells.back()));
        }
    }

    std::optional<std::vector<int>> labels;
    std::vector<std::string> class_names;
    if (label_col) {
        bool numeric = true;
        std::vector<int> ids;
        for (const auto& s : raw_labels) {
            int v = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size()) {
                numeric = false;
                break;
            }
            ids.push_back(v);
        }
        if (numeric) {
            const auto unlabeled = std::count(ids.begin(), ids.end(), -1);
            if (unlabeled != 0 && static_cast<std::size_t>(unlabeled) != ids.size()) {
                throw Error("'" + name + "': mixed labeled and unlabeled rows");
            }
            if (unlabeled == 0) {
                labels = std::move(ids);
            }
        } else {
            std::set<std::string> names(raw_labels.begin(), raw_labels.end());
            class_names.assign(names.begin(), names.end());
            labels.emplace();
            for (const auto& s : raw_labels) {
                labels->push_back(static_cast<int>(
                    std::lower_bound(class_names.begin(), class_names.end(), s) - class_names.begin()));
            }
        }
    }
    EmbeddingSet set(std::move(data), std::move(labels), id, renormalize);
    if (!class_names.empty()) {
        set = set.with_class_names(std::move(class_names));
    }
    return set;
}

/// Writes an EMB1 file (plus a class-name sidecar when the set has one).
inline void write_embeddings(const EmbeddingSet& set, const fs::path& path, PayloadWidth width = PayloadWidth::f64) {
    atomic_write(path, detail::encode_emb1(set.data(), set.labels(), width));
    if (!set.class_names().empty()) {
        atomic_write(detail::classes_sidecar(path), json(set.class_names()).dump());
    }
}

inline void write_embeddings_csv(const EmbeddingSet& set, const fs::path& path) {
    std::string out;
    for (Index d = 0; d < set.dim(); ++d) {
        out += (d ? ",dim" : "dim") + std::to_string(d);
    }
    if (set.has_labels()) {
        out += ",label";
    }
    out += '\n';
    for (Index i = 0; i < set.size(); ++i) {
        for (Index d = 0; d < set.dim(); ++d) {
            if (d) out += ',';
            out += format_double(set.data()(i, d));
        }
        if (set.has_labels()) {
            const int lab = (*set.labels())[static_cast<std::size_t>(i)];
            out += ',';
            out += set.class_names().empty() ? std::to_string(lab) : set.class_names()[static_cast<std::size_t>(lab)];
        }
        out += '\n';
    }
    atomic_write(path, out);
}

// ---------------------------------------------------------------------------
// Augmented batches: manifest "<name>.jsonl" + payload "<name>.emb"

inline fs::path batch_payload_path(const fs::path& manifest) {
    fs::path p = manifest;
    p.replace_extension(".emb");
    return p;
}

/**
 * Reads a batch manifest (one {"sample_id", "l", "offset"} object per line)
 * and its EMB1 payload of concatenated views. Every payload row must belong
 * to exactly one sample.
 */
inline std::vector<AugmentedBatch> read_augmented_batches(const fs::path& manifest, bool renormalize = false) {
    const fs::path payload_path = batch_payload_path(manifest);
    const detail::RawEmb raw = detail::parse_emb1(read_file(payload_path), payload_path.string());
    const Index rows = raw.data.rows();

    std::vector<AugmentedBatch> out;
    std::set<std::string> seen;
    std::vector<char> used(static_cast<std::size_t>(rows), 0);
    const auto lines = detail::lines_of(read_file(manifest));
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string where = manifest.string() + " line " + std::to_string(ln + 1);
        json rec;
        try {
            rec = json::parse(lines[ln]);
        } catch (const json::exception& e) {
            throw Error(where + ": malformed JSON (" + e.what() + ")");
        }
        std::string id;
        std::int64_t l = 0;
        std::int64_t offset = 0;
        try {
            id = rec.at("sample_id").get<std::string>();
            l = rec.at("l").get<std::int64_t>();
            offset = rec.at("offset").get<std::int64_t>();
        } catch (const json::exception& e) {
            throw Error(where + ": " + e.what());
        }
        if (!seen.insert(id).second) {
            throw Error(where + ": duplicate sample_id '" + id + "'");
        }
        if (l < 1 || offset < 0 || offset + l > rows) {
            throw Error(where + ": sample '" + id + "' claims rows [" + std::to_string(offset) + ", " +
                        std::to_string(offset + l) + ") but the payload has " + std::to_string(rows) + " rows");
        }
        for (std::int64_t r = offset; r < offset + l; ++r) {
            if (used[static_cast<std::size_t>(r)]++) {
                throw Error(where + ": payload row " + std::to_string(r) + " claimed twice");
            }
        }
        out.emplace_back(id, Matrix(raw.data.middleRows(offset, l)), renormalize);
    }
    const auto claimed = std::count(used.begin(), used.end(), 1);
    if (claimed != rows) {
        throw Error("'" + manifest.string() + "': manifest covers " + std::to_string(claimed) + " of " +
                    std::to_string(rows) + " payload rows");
    }
    return out;
}

inline void write_augmented_batches(const std::vector<AugmentedBatch>& batches, const fs::path& manifest,
                                    PayloadWidth width = PayloadWidth::f64) {
    if (batches.empty()) {
        throw Error("no batches to write");
    }
    const Index dim = batches.front().dim();
    Index total = 0;
    for (const auto& b : batches) {
        if (b.dim() != dim) {
            throw Error("batches disagree on dimension");
        }
        total += b.n_views();
    }
    Matrix all(total, dim);
    std::string lines;
    Index offset = 0;
    for (const auto& b : batches) {
        all.middleRows(offset, b.n_views()) = b.views();
        lines += json{{"sample_id", b.sample_id()}, {"l", b.n_views()}, {"offset", offset}}.dump() + "\n";
        offset += b.n_views();
    }
    atomic_write(batch_payload_path(manifest), detail::encode_emb1(all, std::nullopt, width));
    atomic_write(manifest, lines);
}

// ---------------------------------------------------------------------------
// Downstream records

inline std::vector<DownstreamRecord> read_downstream(const fs::path& path) {
    std::vector<DownstreamRecord> out;
    const auto lines = detail::lines_of(read_file(path));
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string where = path.string() + " line " + std::to_string(ln + 1);
        try {
            const json rec = json::parse(lines[ln]);
            std::optional<int> label;
            if (rec.contains("true_label") && !rec["true_label"].is_null()) {
                label = rec["true_label"].get<int>();
            }
            out.push_back(DownstreamRecord::make(rec.at("sample_id").get<std::string>(),
                                                 rec.at("class_probs").get<std::vector<double>>(), label));
        } catch (const json::exception& e) {
            throw Error(where + ": malformed record (" + e.what() + ")");
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
    }
    return out;
}

inline void write_downstream(const std::vector<DownstreamRecord>& records, const fs::path& path) {
    std::string out;
    for (const auto& r : records) {
        json rec{{"sample_id", r.sample_id}, {"class_probs", r.class_probs}};
        if (r.true_label) {
            rec["true_label"] = *r.true_label;
        }
        out += rec.dump() + "\n";
    }
    atomic_write(path, out);
}

// ---------------------------------------------------------------------------
// Models

inline json model_to_json(const GmmModel& model) {
    const Index m = model.dim();
    json j;
    j["schema_version"] = kModelSchemaVersion;
    j["n_comp"] = model.n_comp();
    j["dim"] = m;
    j["cov_structure"] = to_string(model.cov_structure());
    j["weights"] = std::vector<double>(model.weights().data(), model.weights().data() + model.n_comp());
    json means = json::array();
    json chol = json::array();
    for (Index c = 0; c < model.n_comp(); ++c) {
        means.push_back(std::vector<double>(model.means().row(c).data(), model.means().row(c).data() + m));
        const auto& L = model.cholesky(c);
        std::vector<double> packed;
        for (Index r = 0; r < m; ++r) {
            if (model.cov_structure() == CovStructure::diagonal) {
                packed.push_back(L(r, r));
            } else {
                for (Index col = 0; col <= r; ++col) {
                    packed.push_back(L(r, col));
                }
            }
        }
        chol.push_back(std::move(packed));
    }
    j["means"] = std::move(means);
    j["cholesky"] = std::move(chol);

    const FitMeta& meta = model.fit_meta();
    json fm;
    fm["seed"] = meta.seed;
    fm["iterations"] = meta.iterations;
    fm["final_log_likelihood"] = meta.final_log_likelihood;
    fm["ridge_eps"] = meta.ridge_eps;
    fm["n_train"] = meta.n_train;
    fm["restart"] = meta.restart;
    fm["converged"] = meta.converged;
    if (meta.filter) {
        fm["filter"] = json{{"k", meta.filter->k}, {"tau", meta.filter->tau}};
    } else {
        fm["filter"] = nullptr;
    }
    fm["log_likelihood_history"] = meta.log_likelihood_history;
    fm["reseed_iterations"] = meta.reseed_iterations;
    j["fit_meta"] = std::move(fm);
    return j;
}

inline GmmModel model_from_json(const json& j) {
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kModelSchemaVersion) {
            throw Error("unsupported model schema_version " + std::to_string(version) + " (expected " +
                        std::to_string(kModelSchemaVersion) + ")");
        }
        const auto k = j.at("n_comp").get<Index>();
        const auto m = j.at("dim").get<Index>();
        const CovStructure cov = parse_cov_structure(j.at("cov_structure").get<std::string>());
        const auto w = j.at("weights").get<std::vector<double>>();
        if (static_cast<Index>(w.size()) != k) {
            throw Error("model has " + std::to_string(w.size()) + " weights for n_comp=" + std::to_string(k));
        }
        Vector weights = Eigen::Map<const Vector>(w.data(), k);
        Matrix means(k, m);
        std::vector<Eigen::MatrixXd> chol;
        const auto& jm = j.at("means");
        const auto& jc = j.at("cholesky");
        if (static_cast<Index>(jm.size()) != k || static_cast<Index>(jc.size()) != k) {
            throw Error("model component arrays disagree with n_comp");
        }
        const std::size_t packed_len =
            cov == CovStructure::full ? static_cast<std::size_t>(m * (m + 1) / 2) : static_cast<std::size_t>(m);
        for (Index c = 0; c < k; ++c) {
            const auto mu = jm[static_cast<std::size_t>(c)].get<std::vector<double>>();
            const auto packed = jc[static_cast<std::size_t>(c)].get<std::vector<double>>();
            if (static_cast<Index>(mu.size()) != m || packed.size() != packed_len) {
                throw Error("model component " + std::to_string(c) + " has wrong mean or Cholesky length");
            }
            means.row(c) = Eigen::Map<const Eigen::RowVectorXd>(mu.data(), m);
            Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
            std::size_t t = 0;
            for (Index r = 0; r < m; ++r) {
                if (cov == CovStructure::diagonal) {
                    L(r, r) = packed[t++];
                } else {
                    for (Index col = 0; col <= r; ++col) {
                        L(r, col) = packed[t++];
                    }
                }
            }
            chol.push_back(std::move(L));
        }
        const json& fm = j.at("fit_meta");
        FitMeta meta;
        meta.seed = fm.at("seed").get<std::uint64_t>();
        meta.iterations = fm.at("iterations").get<int>();
        meta.final_log_likelihood = fm.at("final_log_likelihood").get<double>();
        meta.ridge_eps = fm.at("ridge_eps").get<double>();
        meta.n_train = fm.at("n_train").get<Index>();
        meta.restart = fm.value("restart", 0);
        meta.converged = fm.value("converged", false);
        if (fm.contains("filter") && !fm["filter"].is_null()) {
            meta.filter = FilterTag{fm["filter"].at("k").get<int>(), fm["filter"].at("tau").get<double>()};
        }
        meta.log_likelihood_history = fm.value("log_likelihood_history", std::vector<double>{});
        meta.reseed_iterations = fm.value("reseed_iterations", std::vector<int>{});
        return GmmModel(std::move(weights), std::move(means), std::move(chol), cov, std::move(meta));
    } catch (const json::exception& e) {
        throw Error(std::string("malformed model file: ") + e.what());
    } catch (const UsageError& e) {
        throw Error(std::string("malformed model file: ") + e.what());
    }
}

/// JSON model file. Numbers are written in shortest round-trip form, so
/// reading gives back identical doubles.
inline void write_model(const GmmModel& model, const fs::path& path) {
    atomic_write(path, model_to_json(model).dump(1) + "\n");
}

inline GmmModel read_model(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "': malformed JSON (" + e.what() + ")");
    }
    try {
        return model_from_json(j);
    } catch (const Error& e) {
        throw Error("'" + path.string() + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Scores

/// CSV with columns sample_id,measure,value,orientation.
inline void write_scores(const std::vector<ScoreVector>& scores, const fs::path& path) {
    std::string out = "sample_id,measure,value,orientation\n";
    for (const auto& sv : scores) {
        for (std::size_t i = 0; i < sv.size(); ++i) {
            out += sv.sample_ids()[i];
            out += ',';
            out += to_string(sv.measure());
            out += ',';
            out += format_double(sv.values()[i]);
            out += ',';
            out += to_string(sv.orientation());
            out += '\n';
        }
    }
    atomic_write(path, out);
}

/// Reads a score CSV; one ScoreVector per measure in order of first appearance.
inline std::vector<ScoreVector> read_scores(const fs::path& path, const std::string& dataset_id) {
    const auto lines = detail::lines_of(read_file(path));
    if (lines.empty() || detail::trim(lines[0]) != "sample_id,measure,value,orientation") {
        throw Error("'" + path.string() + "': expected header sample_id,measure,value,orientation");
    }
    std::vector<Measure> order;
    std::map<Measure, std::pair<std::vector<double>, std::vector<std::string>>> by_measure;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const std::string where = path.string() + " line " + std::to_string(ln + 1);
        const auto cells = detail::split(lines[ln], ',');
        if (cells.size() != 4) {
            throw Error(where + ": expected 4 columns");
        }
        Measure m;
        try {
            m = parse_measure(detail::trim(cells[1]));
        } catch (const UsageError& e) {
            throw Error(where + ": " + e.what());
        }
        if (parse_orientation(detail::trim(cells[3])) != orientation_of(m)) {
            throw Error(where + ": orientation does not match measure " + std::string(to_string(m)));
        }
        auto [it, fresh] = by_measure.try_emplace(m);
        if (fresh) order.push_back(m);
        it->second.first.push_back(detail::parse_double(cells[2], where));
        it->second.second.emplace_back(detail::trim(cells[0]));
    }
    std::vector<ScoreVector> out;
    for (Measure m : order) {
        auto& [values, ids] = by_measure[m];
        out.emplace_back(m, std::move(values), std::move(ids), dataset_id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

/// Deterministic report order: measure, notion, then dataset pair, by name.
inline std::vector<EvalInstance> sorted_instances(std::vector<EvalInstance> instances) {
    std::stable_sort(instances.begin(), instances.end(), [](const EvalInstance& a, const EvalInstance& b) {
        return std::make_tuple(to_string(a.measure), to_string(a.notion), std::string_view(a.in_dist_id),
                               std::string_view(a.out_dist_id)) <
               std::make_tuple(to_string(b.measure), to_string(b.notion), std::string_view(b.in_dist_id),
                               std::string_view(b.out_dist_id));
    });
    return instances;
}

inline std::string render_report(const std::vector<EvalInstance>& instances, ReportFormat format) {
    if (instances.empty()) {
        throw Error("report has no evaluation instances");
    }
    const auto rows = sorted_instances(instances);
    if (format == ReportFormat::csv) {
        std::string out = "measure,notion,in_dist,out_dist,auroc,n_pos,n_neg\n";
        for (const auto& r : rows) {
            out += std::string(to_string(r.measure)) + "," + std::string(to_string(r.notion)) + "," + r.in_dist_id +
                   "," + r.out_dist_id + "," + format_double(r.auroc) + "," + std::to_string(r.n_pos) + "," +
                   std::to_string(r.n_neg) + "\n";
        }
        return out;
    }
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back(json{{"measure", to_string(r.measure)},
                           {"notion", to_string(r.notion)},
                           {"in_dist", r.in_dist_id},
                           {"out_dist", r.out_dist_id},
                           {"auroc", r.auroc},
                           {"n_pos", r.n_pos},
                           {"n_neg", r.n_neg}});
    }
    return arr.dump(1) + "\n";
}

inline void write_report(const std::vector<EvalInstance>& instances, const fs::path& path, ReportFormat format) {
    atomic_write(path, render_report(instances, format));
}

/// Sweep CSV: one row per cell, then a `mean` and a `stddev` row per summary.
inline std::string render_sweep_csv(const SweepTable& table) {
    const std::string axis(to_string(table.axis));
    std::string out = "axis,value,repeat,measure,notion,in_dist,out_dist,auroc\n";
    for (const auto& r : table.rows) {
        out += axis + "," + format_double(r.value) + "," + std::to_string(r.repeat) + "," +
               std::string(to_string(r.measure)) + "," + std::string(to_string(r.notion)) + "," + r.in_dist + "," +
               r.out_dist + "," + format_double(r.auroc) + "\n";
    }
    for (const auto& s : table.summary) {
        const std::string tail = std::string(to_string(s.measure)) + "," + std::string(to_string(s.notion)) + "," +
                                 s.in_dist + "," + s.out_dist + ",";
        out += axis + "," + format_double(s.value) + ",mean," + tail + format_double(s.mean) + "\n";
        out += axis + "," + format_double(s.value) + ",stddev," + tail + format_double(s.stddev) + "\n";
    }
    return out;
}

inline void write_sweep_csv(const SweepTable& table, const fs::path& path) {
    atomic_write(path, render_sweep_csv(table));
}

inline void write_consistency_csv(const std::vector<double>& scores, const std::optional<std::vector<int>>& labels,
                                  const fs::path& path) {
    std::string out = labels ? "row,label,consistency\n" : "row,consistency\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out += std::to_string(i) + ",";
        if (labels) out += std::to_string((*labels)[i]) + ",";
        out += format_double(scores[i]) + "\n";
    }
    atomic_write(path, out);
}

}  // namespace embcert
