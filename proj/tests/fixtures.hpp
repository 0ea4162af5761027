#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "embcert/embcert.hpp"

namespace fixtures {

using namespace embcert;

inline Matrix unit_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    return m;
}

inline Eigen::RowVectorXd angle(double degrees) {
    const double r = degrees * std::numbers::pi / 180.0;
    Eigen::RowVectorXd v(2);
    v << std::cos(r), std::sin(r);
    return v;
}

inline Matrix random_unit(Index n, Index m, Rng& rng) {
    Matrix out(n, m);
    for (Index i = 0; i < n; ++i) {
        out.row(i) = detail::uniform_on_sphere(m, rng);
    }
    return out;
}

/// Points drawn from vMF clusters around the given centers, labeled by cluster.
inline EmbeddingSet clustered(const Matrix& centers, Index per_cluster, double kappa, std::uint64_t seed) {
    Rng rng = make_rng(seed, 7);
    Matrix data(centers.rows() * per_cluster, centers.cols());
    std::vector<int> labels;
    for (Index c = 0; c < centers.rows(); ++c) {
        data.middleRows(c * per_cluster, per_cluster) = sample_vmf(centers.row(c), kappa, per_cluster, rng);
        labels.insert(labels.end(), static_cast<std::size_t>(per_cluster), static_cast<int>(c));
    }
    return EmbeddingSet(std::move(data), std::move(labels), "clustered");
}

inline Matrix three_centers() {
    Matrix c(3, 2);
    c << 1.0, 0.0, -0.5, 0.866, -0.5, -0.866;
    for (Index i = 0; i < 3; ++i) c.row(i).normalize();
    return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("embcert_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
