// Copyright 2026 The crica Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "crica/descriptor_set.hpp"

namespace crica {

/// Principal directions of a descriptor collection. `basis` is out_dim x dim
/// with orthonormal rows in descending eigenvalue order.
struct PcaModel {
  std::size_t dim = 0;
  std::size_t out_dim = 0;
  std::vector<float> mean;         // dim
  std::vector<float> basis;        // out_dim x dim
  std::vector<float> eigenvalues;  // out_dim
  bool rank_deficient = false;     // some kept direction has (near) zero variance

  std::span<const float> direction(std::size_t k) const { return {basis.data() + k * dim, dim}; }
};

/// Fits on the rows of `set` via the eigendecomposition of the sample
/// covariance. The sign of each direction is fixed so that its
/// largest-magnitude component is positive.
inline PcaModel pca_fit(const DescriptorSet& set, std::size_t out_dim) {
  const std::size_t n = set.size(), dim = set.dim;
  CRICA_CHECK(out_dim >= 1 && out_dim <= dim, ErrorCode::InvalidArgument, "cannot reduce ", dim,
              " dimensions to ", out_dim);
  CRICA_CHECK(n > out_dim, ErrorCode::TooFewSamples, "need more than ", out_dim,
              " samples, got ", n);

  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = set.values[i * dim + j];
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  CRICA_CHECK(eig.info() == Eigen::Success, ErrorCode::InvalidArgument,
              "eigendecomposition failed");

  PcaModel m;
  m.dim = dim;
  m.out_dim = out_dim;
  m.mean.assign(mu.data(), mu.data() + dim);
  m.basis.resize(out_dim * dim);
  m.eigenvalues.resize(out_dim);
  const double top = std::max(eig.eigenvalues()(dim - 1), 0.0);
  for (std::size_t k = 0; k < out_dim; ++k) {
    // Eigen sorts ascending.
    const Eigen::Index col = static_cast<Eigen::Index>(dim - 1 - k);
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < dim; ++j) m.basis[k * dim + j] = static_cast<float>(v(j));
    const double lambda = std::max(eig.eigenvalues()(col), 0.0);
    m.eigenvalues[k] = static_cast<float>(lambda);
    if (lambda <= 1e-10 * std::max(top, 1e-300)) m.rank_deficient = true;
  }
  return m;
}

/// Projects (d - mean) onto the basis, optionally whitens, then renormalizes.
inline std::vector<float> pca_project(std::span<const float> d, const PcaModel& m,
                                      bool whiten = false) {
  CRICA_CHECK(d.size() == m.dim, ErrorCode::DimMismatch, "descriptor dim ", d.size(),
              " vs PCA input dim ", m.dim);
  std::vector<double> centered(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) centered[j] = static_cast<double>(d[j]) - m.mean[j];
  std::vector<float> out(m.out_dim);
  for (std::size_t k = 0; k < m.out_dim; ++k) {
    const auto row = m.direction(k);
    double s = 0.0;
    for (std::size_t j = 0; j < m.dim; ++j) s += row[j] * centered[j];
    if (whiten) s /= std::sqrt(static_cast<double>(m.eigenvalues[k]) + 1e-12);
    out[k] = static_cast<float>(s);
  }
  normalize_row(out);
  return out;
}

inline GlobalDescriptor pca_transform(const GlobalDescriptor& d, const PcaModel& m,
                                      bool whiten = false) {
  return {d.image_id, pca_project(d.vector, m, whiten)};
}

inline DescriptorSet pca_transform(const DescriptorSet& set, const PcaModel& m,
                                   bool whiten = false) {
  CRICA_CHECK(set.dim == m.dim || set.size() == 0, ErrorCode::DimMismatch, "descriptor dim ",
              set.dim, " vs PCA input dim ", m.dim);
  DescriptorSet out;
  out.dim = m.out_dim;
  out.ids = set.ids;
  out.values.reserve(set.size() * m.out_dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::vector<float> p = pca_project(set.row(i), m, whiten);
    out.values.insert(out.values.end(), p.begin(), p.end());
  }
  return out;
}

/// "CPCA", u32 dim, u32 out_dim, mean, basis rows, eigenvalues.
inline void save_pca(const std::filesystem::path& path, const PcaModel& m) {
  std::ofstream out = io::open_out(path);
  io::Writer w(out);
  w.bytes("CPCA");
  w.u32(static_cast<std::uint32_t>(m.dim));
  w.u32(static_cast<std::uint32_t>(m.out_dim));
  w.f32s(m.mean);
  w.f32s(m.basis);
  w.f32s(m.eigenvalues);
  CRICA_CHECK(out.good(), ErrorCode::IoError, "short write to ", path.string());
}

inline PcaModel load_pca(const std::filesystem::path& path) {
  std::ifstream in = io::open_in(path);
  io::Reader r(in, ErrorCode::IoError, path.string());
  r.expect_magic("CPCA");
  PcaModel m;
  m.dim = r.u32();
  m.out_dim = r.u32();
  CRICA_CHECK(m.out_dim >= 1 && m.out_dim <= m.dim, ErrorCode::IoError, path.string(),
              ": bad dimensions");
  m.mean.resize(m.dim);
  m.basis.resize(m.out_dim * m.dim);
  m.eigenvalues.resize(m.out_dim);
  r.f32s(m.mean);
  r.f32s(m.basis);
  r.f32s(m.eigenvalues);
  return m;
}

}  // namespace crica
