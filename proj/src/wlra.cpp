// Copyright 2026 The varlora Authors.
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

#include "varlora/wlra.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "varlora/errors.hpp"

namespace varlora {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const Tensor& t) {
  return Eigen::Map<const Mat>(t.raw().data(), static_cast<Eigen::Index>(t.rows()),
                               static_cast<Eigen::Index>(t.cols()));
}

Tensor from_eigen(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Mat>(t.raw().data(), m.rows(), m.cols()) = m;
  return t;
}

double objective(const Mat& W, const Mat& M2, const Mat& B, const Mat& A) {
  return (M2.array() * (W - B * A).array().square()).sum();
}

// Rows of X (r) from weighted ridge problems: for each row i of W,
// min sum_j w_ij (W_ij - x_i . F_:j)^2 + ridge |x_i|^2.
std::size_t solve_rows(const Mat& W, const Mat& M2, const Mat& F, double ridge, Mat& X) {
  const Eigen::Index r = F.rows();
  std::size_t skipped = 0;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    const Eigen::VectorXd w = M2.row(i).transpose();
    Eigen::MatrixXd normal = F * w.asDiagonal() * F.transpose();
    normal.diagonal().array() += ridge;
    const Eigen::VectorXd rhs = F * (w.array() * W.row(i).transpose().array()).matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() != Eigen::Success || normal.diagonal().maxCoeff() <= 0.0) {
      ++skipped;
      continue;
    }
    const Eigen::VectorXd x = llt.solve(rhs);
    if (!x.allFinite()) {
      ++skipped;
      continue;
    }
    X.row(i) = x.transpose().head(r);
  }
  return skipped;
}

}  // namespace

void WlraConfig::validate() const {
  require(rank >= 1, "wlra rank must be >= 1");
  require(max_iters >= 1, "wlra max_iters must be >= 1");
  require(rel_tol > 0.0, "wlra rel_tol must be > 0");
  require(ridge >= 0.0, "wlra ridge must be >= 0");
}

double wlra_objective(const Tensor& W, const Tensor& M, const Tensor& B, const Tensor& A) {
  const Mat m = to_eigen(M);
  return objective(to_eigen(W), m.array().square().matrix(), to_eigen(B), to_eigen(A));
}

std::pair<Tensor, Tensor> truncated_svd_factors(const Tensor& W, std::size_t rank) {
  require(W.rank() == 2, "svd needs a matrix");
  require(rank >= 1 && rank <= std::min(W.rows(), W.cols()), "svd rank out of range");
  const Mat w = to_eigen(W);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto r = static_cast<Eigen::Index>(rank);
  const Eigen::VectorXd root = svd.singularValues().head(r).cwiseSqrt();
  const Mat B = svd.matrixU().leftCols(r) * root.asDiagonal();
  const Mat A = root.asDiagonal() * svd.matrixV().leftCols(r).transpose();
  return {from_eigen(B), from_eigen(A)};
}

WlraResult solve_wlra(const Tensor& W, const Tensor& M, const WlraConfig& config) {
  config.validate();
  require_shape(W.rank() == 2 && W.same_shape(M), "wlra: W and M shapes differ");
  require(W.all_finite() && M.all_finite(), "wlra: non-finite W or M");
  for (double v : M.raw()) require(v >= 0.0, "wlra: weights must be nonnegative");

  auto [B0, A0] = truncated_svd_factors(W, config.rank);
  const Mat w = to_eigen(W);
  const double mmax = to_eigen(M).maxCoeff();
  // Solves use weights scaled to max 1 so the ridge is relative; the reported
  // objective uses the caller's weights.
  const Mat m2 = to_eigen(M).array().square().matrix();
  const Mat m2n = mmax > 0.0 ? Mat(m2 / (mmax * mmax)) : m2;
  Mat B = to_eigen(B0), A = to_eigen(A0);

  WlraResult res;
  double J = objective(w, m2, B, A);
  res.trace.push_back(J);
  for (std::size_t it = 0; it < config.max_iters && J > 0.0 && mmax > 0.0; ++it) {
    const double start = J;
    for (int half = 0; half < 2; ++half) {
      Mat B1 = B, A1 = A;
      if (half == 0) {
        res.skipped_solves += solve_rows(w, m2n, A, config.ridge, B1);
      } else {
        Mat At = A1.transpose();
        res.skipped_solves +=
            solve_rows(w.transpose(), m2n.transpose(), B.transpose(), config.ridge, At);
        A1 = At.transpose();
      }
      const double J1 = objective(w, m2, B1, A1);
      if (J1 <= J) {
        B = std::move(B1);
        A = std::move(A1);
        J = J1;
      } else {
        ++res.rejected_half_steps;
      }
      res.trace.push_back(J);
    }
    res.iterations = it + 1;
    if (start - J < config.rel_tol * start) break;
  }
  res.B = from_eigen(B);
  res.A = from_eigen(A);
  return res;
}

Tensor split_base(const Tensor& W, const Tensor& B, const Tensor& A) {
  require_shape(B.rows() == W.rows() && A.cols() == W.cols() && B.cols() == A.rows(),
                "split_base: factor shapes do not match W");
  return sub(W, matmul(B, A));
}

UnlearnInit initialize_for_unlearning(const ParamSet& params, const ImportanceMap& map,
                                      const WlraConfig& config, double top_fraction,
                                      double sigma, std::uint64_t seed) {
  config.validate();
  require(top_fraction >= 0.0 && top_fraction <= 1.0, "top_fraction must be in [0, 1]");
  const auto names = adaptable_names(params.config);
  if (top_fraction > 0.0)
    for (const std::string& n : names)
      require(map.values.count(n) == 1, "importance map does not cover '" + n + "'");
  std::vector<std::string> selected;
  if (top_fraction > 0.0) selected = rank_layers(map, top_fraction);

  UnlearnInit out;
  out.base = params;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    const Tensor& W = params.at(name);
    MatrixInitReport rep;
    rep.name = name;
    rep.selected = std::find(selected.begin(), selected.end(), name) != selected.end();
    if (auto it = map.values.find(name); it != map.values.end()) rep.mean_importance = mean(it->second);
    const bool zero_map = rep.selected && max_abs_diff(map.values.at(name), Tensor::zeros_like(W)) == 0.0;
    if (rep.selected && !zero_map) {
      const WlraResult r = solve_wlra(W, map.values.at(name), config);
      out.base.at(name) = split_base(W, r.B, r.A);
      out.adapters.emplace(name, AdapterPair{r.B, r.A, sigma});
      rep.status = "wlra";
      rep.trace = r.trace;
      rep.residual_norm = frobenius_norm(out.base.at(name));
      rep.weighted_residual = r.trace.back();
    } else {
      out.adapters.emplace(name, init_standard_pair(W.rows(), W.cols(), config.rank, sigma,
                                                    seed + 7919 * k));
      rep.status = zero_map ? "zero_map_fallback" : "standard";
      rep.residual_norm = frobenius_norm(W);
    }
    out.report.push_back(std::move(rep));
  }
  return out;
}

nlohmann::json to_json(const std::vector<MatrixInitReport>& report) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : report)
    j.push_back({{"name", r.name},
                 {"selected", r.selected},
                 {"status", r.status},
                 {"mean_importance", r.mean_importance},
                 {"objective_trace", r.trace},
                 {"base_norm", r.residual_norm},
                 {"weighted_residual", r.weighted_residual}});
  return j;
}

}  // namespace varlora
