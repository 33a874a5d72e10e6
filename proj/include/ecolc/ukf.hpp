/******************************************************************************
 * Copyright 2026 The ecolc Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#pragma once

/// Unscented Kalman filter over per-lane cell states [rho..., v...]. Lanes
/// are filtered as independent blocks (they couple only through lane-change
/// injections, which enter as known process inputs), which keeps the sigma
/// transform small and the covariance block-diagonal.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <span>
#include <vector>

#include "ecolc/common.hpp"
#include "ecolc/lane_change.hpp"
#include "ecolc/pw.hpp"

namespace ecolc {

struct UkfConfig {
  double process_noise_rho = 4e-6;  // (veh/m)^2 per model step
  double process_noise_v = 0.25;    // (m/s)^2 per model step
  double meas_noise_v = 0.25;       // (m/s)^2
  double meas_noise_d = 4.0;        // m^2
  double sigma_point_spread = 0.1;  // scaled-transform alpha
  double init_sigma_rho = 0.02;     // veh/m
  double init_sigma_v = 3.0;        // m/s
  double cov_floor = 1e-10;
  double spacing_cap_m = 350.0;  // saturates the inverse-density map

  bool valid() const {
    return process_noise_rho > 0 && process_noise_v > 0 && meas_noise_v > 0 &&
           meas_noise_d > 0 && sigma_point_spread > 0;
  }
};

struct StateEstimate {
  CellField mean;
  std::vector<Eigen::MatrixXd> cov;  // one (2C x 2C) block per lane
  double timestamp = 0.0;
  long psd_repairs = 0;
  long resets = 0;
  long clamp_events = 0;
};

/// Initial estimate: density from a demand-rate prior, speed at equilibrium,
/// diagonal covariance.
inline StateEstimate make_initial_estimate(int lanes, int cells,
                                           double demand_flux_veh_s,
                                           const PwParams& pw,
                                           const UkfConfig& cfg,
                                           double t0 = 0.0) {
  StateEstimate est;
  const double rho0 = clamp(demand_flux_veh_s / pw.v0, 0.0, pw.rho_jam);
  est.mean = CellField(lanes, cells, rho0, equilibrium_speed(rho0, pw));
  est.timestamp = t0;
  const int n = 2 * cells;
  for (int lane = 0; lane < lanes; ++lane) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < cells; ++j) {
      P(j, j) = cfg.init_sigma_rho * cfg.init_sigma_rho;
      P(cells + j, cells + j) = cfg.init_sigma_v * cfg.init_sigma_v;
    }
    est.cov.push_back(P);
  }
  return est;
}

namespace detail {

struct UtWeights {
  double lambda;
  double wm0, wc0, wi;
};

inline UtWeights ut_weights(int n, double alpha) {
  const double kappa = 0.0;
  const double beta = 2.0;
  const double lambda = alpha * alpha * (n + kappa) - n;
  UtWeights w;
  w.lambda = lambda;
  w.wm0 = lambda / (n + lambda);
  w.wc0 = w.wm0 + (1.0 - alpha * alpha + beta);
  w.wi = 0.5 / (n + lambda);
  return w;
}

/// Square root of (n + lambda) P via Cholesky, falling back to an
/// eigenvalue-clamped factor when P has drifted off the PSD cone.
inline bool scaled_sqrt(const Eigen::MatrixXd& P, double scale,
                        Eigen::MatrixXd& out, bool& repaired) {
  Eigen::LLT<Eigen::MatrixXd> llt(scale * P);
  if (llt.info() == Eigen::Success) {
    out = llt.matrixL();
    return true;
  }
  repaired = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scale * P);
  if (es.info() != Eigen::Success) return false;
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(1e-12);
  out = es.eigenvectors() * d.cwiseSqrt().asDiagonal();
  return true;
}

inline Eigen::VectorXd lane_state(const CellField& f, int lane) {
  const int c = f.cells_per_lane;
  Eigen::VectorXd x(2 * c);
  for (int j = 0; j < c; ++j) {
    x(j) = f.density(lane, j);
    x(c + j) = f.speed(lane, j);
  }
  return x;
}

inline CellField state_to_lane_field(const Eigen::VectorXd& x, int cells) {
  CellField f(1, cells);
  for (int j = 0; j < cells; ++j) {
    f.density(0, j) = x(j);
    f.speed(0, j) = x(cells + j);
  }
  return f;
}

inline void clamp_lane_state(Eigen::VectorXd& x, int cells, const PwParams& pw,
                             long* clamps) {
  for (int j = 0; j < cells; ++j) {
    const double r = clamp(x(j), 0.0, pw.rho_jam);
    const double v = clamp(x(cells + j), 0.0, pw.v0);
    if (clamps && (r != x(j) || v != x(cells + j))) ++*clamps;
    x(j) = r;
    x(cells + j) = v;
  }
}

inline void symmetrize_floor(Eigen::MatrixXd& P, double floor_eps) {
  P = 0.5 * (P + P.transpose()).eval();
  for (int i = 0; i < P.rows(); ++i) P(i, i) = std::max(P(i, i), floor_eps);
}

}  // namespace detail

/// Propagates mean and covariance through one model step (the process model
/// is the cell propagation itself, injections included).
inline StateEstimate ukf_predict(const StateEstimate& est,
                                 std::span<const LcInjection> injections,
                                 const SignalSchedule& sig,
                                 const UkfConfig& cfg, const PwParams& pw,
                                 const BoundarySpec& bc = BoundarySpec{}) {
  StateEstimate out = est;
  const int cells = est.mean.cells_per_lane;
  const int n = 2 * cells;
  const auto w = detail::ut_weights(n, cfg.sigma_point_spread);

  for (int lane = 0; lane < est.mean.lanes; ++lane) {
    std::vector<LcInjection> lane_inj;
    for (const LcInjection& inj : injections)
      if (inj.lane == lane) lane_inj.push_back({0, inj.cell, inj.rho_lc, inj.v_lc});
    BoundarySpec lane_bc = bc;
    if (bc.kind == BoundarySpec::Kind::open && !bc.inflow.empty())
      lane_bc.inflow = {lane < static_cast<int>(bc.inflow.size())
                            ? bc.inflow[static_cast<std::size_t>(lane)]
                            : 0.0};

    const Eigen::VectorXd x0 = detail::lane_state(est.mean, lane);
    Eigen::MatrixXd S;
    bool repaired = false;
    if (!detail::scaled_sqrt(est.cov[static_cast<std::size_t>(lane)],
                             n + w.lambda, S, repaired)) {
      // Unrecoverable factorization: keep the prior mean, inflate.
      out.cov[static_cast<std::size_t>(lane)] =
          Eigen::MatrixXd::Identity(n, n) *
          (cfg.init_sigma_v * cfg.init_sigma_v);
      ++out.resets;
      continue;
    }
    if (repaired) ++out.psd_repairs;

    const int m = 2 * n + 1;
    Eigen::MatrixXd X(n, m);
    X.col(0) = x0;
    for (int i = 0; i < n; ++i) {
      X.col(1 + i) = x0 + S.col(i);
      X.col(1 + n + i) = x0 - S.col(i);
    }
    // Propagate each sigma point through one model step.
    Eigen::MatrixXd Y(n, m);
    for (int i = 0; i < m; ++i) {
      const CellField f = detail::state_to_lane_field(X.col(i), cells);
      const CellField g = pw_step(f, lane_inj, sig, est.timestamp, pw, lane_bc);
      Y.col(i) = detail::lane_state(g, 0);
    }

    Eigen::VectorXd mean = w.wm0 * Y.col(0);
    for (int i = 1; i < m; ++i) mean += w.wi * Y.col(i);

    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    {
      const Eigen::VectorXd d0 = Y.col(0) - mean;
      P += w.wc0 * d0 * d0.transpose();
      Eigen::MatrixXd D = Y.rightCols(m - 1).colwise() - mean;
      P += w.wi * (D * D.transpose());
    }
    for (int j = 0; j < cells; ++j) {
      P(j, j) += cfg.process_noise_rho;
      P(cells + j, cells + j) += cfg.process_noise_v;
    }
    detail::clamp_lane_state(mean, cells, pw, &out.clamp_events);
    detail::symmetrize_floor(P, cfg.cov_floor);

    for (int j = 0; j < cells; ++j) {
      out.mean.density(lane, j) = mean(j);
      out.mean.speed(lane, j) = mean(cells + j);
    }
    out.cov[static_cast<std::size_t>(lane)] = P;
  }
  out.timestamp = est.timestamp + pw.dt_model;
  return out;
}

namespace detail {

/// Noise-free measurement map of one lane state.
inline double measure_one(const Eigen::VectorXd& x, int cells,
                          const CvMeasurement& m, const UkfConfig& cfg,
                          const PwParams& pw) {
  const CellField f = state_to_lane_field(x, cells);
  if (m.kind == MeasKind::speed) return measure_speed(m.position, 0, f, pw);
  const double rho_floor = 1.0 / cfg.spacing_cap_m;
  const auto c = interp_coeff(m.position, pw, cells);
  const int j2 = std::min(c.j + 1, cells - 1);
  const double inv1 = 1.0 / std::max(f.density(0, c.j), rho_floor);
  const double inv2 = 1.0 / std::max(f.density(0, j2), rho_floor);
  return c.w * inv2 + (1.0 - c.w) * inv1;
}

}  // namespace detail

/// Standard unscented measurement update. Spacing measurements carrying the
/// no-leader sentinel must be filtered out by the caller before this point.
inline StateEstimate ukf_update(const StateEstimate& est,
                                std::span<const CvMeasurement> measurements,
                                const UkfConfig& cfg, const PwParams& pw) {
  StateEstimate out = est;
  if (measurements.empty()) return out;
  const int cells = est.mean.cells_per_lane;
  const int n = 2 * cells;
  const auto w = detail::ut_weights(n, cfg.sigma_point_spread);

  for (int lane = 0; lane < est.mean.lanes; ++lane) {
    std::vector<CvMeasurement> lane_meas;
    for (const CvMeasurement& m : measurements)
      if (m.lane == lane) lane_meas.push_back(m);
    if (lane_meas.empty()) continue;
    const int nm = static_cast<int>(lane_meas.size());

    const Eigen::VectorXd x0 = detail::lane_state(est.mean, lane);
    Eigen::MatrixXd S;
    bool repaired = false;
    if (!detail::scaled_sqrt(est.cov[static_cast<std::size_t>(lane)],
                             n + w.lambda, S, repaired)) {
      ++out.resets;
      continue;
    }
    if (repaired) ++out.psd_repairs;

    const int m = 2 * n + 1;
    Eigen::MatrixXd X(n, m);
    X.col(0) = x0;
    for (int i = 0; i < n; ++i) {
      X.col(1 + i) = x0 + S.col(i);
      X.col(1 + n + i) = x0 - S.col(i);
    }
    Eigen::MatrixXd Y(nm, m);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < nm; ++k)
        Y(k, i) = detail::measure_one(X.col(i), cells,
                                      lane_meas[static_cast<std::size_t>(k)],
                                      cfg, pw);

    Eigen::VectorXd yhat = w.wm0 * Y.col(0);
    for (int i = 1; i < m; ++i) yhat += w.wi * Y.col(i);

    Eigen::MatrixXd Pyy = Eigen::MatrixXd::Zero(nm, nm);
    Eigen::MatrixXd Pxy = Eigen::MatrixXd::Zero(n, nm);
    {
      const Eigen::VectorXd dy0 = Y.col(0) - yhat;
      const Eigen::VectorXd dx0 = X.col(0) - x0;
      Pyy += w.wc0 * dy0 * dy0.transpose();
      Pxy += w.wc0 * dx0 * dy0.transpose();
      Eigen::MatrixXd DY = Y.rightCols(m - 1).colwise() - yhat;
      Eigen::MatrixXd DX = X.rightCols(m - 1).colwise() - x0;
      Pyy += w.wi * (DY * DY.transpose());
      Pxy += w.wi * (DX * DY.transpose());
    }
    for (int k = 0; k < nm; ++k)
      Pyy(k, k) += lane_meas[static_cast<std::size_t>(k)].kind == MeasKind::speed
                       ? cfg.meas_noise_v
                       : cfg.meas_noise_d;

    Eigen::VectorXd innov(nm);
    for (int k = 0; k < nm; ++k)
      innov(k) = lane_meas[static_cast<std::size_t>(k)].value - yhat(k);

    const Eigen::MatrixXd K = Pxy * Pyy.llt().solve(
        Eigen::MatrixXd::Identity(nm, nm));
    Eigen::VectorXd mean = x0 + K * innov;
    Eigen::MatrixXd P = est.cov[static_cast<std::size_t>(lane)] -
                        K * Pyy * K.transpose();

    detail::clamp_lane_state(mean, cells, pw, &out.clamp_events);
    detail::symmetrize_floor(P, cfg.cov_floor);
    for (int j = 0; j < cells; ++j) {
      out.mean.density(lane, j) = mean(j);
      out.mean.speed(lane, j) = mean(cells + j);
    }
    out.cov[static_cast<std::size_t>(lane)] = P;
  }
  return out;
}

/// Interpolated speed variance at a position; used for trajectory
/// uncertainty margins.
inline double speed_variance_at(const StateEstimate& est, int lane,
                                double position, const PwParams& pw) {
  const int cells = est.mean.cells_per_lane;
  const auto c = detail::interp_coeff(position, pw, cells);
  const int j2 = std::min(c.j + 1, cells - 1);
  const Eigen::MatrixXd& P = est.cov[static_cast<std::size_t>(lane)];
  const double v1 = P(cells + c.j, cells + c.j);
  const double v2 = P(cells + j2, cells + j2);
  return std::max(0.0, c.w * v2 + (1.0 - c.w) * v1);
}

}  // namespace ecolc
