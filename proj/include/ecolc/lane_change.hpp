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

/// Lane-change forecasting from estimated cell states: safe-speed benefit
/// accumulation with memory halving, threshold crossing over a predicted
/// horizon, gap feasibility, and conversion of forecasts into the flow
/// injections consumed by the cell model.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ecolc/common.hpp"
#include "ecolc/pw.hpp"

namespace ecolc {

struct LcParams {
  double threshold = 2.5;       // benefit-memory crossing level
  double horizon_s = 6.0;       // forecast lookahead [s]
  double reaction_tau = 1.0;    // follower reaction time [s]
  double max_decel_b = 4.5;     // braking ability [m/s^2]
  double v_max_lane = 15.0;     // lane speed limit / free-flow [m/s]
  double lc_duration_s = 1.0;   // duration of one lane change [s]
  double min_gap = 2.5;         // bumper gap required front and rear [m]
  double veh_length = 5.0;      // [m]
  double occupancy_fraction = 0.5;  // majority-of-length presence rule
  int leader_scan_cells = 6;    // effective leader detection range
  bool add_prior_memory = false;  // add ledger memory to the predicted trace
};

// ---------------------------------------------------------------------------
// Elementary model pieces.
// ---------------------------------------------------------------------------

/// Maximum speed holdable without collision given the leader's speed and the
/// bumper-to-bumper gap, capped at the lane maximum.
inline double safe_speed(double gap, double v_leader, const LcParams& p) {
  const double tb = p.reaction_tau * p.max_decel_b;
  const double radicand =
      tb * tb + v_leader * v_leader + 2.0 * p.max_decel_b * std::max(gap, 0.0);
  return std::min(p.v_max_lane, -tb + std::sqrt(radicand));
}

/// Speed-gain benefit of moving to the target lane; may be negative.
inline double benefit(double v_safe_target, double v_safe_current,
                      double v_max) {
  return (v_safe_target - v_safe_current) / v_max;
}

/// Positive benefit accumulates; otherwise the memory is halved.
inline double update_memory(double memory, double instantaneous_benefit) {
  return instantaneous_benefit > 0.0 ? memory + instantaneous_benefit
                                     : memory * 0.5;
}

/// Runs the accumulation rule over a predicted benefit sequence (entry 0 is
/// the current step) and returns the first index at which the accumulated
/// value reaches `threshold`, if any. `prior` seeds the accumulator.
inline std::optional<int> first_crossing(std::span<const double> benefits,
                                         double threshold, double prior = 0.0) {
  double acc = prior;
  for (std::size_t i = 0; i < benefits.size(); ++i) {
    acc = update_memory(acc, benefits[i]);
    if (acc >= threshold) return static_cast<int>(i);
  }
  return std::nullopt;
}

/// A cell can accept a lane changer when the free space left by its current
/// occupancy covers one vehicle length plus a gap at each end.
inline bool gap_feasible(const CellField& field, int lane, int cell,
                         const LcParams& p, const PwParams& pw) {
  const double required = p.veh_length + 2.0 * p.min_gap;
  const double occupied = field.density(lane, cell) * pw.dx * p.veh_length;
  return pw.dx - occupied >= required - 1e-12;
}

// ---------------------------------------------------------------------------
// Anonymous vehicle tracking. Without identities, the ledger keys benefit
// memory by occupied cell and carries entries across steps by nearest-cell
// continuity.
// ---------------------------------------------------------------------------

struct BenefitLedger {
  struct Entry {
    double memory = 0.0;
    double last_update = 0.0;
  };
  // key: lane * 10000 + cell
  std::map<int, Entry> entries;
  double stale_after_s = 2.5;

  static int key(int lane, int cell) { return lane * 10000 + cell; }

  /// Finds the entry for (lane, cell), migrating the nearest entry within
  /// two cells if the exact key is absent (vehicle advanced between steps).
  Entry& locate(int lane, int cell, double now) {
    const int k = key(lane, cell);
    auto it = entries.find(k);
    if (it == entries.end()) {
      for (int d : {-1, 1, -2, 2}) {
        auto near = entries.find(key(lane, cell + d));
        if (near != entries.end() && near->second.last_update < now) {
          Entry moved = near->second;
          entries.erase(near);
          it = entries.emplace(k, moved).first;
          break;
        }
      }
      if (it == entries.end()) it = entries.emplace(k, Entry{0.0, now}).first;
    }
    return it->second;
  }

  void drop_stale(double now) {
    for (auto it = entries.begin(); it != entries.end();)
      it = (now - it->second.last_update > stale_after_s) ? entries.erase(it)
                                                          : std::next(it);
  }
};

// ---------------------------------------------------------------------------
// Forecasting.
// ---------------------------------------------------------------------------

struct LcForecast {
  int lane_from = 0;
  int lane_to = 0;
  int cell = 0;            // cell where the change is predicted to occur
  double time_offset = 0;  // seconds from the forecast's reference time
  double v_lc = 0.0;       // lane-changing vehicle speed estimate [m/s]
  bool cv_refined = false; // speed came from a connected-vehicle measurement
};

enum class MeasKind { speed, spacing };

struct CvMeasurement {
  MeasKind kind = MeasKind::speed;
  int lane = 0;
  double position = 0.0;  // own position for speed, midpoint for spacing [m]
  double value = 0.0;     // m/s or m
};

namespace detail {

struct LeaderInfo {
  bool found = false;
  double position = 0.0;
  double speed = 0.0;
};

/// Scans up to `scan` cells ahead of `from_cell` (exclusive) for an occupied
/// cell; an occupied cell holds at least `occupancy_fraction` of a vehicle.
inline LeaderInfo scan_leader(const CellField& f, int lane, int from_cell,
                              const LcParams& p, const PwParams& pw,
                              bool include_from_cell = false) {
  const int first = include_from_cell ? from_cell : from_cell + 1;
  const int last =
      std::min(f.cells_per_lane - 1, from_cell + p.leader_scan_cells);
  for (int j = first; j <= last; ++j) {
    if (f.density(lane, j) * pw.dx >= p.occupancy_fraction)
      return {true, (j + 0.5) * pw.dx, f.speed(lane, j)};
  }
  return {};
}

/// Safe speed for a virtual vehicle at `pos` in `lane`, using the cell scan
/// and, for the vehicle's own lane, any matching CV measurements.
inline double lane_safe_speed(const CellField& f, int lane, double pos,
                              std::span<const CvMeasurement> meas,
                              bool refine_with_cv, const LcParams& p,
                              const PwParams& pw, bool include_own_cell) {
  const int cell = static_cast<int>(std::floor(pos / pw.dx));
  const LeaderInfo leader =
      scan_leader(f, lane, cell, p, pw, include_own_cell);
  if (!leader.found) return p.v_max_lane;  // free-flow beyond scan range

  double gap = leader.position - pos - p.veh_length;
  double v_leader = leader.speed;
  if (refine_with_cv) {
    for (const CvMeasurement& m : meas) {
      if (m.lane != lane) continue;
      if (m.kind == MeasKind::spacing && m.position > pos &&
          m.position < leader.position + 0.5 * pw.dx) {
        gap = m.value - p.veh_length;
      } else if (m.kind == MeasKind::speed &&
                 std::fabs(m.position - leader.position) <= 0.5 * pw.dx) {
        v_leader = m.value;
      }
    }
  }
  return safe_speed(std::max(gap, 0.0), v_leader, p);
}

}  // namespace detail

/// Predicts lane changes over the LC horizon from the current estimated
/// field. The field is rolled forward with the plain model (no injections);
/// each occupied cell is treated as a vehicle whose benefit trace is
/// accumulated along its predicted path until it crosses the threshold.
/// Gap-infeasible crossings are deferred to later steps within the horizon.
inline std::vector<LcForecast> forecast_lc(
    const CellField& estimate, std::span<const CvMeasurement> measurements,
    const SignalSchedule& sig, double t_now, BenefitLedger& ledger,
    const LcParams& p, const PwParams& pw) {
  std::vector<LcForecast> forecasts;
  if (estimate.lanes < 2) return forecasts;

  const int steps =
      std::max(1, static_cast<int>(std::lround(p.horizon_s / pw.dt_model)));
  BoundarySpec bc;
  bc.inflow.resize(static_cast<std::size_t>(estimate.lanes));
  for (int lane = 0; lane < estimate.lanes; ++lane)
    bc.inflow[static_cast<std::size_t>(lane)] =
        estimate.density(lane, 0) * estimate.speed(lane, 0);
  const std::vector<CellField> fields =
      propagate(estimate, {}, sig, t_now, steps, pw, bc);

  // Occupied cell-steps already claimed by a forecast (one LC per cell-step).
  std::vector<std::pair<long, int>> claimed;  // (lane*1e6+cell, step)

  for (int lane = 0; lane < estimate.lanes; ++lane) {
    for (int cell = 0; cell < estimate.cells_per_lane; ++cell) {
      if (estimate.density(lane, cell) * pw.dx < p.occupancy_fraction)
        continue;

      // Instantaneous benefit at the current step updates the persistent
      // memory for this (anonymously tracked) vehicle.
      const double pos0 = (cell + 0.5) * pw.dx;
      const int target_lane = lane == 0 ? 1 : lane - 1;

      const auto bench = [&](const CellField& f, double pos) {
        const double vs_cur = detail::lane_safe_speed(
            f, lane, pos, measurements, true, p, pw, false);
        const double vs_tgt = detail::lane_safe_speed(
            f, target_lane, pos, measurements, false, p, pw, true);
        return benefit(vs_tgt, vs_cur, p.v_max_lane);
      };

      const double b_now = bench(fields[0], pos0);
      BenefitLedger::Entry& entry = ledger.locate(lane, cell, t_now);
      entry.memory = update_memory(entry.memory, b_now);
      entry.last_update = t_now;

      // Predicted benefit trace along the vehicle's path through the
      // predicted fields; entry 0 is the current step.
      std::vector<double> trace;
      std::vector<double> path;
      double pos = pos0;
      for (int k = 0; k <= steps; ++k) {
        const CellField& f = fields[static_cast<std::size_t>(k)];
        trace.push_back(bench(f, pos));
        path.push_back(pos);
        pos += measure_speed(pos, lane, f, pw) * pw.dt_model;
        pos = std::min(pos, (estimate.cells_per_lane - 0.001) * pw.dx);
      }

      const double prior = p.add_prior_memory ? entry.memory : 0.0;
      const std::optional<int> cross = first_crossing(trace, p.threshold, prior);
      if (!cross) continue;

      // Defer past gap-infeasible steps rather than dropping the forecast.
      for (int k = *cross; k <= steps; ++k) {
        const CellField& f = fields[static_cast<std::size_t>(k)];
        const int at_cell = std::min(
            estimate.cells_per_lane - 1,
            static_cast<int>(std::floor(path[static_cast<std::size_t>(k)] / pw.dx)));
        if (!gap_feasible(f, target_lane, at_cell, p, pw)) continue;
        const long cell_key = static_cast<long>(lane) * 1000000 + at_cell;
        if (std::find(claimed.begin(), claimed.end(),
                      std::make_pair(cell_key, k)) != claimed.end())
          break;
        claimed.emplace_back(cell_key, k);

        LcForecast fc;
        fc.lane_from = lane;
        fc.lane_to = target_lane;
        fc.cell = at_cell;
        fc.time_offset = k * pw.dt_model;
        fc.v_lc = measure_speed(path[static_cast<std::size_t>(k)], lane, f, pw);
        for (const CvMeasurement& m : measurements)
          if (m.kind == MeasKind::speed && m.lane == lane &&
              std::fabs(m.position - pos0) <= 0.5 * pw.dx) {
            fc.cv_refined = true;
            break;
          }
        forecasts.push_back(fc);
        break;
      }
    }
  }
  ledger.drop_stale(t_now);
  return forecasts;
}

/// Converts forecasts into per-step injection lists for a prediction horizon
/// of `horizon_steps` model steps. One lane change contributes alpha/dx to
/// the target lane and -alpha/dx to the source lane over
/// ceil(duration/dt) consecutive steps, alpha = dt/duration clamped to 1.
inline std::vector<std::vector<LcInjection>> injections_from_forecasts(
    std::span<const LcForecast> forecasts,
    const std::vector<CellField>& fields_by_step, int horizon_steps,
    const LcParams& p, const PwParams& pw) {
  std::vector<std::vector<LcInjection>> by_step(
      static_cast<std::size_t>(horizon_steps));
  const double alpha = std::min(1.0, pw.dt_model / p.lc_duration_s);
  const int span_steps =
      std::max(1, static_cast<int>(std::lround(p.lc_duration_s / pw.dt_model)));

  for (const LcForecast& fc : forecasts) {
    const int s0 = static_cast<int>(std::lround(fc.time_offset / pw.dt_model));
    if (s0 < 0 || s0 >= horizon_steps)
      throw domain_error("injections_from_forecasts: forecast outside horizon");
    for (int s = s0; s < std::min(horizon_steps, s0 + span_steps); ++s) {
      double v_lc = fc.v_lc;
      if (!fc.cv_refined && s < static_cast<int>(fields_by_step.size()))
        v_lc = fields_by_step[static_cast<std::size_t>(s)].speed(fc.lane_from,
                                                                 fc.cell);
      by_step[static_cast<std::size_t>(s)].push_back(
          {fc.lane_from, fc.cell, -alpha / pw.dx, v_lc});
      by_step[static_cast<std::size_t>(s)].push_back(
          {fc.lane_to, fc.cell, alpha / pw.dx, v_lc});
    }
  }
  return by_step;
}

}  // namespace ecolc
