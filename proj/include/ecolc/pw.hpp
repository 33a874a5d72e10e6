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

/// Second-order (Payne--Whitham style) cell propagation of per-lane traffic
/// density and speed, extended with a lane-change flow term, signal boundary
/// handling, and the linear-interpolation measurement maps used by the
/// estimator.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ecolc/common.hpp"

namespace ecolc {

// ---------------------------------------------------------------------------
// Parameters and state.
// ---------------------------------------------------------------------------

struct PwParams {
  // 0.5 s keeps the acoustic characteristic v0 + c0 inside one cell per step;
  // the scheme develops checkerboard growth on the congested branch at 1 s.
  double dt_model = 0.5;    // model time step [s]
  double dx = 15.0;         // cell length [m]
  double v0 = 15.0;         // free-flow speed [m/s]
  double rho_jam = 0.130;   // jam density [veh/m]
  double c_slope = 10.14;   // speed-drop slope above critical density [m/s]
  double tau = 1.0;         // speed adaptation time [s]
  double c0_sq = 54.0;      // traffic-pressure constant [(m/s)^2]
  double epsilon = 1e-6;    // density denominator guard [veh/m]
  int red_influence_cells = 6;

  bool valid() const {
    return dt_model > 0 && dx > 0 && v0 > 0 && rho_jam > 0 && c_slope > 0 &&
           tau > 0 && c0_sq > 0 && epsilon >= 1e-9 && red_influence_cells > 0 &&
           rho_jam * dx >= 1.0;
  }
  /// Courant number > 1 means information can outrun the grid; callers may
  /// warn but propagation proceeds.
  bool cfl_ok() const { return v0 * dt_model <= dx; }
};

/// Per-lane cell arrays of density and speed.
struct CellField {
  int lanes = 0;
  int cells_per_lane = 0;
  std::vector<double> rho;  // [lane * cells_per_lane + cell], veh/m
  std::vector<double> v;    // same layout, m/s

  CellField() = default;
  CellField(int n_lanes, int n_cells, double rho0 = 0.0, double v0 = 0.0)
      : lanes(n_lanes),
        cells_per_lane(n_cells),
        rho(static_cast<std::size_t>(n_lanes) * n_cells, rho0),
        v(static_cast<std::size_t>(n_lanes) * n_cells, v0) {}

  std::size_t idx(int lane, int cell) const {
    return static_cast<std::size_t>(lane) * cells_per_lane + cell;
  }
  double density(int lane, int cell) const { return rho[idx(lane, cell)]; }
  double speed(int lane, int cell) const { return v[idx(lane, cell)]; }
  double& density(int lane, int cell) { return rho[idx(lane, cell)]; }
  double& speed(int lane, int cell) { return v[idx(lane, cell)]; }

  /// Total vehicle count, all lanes.
  double vehicle_count(double dx) const {
    double s = 0.0;
    for (double r : rho) s += r;
    return s * dx;
  }
};

/// One lane-change flow contribution for one cell of one lane.
/// rho_lc > 0 means a vehicle enters this lane at this cell.
struct LcInjection {
  int lane = 0;
  int cell = 0;
  double rho_lc = 0.0;  // signed, veh/m
  double v_lc = 0.0;    // m/s
};

enum class SignalPhase { green, yellow, red };
enum class YellowPolicy { part_of_green, part_of_red };

/// Fixed-cycle signal. Phase order within a cycle: red, green, yellow.
struct SignalSchedule {
  double position = 500.0;  // m from segment start
  double red_s = 20.0;
  double green_s = 20.0;
  double yellow_s = 2.0;
  double offset_s = 0.0;  // shifts the cycle; t = offset is a red onset
  YellowPolicy yellow_policy = YellowPolicy::part_of_red;
  bool enabled = true;

  double cycle_s() const { return red_s + green_s + yellow_s; }

  SignalPhase phase_at(double t) const {
    if (!enabled) return SignalPhase::green;
    double u = std::fmod(t - offset_s, cycle_s());
    if (u < 0) u += cycle_s();
    if (u < red_s) return SignalPhase::red;
    if (u < red_s + green_s) return SignalPhase::green;
    return SignalPhase::yellow;
  }

  /// Red for prediction purposes, folding yellow in per policy.
  bool effective_red(double t) const {
    const SignalPhase p = phase_at(t);
    if (p == SignalPhase::red) return true;
    if (p == SignalPhase::yellow)
      return yellow_policy == YellowPolicy::part_of_red;
    return false;
  }

  struct GreenWindow {
    double start = 0.0;
    double end = 0.0;
  };

  /// Effective-green windows (yellow folded per policy) overlapping
  /// [t, t + span), in time order. Empty when the signal is disabled
  /// (callers treat a disabled signal as always green).
  std::vector<GreenWindow> effective_green_windows(double t,
                                                   double span) const {
    std::vector<GreenWindow> windows;
    if (!enabled) return windows;
    const double green_eff =
        yellow_policy == YellowPolicy::part_of_green ? green_s + yellow_s
                                                     : green_s;
    const double c = cycle_s();
    double k = std::floor((t - offset_s) / c) - 1.0;
    for (; (k * c + offset_s) < t + span; k += 1.0) {
      const double gs = k * c + offset_s + red_s;
      const double ge = gs + green_eff;
      if (ge <= t) continue;
      windows.push_back({gs, ge});
    }
    return windows;
  }

  /// Start time of the next effective-red onset at or after t.
  double next_red_start(double t) const {
    double s = t;
    const double step = 0.1;
    if (effective_red(s)) return s;
    for (; s < t + 2.0 * cycle_s() + step; s += step)
      if (effective_red(s)) break;
    // refine to 1e-6
    double lo = s - step, hi = s;
    for (int i = 0; i < 40; ++i) {
      const double mid = 0.5 * (lo + hi);
      (effective_red(mid) ? hi : lo) = mid;
    }
    return hi;
  }
};

// ---------------------------------------------------------------------------
// Equilibrium speed (triangular free-flow / hyperbolic congested branch).
// ---------------------------------------------------------------------------

inline double critical_density(const PwParams& p) {
  return p.rho_jam / (p.v0 / p.c_slope + 1.0);
}

inline double equilibrium_speed(double rho, const PwParams& p) {
  if (rho < 0.0 || rho > p.rho_jam)
    throw domain_error("equilibrium_speed: density outside [0, rho_jam]");
  if (rho <= critical_density(p)) return p.v0;
  const double ve = p.c_slope * (p.rho_jam / rho - 1.0);
  return clamp(ve, 0.0, p.v0);
}

// ---------------------------------------------------------------------------
// Signal boundary.
// ---------------------------------------------------------------------------

inline int signal_cell_index(const SignalSchedule& sig, const PwParams& p,
                             int cells_per_lane) {
  int c = static_cast<int>(std::floor(sig.position / p.dx));
  if (c >= cells_per_lane) c = cells_per_lane - 1;
  if (c < 0) c = 0;
  return c;
}

/// Equilibrium-speed scale factor for a cell under an effective-red signal:
/// 1 outside the influence zone, ramping linearly down to 0 at the signal
/// cell itself.
inline double red_equilibrium_scale(int cell, int signal_cell,
                                    const PwParams& p) {
  const int n = p.red_influence_cells;
  const int dist = signal_cell - cell;  // 0 at the signal, grows upstream
  if (dist < 0 || dist >= n) return 1.0;
  return static_cast<double>(dist) / static_cast<double>(n);
}

/// During effective red, force the signal cell's speed to zero on all lanes.
/// Green leaves the field untouched.
inline CellField apply_signal_boundary(const CellField& field,
                                       const SignalSchedule& sig, double t,
                                       const PwParams& p) {
  CellField out = field;
  if (!sig.enabled || !sig.effective_red(t)) return out;
  const int sc = signal_cell_index(sig, p, field.cells_per_lane);
  for (int lane = 0; lane < field.lanes; ++lane) out.speed(lane, sc) = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Boundary conditions for the difference stencils.
// ---------------------------------------------------------------------------

struct BoundarySpec {
  enum class Kind { open, periodic } kind = Kind::open;
  /// Upstream inflow [veh/s] per lane; used only for Kind::open. The ghost
  /// cell carries density inflow/v0 moving at v0 so its flux equals the
  /// demand rate exactly.
  std::vector<double> inflow;

  static BoundarySpec periodic() {
    BoundarySpec b;
    b.kind = Kind::periodic;
    return b;
  }
  static BoundarySpec open_with_inflow(std::vector<double> flux) {
    BoundarySpec b;
    b.inflow = std::move(flux);
    return b;
  }
};

namespace detail {

struct StencilCtx {
  const CellField& f;
  const BoundarySpec& bc;
  const PwParams& p;
  int lane;

  double upstream_flux(int j) const {  // rho_{j-1} * V_{j-1}
    if (j > 0) return f.density(lane, j - 1) * f.speed(lane, j - 1);
    if (bc.kind == BoundarySpec::Kind::periodic) {
      const int last = f.cells_per_lane - 1;
      return f.density(lane, last) * f.speed(lane, last);
    }
    return lane < static_cast<int>(bc.inflow.size()) ? bc.inflow[lane] : 0.0;
  }
  double upstream_speed(int j) const {  // V_{j-1}, zero-gradient when open
    if (j > 0) return f.speed(lane, j - 1);
    if (bc.kind == BoundarySpec::Kind::periodic)
      return f.speed(lane, f.cells_per_lane - 1);
    return f.speed(lane, 0);
  }
  double downstream_density(int j) const {  // rho_{j+1}, free outflow copy
    if (j + 1 < f.cells_per_lane) return f.density(lane, j + 1);
    if (bc.kind == BoundarySpec::Kind::periodic) return f.density(lane, 0);
    return f.density(lane, j);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// One-step updates. Density and speed both read the *input* field, so a
// combined step is a simultaneous update. Results are clamped to physical
// bounds; clamp events are counted so callers can assert they stay rare.
// ---------------------------------------------------------------------------

struct StepTelemetry {
  long clamp_events = 0;    // density + speed
  long density_clamps = 0;  // these break conservation
  long speed_clamps = 0;
  long cell_steps = 0;
  bool cfl_warning = false;
};

inline CellField step_density(const CellField& field,
                              std::span<const LcInjection> injections,
                              const PwParams& p,
                              const BoundarySpec& bc = BoundarySpec{},
                              StepTelemetry* telemetry = nullptr) {
  CellField out = field;
  const double r = p.dt_model / p.dx;
  if (telemetry && !p.cfl_ok()) telemetry->cfl_warning = true;

  for (int lane = 0; lane < field.lanes; ++lane) {
    const detail::StencilCtx ctx{field, bc, p, lane};
    for (int j = 0; j < field.cells_per_lane; ++j) {
      const double flux_out = field.density(lane, j) * field.speed(lane, j);
      const double flux_in = ctx.upstream_flux(j);
      out.density(lane, j) =
          field.density(lane, j) - r * (flux_out - flux_in);
    }
  }
  // Lane-change flow term, applied only where an injection exists so the
  // zero-injection path is arithmetically identical to the plain model.
  for (const LcInjection& inj : injections) {
    if (inj.rho_lc == 0.0) continue;
    out.density(inj.lane, inj.cell) += r * inj.rho_lc * inj.v_lc;
  }
  for (int lane = 0; lane < field.lanes; ++lane)
    for (int j = 0; j < field.cells_per_lane; ++j) {
      double& rho = out.density(lane, j);
      if (telemetry) ++telemetry->cell_steps;
      if (rho < 0.0 || rho > p.rho_jam) {
        rho = clamp(rho, 0.0, p.rho_jam);
        if (telemetry) {
          ++telemetry->clamp_events;
          ++telemetry->density_clamps;
        }
      }
    }
  return out;
}

/// Speed update: convection, relaxation toward (possibly signal-scaled)
/// equilibrium speed, traffic pressure against the downstream density
/// gradient, and the lane-change acceleration term.
/// `ve_scale` holds per-cell equilibrium-speed multipliers (empty = 1).
inline CellField step_speed(const CellField& field,
                            std::span<const LcInjection> injections,
                            const PwParams& p,
                            const BoundarySpec& bc = BoundarySpec{},
                            std::span<const double> ve_scale = {},
                            StepTelemetry* telemetry = nullptr) {
  CellField out = field;
  const double r = p.dt_model / p.dx;

  for (int lane = 0; lane < field.lanes; ++lane) {
    const detail::StencilCtx ctx{field, bc, p, lane};
    for (int j = 0; j < field.cells_per_lane; ++j) {
      const double vj = field.speed(lane, j);
      const double rho_j = field.density(lane, j);
      const double scale =
          ve_scale.empty() ? 1.0 : ve_scale[static_cast<std::size_t>(j)];
      const double ve = equilibrium_speed(clamp(rho_j, 0.0, p.rho_jam), p) * scale;

      const double convection = r * vj * (vj - ctx.upstream_speed(j));
      const double relaxation = p.dt_model * (ve - vj) / p.tau;
      const double pressure =
          r * p.c0_sq * (ctx.downstream_density(j) - rho_j) / (rho_j + p.epsilon);

      out.speed(lane, j) = vj - convection + relaxation - pressure;
    }
  }
  for (const LcInjection& inj : injections) {
    if (inj.rho_lc == 0.0) continue;
    const double rho_j = field.density(inj.lane, inj.cell);
    const double vj = field.speed(inj.lane, inj.cell);
    out.speed(inj.lane, inj.cell) +=
        inj.rho_lc * inj.v_lc * (inj.v_lc - vj) / (rho_j + p.epsilon) * r;
  }
  for (int lane = 0; lane < field.lanes; ++lane)
    for (int j = 0; j < field.cells_per_lane; ++j) {
      double& v = out.speed(lane, j);
      if (telemetry) ++telemetry->cell_steps;
      if (v < 0.0 || v > p.v0) {
        v = clamp(v, 0.0, p.v0);
        if (telemetry) {
          ++telemetry->clamp_events;
          ++telemetry->speed_clamps;
        }
      }
    }
  return out;
}

/// Builds the per-cell equilibrium-speed scale for the current signal state.
inline std::vector<double> signal_ve_scale(const SignalSchedule& sig, double t,
                                           const PwParams& p,
                                           int cells_per_lane) {
  std::vector<double> scale(static_cast<std::size_t>(cells_per_lane), 1.0);
  if (!sig.enabled || !sig.effective_red(t)) return scale;
  const int sc = signal_cell_index(sig, p, cells_per_lane);
  for (int j = 0; j < cells_per_lane; ++j)
    scale[static_cast<std::size_t>(j)] = red_equilibrium_scale(j, sc, p);
  return scale;
}

/// One combined model step at absolute time t: signal boundary, then the
/// simultaneous density/speed update.
inline CellField pw_step(const CellField& field,
                         std::span<const LcInjection> injections,
                         const SignalSchedule& sig, double t,
                         const PwParams& p,
                         const BoundarySpec& bc = BoundarySpec{},
                         StepTelemetry* telemetry = nullptr) {
  const CellField bounded = apply_signal_boundary(field, sig, t, p);
  const std::vector<double> scale =
      signal_ve_scale(sig, t, p, field.cells_per_lane);
  CellField next = step_density(bounded, injections, p, bc, telemetry);
  const CellField vnext =
      step_speed(bounded, injections, p, bc, scale, telemetry);
  next.v = vnext.v;
  return next;
}

/// Rolls the model forward `horizon_steps` steps starting at time t0.
/// Returns the input field followed by every intermediate state
/// (horizon_steps + 1 entries).
inline std::vector<CellField> propagate(
    const CellField& field,
    const std::vector<std::vector<LcInjection>>& injections_by_step,
    const SignalSchedule& sig, double t0, int horizon_steps,
    const PwParams& p, const BoundarySpec& bc = BoundarySpec{},
    StepTelemetry* telemetry = nullptr) {
  std::vector<CellField> states;
  states.reserve(static_cast<std::size_t>(horizon_steps) + 1);
  states.push_back(field);
  static const std::vector<LcInjection> kNone;
  for (int s = 0; s < horizon_steps; ++s) {
    const auto& inj = s < static_cast<int>(injections_by_step.size())
                          ? injections_by_step[static_cast<std::size_t>(s)]
                          : kNone;
    states.push_back(pw_step(states.back(), inj, sig, t0 + s * p.dt_model, p,
                             bc, telemetry));
  }
  return states;
}

// ---------------------------------------------------------------------------
// Measurement interpolation. Cell j's value is anchored at position j*dx;
// a position d inside [j*dx, (j+1)*dx) interpolates cells j and j+1 with
// weight lambda = d/dx - j on the downstream cell.
// ---------------------------------------------------------------------------

namespace detail {

struct InterpAt {
  int j;
  double w;  // weight on cell j+1
};

inline InterpAt interp_coeff(double position, const PwParams& p,
                             int cells_per_lane) {
  double s = position / p.dx;
  if (s < 0.0) s = 0.0;
  int j = static_cast<int>(std::floor(s));
  if (j > cells_per_lane - 1) j = cells_per_lane - 1;
  double w = s - j;
  if (j == cells_per_lane - 1) w = 0.0;  // zero-gradient past the last anchor
  return {j, w};
}

}  // namespace detail

/// Interpolated cell speed at `position` on `lane`, plus additive noise.
inline double measure_speed(double position, int lane, const CellField& field,
                            const PwParams& p, double noise = 0.0) {
  const auto c = detail::interp_coeff(position, p, field.cells_per_lane);
  const int j2 = std::min(c.j + 1, field.cells_per_lane - 1);
  return c.w * field.speed(lane, j2) + (1.0 - c.w) * field.speed(lane, c.j) +
         noise;
}

/// Interpolated inverse-density spacing at a midpoint position. Returns
/// nullopt when both interpolation cells are effectively empty (no vehicle
/// ahead to measure against).
inline std::optional<double> measure_spacing(double midpoint, int lane,
                                             const CellField& field,
                                             const PwParams& p,
                                             double noise = 0.0) {
  const auto c = detail::interp_coeff(midpoint, p, field.cells_per_lane);
  const int j2 = std::min(c.j + 1, field.cells_per_lane - 1);
  const double rho1 = field.density(lane, c.j);
  const double rho2 = field.density(lane, j2);
  if (rho1 < p.epsilon && rho2 < p.epsilon) return std::nullopt;
  const double inv1 = 1.0 / std::max(rho1, p.epsilon);
  const double inv2 = 1.0 / std::max(rho2, p.epsilon);
  return c.w * inv2 + (1.0 - c.w) * inv1 + noise;
}

}  // namespace ecolc
