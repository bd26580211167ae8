"""Simultaneous process / multi-energy-system scheduling as a MILP.

Assembles the demand-response problem (production-rate dynamics under the
fitted ramping envelope, piecewise-affine heat demand, conversion units with
minimum part load, storage, grid exchange, energy costs) on an orthogonal
collocation grid, plus the as-fast-as-possible ramp problems and the
steady-production baseline.  Powers are in kW, heat demand converted from
the process model's kJ/h, prices in currency/kWh, time in hours.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .collocation import CollocationGrid, collocation_grid
from .envelope import PwaDemandModel, RampingEnvelope
from .milp import MixedIntegerProgram, Solution, branch_and_bound

KJH_PER_KW = 3600.0


@dataclass(frozen=True)
class EnergyComponent:
    """Gas-fired conversion unit with one affine conversion element.

    The part-load curve through (minimum load, proportional input) and
    (nominal load, proportional input) degenerates to output = efficiency
    times input, switched by the hourly on/off binary.
    """

    name: str
    q_nom_kw: float                 # nominal thermal output
    th_eff: float
    el_eff: float | None = None    # None for boilers
    min_load_frac: float = 0.5

    def __post_init__(self):
        if not 0 < self.min_load_frac < 1:
            raise ValueError(f"{self.name}: min part-load must be in (0,1)")
        if not 0 < self.th_eff < 1:
            raise ValueError(f"{self.name}: thermal efficiency must be in (0,1)")
        if self.el_eff is not None and not 0 < self.el_eff < 1:
            raise ValueError(f"{self.name}: electric efficiency must be in (0,1)")

    @property
    def q_min_kw(self) -> float:
        return self.min_load_frac * self.q_nom_kw

    @property
    def gas_in_max_kw(self) -> float:
        return self.q_nom_kw / self.th_eff


def paper_components() -> list[EnergyComponent]:
    """4 CHPs at 450 kW thermal plus 2 boilers at 530 kW, published
    efficiencies, 50% / 20% minimum part load."""
    return [
        EnergyComponent("CHP1", 450.0, 0.483, 0.377, 0.5),
        EnergyComponent("CHP2", 450.0, 0.493, 0.384, 0.5),
        EnergyComponent("CHP3", 450.0, 0.503, 0.392, 0.5),
        EnergyComponent("CHP4", 450.0, 0.513, 0.399, 0.5),
        EnergyComponent("B1", 530.0, 0.792, None, 0.2),
        EnergyComponent("B2", 530.0, 0.808, None, 0.2),
    ]


def desk_components() -> list[EnergyComponent]:
    """Desk-scale system: 2 CHPs + 1 boiler, sized so the CHPs can carry the
    process peak demand (which keeps the price-regime structure active)."""
    return [
        EnergyComponent("CHP1", 650.0, 0.483, 0.377, 0.5),
        EnergyComponent("CHP2", 650.0, 0.493, 0.384, 0.5),
        EnergyComponent("B1", 530.0, 0.792, None, 0.2),
    ]


@dataclass(frozen=True)
class MarketSeries:
    el_price: tuple          # currency/kWh, hourly
    gas_price: float         # currency/kWh
    heat_demand_kw: tuple    # inflexible, hourly
    el_demand_kw: tuple

    def __post_init__(self):
        n = len(self.el_price)
        if len(self.heat_demand_kw) != n or len(self.el_demand_kw) != n:
            raise ValueError("market series lengths differ")
        if any(d < 0 for d in self.heat_demand_kw + self.el_demand_kw):
            raise ValueError("demands must be non-negative")

    @property
    def n_hours(self) -> int:
        return len(self.el_price)


LOW_WINDOWS = {24: (13, 18), 12: (6, 9), 6: (2, 3)}


def two_level_market(horizon_h: int, high: float = 0.06, low: float = 0.01,
                     gas: float = 0.03, heat_kw: float = 100.0,
                     el_kw: float = 100.0) -> MarketSeries:
    """Bundled synthetic two-level day-ahead price profile with constant
    inflexible demands; the low-price window scales with the horizon."""
    lo, hi = LOW_WINDOWS.get(horizon_h, (horizon_h // 2, horizon_h * 3 // 4))
    price = tuple(low if lo <= h <= hi else high for h in range(horizon_h))
    return MarketSeries(price, gas, (heat_kw,) * horizon_h, (el_kw,) * horizon_h)


def market_to_csv(path, m: MarketSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "price", "heat_dem", "el_dem"])
        for h in range(m.n_hours):
            w.writerow([h, f"{m.el_price[h]:.10g}", f"{m.heat_demand_kw[h]:.10g}",
                        f"{m.el_demand_kw[h]:.10g}"])


def market_from_csv(path, gas_price: float = 0.03) -> MarketSeries:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows[0] != ["hour", "price", "heat_dem", "el_dem"]:
        raise ValueError(f"unexpected market header: {rows[0]}")
    data = [(float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]
    return MarketSeries(tuple(d[0] for d in data), gas_price,
                        tuple(d[1] for d in data), tuple(d[2] for d in data))


@dataclass
class ScheduleProblem:
    envelope: RampingEnvelope
    demand: PwaDemandModel
    components: list[EnergyComponent]
    market: MarketSeries
    horizon_h: int
    elems_per_hour: int = 1
    pts: int = 2
    storage: tuple = ()            # (lo, hi) in m^3; default +-2h of nominal
    gap_tol: float = 0.02
    time_limit_s: float = 300.0
    fix_steady: bool = False       # steady-production baseline

    def __post_init__(self):
        if not self.storage:
            self.storage = (-2.0 * self.envelope.rho_nom,
                            2.0 * self.envelope.rho_nom)
        if self.market.n_hours != self.horizon_h:
            raise ValueError("market series does not match the horizon")
        if self.envelope.fingerprint and self.demand.fingerprint and \
                self.envelope.fingerprint != self.demand.fingerprint:
            raise ValueError("demand model was fitted against a different envelope")


@dataclass
class ScheduleLayout:
    grid: CollocationGrid
    rho: list            # rho[e][i] variable indices, i = 0..pts
    rho_dot: list
    S: list
    phi: list
    nu_nodes: list       # hourly nu breakpoints
    q_in: dict           # (unit, e, j) -> var
    dp: dict             # (e, j) -> grid exchange var
    q_dem: dict          # (e, j) -> process heat demand var
    z_on: dict           # (unit, hour) -> var
    z_rho: list
    z_rho_dot: list
    z_nu: list


def _interval_bound(side, rho_box, rd_box) -> tuple[float, float]:
    """Range of an affine nu-limit side over the (rho, rho_dot) box."""
    vals = [side(r, d) for r in rho_box for d in rd_box]
    return min(vals), max(vals)


def _state_chain(mip: MixedIntegerProgram, grid: CollocationGrid, name: str,
                 lb: float, ub: float) -> list:
    """Variables for one collocated state; element boundaries shared."""
    out = []
    for e in range(grid.n_elem):
        row = []
        if e == 0:
            row.append(mip.add_variable(f"{name}_0", lb, ub))
        else:
            row.append(out[e - 1][grid.pts])
        for j in range(1, grid.pts + 1):
            row.append(mip.add_variable(f"{name}_{e}_{j}", lb, ub))
        out.append(row)
    return out


def _fix(mip: MixedIntegerProgram, var: int, value: float) -> None:
    mip.variables[var].lb = value
    mip.variables[var].ub = value


def _nu_interp(grid: CollocationGrid, nu_nodes: list, nodes_per_hour: int,
               e: int, j: int) -> list:
    """Coefficients expressing nu at collocation point (e, j) from the
    piecewise-linear breakpoint variables."""
    t = grid.t_point(e, j)
    seg = min(int(t * nodes_per_hour), len(nu_nodes) - 2)
    frac = t * nodes_per_hour - seg
    return [(nu_nodes[seg], 1.0 - frac), (nu_nodes[seg + 1], frac)]


def _initial_nu_rows(mip, env, nu0, r_v, d_v, z_rho0, z_rd0, seg_M, tag):
    """Envelope rows for the free nu value at t = 0 (every later breakpoint
    coincides with a collocation point and is already constrained)."""
    for key in env.nu_pwa.seg_min:
        mis = []
        if env.nu_pwa.n_segments == 4:
            mis = [(z_rho0, key[0]), (z_rd0, key[1])]
        smin = env.nu_pwa.seg_min[key]
        smax = env.nu_pwa.seg_max[key]
        M_min, M_max = seg_M[key]
        coeffs = {nu0: 1.0}
        coeffs[r_v] = coeffs.get(r_v, 0.0) - smax.a_rho
        coeffs[d_v] = coeffs.get(d_v, 0.0) - smax.a_rho_dot
        rhs = smax.a0
        for z, target in mis:
            if target:
                coeffs[z] = coeffs.get(z, 0.0) + M_max
                rhs += M_max
            else:
                coeffs[z] = coeffs.get(z, 0.0) - M_max
        mip.add_constraint(coeffs, "<=", rhs, name=f"{tag}u_{key[0]:d}{key[1]:d}")
        coeffs = {nu0: -1.0}
        coeffs[r_v] = coeffs.get(r_v, 0.0) + smin.a_rho
        coeffs[d_v] = coeffs.get(d_v, 0.0) + smin.a_rho_dot
        rhs = -smin.a0
        for z, target in mis:
            if target:
                coeffs[z] = coeffs.get(z, 0.0) + M_min
                rhs += M_min
            else:
                coeffs[z] = coeffs.get(z, 0.0) - M_min
        mip.add_constraint(coeffs, "<=", rhs, name=f"{tag}l_{key[0]:d}{key[1]:d}")


def assemble_problem(sp: ScheduleProblem) -> tuple[MixedIntegerProgram, ScheduleLayout]:
    """Build the scheduling MILP: collocated rate dynamics under the PWA
    ramping envelope, PWA heat demand, unit commitment with part load,
    storage balance and energy costs."""
    env, dm = sp.envelope, sp.demand
    grid = collocation_grid(sp.horizon_h, sp.elems_per_hour, sp.pts)
    mip = MixedIntegerProgram(f"DR{sp.horizon_h}H")
    rho_lo, rho_hi = env.rho_bounds
    rho_nom = env.rho_nom
    rd_box = env.rho_dot_box()
    nu_box = env.nu_box()
    if sp.fix_steady:
        rho_lo = rho_hi = rho_nom
        rd_box = (0.0, 0.0)
        nu_box = (0.0, 0.0)

    rho = _state_chain(mip, grid, "rho", rho_lo, rho_hi)
    rd = _state_chain(mip, grid, "rd", *rd_box)
    S = _state_chain(mip, grid, "S", *sp.storage)
    phi = _state_chain(mip, grid, "phi", -float("inf"), float("inf"))
    _fix(mip, rho[0][0], rho_nom)
    _fix(mip, rd[0][0], 0.0)
    _fix(mip, S[0][0], 0.0)
    _fix(mip, phi[0][0], 0.0)

    n_hours = sp.horizon_h
    nu_nodes = [mip.add_variable(f"nu_{k}", *nu_box) for k in range(n_hours + 1)]

    q_dem_hi = max(dm.q_nominal * 3.0,
                   max(abs(v) for v in nu_box) * 1e6) / KJH_PER_KW
    q_in, dp, q_dem = {}, {}, {}
    for e in range(grid.n_elem):
        for j in range(1, grid.pts + 1):
            for u in sp.components:
                q_in[(u.name, e, j)] = mip.add_variable(
                    f"qi_{u.name}_{e}_{j}", 0.0, u.gas_in_max_kw)
            dp[(e, j)] = mip.add_variable(f"dp_{e}_{j}", -1e5, 1e5)
            q_dem[(e, j)] = mip.add_variable(f"qd_{e}_{j}", 0.0, q_dem_hi)

    z_on = {}
    for u in sp.components:
        for h in range(n_hours):
            z_on[(u.name, h)] = mip.add_variable(f"z_{u.name}_{h}", 0, 1,
                                                 integer=True)
    z_rho = [mip.add_variable(f"zr_{h}", 0, 1, integer=True)
             for h in range(n_hours)]
    z_rd = [mip.add_variable(f"zd_{h}", 0, 1, integer=True)
            for h in range(n_hours)]
    z_nu = [mip.add_variable(f"zn_{h}", 0, 1, integer=True)
            for h in range(n_hours)]

    D, h_el = grid.D, grid.h

    def coll_rows(chain, deriv_of_point, name):
        """Sum_i D[j,i]*x[e,i] = h * derivative(e, j) for every point."""
        for e in range(grid.n_elem):
            for j in range(1, grid.pts + 1):
                coeffs = {chain[e][i]: D[j - 1][i] for i in range(grid.pts + 1)}
                rhs = 0.0
                for var, c in deriv_of_point(e, j):
                    if var is None:
                        rhs += h_el * c
                    else:
                        coeffs[var] = coeffs.get(var, 0.0) - h_el * c
                mip.add_constraint(coeffs, "=", rhs, name=f"{name}_{e}_{j}")

    coll_rows(rho, lambda e, j: [(rd[e][j], 1.0)], "dC_rho")
    coll_rows(rd, lambda e, j: _nu_interp(grid, nu_nodes, 1, e, j), "dC_rd")
    coll_rows(S, lambda e, j: [(rho[e][j], 1.0), (None, -rho_nom)], "dC_S")

    def cost_rate(e, j):
        hour = min(e // sp.elems_per_hour, n_hours - 1)
        out = [(q_in[(u.name, e, j)], sp.market.gas_price)
               for u in sp.components]
        out.append((dp[(e, j)], sp.market.el_price[hour]))
        return out

    coll_rows(phi, cost_rate, "dC_phi")

    # ramping envelope and PWA selection ------------------------------------
    rd_l, rd_u = env.rd_lower, env.rd_upper
    seg_M = {}
    for key in env.nu_pwa.seg_min:
        lo_min, hi_min = _interval_bound(env.nu_pwa.seg_min[key],
                                         (rho_lo, rho_hi), rd_box)
        lo_max, hi_max = _interval_bound(env.nu_pwa.seg_max[key],
                                         (rho_lo, rho_hi), rd_box)
        # min side: seg_min - nu <= M*mis ; max side: nu - seg_max <= M*mis
        seg_M[key] = (max(hi_min - nu_box[0], 0.0) + 1.0,
                      max(nu_box[1] - lo_max, 0.0) + 1.0)

    _initial_nu_rows(mip, env, nu_nodes[0], rho[0][0], rd[0][0],
                     z_rho[0], z_rd[0], seg_M, "inu")

    dm_M = {}
    dem_box = []
    for key, seg in dm.segments.items():
        vals = [seg(r, d, n) / KJH_PER_KW
                for r in (rho_lo, rho_hi) for d in rd_box for n in nu_box]
        dem_box += vals
        dm_M[key] = (max(vals) + q_dem_hi + 1.0)

    for e in range(grid.n_elem):
        hour = min(e // sp.elems_per_hour, n_hours - 1)
        for j in range(1, grid.pts + 1):
            r_v, d_v = rho[e][j], rd[e][j]
            nu_expr = _nu_interp(grid, nu_nodes, 1, e, j)
            # linear rate-derivative band
            mip.add_constraint({d_v: 1.0, r_v: -rd_u.a1}, "<=", rd_u.a0,
                               name=f"rdu_{e}_{j}")
            mip.add_constraint({d_v: 1.0, r_v: -rd_l.a1}, ">=", rd_l.a0,
                               name=f"rdl_{e}_{j}")
            # indicator links (overlapping segment domains)
            ov_r, ov_d = env.nu_pwa.ov_rho, env.nu_pwa.ov_rho_dot
            ov_n = 0.2 * min(-nu_box[0], nu_box[1]) if nu_box[1] > 0 > nu_box[0] else 0.0
            mip.add_constraint({r_v: 1.0, z_rho[hour]: -(rho_hi - rho_nom - ov_r)},
                               "<=", rho_nom + ov_r, name=f"lzr1_{e}_{j}")
            mip.add_constraint({r_v: 1.0, z_rho[hour]: -(rho_nom - ov_r - rho_lo)},
                               ">=", rho_lo, name=f"lzr2_{e}_{j}")
            mip.add_constraint({d_v: 1.0, z_rd[hour]: -(rd_box[1] - ov_d)},
                               "<=", ov_d, name=f"lzd1_{e}_{j}")
            mip.add_constraint({d_v: 1.0, z_rd[hour]: -(rd_box[0] + ov_d)}, ">=",
                               rd_box[0], name=f"lzd2_{e}_{j}")
            nu_c = dict(nu_expr)
            nu_c[z_nu[hour]] = -(nu_box[1] - ov_n)
            mip.add_constraint(nu_c, "<=", ov_n, name=f"lzn1_{e}_{j}")
            nu_c = dict(nu_expr)
            nu_c[z_nu[hour]] = -(nu_box[0] + ov_n)
            mip.add_constraint(nu_c, ">=", nu_box[0], name=f"lzn2_{e}_{j}")
            # PWA nu limits, big-M selected by (z_rho, z_rd)
            if env.nu_pwa.n_segments == 1:
                keys = [(False, False)]
            else:
                keys = list(env.nu_pwa.seg_min)
            for key in keys:
                mis = []
                if env.nu_pwa.n_segments == 4:
                    mis = [(z_rho[hour], key[0]), (z_rd[hour], key[1])]
                smin = env.nu_pwa.seg_min[key]
                smax = env.nu_pwa.seg_max[key]
                M_min, M_max = seg_M[key]

                def mis_terms(coeffs, M):
                    rhs_shift = 0.0
                    for z, target in mis:
                        if target:
                            coeffs[z] = coeffs.get(z, 0.0) + M
                            rhs_shift += M
                        else:
                            coeffs[z] = coeffs.get(z, 0.0) - M
                    return rhs_shift

                coeffs = dict(nu_expr)
                coeffs[r_v] = coeffs.get(r_v, 0.0) - smax.a_rho
                coeffs[d_v] = coeffs.get(d_v, 0.0) - smax.a_rho_dot
                shift = mis_terms(coeffs, M_max)
                mip.add_constraint(coeffs, "<=", smax.a0 + shift,
                                   name=f"pwau_{key[0]:d}{key[1]:d}_{e}_{j}")
                coeffs = {k: -c for k, c in nu_expr}
                coeffs[r_v] = coeffs.get(r_v, 0.0) + smin.a_rho
                coeffs[d_v] = coeffs.get(d_v, 0.0) + smin.a_rho_dot
                shift = mis_terms(coeffs, M_min)
                mip.add_constraint(coeffs, "<=", -smin.a0 + shift,
                                   name=f"pwal_{key[0]:d}{key[1]:d}_{e}_{j}")
            # PWA demand, big-M selected by (z_rd, z_nu)
            for key, seg in dm.segments.items():
                mis = [(z_rd[hour], key[0]), (z_nu[hour], key[1])]
                M = dm_M[key]

                def seg_coeffs(sign):
                    coeffs = {q_dem[(e, j)]: sign}
                    coeffs[r_v] = coeffs.get(r_v, 0.0) - sign * seg.c_rho / KJH_PER_KW
                    coeffs[d_v] = coeffs.get(d_v, 0.0) - sign * seg.c_rho_dot / KJH_PER_KW
                    for var, c in nu_expr:
                        coeffs[var] = coeffs.get(var, 0.0) - sign * c * seg.c_nu / KJH_PER_KW
                    return coeffs

                for sign, tag in ((1.0, "u"), (-1.0, "l")):
                    coeffs = seg_coeffs(sign)
                    shift = 0.0
                    for z, target in mis:
                        if target:
                            coeffs[z] = coeffs.get(z, 0.0) + M
                            shift += M
                        else:
                            coeffs[z] = coeffs.get(z, 0.0) - M
                    mip.add_constraint(
                        coeffs, "<=", sign * seg.c0 / KJH_PER_KW + shift,
                        name=f"dem{tag}_{key[0]:d}{key[1]:d}_{e}_{j}")

    # conversion units, balances ---------------------------------------------
    for e in range(grid.n_elem):
        hour = min(e // sp.elems_per_hour, n_hours - 1)
        for j in range(1, grid.pts + 1):
            heat = {}
            elec = {dp[(e, j)]: 1.0}
            for u in sp.components:
                qi = q_in[(u.name, e, j)]
                z = z_on[(u.name, hour)]
                mip.add_constraint({qi: u.th_eff, z: -u.q_nom_kw}, "<=", 0.0,
                                   name=f"pl_u_{u.name}_{e}_{j}")
                mip.add_constraint({qi: u.th_eff, z: -u.q_min_kw}, ">=", 0.0,
                                   name=f"pl_l_{u.name}_{e}_{j}")
                heat[qi] = u.th_eff
                if u.el_eff is not None:
                    elec[qi] = u.el_eff
            heat[q_dem[(e, j)]] = -1.0
            mip.add_constraint(heat, "=", sp.market.heat_demand_kw[hour],
                               name=f"bal_h_{e}_{j}")
            mip.add_constraint(elec, "=", sp.market.el_demand_kw[hour],
                               name=f"bal_e_{e}_{j}")

    # terminal storage and objective ------------------------------------------
    mip.add_constraint({S[-1][grid.pts]: 1.0}, ">=", 0.0, name="S_final")
    mip.set_objective({phi[-1][grid.pts]: 1.0})

    layout = ScheduleLayout(grid, rho, rd, S, phi, nu_nodes, q_in, dp, q_dem,
                            z_on, z_rho, z_rd, z_nu)
    return mip, layout


@dataclass
class ScheduleResult:
    times: np.ndarray
    rho: np.ndarray
    rho_dot: np.ndarray
    nu: np.ndarray           # piecewise-linear value at each time
    storage: np.ndarray
    q_dem_kw: np.ndarray     # process heat demand at collocation points
    unit_heat_kw: dict       # unit -> array over collocation points
    grid_kw: np.ndarray      # electricity bought (+) / sold (-)
    objective: float
    gap: float
    status: str
    node_count: int
    cost_gas: float
    cost_el_buy: float
    rev_el_sell: float
    on_hours: dict           # unit -> list of 0/1 per hour

    def summary(self) -> str:
        lines = [
            f"status: {self.status} (gap {100 * self.gap:.2f}%, "
            f"{self.node_count} nodes)",
            f"objective (energy cost): {self.objective:.4f}",
            f"  gas cost:        {self.cost_gas:.4f}",
            f"  electricity buy: {self.cost_el_buy:.4f}",
            f"  electricity sell: -{self.rev_el_sell:.4f}",
            f"rho range: [{self.rho.min():.4f}, {self.rho.max():.4f}]",
            f"terminal storage: {self.storage[-1]:.6f}",
        ]
        for name, hours in self.on_hours.items():
            lines.append(f"  {name} on: {''.join(str(int(v)) for v in hours)}")
        return "\n".join(lines)


def extract_result(sp: ScheduleProblem, layout: ScheduleLayout,
                   sol: Solution) -> ScheduleResult:
    grid = layout.grid
    x = sol.x
    times = grid.all_times()

    def chain_values(chain):
        out = [x[chain[0][0]]]
        for e in range(grid.n_elem):
            out.extend(x[chain[e][j]] for j in range(1, grid.pts + 1))
        return np.array(out)

    rho = chain_values(layout.rho)
    rd = chain_values(layout.rho_dot)
    S = chain_values(layout.S)
    nu_nodes = np.array([x[v] for v in layout.nu_nodes])
    nu = np.interp(times, np.arange(len(nu_nodes)), nu_nodes)

    pts_list = [(e, j) for e in range(grid.n_elem)
                for j in range(1, grid.pts + 1)]
    q_dem = np.array([x[layout.q_dem[p]] for p in pts_list])
    dp = np.array([x[layout.dp[p]] for p in pts_list])
    unit_heat = {}
    for u in sp.components:
        unit_heat[u.name] = np.array(
            [u.th_eff * x[layout.q_in[(u.name, e, j)]] for e, j in pts_list])

    w, h_el = grid.weights, grid.h
    cost_gas = cost_buy = rev_sell = 0.0
    for k, (e, j) in enumerate(pts_list):
        hour = min(e // sp.elems_per_hour, sp.horizon_h - 1)
        wk = w[j - 1] * h_el
        gas_kw = sum(x[layout.q_in[(u.name, e, j)]] for u in sp.components)
        cost_gas += wk * sp.market.gas_price * gas_kw
        price = sp.market.el_price[hour]
        if dp[k] >= 0:
            cost_buy += wk * price * dp[k]
        else:
            rev_sell += wk * price * (-dp[k])
    on_hours = {u.name: [x[layout.z_on[(u.name, h)]]
                         for h in range(sp.horizon_h)] for u in sp.components}
    return ScheduleResult(
        times=times, rho=rho, rho_dot=rd, nu=nu, storage=S, q_dem_kw=q_dem,
        unit_heat_kw=unit_heat, grid_kw=dp, objective=sol.objective,
        gap=sol.gap, status=sol.status, node_count=sol.node_count,
        cost_gas=cost_gas, cost_el_buy=cost_buy, rev_el_sell=rev_sell,
        on_hours=on_hours)


def solve_schedule(sp: ScheduleProblem) -> tuple[ScheduleResult, Solution]:
    mip, layout = assemble_problem(sp)
    sol = branch_and_bound(mip, gap_tol=sp.gap_tol, time_limit=sp.time_limit_s)
    if sol.status in ("infeasible", "unbounded"):
        raise RuntimeError(f"schedule optimization {sol.status}")
    return extract_result(sp, layout, sol), sol


def steady_baseline(sp: ScheduleProblem) -> tuple[ScheduleResult, Solution]:
    """Same problem with the production rate pinned at nominal."""
    return solve_schedule(replace(sp, fix_steady=True))


# ---------------------------------------------------------------------------
# As-fast-as-possible ramps
# ---------------------------------------------------------------------------

@dataclass
class RampResult:
    times: np.ndarray
    rho: np.ndarray
    rho_dot: np.ndarray
    nu: np.ndarray
    ramp_time: float | None
    status: str
    gap: float

    def summary(self) -> str:
        t = "not reached" if self.ramp_time is None else f"{self.ramp_time:.3f} h"
        return (f"ramp time: {t} (status {self.status}, "
                f"gap {100 * self.gap:.2f}%)")


def ramp_problem(direction: str, env: RampingEnvelope, horizon: float,
                 elem_h: float = 0.1, pts: int = 2
                 ) -> tuple[MixedIntegerProgram, ScheduleLayout]:
    """As-fast-as-possible ramp MILP: envelope rows only, objective is the
    signed integral of the production rate, PWA binaries per element."""
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    up = direction == "up"
    elems_per_hour = int(round(1.0 / elem_h))
    grid = collocation_grid(horizon, elems_per_hour, pts)
    mip = MixedIntegerProgram(f"RAMP{direction.upper()}")
    rho_lo, rho_hi = env.rho_bounds
    rd_box = env.rho_dot_box()
    nu_box = env.nu_box()

    rho = _state_chain(mip, grid, "rho", rho_lo, rho_hi)
    rd = _state_chain(mip, grid, "rd", *rd_box)
    _fix(mip, rho[0][0], rho_lo if up else rho_hi)
    _fix(mip, rd[0][0], 0.0)
    nu_nodes = [mip.add_variable(f"nu_{k}", *nu_box)
                for k in range(grid.n_elem + 1)]
    z_rho = [mip.add_variable(f"zr_{e}", 0, 1, integer=True)
             for e in range(grid.n_elem)]
    z_rd = [mip.add_variable(f"zd_{e}", 0, 1, integer=True)
            for e in range(grid.n_elem)]

    D, h_el = grid.D, grid.h
    nodes_per_hour = elems_per_hour   # nu breaks at element boundaries
    for e in range(grid.n_elem):
        for j in range(1, grid.pts + 1):
            coeffs = {rho[e][i]: D[j - 1][i] for i in range(grid.pts + 1)}
            coeffs[rd[e][j]] = coeffs.get(rd[e][j], 0.0) - h_el
            mip.add_constraint(coeffs, "=", 0.0, name=f"dC_rho_{e}_{j}")
            coeffs = {rd[e][i]: D[j - 1][i] for i in range(grid.pts + 1)}
            for var, c in _nu_interp(grid, nu_nodes, nodes_per_hour, e, j):
                coeffs[var] = coeffs.get(var, 0.0) - h_el * c
            mip.add_constraint(coeffs, "=", 0.0, name=f"dC_rd_{e}_{j}")

    rd_l, rd_u = env.rd_lower, env.rd_upper
    rho_nom = env.rho_nom
    seg_M = {}
    for key in env.nu_pwa.seg_min:
        lo_min, hi_min = _interval_bound(env.nu_pwa.seg_min[key],
                                         (rho_lo, rho_hi), rd_box)
        lo_max, hi_max = _interval_bound(env.nu_pwa.seg_max[key],
                                         (rho_lo, rho_hi), rd_box)
        seg_M[key] = (max(hi_min - nu_box[0], 0.0) + 1.0,
                      max(nu_box[1] - lo_max, 0.0) + 1.0)

    _initial_nu_rows(mip, env, nu_nodes[0], rho[0][0], rd[0][0],
                     z_rho[0], z_rd[0], seg_M, "inu")

    for e in range(grid.n_elem):
        for j in range(1, grid.pts + 1):
            r_v, d_v = rho[e][j], rd[e][j]
            nu_expr = _nu_interp(grid, nu_nodes, nodes_per_hour, e, j)
            mip.add_constraint({d_v: 1.0, r_v: -rd_u.a1}, "<=", rd_u.a0,
                               name=f"rdu_{e}_{j}")
            mip.add_constraint({d_v: 1.0, r_v: -rd_l.a1}, ">=", rd_l.a0,
                               name=f"rdl_{e}_{j}")
            ov_r, ov_d = env.nu_pwa.ov_rho, env.nu_pwa.ov_rho_dot
            mip.add_constraint({r_v: 1.0, z_rho[e]: -(rho_hi - rho_nom - ov_r)},
                               "<=", rho_nom + ov_r, name=f"lzr1_{e}_{j}")
            mip.add_constraint({r_v: 1.0, z_rho[e]: -(rho_nom - ov_r - rho_lo)},
                               ">=", rho_lo, name=f"lzr2_{e}_{j}")
            mip.add_constraint({d_v: 1.0, z_rd[e]: -(rd_box[1] - ov_d)},
                               "<=", ov_d, name=f"lzd1_{e}_{j}")
            mip.add_constraint({d_v: 1.0, z_rd[e]: -(rd_box[0] + ov_d)}, ">=",
                               rd_box[0], name=f"lzd2_{e}_{j}")
            for key in env.nu_pwa.seg_min:
                mis = []
                if env.nu_pwa.n_segments == 4:
                    mis = [(z_rho[e], key[0]), (z_rd[e], key[1])]
                smin = env.nu_pwa.seg_min[key]
                smax = env.nu_pwa.seg_max[key]
                M_min, M_max = seg_M[key]
                coeffs = dict(nu_expr)
                coeffs[r_v] = coeffs.get(r_v, 0.0) - smax.a_rho
                coeffs[d_v] = coeffs.get(d_v, 0.0) - smax.a_rho_dot
                rhs = smax.a0
                for z, target in mis:
                    if target:
                        coeffs[z] = coeffs.get(z, 0.0) + M_max
                        rhs += M_max
                    else:
                        coeffs[z] = coeffs.get(z, 0.0) - M_max
                mip.add_constraint(coeffs, "<=", rhs,
                                   name=f"pwau_{key[0]:d}{key[1]:d}_{e}_{j}")
                coeffs = {k: -c for k, c in nu_expr}
                coeffs[r_v] = coeffs.get(r_v, 0.0) + smin.a_rho
                coeffs[d_v] = coeffs.get(d_v, 0.0) + smin.a_rho_dot
                rhs = -smin.a0
                for z, target in mis:
                    if target:
                        coeffs[z] = coeffs.get(z, 0.0) + M_min
                        rhs += M_min
                    else:
                        coeffs[z] = coeffs.get(z, 0.0) - M_min
                mip.add_constraint(coeffs, "<=", rhs,
                                   name=f"pwal_{key[0]:d}{key[1]:d}_{e}_{j}")

    # objective: maximize (up) / minimize (down) the integral of rho
    w = grid.weights
    obj = {}
    sign = -1.0 if up else 1.0
    for e in range(grid.n_elem):
        for j in range(1, grid.pts + 1):
            obj[rho[e][j]] = obj.get(rho[e][j], 0.0) + sign * w[j - 1] * h_el
    mip.set_objective(obj)
    layout = ScheduleLayout(grid, rho, rd, [], [], nu_nodes, {}, {}, {}, {},
                            z_rho, z_rd, [])
    return mip, layout


def _greedy_envelope_trajectory(env: RampingEnvelope, up: bool,
                                horizon: float, dt: float = 0.005):
    """Bang-bang trajectory inside the fitted envelope (bisected switch
    time); used only to seed the integer pattern for the exact search."""
    def run(t_sw):
        rho = env.rho_bounds[0] if up else env.rho_bounds[1]
        rd, t = 0.0, 0.0
        ts, rs = [0.0], [rho]
        while t < horizon - 1e-9:
            nlo, nhi = env.nu_range(rho, rd)
            nu = (nhi if t < t_sw else nlo) if up else (nlo if t < t_sw else nhi)
            rd2 = rd + nu * dt
            flo, fhi = env.rho_dot_range(rho)
            rd2 = min(max(rd2, flo), fhi)
            if up and rd2 < 0 and t > t_sw:
                rd2 = 0.0
            if not up and rd2 > 0 and t > t_sw:
                rd2 = 0.0
            rho += 0.5 * (rd + rd2) * dt
            rho = min(max(rho, env.rho_bounds[0]), env.rho_bounds[1])
            rd = rd2
            t += dt
            ts.append(t)
            rs.append(rho)
        return np.array(ts), np.array(rs)

    lo, hi = 0.0, horizon
    tgt = env.rho_bounds[1] if up else env.rho_bounds[0]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        _, rs = run(mid)
        reached = rs[-1] >= tgt - 1e-6 if up else rs[-1] <= tgt + 1e-6
        if reached:
            hi = mid
        else:
            lo = mid
    return run(hi)


def solve_ramp(direction: str, env: RampingEnvelope, horizon: float | None = None,
               elem_h: float | None = None, pts: int = 2, gap_tol: float = 0.03,
               time_limit_s: float = 50.0) -> RampResult:
    """Solve an as-fast-as-possible ramp.

    A greedy bang-bang trajectory inside the envelope fixes a candidate
    segment-binary pattern whose warm LP seeds the incumbent; the exact
    branch-and-bound search then runs with that incumbent.
    """
    up = direction == "up"
    if horizon is None:
        horizon = 2.5 if up else 4.0
    if elem_h is None:
        elem_h = 0.1 if up else 0.2
    mip, layout = ramp_problem(direction, env, horizon, elem_h, pts)
    grid = layout.grid

    import time as _time
    from .milp import _Standardized, simplex_solve
    t_start = _time.monotonic()
    deadline = t_start + 0.45 * time_limit_s
    base_std = _Standardized(mip)
    hint = None
    try:
        root_sol, root_state = simplex_solve(mip, base_std=base_std,
                                             deadline=deadline)
    except Exception:
        root_sol = root_state = None
    if root_sol is not None and root_sol.status == "optimal":
        ts, rs = _greedy_envelope_trajectory(env, up, horizon)
        rho_nom = env.rho_nom
        pattern = []
        for e in range(grid.n_elem):
            mid = (e + 0.5) * grid.h
            pattern.append(1.0 if np.interp(mid, ts, rs) >= rho_nom else 0.0)
        zd_val = 1.0 if up else 0.0
        candidates = [list(pattern)]
        flip = [k for k in range(1, grid.n_elem)
                if pattern[k] != pattern[k - 1]]
        for k in flip:
            alt = list(pattern)
            alt[k - 1] = alt[k]
            candidates.append(alt)
            alt2 = list(pattern)
            alt2[k] = alt2[k - 1]
            candidates.append(alt2)
        for cand in candidates:
            overrides = {}
            for e in range(grid.n_elem):
                overrides[layout.z_rho[e]] = (cand[e], cand[e])
                overrides[layout.z_rho_dot[e]] = (zd_val, zd_val)
            try:
                s2, _ = simplex_solve(mip, override_bounds=overrides,
                                      warm=root_state, base_std=base_std,
                                      deadline=deadline)
            except Exception:
                continue
            if s2.status == "optimal":
                hint = s2.x
                break
    remaining = max(time_limit_s - (_time.monotonic() - t_start), 5.0)
    sol = branch_and_bound(mip, gap_tol=gap_tol, time_limit=remaining,
                           warm_incumbent=hint)
    if sol.status in ("infeasible", "unbounded"):
        raise RuntimeError(f"ramp optimization {sol.status}")
    grid = layout.grid
    times = grid.all_times()
    x = sol.x

    def chain_values(chain):
        out = [x[chain[0][0]]]
        for e in range(grid.n_elem):
            out.extend(x[chain[e][j]] for j in range(1, grid.pts + 1))
        return np.array(out)

    rho = chain_values(layout.rho)
    rd = chain_values(layout.rho_dot)
    nu_nodes = np.array([x[v] for v in layout.nu_nodes])
    nu = np.interp(times, np.arange(len(nu_nodes)) * grid.h, nu_nodes)
    target = env.rho_bounds[1] if direction == "up" else env.rho_bounds[0]
    ramp_time = _first_within(times, rho, target, rel=0.01)
    return RampResult(times, rho, rd, nu, ramp_time, sol.status, sol.gap)


def _first_within(times: np.ndarray, rho: np.ndarray, target: float,
                  rel: float) -> float | None:
    """First instant |rho - target| <= rel*target, interpolating between
    samples."""
    tol = rel * abs(target)
    dist = np.abs(rho - target)
    for k in range(len(times)):
        if dist[k] <= tol:
            if k == 0:
                return float(times[k])
            # linear interpolation of the crossing
            d0, d1 = dist[k - 1], dist[k]
            frac = (d0 - tol) / max(d0 - d1, 1e-12)
            return float(times[k - 1] + frac * (times[k] - times[k - 1]))
    return None


def schedule_to_csv(path, res: ScheduleResult, sp: ScheduleProblem,
                    provenance: str = "") -> None:
    grid_times = res.times
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# inputs_hash={provenance}\n")
        w = csv.writer(fh)
        w.writerow(["t", "rho", "rho_dot", "nu", "S", "q_dem_kw", "grid_kw"]
                   + [f"q_{u.name}_kw" for u in sp.components])
        # the first row is the initial state; demand columns start at the
        # first collocation point
        for k, t in enumerate(grid_times):
            if k == 0:
                extras = ["", ""] + [""] * len(sp.components)
            else:
                extras = [f"{res.q_dem_kw[k - 1]:.8g}", f"{res.grid_kw[k - 1]:.8g}"]
                extras += [f"{res.unit_heat_kw[u.name][k - 1]:.8g}"
                           for u in sp.components]
            w.writerow([f"{t:.8g}", f"{res.rho[k]:.10g}", f"{res.rho_dot[k]:.10g}",
                        f"{res.nu[k]:.10g}", f"{res.storage[k]:.10g}"] + extras)


def ramp_to_csv(path, res: RampResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rho", "rho_dot", "nu"])
        for k, t in enumerate(res.times):
            w.writerow([f"{t:.8g}", f"{res.rho[k]:.10g}",
                        f"{res.rho_dot[k]:.10g}", f"{res.nu[k]:.10g}"])


def read_schedule_csv(path) -> dict:
    with open(path, newline="") as fh:
        provenance = ""
        rows = []
        for line in fh:
            if line.startswith("#"):
                if "inputs_hash=" in line:
                    provenance = line.strip().split("inputs_hash=")[1]
                continue
            rows.append(line.rstrip("\n"))
    parsed = list(csv.reader(rows))
    header, body = parsed[0], parsed[1:]
    idx = {name: k for k, name in enumerate(header)}
    out = {name: np.array([float(r[idx[name]]) if r[idx[name]] else np.nan
                           for r in body])
           for name in ("t", "rho", "rho_dot", "nu", "S")}
    out["provenance"] = provenance
    return out
