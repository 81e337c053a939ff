"""Compound-element pseudo-transient continuation for DC operating points.

The solver inserts two kinds of compound branches into the circuit:

* a GVL branch (constant inductor in parallel with a ramped conductance
  G(t) = G0*exp(t/tau)) in series with every independent voltage source,
* an RVC branch (constant capacitor in series with a ramped resistor
  R(t) = R0*exp(t/tau)) in parallel with every independent current source
  and from every distinct transistor terminal node to ground.

Each pseudo-time step discretizes the branch ODEs with backward Euler and
stamps the resulting Norton/Thevenin companions, so the Jacobian keeps the
original MNA dimension. Integration continues until max|du|/h falls below
the steady-state tolerance; the steady state solves the original circuit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .mna import MnaSystem, newton_iterate
from .netlist import ElementKind, Netlist

__all__ = [
    "PARAM_MIN",
    "PARAM_MAX",
    "SolverParams",
    "CeptaLimits",
    "PseudoBranchState",
    "SimulationResult",
    "insert_pseudo_elements",
    "ramp_value",
    "rvc_companion",
    "gvl_companion",
    "run_cepta",
]

PARAM_MIN = 1e-7
PARAM_MAX = 1e7

# ramped values above this are treated as fully ramped (exact open/short)
RAMP_CAP = 1e30


@dataclass(frozen=True)
class SolverParams:
    """The four tunable pseudo-element values plus the ramp time constant."""

    c_pseudo: float
    l_pseudo: float
    r0: float
    g0: float
    tau: float = 1.0

    def __post_init__(self):
        for name in ("c_pseudo", "l_pseudo", "r0", "g0"):
            v = getattr(self, name)
            if not (PARAM_MIN <= v <= PARAM_MAX):
                raise ValueError(
                    f"{name}={v} outside [{PARAM_MIN}, {PARAM_MAX}]"
                )
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def as_vector(self) -> np.ndarray:
        return np.array([self.c_pseudo, self.l_pseudo, self.r0, self.g0])

    @classmethod
    def from_vector(cls, x, tau: float = 1.0) -> "SolverParams":
        c, l_, r0, g0 = (float(v) for v in x)
        return cls(c, l_, r0, g0, tau)


@dataclass
class CeptaLimits:
    """Budgets and tolerances for one pseudo-transient run."""

    max_total_nr: int = 5000
    max_time_steps: int = 400
    steady_tol: float = 1e-12
    nr_per_step: int = 50
    max_rejects: int = 15
    tol_residual: float = 1e-9
    tol_step: float = 1e-6
    h_growth: float = 1.5
    h0_over_tau: float = 0.01
    hmax_over_tau: float = 10.0


@dataclass
class PseudoBranchState:
    """Per-branch memory (V_CB, I_CB) carried between accepted steps."""

    kind: str  # "rvc" | "gvl"
    v_cb: float = 0.0
    i_cb: float = 0.0
    # rvc: node index pair; gvl: source name + source value
    nodes: tuple[int, int] | None = None
    source: str | None = None
    e_source: float = 0.0


@dataclass
class AugmentedCircuit:
    """A netlist plus its pseudo-element insertion sites."""

    netlist: Netlist
    system: MnaSystem
    branches: list[PseudoBranchState] = field(default_factory=list)

    @property
    def rvc_branches(self) -> list[PseudoBranchState]:
        return [b for b in self.branches if b.kind == "rvc"]

    @property
    def gvl_branches(self) -> list[PseudoBranchState]:
        return [b for b in self.branches if b.kind == "gvl"]


@dataclass
class SimulationResult:
    """Outcome of a pseudo-transient run; iterations is the BO objective."""

    converged: bool
    total_nr_iterations: int
    time_steps: int
    dc_solution: np.ndarray
    final_udot: float
    wall_time: float
    node_order: tuple[str, ...] = ()
    message: str = ""

    def voltages(self) -> dict[str, float]:
        return {
            name: float(self.dc_solution[i])
            for i, name in enumerate(self.node_order)
        }


def insert_pseudo_elements(
    netlist: Netlist, params: SolverParams
) -> AugmentedCircuit:
    """Attach GVL/RVC branches at their insertion sites.

    One GVL per voltage source (in series), one RVC across each current
    source, and one RVC from every distinct non-ground transistor terminal
    node to ground. No MNA unknowns are added.
    """
    system = MnaSystem(netlist)
    aug = AugmentedCircuit(netlist, system)
    for e in netlist.elements:
        if e.kind == ElementKind.VSOURCE:
            aug.branches.append(
                PseudoBranchState("gvl", source=e.name, e_source=e.value)
            )
        elif e.kind == ElementKind.ISOURCE:
            a, b = (system._idx(t) for t in e.terminals)
            aug.branches.append(PseudoBranchState("rvc", nodes=(a, b)))
    seen: set[int] = set()
    for e in netlist.elements:
        if e.kind in (ElementKind.BJT, ElementKind.MOSFET):
            for t in e.terminals:
                i = system._idx(t)
                if i >= 0 and i not in seen:
                    seen.add(i)
                    aug.branches.append(PseudoBranchState("rvc", nodes=(i, -1)))
    return aug


def ramp_value(v0: float, tau: float, t: float) -> float:
    """v0 * exp(t/tau), saturating at RAMP_CAP to avoid overflow."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    exponent = t / tau
    if exponent > 690 or v0 * math.exp(min(exponent, 690.0)) > RAMP_CAP:
        return RAMP_CAP
    return v0 * math.exp(exponent)


def rvc_companion(
    h: float,
    c: float,
    r_next: float,
    r_prev: float,
    v_prev: float,
    i_prev: float,
) -> tuple[float, float]:
    """Backward-Euler Norton companion of an RVC branch.

    Returns (g_eq, i_eq) such that I_CB(n+1) = g_eq*V_CB(n+1) + i_eq.
    """
    g_eq = 1.0 / (h / c + r_next)
    i_eq = g_eq * (i_prev * r_prev - v_prev)
    return g_eq, i_eq


def gvl_companion(
    h: float,
    l_: float,
    g_next: float,
    g_prev: float,
    v_prev: float,
    i_prev: float,
    e: float,
) -> tuple[float, float]:
    """Backward-Euler Thevenin companion of a GVL branch in series with E.

    Returns (r_eq, v_eq) such that V_CB(n+1) = r_eq*I_CB(n+1) + v_eq.
    """
    r_eq = 1.0 / (h / l_ + g_next)
    v_eq = r_eq * (-i_prev + g_prev * (v_prev - e)) + e
    return r_eq, v_eq


def _companion_stamps(
    aug: AugmentedCircuit,
    params: SolverParams,
    h: float,
    t_prev: float,
    t_next: float,
):
    """Build per-branch companion stamps for the step to t_next.

    Returns (vsource_mods, extra_conductances, stamp_by_branch) or None if
    any stamp overflows; stamp_by_branch[i] is None for a fully ramped
    (exact open) RVC branch.
    """
    r_next = ramp_value(params.r0, params.tau, t_next)
    r_prev = ramp_value(params.r0, params.tau, t_prev)
    g_next = ramp_value(params.g0, params.tau, t_next)
    g_prev = ramp_value(params.g0, params.tau, t_prev)
    mods: dict[str, tuple[float, float]] = {}
    extras: list[tuple[int, int, float, float]] = []
    stamp_by_branch: list[tuple[float, float] | None] = []
    for br in aug.branches:
        if br.kind == "gvl":
            if g_next >= RAMP_CAP:
                stamp = (0.0, br.e_source)  # exact ideal source
            else:
                stamp = gvl_companion(
                    h, params.l_pseudo, g_next, g_prev, br.v_cb, br.i_cb,
                    br.e_source,
                )
                if not all(math.isfinite(v) for v in stamp):
                    return None
            mods[br.source] = stamp
            stamp_by_branch.append(stamp)
        else:
            if r_next >= RAMP_CAP:
                stamp_by_branch.append(None)  # exact open circuit
                continue
            stamp = rvc_companion(
                h, params.c_pseudo, r_next, r_prev, br.v_cb, br.i_cb
            )
            if not all(math.isfinite(v) for v in stamp):
                return None
            a, b = br.nodes
            extras.append((a, b, stamp[0], stamp[1]))
            stamp_by_branch.append(stamp)
    return mods, extras, stamp_by_branch


def _update_branch_states(
    aug: AugmentedCircuit,
    u: np.ndarray,
    stamp_by_branch: list[tuple[float, float] | None],
) -> None:
    sysm = aug.system
    for br, stamp in zip(aug.branches, stamp_by_branch):
        if br.kind == "gvl":
            k = sysm.branch_index[br.source]
            br.i_cb = float(u[k])
            r_eq, v_eq = stamp
            br.v_cb = r_eq * br.i_cb + v_eq
        else:
            a, b = br.nodes
            br.v_cb = sysm.volt(u, a) - sysm.volt(u, b)
            if stamp is None:  # fully ramped: open branch
                br.i_cb = 0.0
            else:
                g_eq, i_eq = stamp
                br.i_cb = g_eq * br.v_cb + i_eq


def run_cepta(
    netlist: Netlist,
    params: SolverParams,
    limits: CeptaLimits | None = None,
) -> SimulationResult:
    """Integrate the pseudo-transient from u0 = 0 until steady state.

    Non-convergence (any budget or step-control limit) is reported through
    ``converged=False``, never as an exception. Every NR iteration
    performed, including those of rejected steps and of the final
    fully-ramped polish solve, is accumulated into total_nr_iterations.
    """
    if limits is None:
        limits = CeptaLimits()
    t_start = time.perf_counter()
    aug = insert_pseudo_elements(netlist, params)
    sysm = aug.system
    node_order = tuple(sysm.node_index)
    u = np.zeros(sysm.dimension)
    total_nr = 0
    steps = 0
    t = 0.0
    h = limits.h0_over_tau * params.tau
    h_max = limits.hmax_over_tau * params.tau
    h_min = 1e-12 * params.tau
    rejects = 0
    udot = math.inf

    def result(converged: bool, msg: str, sol: np.ndarray) -> SimulationResult:
        return SimulationResult(
            converged,
            total_nr,
            steps,
            sol,
            udot,
            time.perf_counter() - t_start,
            node_order,
            msg,
        )

    while True:
        if total_nr >= limits.max_total_nr:
            return result(False, "NR budget exhausted", u)
        if steps >= limits.max_time_steps:
            return result(False, "time-step limit reached", u)
        t_next = t + h
        stamps = _companion_stamps(aug, params, h, t, t_next)
        if stamps is None:
            nr_ok = False
        else:
            mods, extras, stamp_by_branch = stamps
            budget = min(limits.nr_per_step, limits.max_total_nr - total_nr)
            res = newton_iterate(
                sysm,
                lambda uu: sysm.assemble(uu, mods, extras),
                u,
                limits.tol_residual,
                limits.tol_step,
                budget,
            )
            total_nr += res.iterations
            nr_ok = res.converged
        if not nr_ok:
            rejects += 1
            h *= 0.5
            if rejects > limits.max_rejects or h < h_min:
                return result(False, "step-size control failed", u)
            continue
        rejects = 0
        u_new = res.solution
        delta = float(np.max(np.abs(u_new - u))) if u.size else 0.0
        _update_branch_states(aug, u_new, stamp_by_branch)
        u = u_new
        t = t_next
        steps += 1
        udot = delta / h
        if udot < limits.steady_tol:
            # final h->infinity step: solve the exact original system
            budget = min(limits.nr_per_step, limits.max_total_nr - total_nr)
            exact_mods = {
                br.source: (0.0, br.e_source) for br in aug.gvl_branches
            }
            polish = newton_iterate(
                sysm,
                lambda uu: sysm.assemble(uu, exact_mods, None),
                u,
                limits.tol_residual,
                limits.tol_step,
                budget,
            )
            total_nr += polish.iterations
            if polish.converged:
                return result(True, "steady state", polish.solution)
            return result(False, "steady state failed final NR check", u)
        h = min(h * limits.h_growth, h_max)
