"""Modified nodal analysis: device stamps and the damped Newton-Raphson solver.

Unknown ordering is non-ground nodes in first-appearance order, then one
branch current per voltage source, then one per inductor (shorted in DC).
The residual convention is f[node] = sum of currents leaving the node and
f[branch] = branch voltage equation, so a solution satisfies f(u) = 0.

Device models: linear R, V, I (C open / L short in DC), Shockley diode,
Ebers-Moll BJT (transport form) and the square-law level-1 MOSFET, all with
a limited exponential to keep stamps finite far from the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netlist import Element, ElementKind, Netlist

__all__ = [
    "VT",
    "MnaSystem",
    "NrResult",
    "newton_solve",
    "stamp_device",
    "diode_current",
    "bjt_currents",
    "mosfet_current",
]

# thermal voltage at the fixed nominal device temperature
VT = 0.025852

# exponent cap for the C1 linear continuation of exp()
_EXP_LIM = 80.0

# junction voltage update limit per NR iteration
_VSTEP_LIMIT = 0.5


def _limexp(x: float) -> tuple[float, float]:
    """exp(x) with a linear continuation above _EXP_LIM. Returns (value, d/dx)."""
    if x > _EXP_LIM:
        e = math.exp(_EXP_LIM)
        return e * (1.0 + x - _EXP_LIM), e
    e = math.exp(x)
    return e, e


def diode_current(v: float, i_s: float, n: float) -> tuple[float, float]:
    """Shockley current and small-signal conductance at junction voltage v."""
    e, de = _limexp(v / (n * VT))
    return i_s * (e - 1.0), i_s * de / (n * VT)


def bjt_currents(vbe: float, vbc: float, i_s: float, bf: float, br: float):
    """Ebers-Moll (transport form) terminal currents for an NPN at (vbe, vbc).

    Returns (ic, ib, and the four partials dic/dvbe, dic/dvbc, dib/dvbe,
    dib/dvbc); currents are positive into the collector/base terminals.
    """
    ef, def_ = _limexp(vbe / VT)
    er, der = _limexp(vbc / VT)
    ict = i_s * (ef - er)
    ibe = i_s / bf * (ef - 1.0)
    ibc = i_s / br * (er - 1.0)
    ic = ict - ibc
    ib = ibe + ibc
    dic_dvbe = i_s * def_ / VT
    dic_dvbc = (-i_s * der - i_s / br * der) / VT
    dib_dvbe = i_s / bf * def_ / VT
    dib_dvbc = i_s / br * der / VT
    return ic, ib, dic_dvbe, dic_dvbc, dib_dvbe, dib_dvbc


def mosfet_current(vgs: float, vds: float, vto: float, beta: float, lam: float):
    """Level-1 drain current and (gm, gds) for an NMOS with vds >= 0."""
    vgt = vgs - vto
    if vgt <= 0.0:
        return 0.0, 0.0, 0.0
    if vds < vgt:
        i_d = beta * (vgt * vds - 0.5 * vds * vds) * (1.0 + lam * vds)
        gm = beta * vds * (1.0 + lam * vds)
        gds = beta * (vgt - vds) * (1.0 + lam * vds) + beta * (
            vgt * vds - 0.5 * vds * vds
        ) * lam
    else:
        i_d = 0.5 * beta * vgt * vgt * (1.0 + lam * vds)
        gm = beta * vgt * (1.0 + lam * vds)
        gds = 0.5 * beta * vgt * vgt * lam
    return i_d, gm, gds


@dataclass
class NrResult:
    """Outcome of one Newton-Raphson solve."""

    converged: bool
    iterations: int
    solution: np.ndarray
    max_residual: float
    message: str = ""


class MnaSystem:
    """Index maps plus dense Jacobian/residual builders for one netlist."""

    def __init__(self, netlist: Netlist):
        self.netlist = netlist
        self.node_index: dict[str, int] = {}
        for node in netlist.nodes:
            if node != "0":
                self.node_index[node] = len(self.node_index)
        n_nodes = len(self.node_index)
        self.branch_index: dict[str, int] = {}
        for e in netlist.elements:
            if e.kind == ElementKind.VSOURCE:
                self.branch_index[e.name] = n_nodes + len(self.branch_index)
        for e in netlist.elements:
            if e.kind == ElementKind.INDUCTOR:
                self.branch_index[e.name] = n_nodes + len(self.branch_index)
        self.dimension = n_nodes + len(self.branch_index)
        self.jacobian = np.zeros((self.dimension, self.dimension))
        self.residual = np.zeros(self.dimension)
        # node-index pairs whose voltage step is limited during NR damping
        self.junction_pairs: list[tuple[int, int]] = []
        for e in netlist.elements:
            if e.kind == ElementKind.DIODE:
                a, c = (self._idx(t) for t in e.terminals)
                self.junction_pairs.append((a, c))
            elif e.kind == ElementKind.BJT:
                c, b, em = (self._idx(t) for t in e.terminals)
                self.junction_pairs.append((b, em))
                self.junction_pairs.append((b, c))
            elif e.kind == ElementKind.MOSFET:
                d, g, s = (self._idx(t) for t in e.terminals)
                self.junction_pairs.append((g, s))
                self.junction_pairs.append((d, s))

    def _idx(self, node: str) -> int:
        return -1 if node == "0" else self.node_index[node]

    # -- builder primitives -------------------------------------------------

    def clear(self) -> None:
        self.jacobian.fill(0.0)
        self.residual.fill(0.0)

    def add_j(self, row: int, col: int, value: float) -> None:
        if row >= 0 and col >= 0:
            self.jacobian[row, col] += value

    def add_f(self, row: int, value: float) -> None:
        if row >= 0:
            self.residual[row] += value

    def volt(self, u: np.ndarray, node_idx: int) -> float:
        return 0.0 if node_idx < 0 else u[node_idx]

    def stamp_conductance(self, a: int, b: int, g: float, u: np.ndarray) -> None:
        v = self.volt(u, a) - self.volt(u, b)
        self.add_j(a, a, g)
        self.add_j(a, b, -g)
        self.add_j(b, a, -g)
        self.add_j(b, b, g)
        self.add_f(a, g * v)
        self.add_f(b, -g * v)

    def stamp_current(self, a: int, b: int, i: float) -> None:
        """Current i flowing from node a to node b through a device."""
        self.add_f(a, i)
        self.add_f(b, -i)

    # -- assembly -----------------------------------------------------------

    def assemble(
        self,
        u: np.ndarray,
        vsource_mods: dict[str, tuple[float, float]] | None = None,
        extra_conductances: list[tuple[int, int, float, float]] | None = None,
    ) -> None:
        """Fill jacobian/residual at state u.

        ``vsource_mods`` maps a source name to (r_eq, v_eq) replacing its
        branch equation with  V(p)-V(n) - r_eq*I - v_eq = 0.
        ``extra_conductances`` is a list of (a, b, g, i0) Norton stamps
        carrying current g*(V(a)-V(b)) + i0 from a to b.
        """
        self.clear()
        for element in self.netlist.elements:
            stamp_device(element, self.netlist.model_cards, u, self, vsource_mods)
        if extra_conductances:
            for a, b, g, i0 in extra_conductances:
                self.stamp_conductance(a, b, g, u)
                self.stamp_current(a, b, i0)


def stamp_device(
    element: Element,
    model_cards: dict,
    state: np.ndarray,
    system: MnaSystem,
    vsource_mods: dict[str, tuple[float, float]] | None = None,
) -> MnaSystem:
    """Add the linearized companion stamp of one device at ``state``.

    Raises KeyError for an unresolvable model card and ValueError if a
    stamp value comes out non-finite.
    """
    kind = element.kind
    idx = [system._idx(t) for t in element.terminals]
    if kind == ElementKind.RESISTOR:
        system.stamp_conductance(idx[0], idx[1], 1.0 / element.value, state)
    elif kind == ElementKind.CAPACITOR:
        pass  # open in DC
    elif kind == ElementKind.ISOURCE:
        system.stamp_current(idx[0], idx[1], element.value)
    elif kind in (ElementKind.VSOURCE, ElementKind.INDUCTOR):
        p, n = idx
        k = system.branch_index[element.name]
        i_br = state[k]
        system.add_f(p, i_br)
        system.add_f(n, -i_br)
        system.add_j(p, k, 1.0)
        system.add_j(n, k, -1.0)
        system.add_j(k, p, 1.0)
        system.add_j(k, n, -1.0)
        e_val = element.value if kind == ElementKind.VSOURCE else 0.0
        mod = vsource_mods.get(element.name) if vsource_mods else None
        if mod is not None:
            r_eq, v_eq = mod
            system.add_j(k, k, -r_eq)
            system.add_f(
                k, system.volt(state, p) - system.volt(state, n) - r_eq * i_br - v_eq
            )
        else:
            system.add_f(k, system.volt(state, p) - system.volt(state, n) - e_val)
    elif kind == ElementKind.DIODE:
        card = model_cards[element.model]
        i_s = float(card.get("is", 1e-14))
        n_em = float(card.get("n", 1.0))
        a, c = idx
        v = system.volt(state, a) - system.volt(state, c)
        i_d, g_d = diode_current(v, i_s, n_em)
        if not (math.isfinite(i_d) and math.isfinite(g_d)):
            raise ValueError(f"{element.name}: non-finite diode stamp at V={v}")
        system.stamp_conductance(a, c, g_d, state)
        system.stamp_current(a, c, i_d - g_d * v)
    elif kind == ElementKind.BJT:
        card = model_cards[element.model]
        i_s = float(card.get("is", 1e-16))
        bf = float(card.get("bf", 100.0))
        br = float(card.get("br", 1.0))
        sign = -1.0 if card["type"] == "pnp" else 1.0
        c, b, e = idx
        vbe = sign * (system.volt(state, b) - system.volt(state, e))
        vbc = sign * (system.volt(state, b) - system.volt(state, c))
        ic, ib, dic_dvbe, dic_dvbc, dib_dvbe, dib_dvbc = bjt_currents(
            vbe, vbc, i_s, bf, br
        )
        if not all(
            math.isfinite(x)
            for x in (ic, ib, dic_dvbe, dic_dvbc, dib_dvbe, dib_dvbc)
        ):
            raise ValueError(f"{element.name}: non-finite BJT stamp")
        # currents into terminals in original polarity
        system.add_f(c, sign * ic)
        system.add_f(b, sign * ib)
        system.add_f(e, -sign * (ic + ib))
        # d(vbe)/d(Vb)=sign etc; the sign factors cancel pairwise
        for row, dvbe, dvbc in (
            (c, dic_dvbe, dic_dvbc),
            (b, dib_dvbe, dib_dvbc),
            (e, -(dic_dvbe + dib_dvbe), -(dic_dvbc + dib_dvbc)),
        ):
            system.add_j(row, b, dvbe + dvbc)
            system.add_j(row, e, -dvbe)
            system.add_j(row, c, -dvbc)
    elif kind == ElementKind.MOSFET:
        card = model_cards[element.model]
        vto = float(card.get("vto", 1.0))
        kp = float(card.get("kp", 2e-5))
        lam = float(card.get("lambda", 0.0))
        w = float(card.get("w", 1.0))
        l_ = float(card.get("l", 1.0))
        beta = kp * w / l_
        sign = -1.0 if card["type"] == "pmos" else 1.0
        d, g, s = idx
        vgs = sign * (system.volt(state, g) - system.volt(state, s))
        vds = sign * (system.volt(state, d) - system.volt(state, s))
        flip = vds < 0.0
        if flip:  # symmetric device: exchange drain/source roles
            vgs = vgs - vds
            vds = -vds
        i_d, gm, gds = mosfet_current(vgs, vds, vto, beta, lam)
        if not all(math.isfinite(x) for x in (i_d, gm, gds)):
            raise ValueError(f"{element.name}: non-finite MOSFET stamp")
        dn, sn = (s, d) if flip else (d, s)
        gn = g
        # current i_d flows dn -> sn; partials w.r.t. (Vg, Vdn, Vsn)
        system.add_f(dn, sign * i_d)
        system.add_f(sn, -sign * i_d)
        di_dvg = gm
        di_dvd = gds
        di_dvs = -(gm + gds)
        for row, fac in ((dn, 1.0), (sn, -1.0)):
            system.add_j(row, gn, fac * di_dvg)
            system.add_j(row, dn, fac * di_dvd)
            system.add_j(row, sn, fac * di_dvs)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unsupported element kind {kind}")
    return system


def _damp_step(du: np.ndarray, junction_pairs: list[tuple[int, int]]) -> np.ndarray:
    if not junction_pairs:
        return du
    worst = 0.0
    for a, b in junction_pairs:
        va = du[a] if a >= 0 else 0.0
        vb = du[b] if b >= 0 else 0.0
        worst = max(worst, abs(va - vb))
    if worst > _VSTEP_LIMIT:
        return du * (_VSTEP_LIMIT / worst)
    return du


def newton_iterate(
    system: MnaSystem,
    assemble,
    u0: np.ndarray,
    tol_residual: float,
    tol_step: float,
    max_iter: int,
) -> NrResult:
    """Damped NR loop over an arbitrary assembly closure.

    ``assemble(u)`` must fill system.jacobian/system.residual at u.
    Convergence requires max|f| <= tol_residual and a candidate Newton step
    with max|du| <= tol_step; the final small step is applied but not
    counted, so a linear system converges in exactly one counted iteration.
    """
    u = np.array(u0, dtype=float)
    iterations = 0
    while True:
        try:
            assemble(u)
        except (ValueError, FloatingPointError) as exc:
            return NrResult(False, iterations, u, math.inf, f"assembly failed: {exc}")
        f = system.residual
        max_f = float(np.max(np.abs(f))) if f.size else 0.0
        if not math.isfinite(max_f):
            return NrResult(False, iterations, u, math.inf, "non-finite residual")
        try:
            du = np.linalg.solve(system.jacobian, -f)
        except np.linalg.LinAlgError:
            return NrResult(False, iterations, u, max_f, "singular jacobian")
        if not np.all(np.isfinite(du)):
            return NrResult(False, iterations, u, max_f, "non-finite step")
        max_du = float(np.max(np.abs(du))) if du.size else 0.0
        if max_f <= tol_residual and max_du <= tol_step:
            return NrResult(True, iterations, u + du, max_f)
        if iterations >= max_iter:
            return NrResult(False, iterations, u, max_f, "iteration limit")
        u = u + _damp_step(du, system.junction_pairs)
        iterations += 1


def newton_solve(
    netlist: Netlist,
    u0: np.ndarray | None = None,
    tol_residual: float = 1e-9,
    tol_step: float = 1e-6,
    max_iter: int = 200,
) -> NrResult:
    """Solve the DC operating point of ``netlist`` directly with NR."""
    if tol_residual <= 0 or tol_step <= 0:
        raise ValueError("tolerances must be positive")
    system = MnaSystem(netlist)
    if system.dimension < 1:
        raise ValueError("system has no unknowns")
    if u0 is None:
        u0 = np.zeros(system.dimension)
    if len(u0) != system.dimension:
        raise ValueError(f"u0 must have length {system.dimension}")
    return newton_iterate(
        system, system.assemble, u0, tol_residual, tol_step, max_iter
    )


def node_voltages(system: MnaSystem, solution: np.ndarray) -> dict[str, float]:
    """Map non-ground node names to solved voltages."""
    return {name: float(solution[i]) for name, i in system.node_index.items()}
