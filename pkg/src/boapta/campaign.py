"""Optimization campaigns: cold start, Monte-Carlo acceleration, baselines.

Two loops drive the solver-parameter search. The cold-start loop runs one
default-parameter execution per circuit and then, for each epoch and each
circuit, retrains the surrogate, proposes parameters through the
acquisition optimizer and executes the solver. The Monte-Carlo loop tunes
parameters while streaming perturbed netlists: proposed runs are halted at
twice the incumbent cost (penalty 9999 on breach, incumbent re-execution
keeps the sample), and the search freezes onto the incumbent after 20
improvement-free iterations.

Every solver execution is persisted as a TrialRecord (JSON-lines), which
the reporting helpers aggregate into best-record curves and speed-ups.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig, optimize_acquisition
from .cepta import CeptaLimits, SimulationResult, SolverParams, run_cepta
from .netlist import Netlist, extract_features, perturb_netlist
from .surrogate import (
    PENALTY_Y,
    Dataset,
    SurrogateModel,
    TrainConfig,
    train_surrogate,
)

__all__ = [
    "TrialRecord",
    "CampaignConfig",
    "CampaignState",
    "McReport",
    "SpeedupReport",
    "default_params",
    "cold_start",
    "random_search",
    "mc_accelerate",
    "constant_params_mc",
    "speedup_report",
    "write_records",
    "read_records",
]

DEFAULT_PARAMS = (1e-3, 1e-3, 1.0, 1.0, 1.0)
FREEZE_PATIENCE = 20
INCUMBENT_BUDGET_FACTOR = 4


@dataclass(frozen=True)
class TrialRecord:
    """One solver execution inside a campaign."""

    circuit_id: str
    x: tuple[float, float, float, float]
    tau: float
    y: float
    epoch: int
    wall_time: float
    converged: bool
    kind: str  # default | bo | random | mc | mc_incumbent

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        d["x"] = tuple(d["x"])
        return cls(**d)


@dataclass
class CampaignConfig:
    """Everything a campaign needs besides the circuits themselves."""

    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    limits: CeptaLimits = field(default_factory=CeptaLimits)
    tau: float = 1.0
    defaults: SolverParams | None = None


@dataclass
class CampaignState:
    """Mutable campaign bookkeeping shared by the loops."""

    model: SurrogateModel | None = None
    records: list[TrialRecord] = field(default_factory=list)
    best_per_circuit: dict[str, tuple[SolverParams, float]] = field(
        default_factory=dict
    )
    frozen: bool = False


def default_params(config: CampaignConfig | None = None) -> SolverParams:
    """The shipped default pseudo-element values, unless overridden."""
    if config is not None and config.defaults is not None:
        return config.defaults
    base = SolverParams(*DEFAULT_PARAMS)
    if config is not None and config.tau != base.tau:
        base = SolverParams(
            base.c_pseudo, base.l_pseudo, base.r0, base.g0, config.tau
        )
    return base


def _objective(result: SimulationResult) -> float:
    if not result.converged:
        return PENALTY_Y
    return float(max(1, result.total_nr_iterations))


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng([seed, *path])


def _record(state, data, cid, xi, params, result, epoch, kind):
    y = _objective(result)
    rec = TrialRecord(
        circuit_id=cid,
        x=tuple(params.as_vector().tolist()),
        tau=params.tau,
        y=y,
        epoch=epoch,
        wall_time=result.wall_time,
        converged=result.converged,
        kind=kind,
    )
    state.records.append(rec)
    data.append(params.as_vector(), xi, y, cid)
    best = state.best_per_circuit.get(cid)
    if result.converged and (best is None or y < best[1]):
        state.best_per_circuit[cid] = (params, y)
    return y


def cold_start(
    circuits: list[tuple[str, Netlist]],
    n_epoch: int,
    config: CampaignConfig | None = None,
    run_fn=run_cepta,
    warm_model: SurrogateModel | None = None,
) -> tuple[list[TrialRecord], SurrogateModel | None]:
    """Batch optimization over a circuit set with no prior data.

    Runs the default parameters once per circuit, then n_epoch rounds of
    surrogate retraining, acquisition optimization and solver execution per
    circuit. Non-convergent runs enter the data with the penalty objective.
    A checkpointed model may be passed to seed the surrogate (its data rows
    are replayed into the campaign dataset).
    """
    if not circuits:
        raise ValueError("need at least one circuit")
    if n_epoch < 1:
        raise ValueError("n_epoch must be >= 1")
    config = config or CampaignConfig()
    state = CampaignState()
    data = Dataset()
    if warm_model is not None:
        state.model = warm_model
        for x, xi, y, cid in zip(
            warm_model.data.x,
            warm_model.data.xi,
            warm_model.data.y,
            warm_model.data.circuit_ids,
        ):
            data.append(x, xi, y, cid)
    features = {cid: extract_features(nl).as_array() for cid, nl in circuits}

    base = default_params(config)
    for cid, nl in circuits:
        res = run_fn(nl, base, config.limits)
        _record(state, data, cid, features[cid], base, res, 0, "default")

    for epoch in range(1, n_epoch + 1):
        for ci, (cid, nl) in enumerate(circuits):
            if len(data) >= 2:
                state.model = train_surrogate(
                    data,
                    config.train,
                    _rng(config.seed, epoch, ci, 0),
                    init_model=state.model,
                )
            best = state.best_per_circuit.get(cid)
            if state.model is not None:
                params = optimize_acquisition(
                    state.model,
                    features[cid],
                    config.acquisition,
                    _rng(config.seed, epoch, ci, 1),
                    y_best=best[1] if best else None,
                    tau=config.tau,
                    warm_x=best[0].as_vector() if best else None,
                )
            else:
                params = SolverParams(1.0, 1.0, 1.0, 1.0, config.tau)
            res = run_fn(nl, params, config.limits)
            _record(state, data, cid, features[cid], params, res, epoch, "bo")

    # the returned surrogate reflects every collected observation
    if len(data) >= 2:
        state.model = train_surrogate(
            data,
            config.train,
            _rng(config.seed, n_epoch + 1, 0, 0),
            init_model=state.model,
        )
    return state.records, state.model


def random_search(
    circuits: list[tuple[str, Netlist]],
    n_epoch: int,
    config: CampaignConfig | None = None,
    run_fn=run_cepta,
) -> list[TrialRecord]:
    """Baseline with the same loop shape: log-uniform parameter draws."""
    if not circuits:
        raise ValueError("need at least one circuit")
    if n_epoch < 1:
        raise ValueError("n_epoch must be >= 1")
    config = config or CampaignConfig()
    state = CampaignState()
    data = Dataset()
    features = {cid: extract_features(nl).as_array() for cid, nl in circuits}

    base = default_params(config)
    for cid, nl in circuits:
        res = run_fn(nl, base, config.limits)
        _record(state, data, cid, features[cid], base, res, 0, "default")

    for epoch in range(1, n_epoch + 1):
        for ci, (cid, nl) in enumerate(circuits):
            rng = _rng(config.seed, epoch, ci, 2)
            params = SolverParams.from_vector(
                10.0 ** rng.uniform(-7.0, 7.0, 4), config.tau
            )
            res = run_fn(nl, params, config.limits)
            _record(state, data, cid, features[cid], params, res, epoch, "random")
    return state.records


def _mc_netlist(base: Netlist, variation: float, seed: int, index: int) -> Netlist:
    draw_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    return perturb_netlist(base, variation, draw_seed)


@dataclass
class McSample:
    index: int
    y: float
    converged: bool
    used_incumbent: bool


@dataclass
class McReport:
    """Monte-Carlo campaign outcome (#NC, mean, STD plus bookkeeping)."""

    variation: float
    n_samples: int
    seed: int
    samples: list[McSample]
    nc_count: int
    mean_iterations: float
    std_iterations: float
    total_solver_iterations: float
    frozen_at: int | None
    best_params: SolverParams
    best_y: float
    records: list[TrialRecord]

    def to_json(self) -> dict:
        return {
            "variation": self.variation,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "nc_count": self.nc_count,
            "mean_iterations": self.mean_iterations,
            "std_iterations": self.std_iterations,
            "total_solver_iterations": self.total_solver_iterations,
            "frozen_at": self.frozen_at,
            "best_params": self.best_params.as_vector().tolist(),
            "best_y": self.best_y,
            "samples": [dataclasses.asdict(s) for s in self.samples],
        }


def _finish_mc(variation, n_mc, config, samples, state, total_cost, frozen_at, y_star, x_star):
    ys = [s.y for s in samples if s.converged]
    return McReport(
        variation=variation,
        n_samples=n_mc,
        seed=config.seed,
        samples=samples,
        nc_count=sum(1 for s in samples if not s.converged),
        mean_iterations=float(np.mean(ys)) if ys else math.nan,
        std_iterations=float(np.std(ys)) if ys else math.nan,
        total_solver_iterations=float(total_cost),
        frozen_at=frozen_at,
        best_params=x_star,
        best_y=y_star,
        records=state.records,
    )


def mc_accelerate(
    base: Netlist,
    variation: float,
    n_mc: int,
    config: CampaignConfig | None = None,
    warm_model: SurrogateModel | None = None,
    run_fn=run_cepta,
) -> McReport:
    """Monte-Carlo analysis with in-the-loop parameter optimization.

    Sample 1 runs the default parameters. Every later sample runs the
    BO-proposed parameters under a 2*y_star iteration budget; on breach the
    penalty objective is recorded and the incumbent re-runs the same
    netlist (budget 4*y_star) so the Monte-Carlo draw is never lost. After
    20 improvement-free iterations the search freezes onto the incumbent.
    A warm-start surrogate seeds both its parameters and its data.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    config = config or CampaignConfig()
    state = CampaignState()
    data = Dataset()
    if warm_model is not None:
        state.model = warm_model
        for x, xi, y, cid in zip(
            warm_model.data.x,
            warm_model.data.xi,
            warm_model.data.y,
            warm_model.data.circuit_ids,
        ):
            data.append(x, xi, y, cid)
    xi_feat = extract_features(base).as_array()
    cid = "mc"
    cap = config.limits.max_total_nr

    samples: list[McSample] = []
    total_cost = 0.0
    frozen_at: int | None = None

    x_star = default_params(config)
    netlist1 = _mc_netlist(base, variation, config.seed, 1)
    res = run_fn(netlist1, x_star, config.limits)
    y = _record(state, data, cid, xi_feat, x_star, res, 1, "mc")
    total_cost += res.total_nr_iterations
    y_star = y
    samples.append(McSample(1, y, res.converged, False))

    streak = 0
    for i in range(2, n_mc + 1):
        bo_iter = i - 1  # optimization-loop index; sample 1 was initialization
        if not state.frozen and streak >= FREEZE_PATIENCE:
            state.frozen = True
            frozen_at = bo_iter
        netlist_i = _mc_netlist(base, variation, config.seed, i)
        y_star_before = y_star

        if not state.frozen and len(data) >= 2:
            state.model = train_surrogate(
                data, config.train, _rng(config.seed, i, 0), init_model=state.model
            )
        if state.frozen or state.model is None:
            params = x_star
        else:
            params = optimize_acquisition(
                state.model,
                xi_feat,
                config.acquisition,
                _rng(config.seed, i, 1),
                y_best=y_star if y_star < PENALTY_Y else None,
                tau=config.tau,
                warm_x=x_star.as_vector(),
            )

        if y_star < PENALTY_Y:
            budget = min(cap, max(1, int(math.ceil(2.0 * y_star))))
        else:
            budget = cap
        res = run_fn(netlist_i, params, replace(config.limits, max_total_nr=budget))
        y = _record(state, data, cid, xi_feat, params, res, i, "mc")
        total_cost += res.total_nr_iterations

        if res.converged:
            samples.append(McSample(i, y, True, False))
            if y < y_star:
                y_star, x_star = y, params
        else:
            # penalty recorded; re-execute the incumbent on the same draw
            inc_budget = min(
                cap,
                max(1, int(math.ceil(INCUMBENT_BUDGET_FACTOR * y_star)))
                if y_star < PENALTY_Y
                else cap,
            )
            res2 = run_fn(
                netlist_i, x_star, replace(config.limits, max_total_nr=inc_budget)
            )
            y2 = _record(state, data, cid, xi_feat, x_star, res2, i, "mc_incumbent")
            total_cost += res2.total_nr_iterations
            samples.append(McSample(i, y2, res2.converged, True))
            if res2.converged and y2 < y_star:
                y_star = y2
        streak = 0 if y_star < y_star_before else streak + 1

    return _finish_mc(
        variation, n_mc, config, samples, state, total_cost, frozen_at, y_star, x_star
    )


def constant_params_mc(
    base: Netlist,
    variation: float,
    n_mc: int,
    config: CampaignConfig | None = None,
    params: SolverParams | None = None,
    run_fn=run_cepta,
) -> McReport:
    """Baseline arm: identical netlist draws, one fixed parameter set."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    config = config or CampaignConfig()
    params = params or default_params(config)
    state = CampaignState()
    data = Dataset()
    xi_feat = extract_features(base).as_array()
    samples: list[McSample] = []
    total_cost = 0.0
    best_y = PENALTY_Y
    for i in range(1, n_mc + 1):
        netlist_i = _mc_netlist(base, variation, config.seed, i)
        res = run_fn(netlist_i, params, config.limits)
        y = _record(state, data, "mc", xi_feat, params, res, i, "mc")
        total_cost += res.total_nr_iterations
        samples.append(McSample(i, y, res.converged, False))
        if res.converged and y < best_y:
            best_y = y
    return _finish_mc(
        variation, n_mc, config, samples, state, total_cost, None, params, best_y
    )


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

@dataclass
class SpeedupReport:
    """Per-circuit best-record speed-ups of a method over a baseline."""

    per_circuit: dict[str, float]
    excluded: list[str]
    mean_speedup: float
    max_speedup: float
    curves_baseline: dict[str, list[float]]
    curves_method: dict[str, list[float]]

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["circuit", "speedup", "excluded"])
            for cid, s in sorted(self.per_circuit.items()):
                w.writerow([cid, f"{s:.6g}", ""])
            for cid in self.excluded:
                w.writerow([cid, "", "non-convergent"])
            w.writerow([])
            w.writerow(["mean_speedup", f"{self.mean_speedup:.6g}"])
            w.writerow(["max_speedup", f"{self.max_speedup:.6g}"])

    def curves_to_csv(self, path) -> None:
        import csv

        circuits = sorted(self.curves_method)
        n_epochs = max(
            (len(v) for v in self.curves_method.values()), default=0
        )
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = ["epoch"]
            for cid in circuits:
                header += [f"{cid}_baseline", f"{cid}_method"]
            w.writerow(header)
            for e in range(n_epochs):
                row = [e]
                for cid in circuits:
                    cb = self.curves_baseline.get(cid, [])
                    cm = self.curves_method.get(cid, [])
                    row.append(f"{cb[min(e, len(cb) - 1)]:.6g}" if cb else "")
                    row.append(f"{cm[min(e, len(cm) - 1)]:.6g}" if cm else "")
                w.writerow(row)

    def plot(self, path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4.5))
        for cid, curve in sorted(self.curves_method.items()):
            ax.plot(range(len(curve)), curve, label=f"{cid}", alpha=0.8)
        for cid, curve in sorted(self.curves_baseline.items()):
            ax.plot(
                range(len(curve)), curve, linestyle="--", alpha=0.4, color="gray"
            )
        ax.set_xlabel("epoch")
        ax.set_ylabel("best iterations")
        ax.set_yscale("log")
        ax.set_title(
            f"best records (mean speed-up {self.mean_speedup:.2f}x, dashed = baseline)"
        )
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def _best_curves(records: list[TrialRecord]) -> dict[str, list[float]]:
    """Running best converged y per circuit, indexed by epoch."""
    out: dict[str, list[float]] = {}
    by_circuit: dict[str, dict[int, float]] = {}
    for r in records:
        d = by_circuit.setdefault(r.circuit_id, {})
        if r.converged:
            d[r.epoch] = min(d.get(r.epoch, math.inf), r.y)
    for cid, per_epoch in by_circuit.items():
        if not per_epoch:
            out[cid] = []
            continue
        n = max(per_epoch) + 1
        best = math.inf
        curve = []
        for e in range(n):
            best = min(best, per_epoch.get(e, math.inf))
            curve.append(best)
        out[cid] = curve
    return out


def speedup_report(
    records_baseline: list[TrialRecord], records_method: list[TrialRecord]
) -> SpeedupReport:
    """Best-record speed-ups, excluding circuits without a converged pair."""
    circuits_a = {r.circuit_id for r in records_baseline}
    circuits_b = {r.circuit_id for r in records_method}
    if circuits_a != circuits_b:
        raise ValueError(
            f"record sets cover different circuits: {circuits_a ^ circuits_b}"
        )
    curves_a = _best_curves(records_baseline)
    curves_b = _best_curves(records_method)
    per_circuit: dict[str, float] = {}
    excluded: list[str] = []
    for cid in sorted(circuits_a):
        ca, cb = curves_a.get(cid, []), curves_b.get(cid, [])
        ya = ca[-1] if ca else math.inf
        yb = cb[-1] if cb else math.inf
        if not (math.isfinite(ya) and math.isfinite(yb)):
            excluded.append(cid)
            continue
        per_circuit[cid] = ya / yb
    values = list(per_circuit.values())
    return SpeedupReport(
        per_circuit=per_circuit,
        excluded=excluded,
        mean_speedup=float(np.mean(values)) if values else math.nan,
        max_speedup=float(np.max(values)) if values else math.nan,
        curves_baseline=curves_a,
        curves_method=curves_b,
    )


def write_records(records: list[TrialRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path) -> list[TrialRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TrialRecord.from_json(line))
    return out
