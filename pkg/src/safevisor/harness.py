"""Monte Carlo closed-loop simulation of sandboxed controllers.

A trial runs the concrete stochastic system for the certified horizon while
an unverified controller proposes inputs and the history-based supervisor
accepts or overrides them. Trials are independent: trial ``i`` draws its
noise and controller randomness from ``SeedSequence(seed, spawn_key=(i,))``,
so results do not depend on batching or worker count.

:func:`run_closed_loop` is the scalar reference path built on
:class:`~safevisor.supervisor.HistorySupervisor`. :func:`monte_carlo` runs
the same arithmetic batched over trials.
"""
from __future__ import annotations

import csv
import json
import math
import multiprocessing
import shlex
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .abstraction import FiniteMdp
from .model import SystemModel, successor_mean
from .supervisor import SINK, HistorySupervisor, Verdict, quantize, quantize_many
from .synthesis import ValuePolicyTable

CONTROLLER_KINDS = ("constant_zero", "constant", "alternating", "advisor_only",
                    "random_adversarial", "external")
VERDICT_CODES = {Verdict.ACCEPTED: 0, Verdict.OVERRIDDEN: 1, Verdict.TERMINATED: 2, None: 3}
VERDICT_NAMES = {0: "accepted", 1: "overridden", 2: "terminated", 3: "unsupervised"}


@dataclass(frozen=True)
class ControllerSpec:
    """Which unverified controller to sandbox.

    ``params`` per kind: ``constant`` takes ``value``; ``alternating`` takes
    ``even`` and ``odd`` (defaults 1 and 0); ``random_adversarial`` takes
    ``p_worst``, the chance of proposing the riskiest input instead of a
    uniformly random one; ``external`` takes ``command``.
    """

    kind: str = "constant_zero"
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}; expected one of {CONTROLLER_KINDS}")
        if self.kind == "external" and not self.params.get("command"):
            raise ValueError("external controller needs params.command")
        if self.kind == "random_adversarial":
            p = self.params.get("p_worst", 0.5)
            if not 0 <= p <= 1:
                raise ValueError(f"p_worst must lie in [0, 1], got {p}")


class _Controller:
    """Proposals in concrete input units; ``draws[k]`` is a pair of uniforms."""

    uses_draws = False
    batched = True

    def __init__(self, spec: ControllerSpec, mdp: FiniteMdp, table: ValuePolicyTable):
        self.spec = spec
        self.mdp = mdp
        self.table = table
        self.reps = np.asarray(mdp.inputs.representatives, dtype=float)

    def propose_batch(self, k, x, states, draws):
        raise NotImplementedError

    def propose(self, k, x, state, draw):
        out = self.propose_batch(k, np.array([x]), np.array([state]),
                                 None if draw is None else np.asarray(draw)[None, :])
        return float(out[0])

    def close(self):
        pass


class _Constant(_Controller):
    def propose_batch(self, k, x, states, draws):
        return np.full(len(x), float(self.spec.params.get("value", 0.0)))


class _Alternating(_Controller):
    def propose_batch(self, k, x, states, draws):
        even = float(self.spec.params.get("even", 1.0))
        odd = float(self.spec.params.get("odd", 0.0))
        return np.full(len(x), odd if k % 2 else even)


class _AdvisorOnly(_Controller):
    def propose_batch(self, k, x, states, draws):
        return self.reps[self.table.policy[k, states]]


class _RandomAdversarial(_Controller):
    uses_draws = True

    def propose_batch(self, k, x, states, draws):
        m = len(self.reps)
        uniform = np.minimum((draws[:, 1] * m).astype(np.int64), m - 1)
        p_worst = float(self.spec.params.get("p_worst", 0.5))
        if p_worst > 0:
            future = self.table.values[self.table.horizon - k - 1]
            rows = (states[:, None] * m + np.arange(m)[None, :]).ravel()
            reach = np.empty(len(rows))
            _kernels.selected_row_expectations(self.mdp.indptr, self.mdp.indices, self.mdp.data,
                                               self.mdp.sink, future, rows, reach)
            worst = reach.reshape(-1, m).argmax(axis=1)
            uniform = np.where(draws[:, 0] < p_worst, worst, uniform)
        return self.reps[uniform]


class _External(_Controller):
    """Subprocess controller: receives ``<k> <x>`` lines, answers one input value per line."""

    batched = False

    def __init__(self, spec, mdp, table):
        super().__init__(spec, mdp, table)
        cmd = spec.params["command"]
        self.argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.proc = None

    def propose(self, k, x, state, draw):
        if self.proc is None:
            self.proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1)
        self.proc.stdin.write(f"{k} {x!r}\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        if not reply:
            raise RuntimeError(f"external controller {self.argv!r} closed its output")
        return float(reply)

    def close(self):
        if self.proc is not None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)
            self.proc = None


_CONTROLLERS = {
    "constant_zero": _Constant, "constant": _Constant, "alternating": _Alternating,
    "advisor_only": _AdvisorOnly, "random_adversarial": _RandomAdversarial, "external": _External,
}


def make_controller(spec: ControllerSpec, mdp: FiniteMdp, table: ValuePolicyTable) -> _Controller:
    return _CONTROLLERS[spec.kind](spec, mdp, table)


def trial_generators(seed: int, trial: int):
    """Independent (noise, controller) generators of one trial."""
    noise, ctrl = np.random.SeedSequence(seed, spawn_key=(trial,)).spawn(2)
    return np.random.default_rng(noise), np.random.default_rng(ctrl)


@dataclass
class TrialRecord:
    safe: bool
    n_decisions: int
    n_accepted: int
    xs: list
    proposed: list
    applied: list
    verdicts: list
    latencies_us: list

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_decisions if self.n_decisions else 0.0


def run_closed_loop(model: SystemModel, mdp: FiniteMdp, table: ValuePolicyTable,
                    controller: ControllerSpec, x0: float, trial: int = 0,
                    seed: Optional[int] = None, supervise: bool = True,
                    _ctrl: Optional[_Controller] = None) -> TrialRecord:
    """Simulate one closed-loop trial over the certified horizon.

    The trial is safe when every state ``x(0), ..., x(H)`` lies in the safe
    set. With ``supervise=False`` every proposal is applied unchecked.
    """
    if not model.safe_lo <= x0 < model.safe_hi:
        raise ValueError(f"x0={x0} outside the safe set [{model.safe_lo}, {model.safe_hi})")
    seed = controller.seed if seed is None else seed
    noise_rng, ctrl_rng = trial_generators(seed, trial)
    ctrl = _ctrl or make_controller(controller, mdp, table)
    sup = HistorySupervisor(mdp, table)
    reps = mdp.inputs.representatives
    rec = TrialRecord(False, 0, 0, [x0], [], [], [], [])
    x = x0
    try:
        for k in range(table.horizon):
            state = quantize(mdp.grid, x)
            draw = ctrl_rng.random(2) if ctrl.uses_draws else None
            if state == SINK:
                if supervise:
                    sup.step(x, 0.0)
                    rec.verdicts.append(Verdict.TERMINATED)
                return rec
            u_prop = ctrl.propose(k, x, state, draw)
            if supervise:
                t0 = time.perf_counter()
                d = sup.step(x, u_prop)
                rec.latencies_us.append((time.perf_counter() - t0) * 1e6)
                applied = d.applied_input
                rec.n_accepted += d.verdict is Verdict.ACCEPTED
                rec.verdicts.append(d.verdict)
            else:
                applied = mdp.inputs.nearest(u_prop)
                rec.n_accepted += 1
                rec.verdicts.append(None)
            rec.n_decisions += 1
            u = reps[applied]
            rec.proposed.append(u_prop)
            rec.applied.append(u)
            x = float(successor_mean(model, x, u) + model.noise_std * noise_rng.standard_normal())
            rec.xs.append(x)
        rec.safe = bool(model.safe_lo <= x < model.safe_hi)
        return rec
    finally:
        if _ctrl is None:
            ctrl.close()


@dataclass
class BatchResult:
    safe: np.ndarray
    n_decisions: np.ndarray
    n_accepted: np.ndarray
    supervisor_seconds: float = 0.0
    step_latency_us: list = field(default_factory=list)
    paths: Optional[dict] = None


def _simulate_batch(model, mdp, table, spec, x0, trials, seed, supervise, record) -> BatchResult:
    H = table.horizon
    B = len(trials)
    ctrl = make_controller(spec, mdp, table)
    Z = np.empty((B, H))
    D = np.empty((B, H, 2)) if ctrl.uses_draws else None
    for b, i in enumerate(trials):
        noise_rng, ctrl_rng = trial_generators(seed, int(i))
        Z[b] = noise_rng.standard_normal(H)
        if D is not None:
            D[b] = ctrl_rng.random((H, 2))
    x = np.full(B, float(x0))
    alive = np.ones(B, dtype=bool)
    product = np.ones(B)
    n_acc = np.zeros(B, dtype=np.int64)
    n_dec = np.zeros(B, dtype=np.int64)
    reps = np.asarray(mdp.inputs.representatives, dtype=float)
    m = mdp.n_inputs
    threshold = 1.0 - table.rho
    result = BatchResult(np.zeros(B, dtype=bool), n_dec, n_acc)
    if record:
        paths = {name: np.full((B, H + 1), np.nan) for name in ("x", "u_proposed", "u_applied")}
        paths["verdict"] = np.full((B, H + 1), -1, dtype=np.int8)
        paths["x"][:, 0] = x0
        result.paths = paths
    for k in range(H):
        states = quantize_many(mdp.grid, x)
        died = alive & (states == SINK)
        if record and supervise:
            paths["verdict"][died, k] = VERDICT_CODES[Verdict.TERMINATED]
        alive &= ~died
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = states[idx]
        u_prop = ctrl.propose_batch(k, x[idx], s, None if D is None else D[idx, k])
        u_idx = mdp.inputs.nearest(u_prop)
        if supervise:
            t0 = time.perf_counter()
            reach = np.empty(idx.size)
            _kernels.selected_row_expectations(mdp.indptr, mdp.indices, mdp.data, mdp.sink,
                                               table.values[H - k - 1], s * m + u_idx, reach)
            accepted = product[idx] * (1.0 - reach) >= threshold
            applied = np.where(accepted, u_idx, table.policy[k, s])
            product[idx] *= 1.0 - mdp.sink[s * m + applied]
            dt = time.perf_counter() - t0
            result.supervisor_seconds += dt
            result.step_latency_us.append(dt * 1e6 / idx.size)
        else:
            accepted = np.ones(idx.size, dtype=bool)
            applied = u_idx
        n_acc[idx] += accepted
        n_dec[idx] += 1
        u = reps[applied]
        x[idx] = successor_mean(model, x[idx], u) + model.noise_std * Z[idx, k]
        if record:
            paths["u_proposed"][idx, k] = u_prop
            paths["u_applied"][idx, k] = u
            code = np.where(accepted, 0, 1) if supervise else 3
            paths["verdict"][idx, k] = code
            paths["x"][idx, k + 1] = x[idx]
    result.safe[:] = alive & (x >= model.safe_lo) & (x < model.safe_hi)
    return result


@dataclass
class TrialReport:
    """Aggregate of a Monte Carlo run.

    Latency fields are amortised per supervisor decision over the batched
    gate evaluation; they are excluded from :meth:`payload`.
    """

    n_trials: int
    n_safe: int
    safe_fraction: float
    unsafe_fraction: float
    mean_acceptance_rate: float
    horizon: int
    rho: float
    supervised: bool
    controller: str
    seed: int
    latency_mean_us: float = math.nan
    latency_p99_us: float = math.nan

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("latency_mean_us")
        d.pop("latency_p99_us")
        return d

    def to_dict(self) -> dict:
        return asdict(self)


_SHARED: dict = {}


def _run_block(trials):
    return _run_trials(trials=trials, **_SHARED)


def _run_trials(model, mdp, table, spec, x0, seed, supervise, trials, chunk, record):
    ctrl_probe = make_controller(spec, mdp, table)
    if not ctrl_probe.batched:
        return _run_scalar(model, mdp, table, spec, x0, seed, supervise, trials, ctrl_probe, record)
    parts = []
    for start in range(0, len(trials), chunk):
        parts.append(_simulate_batch(model, mdp, table, spec, x0, trials[start:start + chunk],
                                     seed, supervise, record))
    return _merge(parts)


def _run_scalar(model, mdp, table, spec, x0, seed, supervise, trials, ctrl, record):
    H = table.horizon
    B = len(trials)
    res = BatchResult(np.zeros(B, dtype=bool), np.zeros(B, dtype=np.int64), np.zeros(B, dtype=np.int64))
    if record:
        res.paths = {name: np.full((B, H + 1), np.nan) for name in ("x", "u_proposed", "u_applied")}
        res.paths["verdict"] = np.full((B, H + 1), -1, dtype=np.int8)
    try:
        for b, i in enumerate(trials):
            rec = run_closed_loop(model, mdp, table, spec, x0, int(i), seed, supervise, _ctrl=ctrl)
            res.safe[b], res.n_decisions[b], res.n_accepted[b] = rec.safe, rec.n_decisions, rec.n_accepted
            res.supervisor_seconds += sum(rec.latencies_us) * 1e-6
            res.step_latency_us.extend(rec.latencies_us)
            if record:
                n = len(rec.xs)
                res.paths["x"][b, :n] = rec.xs
                res.paths["u_proposed"][b, :len(rec.proposed)] = rec.proposed
                res.paths["u_applied"][b, :len(rec.applied)] = rec.applied
                res.paths["verdict"][b, :len(rec.verdicts)] = [VERDICT_CODES[v] for v in rec.verdicts]
    finally:
        ctrl.close()
    return res


def _merge(parts) -> BatchResult:
    out = BatchResult(np.concatenate([p.safe for p in parts]),
                      np.concatenate([p.n_decisions for p in parts]),
                      np.concatenate([p.n_accepted for p in parts]),
                      sum(p.supervisor_seconds for p in parts),
                      [v for p in parts for v in p.step_latency_us])
    if any(p.paths is not None for p in parts):
        out.paths = {key: np.concatenate([p.paths[key] for p in parts]) for key in parts[0].paths}
    return out


def monte_carlo(model: SystemModel, mdp: FiniteMdp, table: ValuePolicyTable,
                controller: ControllerSpec, x0: float, n_trials: int, workers: int = 1,
                seed: Optional[int] = None, supervise: bool = True,
                record_trials: int = 0, chunk: Optional[int] = None):
    """Run ``n_trials`` independent closed-loop trials.

    Returns ``(report, paths)``; ``paths`` holds per-step arrays for the
    first ``record_trials`` trials, or is ``None``.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if not model.safe_lo <= x0 < model.safe_hi:
        raise ValueError(f"x0={x0} outside the safe set [{model.safe_lo}, {model.safe_hi})")
    seed = controller.seed if seed is None else seed
    chunk = chunk or max(1, min(20_000, 20_000_000 // max(table.horizon, 1)))
    common = dict(model=model, mdp=mdp, table=table, spec=controller, x0=x0, seed=seed,
                  supervise=supervise, chunk=chunk)
    trials = np.arange(n_trials)
    recorded = None
    if record_trials:
        head = _run_trials(trials=trials[:record_trials], record=True, **common)
        recorded = head.paths
    blocks = [b for b in np.array_split(trials, workers) if b.size]
    if workers == 1 or len(blocks) == 1:
        result = _run_trials(trials=trials, record=False, **common)
    else:
        _SHARED.clear()
        _SHARED.update(common, record=False)
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            result = _merge(list(pool.map(_run_block, blocks)))
        _SHARED.clear()
    n_safe = int(result.safe.sum())
    rates = np.where(result.n_decisions > 0,
                     result.n_accepted / np.maximum(result.n_decisions, 1), 0.0)
    decisions = int(result.n_decisions.sum())
    lat = np.asarray(result.step_latency_us)
    report = TrialReport(
        n_trials=n_trials, n_safe=n_safe,
        safe_fraction=n_safe / n_trials, unsafe_fraction=(n_trials - n_safe) / n_trials,
        mean_acceptance_rate=float(rates.mean()),
        horizon=table.horizon, rho=table.rho, supervised=supervise,
        controller=controller.kind, seed=seed,
        latency_mean_us=result.supervisor_seconds * 1e6 / decisions if supervise and decisions else math.nan,
        latency_p99_us=float(np.percentile(lat, 99)) if supervise and lat.size else math.nan,
    )
    return report, recorded


def simulate_mdp(mdp: FiniteMdp, table: ValuePolicyTable, controller: ControllerSpec,
                 s0: int, n_runs: int, seed: int = 0, supervise: bool = True):
    """Closed loop on the finite MDP itself; returns ``(unsafe_fraction, acceptance_rate)``.

    Successors are drawn from the abstract kernel, so the supervisor's
    guarantee applies to these runs without any abstraction error.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    n, m, H = mdp.n_states, mdp.n_inputs, table.horizon
    cum = np.cumsum(mdp.to_dense().reshape(n * m, n + 1), axis=1)
    ctrl = make_controller(controller, mdp, table)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = rng.random((n_runs, H, 3))
    state = np.full(n_runs, s0, dtype=np.int64)
    product = np.ones(n_runs)
    n_acc = np.zeros(n_runs)
    xs_rep = mdp.grid.representatives
    for k in range(H):
        idx = np.flatnonzero(state != n)
        if idx.size == 0:
            break
        s = state[idx]
        u_idx = mdp.inputs.nearest(ctrl.propose_batch(k, xs_rep[s], s, draws[idx, k, :2]))
        if supervise:
            reach = np.empty(idx.size)
            _kernels.selected_row_expectations(mdp.indptr, mdp.indices, mdp.data, mdp.sink,
                                               table.values[H - k - 1], s * m + u_idx, reach)
            accepted = product[idx] * (1.0 - reach) >= 1.0 - table.rho
            applied = np.where(accepted, u_idx, table.policy[k, s])
            product[idx] *= 1.0 - mdp.sink[s * m + applied]
            n_acc[idx] += accepted
        else:
            applied = u_idx
        rows = cum[s * m + applied]
        nxt = (rows <= draws[idx, k, 2][:, None]).sum(axis=1)
        state[idx] = np.minimum(nxt, n)
    return float(np.mean(state == n)), float(n_acc.sum() / max(1, n_runs * H))


def write_report(report: TrialReport, path, include_timing: bool = True):
    data = report.to_dict() if include_timing else report.payload()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trajectories(paths: dict, path):
    """CSV with columns ``trial,k,x,u_proposed,u_applied,verdict``."""
    B, T = paths["x"].shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "k", "x", "u_proposed", "u_applied", "verdict"])
        for b in range(B):
            for k in range(T):
                x = paths["x"][b, k]
                code = int(paths["verdict"][b, k])
                if math.isnan(x) and code < 0:
                    break
                w.writerow([b, k, "" if math.isnan(x) else repr(float(x)),
                            _fmt(paths["u_proposed"][b, k]), _fmt(paths["u_applied"][b, k]),
                            VERDICT_NAMES.get(code, "")])


def _fmt(v):
    return "" if math.isnan(v) else repr(float(v))
