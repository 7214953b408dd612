"""Seeded Monte Carlo presets, importance-sampling estimates and CSV output.

Trials are split into fixed chunks of ``CHUNK`` paths per grid point. The
chunking never depends on the number of workers, and every path draws from
its own seed-derived stream, so a preset produces byte-identical CSV for any
``parallelism``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .confseq import _running_robbins_lower, delta_schedule, lower_bounds_batch
from .conformal import simulate_conformal
from .models import GaussianLRModel
from .process import Mode, StopRule
from .rng import gaussian_stream, path_rngs, path_seed
from .solver import solve_boost_one_sided, solve_boost_two_sided
from .sprt import (
    ACCEPT,
    REJECT,
    UNDECIDED,
    simulate_power_one,
    simulate_power_one_plugin,
    simulate_two_sided,
)
from .wor import population, shuffled_populations, simulate_wor

CHUNK = 500
DEFAULT_SEED = 1
DECISIONS = {REJECT: "reject_null", ACCEPT: "accept_null", UNDECIDED: "undecided"}

TABLE_DELTAS = (0.1, 0.5, 1.0, 2.0, 3.0)
TABLE_WEALTH = (0.5, 1.0, 2.0, 4.0, 10.0)
SIGNAL_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
BETA_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
WOR_SIZES = (500, 1000, 2000, 3000, 4000, 5000)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    kind: str
    grid: tuple
    trials: int = 0
    seed: int = DEFAULT_SEED
    max_samples: int = 10_000
    alpha: float = 0.05
    beta: float = 0.0
    params: dict = field(default_factory=dict)
    description: str = ""


PRESETS = {
    "table2": ExperimentPreset(
        "table2", "table", tuple((d, w) for d in TABLE_DELTAS for w in TABLE_WEALTH),
        params={"nu": 0.0}, description="one-step Gaussian boosting factors",
    ),
    "table3": ExperimentPreset(
        "table3", "table", tuple((d, w) for d in TABLE_DELTAS for w in TABLE_WEALTH),
        params={"nu": 0.4}, description="one-step Gaussian boosting factors with futility level 0.4",
    ),
    "fig1": ExperimentPreset(
        "fig1", "power_one", SIGNAL_GRID, trials=10_000,
        description="boosted vs plain SPRT, fixed alternative",
    ),
    "fig1_alpha001": ExperimentPreset(
        "fig1_alpha001", "power_one", SIGNAL_GRID, trials=10_000, alpha=0.01,
        description="fig1 at alpha = 0.01",
    ),
    "fig2": ExperimentPreset(
        "fig2", "plugin", SIGNAL_GRID, trials=10_000, params={"theta0": 0.0},
        description="boosted vs plain SPRT with a predictable plugin alternative",
    ),
    "fig3": ExperimentPreset(
        "fig3", "wor", WOR_SIZES, trials=1000, alpha=0.01, params={"mu0": 0.5, "mu1": 0.55},
        description="boosted vs plain betting audit without replacement",
    ),
    "fig4": ExperimentPreset(
        "fig4", "two_sided", BETA_GRID, trials=10_000, params={"delta": 0.3},
        description="boosted two-sided SPRT vs Wald thresholds",
    ),
    "fig4_alpha001": ExperimentPreset(
        "fig4_alpha001", "two_sided", BETA_GRID, trials=10_000, alpha=0.01, params={"delta": 0.3},
        description="fig4 at alpha = 0.01",
    ),
    "figS1": ExperimentPreset(
        "figS1", "confseq", (2.0,), trials=100, max_samples=100, params={"n_tuned": 50},
        description="Robbins vs boosted lower confidence bound",
    ),
    "siegmund_compare": ExperimentPreset(
        "siegmund_compare", "siegmund", tuple(("power_one", d) for d in SIGNAL_GRID) + tuple(("two_sided", b) for b in BETA_GRID),
        trials=10_000, params={"delta": 0.3},
        description="boosted tests vs Siegmund-corrected thresholds",
    ),
}


@dataclass(frozen=True)
class TrialRecord:
    preset: str
    grid_index: int
    grid_value: str
    trial: int
    seed: int
    method: str
    stopping_time: int
    decision: str
    raw_lr_at_stop: float
    wall_time: float = 0.0


RECORD_COLUMNS = [f.name for f in fields(TrialRecord) if f.name != "wall_time"]


@dataclass
class PresetResult:
    records: list
    table: list
    columns: list
    fallbacks: int = 0
    max_expectation: float = float("nan")
    violations: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# statistics


def importance_sampling_type1(records=None, *, reject=None, raw_lr=None):
    """Estimate ``P_0(reject)`` from runs sampled under the alternative.

    Mean of ``1{reject} / Lambda_tau`` (raw likelihood ratio at stopping) and
    its standard error. Pass :class:`TrialRecord` objects or the arrays.
    """
    if records is not None:
        reject = [r.decision == "reject_null" for r in records]
        raw_lr = [r.raw_lr_at_stop for r in records]
    reject = np.asarray(reject, dtype=bool)
    raw_lr = np.asarray(raw_lr, dtype=float)
    if reject.size == 0:
        return 0.0, 0.0
    if np.any(np.isnan(raw_lr[reject])) or np.any(raw_lr[reject] <= 0):
        raise ValueError("rejected runs need a positive raw likelihood ratio at stopping")
    w = np.where(reject, 1.0 / np.where(reject, raw_lr, 1.0), 0.0)
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    return float(w.mean()), se


def _is_from_log(decision, log_lr):
    w = np.where(decision == REJECT, np.exp(-np.where(decision == REJECT, log_lr, 0.0)), 0.0)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0


def _nanmax(a, b):
    if math.isnan(a):
        return float(b)
    return a if math.isnan(b) else max(a, float(b))


def mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def rate_se(hits):
    hits = np.asarray(hits, dtype=float)
    if hits.size == 0:
        return float("nan"), float("nan")
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / hits.size)


def saving_se(tau_boost, tau_plain):
    """Relative saving ``1 - mean(boost)/mean(plain)`` with a delta-method standard error (paired)."""
    a = np.asarray(tau_boost, dtype=float)
    b = np.asarray(tau_plain, dtype=float)
    ma, mb = a.mean(), b.mean()
    r = ma / mb
    resid = a - r * b
    se = float(resid.std(ddof=1) / (math.sqrt(a.size) * mb)) if a.size > 1 else 0.0
    return float(1.0 - r), se


# ---------------------------------------------------------------------------
# chunk workers (module level so they pickle)


def _trials_of(chunk, trials):
    lo = chunk * CHUNK
    return range(lo, min(lo + CHUNK, trials))


def _chunk_power_one(kind, value, alpha, seed, g, trials, max_samples, params):
    n = len(trials)
    if kind == "plugin":
        theta0 = params.get("theta0", 0.0)
        st = gaussian_stream(seed, g, trials, theta0 + value)
        return simulate_power_one_plugin(theta0, alpha, st, n, max_samples)
    st = gaussian_stream(seed, g, trials, value)
    return simulate_power_one(GaussianLRModel(0.0, value), alpha, st, n, max_samples)


def _run_chunk(args):
    preset, g, value, chunk = args
    t0 = time.perf_counter()
    trials = _trials_of(chunk, preset.trials)
    a, p = preset.alpha, preset.params
    out = {"fallbacks": 0, "max_e": float("nan"), "violations": {}, "methods": {}, "trials": trials}
    if preset.kind in ("power_one", "plugin"):
        r = _chunk_power_one(preset.kind, value, a, preset.seed, g, trials, preset.max_samples, p)
        out["methods"] = {k: (m.tau, m.decision, m.log_lr) for k, m in r.methods.items()}
    elif preset.kind == "siegmund" and value[0] == "power_one":
        d = value[1]
        r = simulate_power_one(GaussianLRModel(0.0, d), a, gaussian_stream(preset.seed, g, trials, d), len(trials), preset.max_samples)
        out["methods"] = {k: (m.tau, m.decision, m.log_lr) for k, m in r.methods.items()}
        # Siegmund-corrected power-one threshold on the same raw paths
        lg1 = math.log(StopRule(Mode.SIEGMUND, a, 0.0, mu1=d).thresholds()[1])
        out["methods"]["siegmund"] = _threshold_replay(preset.seed, g, trials, d, lg1, preset.max_samples)
    elif preset.kind in ("two_sided", "siegmund"):
        beta = value if preset.kind == "two_sided" else value[1]
        d = p["delta"]
        model = GaussianLRModel(0.0, d)
        bl = ("wald_approx", "wald_conservative", "siegmund") if preset.kind == "two_sided" else ("wald_conservative", "siegmund")
        r = simulate_two_sided(model, a, beta, gaussian_stream(preset.seed, g, trials, d, "data"), len(trials), preset.max_samples, bl)
        r0 = simulate_two_sided(model, a, beta, gaussian_stream(preset.seed, g, trials, 0.0, "null"), len(trials), preset.max_samples, bl)
        out["methods"] = {k: (m.tau, m.decision, m.log_lr) for k, m in r.methods.items()}
        out["methods"].update({k + "@null": (m.tau, m.decision, m.log_lr) for k, m in r0.methods.items()})
        out["fallbacks"] = r0.fallbacks
        out["max_e"] = r0.max_expectation
        for k, v in r0.violations.items():
            out["violations"][k] = v
    elif preset.kind == "wor":
        N = int(value)
        pop = population(N, int(round(p["mu1"] * N)))
        D = shuffled_populations(pop, path_rngs(preset.seed, g, trials, "population"))
        r = simulate_wor(D, p["mu0"], p["mu1"], a, min(preset.max_samples, N))
        out["methods"] = {k: (m.tau, m.decision, m.log_lr) for k, m in r.methods.items()}
    else:
        raise ValueError(f"unknown preset kind {preset.kind}")
    out["fallbacks"] += getattr(r, "fallbacks", 0)
    out["max_e"] = _nanmax(out["max_e"], getattr(r, "max_expectation", float("nan")))
    for k, v in r.violations.items():
        out["violations"][k] = out["violations"].get(k, 0) + v
    out["wall"] = time.perf_counter() - t0
    return g, chunk, out


def _threshold_replay(seed, g, trials, d, log_gamma1, max_samples):
    """Unboosted power-one test with an arbitrary upper threshold on the same streams."""
    n = len(trials)
    st = gaussian_stream(seed, g, trials, d)
    model = GaussianLRModel(0.0, d)
    tau = np.full(n, max_samples, dtype=np.int64)
    dec = np.zeros(n, dtype=np.int8)
    logR = np.zeros(n)
    run = np.ones(n, dtype=bool)
    for t in range(1, max_samples + 1):
        idx = np.flatnonzero(run)
        if not idx.size:
            break
        logR[idx] += model.log_factor(st.draw(idx))
        hit = idx[logR[idx] >= log_gamma1]
        tau[hit], dec[hit] = t, REJECT
        run[hit] = False
    return tau, dec, logR


# ---------------------------------------------------------------------------
# preset drivers


def _fmt(v):
    return repr(v) if not isinstance(v, tuple) else ":".join(str(x) for x in v)


def _table_preset(preset):
    nu = preset.params["nu"]
    rows, fb, mx = [], 0, float("nan")
    for d, w in preset.grid:
        model = GaussianLRModel(0.0, d)
        res = solve_boost_one_sided(model, w, preset.alpha) if nu == 0 else solve_boost_two_sided(model, w, nu, preset.alpha)
        fb += res.method == "fallback_one"
        mx = _nanmax(mx, res.verified_expectation)
        rows.append({"delta": d, "wealth": w, "boost_factor": res.b})
    return PresetResult([], rows, ["delta", "wealth", "boost_factor"], fb, mx, {})


def _confseq_preset(preset):
    a = preset.alpha
    mu = preset.grid[0]
    T = preset.max_samples
    d = math.sqrt(8 * math.log(1 / a) / preset.params["n_tuned"])
    deltas = delta_schedule(d, T)
    rng_rows = path_rngs(preset.seed, 0, range(preset.trials))
    X = np.stack([mu + r.standard_normal(T) for r in rng_rows]) if preset.trials else np.empty((0, T))
    rows = []
    if preset.trials:
        R = X.shape[0]
        XX = np.repeat(X, T, axis=0)
        lengths = np.tile(np.arange(1, T + 1), R)
        boosted = lower_bounds_batch(XX, lengths, a, deltas).reshape(R, T)
        t = np.arange(1, T + 1)
        robbins = (np.cumsum(X, axis=1) / t) - np.log(1 / a) / (t * d) - d / 2
        running = _running_robbins_lower(X, a, deltas)
        for i in range(T):
            rows.append({
                "t": i + 1,
                "robbins_lower": float(robbins[:, i].mean()),
                "robbins_running_lower": float(running[:, i].mean()),
                "boosted_lower": float(boosted[:, i].mean()),
                "boosted_lower_se": mean_se(boosted[:, i])[1],
                "coverage_failures": int(np.sum(boosted[:, i] > mu)),
            })
    cols = ["t", "robbins_lower", "robbins_running_lower", "boosted_lower", "boosted_lower_se", "coverage_failures"]
    return PresetResult([], rows, cols)


def _summarise(preset, g, value, methods, alpha):
    row = {"grid_value": _fmt(value)}
    kind = preset.kind
    if kind in ("power_one", "plugin", "wor") or (kind == "siegmund" and value[0] == "power_one"):
        tb, tp = methods["boosted"][0], methods["plain"][0]
        s, se = saving_se(tb, tp)
        row.update(saving=s, saving_se=se)
        for k, (tau, dec, llr) in methods.items():
            row[f"{k}_mean_n"], row[f"{k}_mean_n_se"] = mean_se(tau)
            row[f"{k}_reject_rate"] = float(np.mean(dec == REJECT))
            if kind != "wor":
                row[f"{k}_type1_hat"], row[f"{k}_type1_se"] = _is_from_log(dec, llr)
    else:
        beta = value if kind == "two_sided" else value[1]
        row["beta"] = beta
        for k in [m for m in methods if not m.endswith("@null")]:
            tau, dec, llr = methods[k]
            tau0, dec0, _ = methods[k + "@null"]
            row[f"{k}_mean_n"], row[f"{k}_mean_n_se"] = mean_se(tau)
            row[f"{k}_mean_n_null"], row[f"{k}_mean_n_null_se"] = mean_se(tau0)
            row[f"{k}_type1_hat"], row[f"{k}_type1_se"] = rate_se(dec0 == REJECT)
            row[f"{k}_type1_is"], row[f"{k}_type1_is_se"] = _is_from_log(dec, llr)
            row[f"{k}_type2_hat"], row[f"{k}_type2_se"] = rate_se(dec != REJECT)
    return row


def resolve_preset(name_or_preset, **overrides) -> ExperimentPreset:
    preset = PRESETS[name_or_preset] if isinstance(name_or_preset, str) else name_or_preset
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "trials" in overrides and overrides["trials"] < 0:
        raise ValueError("trials must be nonnegative")
    return replace(preset, **overrides)


def _safe_chunk(args):
    try:
        return _run_chunk(args)
    except MemoryError as e:
        _, g, _, chunk = args
        return g, chunk, {"error": f"out of memory: {e}"}


def _chunk_records(preset, g, v, out):
    wall = out["wall"] / max(len(out["trials"]), 1)
    recs = []
    for j, k in enumerate(out["trials"]):
        for m in sorted(out["methods"]):
            tau, dec, llr = out["methods"][m]
            raw = float(np.exp(llr[j])) if preset.kind != "wor" else float("nan")
            recs.append(TrialRecord(preset.name, g, _fmt(v), k, preset.seed, m, int(tau[j]), DECISIONS[int(dec[j])], raw, wall))
    return recs


def run_preset(preset, parallelism: int = 1, sink=None, **overrides) -> PresetResult:
    """Run a named (or custom) preset.

    ``overrides`` may set trials, seed, max_samples, alpha, beta or grid.
    ``sink`` (optional) receives each :class:`TrialRecord` as soon as its
    chunk is done, in (grid, trial, method) order. Chunks that fail with a
    resource error are listed in ``PresetResult.errors`` with their trials.
    """
    preset = resolve_preset(preset, **overrides)
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if preset.kind == "table":
        return _table_preset(preset)
    if preset.kind == "confseq":
        return _confseq_preset(preset)
    n_chunks = math.ceil(preset.trials / CHUNK)
    jobs = [(preset, g, v, c) for g, v in enumerate(preset.grid) for c in range(n_chunks)]
    ex = ProcessPoolExecutor(max_workers=parallelism) if parallelism > 1 and len(jobs) > 1 else None
    results = ex.map(_safe_chunk, jobs) if ex else map(_safe_chunk, jobs)
    records, table, errors = [], [], []
    fallbacks, mx, viol = 0, float("nan"), {}
    merged = {}
    try:
        # map() yields in job order, which is (grid, chunk) order
        for (_, g, v, c), (_, _, out) in zip(jobs, results):
            if "error" in out:
                t = _trials_of(c, preset.trials)
                errors.append(f"grid {g} trials {t.start}..{t.stop - 1}: {out['error']}")
            else:
                fallbacks += out["fallbacks"]
                mx = _nanmax(mx, out["max_e"])
                for k, n in out["violations"].items():
                    viol[k] = viol.get(k, 0) + n
                for m, arrs in out["methods"].items():
                    cur = merged.setdefault(m, ([], [], []))
                    for lst, a in zip(cur, arrs):
                        lst.append(a)
                recs = _chunk_records(preset, g, v, out)
                records.extend(recs)
                if sink is not None:
                    for r in recs:
                        sink(r)
            if c == n_chunks - 1:
                if merged:
                    methods = {m: tuple(np.concatenate(x) for x in vals) for m, vals in merged.items()}
                    table.append(_summarise(preset, g, v, methods, preset.alpha))
                merged = {}
    finally:
        if ex:
            ex.shutdown()
    columns = []
    for row in table:
        columns += [k for k in row if k not in columns]
    return PresetResult(records, table, columns or ["grid_value"], fallbacks, mx, viol, errors)


# ---------------------------------------------------------------------------
# CSV


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def emit_csv(rows: Sequence, path, columns: Optional[Sequence[str]] = None) -> Path:
    """Write dict rows or :class:`TrialRecord` objects as UTF-8 CSV with LF line endings.

    Floats use the shortest round-trip representation, so identical inputs
    give identical bytes. ``wall_time`` is never written.
    """
    rows = list(rows)
    dicts = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    if columns is None:
        if dicts:
            columns = [c for c in dicts[0] if c != "wall_time"]
        else:
            columns = RECORD_COLUMNS
    p = Path(path)
    try:
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for d in dicts:
                w.writerow([_cell(d.get(c, "")) for c in columns])
    except OSError as e:
        raise OSError(f"cannot write {p}: {e.strerror or e}") from e
    return p


def write_csv_stream(rows, columns, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if hasattr(r, "__dataclass_fields__") else r
        w.writerow([_cell(d.get(c, "")) for c in columns])
