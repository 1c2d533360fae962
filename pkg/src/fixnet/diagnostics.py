"""Per-iteration metrics, rate certificates, and step-size conditions.

All diagnostics are read-only over completed traces.  Rate fits are
log-log least squares over the trailing window of a series, excluding the
transient first part and values at the floating-point floor; fitted
exponents are certified against a target with a documented slack because
the mixing constants they are compared to are themselves estimates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TRACE_FORMAT = "fixnet-trace v1"
SUMMARY_FORMAT = "fixnet-summary v1"
RATE_FLOOR = 1e-14        # series values at or below this are fp noise
EXPONENT_SLACK = 0.1      # default absolute slack on certified exponents
MIN_FIT_POINTS = 20


class InsufficientDataError(RuntimeError):
    """Too few usable points for a fit."""


@dataclass
class RunTrace:
    """Per-iteration record of one run.

    Row r describes the state at iteration r; err_norms[r] holds the error
    norms applied in the transition out of row r (the final row is zero).
    Distance columns exist only when the scenario has a common-fixed-set
    oracle; weighted distances only for block runs with that oracle.
    """

    engine: str
    block_sizes: tuple[int, ...]
    block_probs: Optional[tuple[float, ...]]
    ks: np.ndarray                      # (R,)
    residuals: np.ndarray               # (R, N)
    consensus: np.ndarray               # (R, N)
    distances: Optional[np.ndarray]     # (R, N)
    d_sq: Optional[np.ndarray]          # (R,)
    wdist_sq: Optional[np.ndarray]      # (R, N)
    err_norms: np.ndarray               # (R, N)
    stop_reason: str
    fingerprint: str
    sup_coord: float

    @property
    def n_records(self) -> int:
        return int(self.ks.shape[0])

    @property
    def n_agents(self) -> int:
        return int(self.residuals.shape[1])

    @property
    def iterations(self) -> int:
        return self.n_records - 1

    @property
    def max_residuals(self) -> np.ndarray:
        return self.residuals.max(axis=1)

    @property
    def max_consensus(self) -> np.ndarray:
        return self.consensus.max(axis=1)


def running_min_residual(trace: RunTrace, agent: int) -> np.ndarray:
    """Prefix minimum of one agent's residuals; nonincreasing."""
    if trace.n_records == 0:
        raise ValueError("empty trace")
    return np.minimum.accumulate(trace.residuals[:, agent])


def consensus_error(coords: np.ndarray, pi_k: np.ndarray) -> np.ndarray:
    """Per-agent deviation from the absorption-weighted network average."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    pi_k = np.asarray(pi_k, dtype=float)
    if pi_k.shape[0] != coords.shape[0]:
        raise ValueError("one absorption weight per agent required")
    xbar = pi_k @ coords
    return np.linalg.norm(coords - xbar[None, :], axis=1)


# ---------------------------------------------------------------------------
# Rate certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateCertificate:
    """Fitted power-law decay r_k ~ constant * k^(-exponent)."""

    exponent: float
    constant: float
    fit_rms: float
    n_points: int
    window: float
    target: Optional[float]
    slack: float

    @property
    def passed(self) -> Optional[bool]:
        if self.target is None:
            return None
        return self.exponent >= self.target - self.slack


def fit_rate(series: Sequence[float], window: float = 0.5,
             target: Optional[float] = None,
             slack: float = EXPONENT_SLACK) -> RateCertificate:
    """Log-log least-squares fit over the trailing window of a series.

    The series is indexed by iteration k = 0..len-1.  Points outside the
    trailing window, at k = 0, or at/below the floating floor are excluded.
    Raises InsufficientDataError below MIN_FIT_POINTS usable points.
    """
    r = np.asarray(series, dtype=float)
    if not (0.0 < window <= 1.0):
        raise ValueError("window must be a fraction in (0, 1]")
    kmax = r.shape[0] - 1
    kmin = max(1, int(np.ceil((1.0 - window) * kmax)))
    ks = np.arange(kmin, kmax + 1)
    vals = r[kmin:kmax + 1]
    usable = vals > RATE_FLOOR
    ks, vals = ks[usable], vals[usable]
    if ks.shape[0] < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"only {ks.shape[0]} usable points in the fit window (need {MIN_FIT_POINTS})")
    lk, lv = np.log(ks.astype(float)), np.log(vals)
    slope, intercept = np.polyfit(lk, lv, 1)
    pred = slope * lk + intercept
    rms = float(np.sqrt(np.mean((pred - lv) ** 2)))
    return RateCertificate(exponent=float(-slope), constant=float(np.exp(intercept)),
                           fit_rms=rms, n_points=int(ks.shape[0]), window=float(window),
                           target=None if target is None else float(target),
                           slack=float(slack))


@dataclass(frozen=True)
class SqrtKCertificate:
    """Boundedness check of sqrt(k) times the running-min residual."""

    agent: int
    sup_value: float
    first_window_max: float
    last_window_max: float
    factor: float

    @property
    def passed(self) -> bool:
        return (np.isfinite(self.sup_value)
                and self.last_window_max <= self.factor * self.first_window_max + 1e-300)


def sqrt_k_boundedness(trace: RunTrace, agent: int, k_min: int = 100,
                       factor: float = 2.0) -> SqrtKCertificate:
    """Certify sqrt(k) * running_min_residual stays bounded.

    The criterion compares the maximum over the last decade of iterations
    to the maximum over the first decade after k_min; short traces may
    have overlapping windows, in which case the check is trivially true.
    """
    m = running_min_residual(trace, agent)
    kend = trace.n_records - 1
    if kend < k_min:
        raise ValueError(f"trace too short for the sqrt-k certificate (needs k > {k_min})")
    ks = np.arange(k_min, kend + 1)
    s = np.sqrt(ks.astype(float)) * m[k_min:kend + 1]
    first_hi = min(10 * k_min, kend)
    first = s[:first_hi - k_min + 1]
    last_lo = max(kend // 10, k_min)
    last = s[last_lo - k_min:]
    return SqrtKCertificate(agent=int(agent), sup_value=float(s.max()),
                            first_window_max=float(first.max()),
                            last_window_max=float(last.max()), factor=float(factor))


def window_contraction(d_sq: Sequence[float]) -> float:
    """Measured contraction factor of the dyadic-window recursion.

    Largest gamma with d^2_{k+1} <= d^2_k + gamma * max over the window
    [floor((k+1)/2), k]; negative or small values certify monotone decay.
    """
    d = np.asarray(d_sq, dtype=float)
    gamma = -np.inf
    for k in range(d.shape[0] - 1):
        lo = (k + 1) // 2
        sup = float(d[lo:k + 1].max()) if k >= lo else float(d[k])
        if sup <= RATE_FLOOR:
            continue
        gamma = max(gamma, (d[k + 1] - d[k]) / sup)
    return float(gamma)


# ---------------------------------------------------------------------------
# Step-size conditions for the rate guarantees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    """Step-size cap check with its margin and ingredients."""

    name: str
    bound: float
    cap: float
    terms: dict
    note: str = ""

    @property
    def satisfied(self) -> bool:
        return self.cap < self.bound

    @property
    def margin(self) -> float:
        return self.bound - self.cap


def dikm_rate_condition(estimate, mixing, sched, n_agents: int) -> ConditionReport:
    """Step-size cap guaranteeing the distributed KM rate under linear
    regularity of the operators and their fixed-set collection."""
    kc = float(estimate.kappa_max)
    k0 = float(estimate.kappa_set)
    if not (np.isfinite(kc) and np.isfinite(k0)) or kc <= 0 or k0 <= 0:
        raise ValueError("regularity constants must be positive and finite")
    xi, varpi, pi_floor = float(mixing.xi), float(mixing.varpi), float(mixing.pi_floor)
    N = int(n_agents)
    gamma2 = (24.0 * N ** 3 * varpi ** 2 * xi ** 2 / (1.0 - xi) ** 2) \
        * (2.0 + 1.0 / (4.0 * N * kc ** 2 * k0 ** 2))
    if gamma2 > 0:
        reg_term = np.sqrt(pi_floor / (2.0 * N * gamma2)) / (2.0 * kc * k0)
    else:
        reg_term = np.inf
    bound = float(min(reg_term, 1.0 - sched.floor))
    return ConditionReport(name="dikm-rate-condition", bound=bound, cap=float(sched.cap),
                           terms={"gamma2": float(gamma2), "regularity_term": float(reg_term),
                                  "kappa_max": kc, "kappa_set": k0, "xi": xi,
                                  "varpi": varpi, "pi_floor": pi_floor, "n_agents": N})


def dibkm_rate_condition(nu: float, mixing, sched, n_agents: int, p0: float) -> ConditionReport:
    """Step-size cap guaranteeing the block-coordinate rate under power
    regularity of the operator family."""
    nu = float(nu)
    p0 = float(p0)
    if not (nu > 0 and np.isfinite(nu)):
        raise ValueError("power-regularity constant must be positive and finite")
    if not (0.0 < p0 <= 1.0):
        raise ValueError("p0 must lie in (0, 1]")
    xi, varpi, pi_floor = float(mixing.xi), float(mixing.varpi), float(mixing.pi_floor)
    N = int(n_agents)
    reg_term = (p0 * (1.0 - xi) / (4.0 * N ** 2 * varpi * xi)) \
        * np.sqrt(pi_floor / (2.0 * (p0 ** 2 + 8.0 * N * nu ** 2)))
    bound = float(min(reg_term, 1.0 - sched.floor))
    note = ""
    if p0 == 1.0:
        note = "single-block reduction: with p0 = 1 this matches the unblocked cap shape"
    return ConditionReport(name="dibkm-rate-condition", bound=bound, cap=float(sched.cap),
                           terms={"regularity_term": float(reg_term), "nu": nu, "p0": p0,
                                  "xi": xi, "varpi": varpi, "pi_floor": pi_floor,
                                  "n_agents": N}, note=note)


# ---------------------------------------------------------------------------
# File formats: trace, summary, plot data
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _atomic_write(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def trace_columns(trace: RunTrace) -> list[str]:
    n = trace.n_agents
    cols = ["k"]
    cols += [f"res_{i}" for i in range(n)]
    cols += [f"cons_{i}" for i in range(n)]
    if trace.distances is not None:
        cols += [f"dist_{i}" for i in range(n)]
    cols += [f"err_{i}" for i in range(n)]
    if trace.d_sq is not None:
        cols.append("d_sq")
    cols.append("max_res")
    if trace.wdist_sq is not None:
        cols += [f"wdist_{i}" for i in range(n)]
    return cols


def write_trace(trace: RunTrace, path) -> None:
    """Delimited trace file: one row per iteration, fixed column order."""
    meta = (f"# {TRACE_FORMAT} engine={trace.engine} agents={trace.n_agents}"
            f" blocks={','.join(str(s) for s in trace.block_sizes)}"
            f" stop={trace.stop_reason} fingerprint={trace.fingerprint}")
    if trace.block_probs is not None:
        meta += f" probs={','.join(_fmt(p) for p in trace.block_probs)}"
    lines = [meta, "\t".join(trace_columns(trace))]
    maxres = trace.max_residuals
    for r in range(trace.n_records):
        row = [str(int(trace.ks[r]))]
        row += [_fmt(v) for v in trace.residuals[r]]
        row += [_fmt(v) for v in trace.consensus[r]]
        if trace.distances is not None:
            row += [_fmt(v) for v in trace.distances[r]]
        row += [_fmt(v) for v in trace.err_norms[r]]
        if trace.d_sq is not None:
            row.append(_fmt(trace.d_sq[r]))
        row.append(_fmt(maxres[r]))
        if trace.wdist_sq is not None:
            row += [_fmt(v) for v in trace.wdist_sq[r]]
        lines.append("\t".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_trace(path) -> RunTrace:
    """Parse a trace file back into a RunTrace."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(f"# {TRACE_FORMAT}"):
            raise ValueError("not a trace file")
        meta = dict(tok.split("=", 1) for tok in header[2 + len(TRACE_FORMAT):].split() if "=" in tok)
        cols = fh.readline().rstrip("\n").split("\t")
        rows = [line.split("\t") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    n = int(meta["agents"])
    idx = {name: j for j, name in enumerate(cols)}
    block_sizes = tuple(int(s) for s in meta["blocks"].split(","))
    probs = None
    if "probs" in meta:
        probs = tuple(float(p) for p in meta["probs"].split(","))

    def grab(prefix):
        names = [f"{prefix}_{i}" for i in range(n)]
        if names[0] not in idx:
            return None
        return data[:, [idx[nm] for nm in names]]

    return RunTrace(
        engine=meta["engine"],
        block_sizes=block_sizes,
        block_probs=probs,
        ks=data[:, idx["k"]].astype(int),
        residuals=grab("res"),
        consensus=grab("cons"),
        distances=grab("dist"),
        d_sq=data[:, idx["d_sq"]] if "d_sq" in idx else None,
        wdist_sq=grab("wdist"),
        err_norms=grab("err"),
        stop_reason=meta["stop"],
        fingerprint=meta.get("fingerprint", ""),
        sup_coord=float("nan"),
    )


def write_summary(summary: dict, path) -> None:
    """Structured run summary; keys sorted for byte-stable output."""
    payload = {"format": SUMMARY_FORMAT}
    payload.update(summary)
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2,
                                   allow_nan=False, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def read_summary(path) -> dict:
    with open(path, encoding="ascii") as fh:
        payload = json.load(fh)
    if payload.get("format") != SUMMARY_FORMAT:
        raise ValueError("not a summary file")
    return payload


def write_plot_series(path, name: str, ks: np.ndarray, values: np.ndarray) -> None:
    """Plain (k, value, log10 k, log10 value) table for external plotting."""
    lines = [f"# fixnet-plot v1 series={name}", "k\tvalue\tlog10_k\tlog10_value"]
    for k, v in zip(ks, values):
        lk = _fmt(np.log10(k)) if k > 0 else "nan"
        lv = _fmt(np.log10(v)) if v > 0 else "nan"
        lines.append(f"{int(k)}\t{_fmt(v)}\t{lk}\t{lv}")
    _atomic_write(path, "\n".join(lines) + "\n")


def read_plot_series(path) -> tuple[str, np.ndarray, np.ndarray]:
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("# fixnet-plot v1"):
            raise ValueError("not a plot-data file")
        name = header.split("series=")[1].strip()
        fh.readline()
        ks, vals = [], []
        for line in fh:
            parts = line.split("\t")
            if len(parts) < 2:
                continue
            ks.append(int(parts[0]))
            vals.append(float(parts[1]))
    return name, np.asarray(ks), np.asarray(vals)


def monte_carlo_mean(series_list: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and standard error over equal-length repetitions."""
    M = np.stack([np.asarray(s, dtype=float) for s in series_list])
    mean = M.mean(axis=0)
    if M.shape[0] > 1:
        se = M.std(axis=0, ddof=1) / np.sqrt(M.shape[0])
    else:
        se = np.zeros_like(mean)
    return mean, se
