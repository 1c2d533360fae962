"""Iteration engines: centralized inexact KM, and the distributed variants.

One logical iteration is one synchronized round: all agents aggregate
their in-neighbors' states through the current weight matrix, then all
apply their own operator with the scheduled relaxation, an optional
evaluation error, and (for the block variant) a random activation mask.
Within a round the agent updates are pure functions of the previous state;
random streams are per-agent substreams so the whole run is reproducible
from the seeds alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import BufferedNormals, BufferedUniforms, substream
from .diagnostics import RunTrace
from .graph import GraphSequence, stationary_weights
from .hilbert import BlockLayout, Point, combine_rows
from .operators import NonexpansiveOp, OperatorSet

DIVERGENCE_LIMIT = 1e12   # abort threshold on any coordinate magnitude


class DivergenceError(RuntimeError):
    """State left the sane region; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# Schedules, error models, activation schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxationSchedule:
    """Per-agent relaxation parameters, constant in k.

    Every value lies in [floor, 1 - floor] for the declared floor in
    (0, 1/2]; cap is the largest value across agents.
    """

    floor: float
    values: tuple[float, ...]

    def __post_init__(self):
        floor = float(self.floor)
        values = tuple(float(v) for v in self.values)
        if not (0.0 < floor <= 0.5):
            raise ValueError("relaxation floor must lie in (0, 1/2]")
        for v in values:
            if not (floor - 1e-15 <= v <= 1.0 - floor + 1e-15):
                raise ValueError(
                    f"relaxation value {v} outside [{floor}, {1.0 - floor}]")
        object.__setattr__(self, "floor", floor)
        object.__setattr__(self, "values", values)

    @property
    def n_agents(self) -> int:
        return len(self.values)

    @property
    def cap(self) -> float:
        return max(self.values)

    def alphas(self, k: int) -> np.ndarray:
        return np.asarray(self.values)

    @classmethod
    def constant(cls, n_agents: int, value: float,
                 floor: Optional[float] = None) -> "RelaxationSchedule":
        if floor is None:
            floor = min(float(value), 1.0 - float(value), 0.5)
        return cls(floor=floor, values=(float(value),) * int(n_agents))


class ErrorModel:
    """Evaluation-error vectors with scheduled magnitudes.

    Directions are uniformly random per agent and step; magnitudes follow
    the declared schedule, so the norm sequence is deterministic.  All
    supported kinds are summable, matching the convergence hypotheses:
    sum_k ||eps_{i,k}|| < inf, and (magnitudes being deterministic)
    sum_k sqrt(E ||eps_{i,k}||^2) equals the same sum.
    """

    def __init__(self, kind: str, dim: int, n_agents: int, master_seed: int,
                 scale: float = 0.0, ratio: float = 0.0, exponent: float = 2.0,
                 magnitudes: Optional[Sequence[float]] = None):
        if kind not in ("zero", "geometric", "power", "custom"):
            raise ValueError(f"unknown error kind {kind!r}")
        self.kind = kind
        self.dim = int(dim)
        self.n_agents = int(n_agents)
        self.master_seed = int(master_seed)
        self.scale = float(scale)
        self.ratio = float(ratio)
        self.exponent = float(exponent)
        self.magnitudes = None if magnitudes is None else tuple(float(m) for m in magnitudes)
        if kind == "geometric":
            if not (0.0 < self.ratio < 1.0):
                raise ValueError("geometric ratio must lie in (0, 1)")
            if self.scale < 0:
                raise ValueError("scale must be nonnegative")
        if kind == "power":
            if self.exponent <= 1.0:
                raise ValueError("power exponent must exceed 1 (summability)")
            if self.scale < 0:
                raise ValueError("scale must be nonnegative")
        if kind == "custom" and self.magnitudes is None:
            raise ValueError("custom errors need explicit magnitudes")
        self._streams = [BufferedNormals(substream(self.master_seed, "err", i))
                         for i in range(self.n_agents)]
        self._next_k = 0

    # -- schedule ----------------------------------------------------------
    def magnitude(self, k: int) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "geometric":
            return self.scale * self.ratio ** k
        if self.kind == "power":
            return self.scale / (k + 1.0) ** self.exponent
        return self.magnitudes[k] if k < len(self.magnitudes) else 0.0

    def norm_sum(self) -> float:
        """Analytic bound on sum_k ||eps_{i,k}|| (exact where closed form)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "geometric":
            return self.scale / (1.0 - self.ratio)
        if self.kind == "power":
            return self.scale * (1.0 + 1.0 / (self.exponent - 1.0))
        return float(sum(self.magnitudes))

    def sqrt_sq_sum(self) -> float:
        """sum_k sqrt(E ||eps_{i,k}||^2); equals norm_sum for scheduled norms."""
        return self.norm_sum()

    @property
    def summable(self) -> bool:
        return True

    # -- draws -------------------------------------------------------------
    def draw_all(self, k: int) -> np.ndarray:
        """Error vectors for every agent at step k (monotone in k)."""
        if self.kind == "zero":
            return np.zeros((self.n_agents, self.dim))
        if k != self._next_k:
            raise RuntimeError(
                f"error draws are single-pass: expected step {self._next_k}, got {k}")
        self._next_k += 1
        mag = self.magnitude(k)
        out = np.empty((self.n_agents, self.dim))
        for i in range(self.n_agents):
            v = self._streams[i].take(self.dim)
            nrm = float(np.linalg.norm(v))
            if nrm < 1e-300:
                v = np.zeros(self.dim)
                v[0] = 1.0
                nrm = 1.0
            out[i] = (mag / nrm) * v
        return out

    @classmethod
    def zero(cls, dim: int, n_agents: int, master_seed: int = 0) -> "ErrorModel":
        return cls("zero", dim, n_agents, master_seed)

    @classmethod
    def geometric(cls, dim, n_agents, master_seed, scale, ratio) -> "ErrorModel":
        return cls("geometric", dim, n_agents, master_seed, scale=scale, ratio=ratio)

    @classmethod
    def power_decay(cls, dim, n_agents, master_seed, scale, exponent) -> "ErrorModel":
        return cls("power", dim, n_agents, master_seed, scale=scale, exponent=exponent)

    @classmethod
    def custom(cls, dim, n_agents, master_seed, magnitudes) -> "ErrorModel":
        return cls("custom", dim, n_agents, master_seed, magnitudes=magnitudes)


class BlockScheme:
    """Random block-activation vectors b in {0,1}^m, never all zero.

    Coordinates are independent coin flips with the declared probabilities;
    an all-zero outcome is rejected and redrawn, which raises the marginal
    activation probabilities slightly (effective_probs reports the
    corrected values).  Agent streams are independent substreams.
    """

    def __init__(self, probs: Sequence[float], n_agents: int, master_seed: int):
        p = tuple(float(v) for v in probs)
        if len(p) < 1 or any(not (0.0 < v <= 1.0) for v in p):
            raise ValueError("activation probabilities must lie in (0, 1]")
        self.probs = p
        self.n_agents = int(n_agents)
        self.master_seed = int(master_seed)
        self._p = np.asarray(p)
        self._streams = [BufferedUniforms(substream(self.master_seed, "act", i))
                         for i in range(self.n_agents)]
        self._next_k = 0

    @property
    def n_blocks(self) -> int:
        return len(self.probs)

    @property
    def p0(self) -> float:
        return min(self.probs)

    def all_zero_prob(self) -> float:
        return float(np.prod(1.0 - self._p))

    def effective_probs(self) -> tuple[float, ...]:
        """Rejection-corrected marginals P(b_l = 1 | b != 0)."""
        z = self.all_zero_prob()
        return tuple(float(v / (1.0 - z)) for v in self._p)

    def draw_all(self, k: int) -> np.ndarray:
        """Activation vectors (n_agents, m) at step k (monotone in k)."""
        if k != self._next_k:
            raise RuntimeError(
                f"activation draws are single-pass: expected step {self._next_k}, got {k}")
        self._next_k += 1
        m = self.n_blocks
        out = np.empty((self.n_agents, m), dtype=bool)
        for i in range(self.n_agents):
            while True:
                b = self._streams[i].take(m) < self._p
                if b.any():
                    break
            out[i] = b
        return out


# ---------------------------------------------------------------------------
# States and steps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NetworkState:
    """All agents' points at one iteration index."""

    k: int
    coords: np.ndarray        # (n_agents, dim)
    layout: BlockLayout

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.layout.dim:
            raise ValueError("state array must be (n_agents, layout.dim)")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def n_agents(self) -> int:
        return self.coords.shape[0]

    def points(self) -> list[Point]:
        return [Point(row, self.layout) for row in self.coords]


def mix_states(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-agent neighbor aggregation; row i is combine_rows(A[i], X)."""
    out = np.empty_like(X)
    for i in range(A.shape[0]):
        out[i] = combine_rows(A[i], X)
    return out


def km_step(op: NonexpansiveOp, x, alpha: float, eps) -> np.ndarray:
    """Single inexact KM update x + alpha (T(x) + eps - x)."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("relaxation must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != x.shape:
        raise ValueError("error vector dimension mismatch")
    return x + alpha * (op(x) + eps - x)


def _check_row_stochastic(A: np.ndarray, n: int):
    A = np.asarray(A, dtype=float)
    if A.shape != (n, n):
        raise ValueError(f"weight matrix must be {n}x{n}")
    if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("weight matrix must be row-stochastic")
    return A


def _apply_ops(opset: OperatorSet, X: np.ndarray) -> np.ndarray:
    out = np.empty_like(X)
    for i, op in enumerate(opset):
        out[i] = op(X[i])
    return out


def dikm_step(opset: OperatorSet, state: NetworkState, A_k: np.ndarray,
              sched: RelaxationSchedule, err: ErrorModel) -> NetworkState:
    """One synchronized distributed inexact KM round."""
    n = state.n_agents
    if opset.n_ops != n or sched.n_agents != n:
        raise ValueError("agent-count mismatch between state, operators, schedule")
    A = _check_row_stochastic(A_k, n)
    xhat = mix_states(A, state.coords)
    fx = _apply_ops(opset, xhat)
    eps = err.draw_all(state.k)
    alphas = sched.alphas(state.k)
    nxt = xhat + alphas[:, None] * (fx + eps - xhat)
    return NetworkState(state.k + 1, nxt, state.layout)


def dibkm_step(opset: OperatorSet, state: NetworkState, A_k: np.ndarray,
               sched: RelaxationSchedule, err: ErrorModel,
               blocks: BlockScheme) -> NetworkState:
    """One synchronized block-coordinate round: inactive blocks keep the
    aggregated value, active blocks take the full KM update."""
    n = state.n_agents
    if opset.n_ops != n or sched.n_agents != n or blocks.n_agents != n:
        raise ValueError("agent-count mismatch")
    if blocks.n_blocks != state.layout.n_blocks:
        raise ValueError("block-scheme size != layout block count")
    A = _check_row_stochastic(A_k, n)
    xhat = mix_states(A, state.coords)
    fx = _apply_ops(opset, xhat)
    eps = err.draw_all(state.k)
    active = blocks.draw_all(state.k)
    mask = np.repeat(active.astype(float), state.layout.block_sizes, axis=1)
    alphas = sched.alphas(state.k)
    nxt = xhat + mask * (alphas[:, None] * (fx + eps - xhat))
    return NetworkState(state.k + 1, nxt, state.layout)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

@dataclass
class StepInfo:
    """Snapshot handed to a step observer after each round."""

    k: int
    coords: np.ndarray        # state at k
    mixed: np.ndarray         # aggregated states
    fx_mixed: np.ndarray      # operator values at the aggregated states
    eps: np.ndarray
    alphas: np.ndarray
    active_mask: Optional[np.ndarray]
    next_coords: np.ndarray


def run(opset: OperatorSet, graph: Optional[GraphSequence], sched: RelaxationSchedule,
        err: ErrorModel, x0: np.ndarray, layout: BlockLayout, *,
        engine: str = "dikm", blocks: Optional[BlockScheme] = None,
        max_iters: int, stop_tolerance: float,
        pi: Optional[np.ndarray] = None, horizon: Optional[int] = None,
        observer: Optional[Callable[[StepInfo], None]] = None,
        fingerprint: str = "") -> RunTrace:
    """Iterate the configured engine, recording diagnostics each round.

    Stops at the iteration budget or when both the largest residual and the
    largest consensus error fall below stop_tolerance.  The caller is
    responsible for having validated the scenario (graph assumptions,
    nonexpansiveness); this loop only guards against divergence.
    """
    if engine not in ("km", "dikm", "dibkm"):
        raise ValueError(f"unknown engine {engine!r}")
    X = np.array(x0, dtype=float)
    n_agents, dim = X.shape
    if dim != layout.dim or opset.n_ops != n_agents:
        raise ValueError("state, layout, and operator-set shapes disagree")
    if engine == "km":
        if n_agents != 1:
            raise ValueError("the centralized engine requires exactly one agent")
    elif graph is None:
        raise ValueError("distributed engines need a graph sequence")
    if engine == "dibkm":
        if blocks is None:
            raise ValueError("block engine requires an activation scheme")
        if blocks.n_blocks != layout.n_blocks:
            raise ValueError("block-scheme size != layout block count")
    max_iters = int(max_iters)
    if max_iters < 0:
        raise ValueError("iteration budget must be nonnegative")

    if pi is None:
        if graph is None or n_agents == 1:
            pi = np.ones((max_iters + 2, 1))
        else:
            pi = stationary_weights(graph, max_iters, horizon)
    if pi.shape[0] < max_iters + 1:
        raise ValueError("absorption-weight table shorter than the run")

    oracle = opset.common_projector
    weight_vec = None
    if engine == "dibkm" and oracle is not None:
        inv_p = 1.0 / np.asarray(blocks.probs)
        weight_vec = np.repeat(inv_p, layout.block_sizes)

    R = max_iters + 1
    ks = np.arange(R)
    residuals = np.empty((R, n_agents))
    consensus = np.empty((R, n_agents))
    err_norms = np.zeros((R, n_agents))
    distances = np.empty((R, n_agents)) if oracle is not None else None
    d_sq = np.empty(R) if oracle is not None else None
    wdist_sq = np.empty((R, n_agents)) if weight_vec is not None else None
    sup_coord = 0.0

    def record(row: int, Xc: np.ndarray):
        nonlocal sup_coord
        sup_coord = max(sup_coord, float(np.abs(Xc).max()))
        for i, op in enumerate(opset):
            residuals[row, i] = np.linalg.norm(op(Xc[i]) - Xc[i])
        xbar = pi[row] @ Xc
        consensus[row] = np.linalg.norm(Xc - xbar[None, :], axis=1)
        if oracle is not None:
            proj = np.empty_like(Xc)
            for i in range(n_agents):
                proj[i] = oracle(Xc[i])
            dist_row = np.linalg.norm(Xc - proj, axis=1)
            distances[row] = dist_row
            d_sq[row] = float(pi[row] @ (dist_row ** 2))
            if weight_vec is not None:
                q = pi[row] @ proj
                diff = Xc - q[None, :]
                wdist_sq[row] = (diff * diff * weight_vec[None, :]).sum(axis=1)

    def trimmed(rows: int, reason: str) -> RunTrace:
        return RunTrace(
            engine=engine,
            block_sizes=layout.block_sizes,
            block_probs=None if blocks is None else blocks.probs,
            ks=ks[:rows].copy(),
            residuals=residuals[:rows].copy(),
            consensus=consensus[:rows].copy(),
            distances=None if distances is None else distances[:rows].copy(),
            d_sq=None if d_sq is None else d_sq[:rows].copy(),
            wdist_sq=None if wdist_sq is None else wdist_sq[:rows].copy(),
            err_norms=err_norms[:rows].copy(),
            stop_reason=reason,
            fingerprint=fingerprint,
            sup_coord=sup_coord,
        )

    k = 0
    while True:
        record(k, X)
        if (stop_tolerance > 0 and max_iters > 0
                and residuals[k].max() < stop_tolerance
                and consensus[k].max() < stop_tolerance):
            return trimmed(k + 1, "converged")
        if k == max_iters:
            return trimmed(k + 1, "budget")

        if engine == "km":
            xhat = X
        else:
            xhat = mix_states(graph.matrix(k), X)
        fx = _apply_ops(opset, xhat)
        eps = err.draw_all(k)
        err_norms[k] = np.linalg.norm(eps, axis=1)
        alphas = sched.alphas(k)
        mask = None
        if engine == "dibkm":
            active = blocks.draw_all(k)
            mask = np.repeat(active.astype(float), layout.block_sizes, axis=1)
            Xn = xhat + mask * (alphas[:, None] * (fx + eps - xhat))
        else:
            Xn = xhat + alphas[:, None] * (fx + eps - xhat)

        if observer is not None:
            observer(StepInfo(k=k, coords=X, mixed=xhat, fx_mixed=fx, eps=eps,
                              alphas=alphas, active_mask=mask, next_coords=Xn))

        if not np.all(np.isfinite(Xn)) or np.abs(Xn).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"state left the sane region at step {k}", trace=trimmed(k + 1, "diverged"))
        X = Xn
        k += 1
