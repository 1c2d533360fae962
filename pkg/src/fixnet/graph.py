"""Time-varying digraph sequences with row-stochastic weights.

A GraphSequence is a deterministic function k -> A_k together with its
declared joint-connectivity window Q and weight floor.  The mixing
analysis extracts, per time index, the absorption vector pi_k (the common
row limit of the backward products A_{s-1}...A_k), the geometric decay of
row disagreement, and the floor of the absorption weights; the fitted
decay constants are least-squares estimates, not theoretical values, so
the fit residual is reported alongside them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import substream_entropy

ROW_SUM_TOL = 1e-12        # row-stochasticity tolerance
PI_SUM_TOL = 1e-10         # absorption-vector normalization tolerance
CONTRACTION_TOL = 1e-10    # required row agreement of a contracted product
RECURSION_TOL = 1e-8       # pi_k^T = pi_{k+1}^T A_k check tolerance
FIT_FLOOR = 1e-12          # decay points below this are floating noise
DEGENERATE_RATE = 1e-12    # reported rate when mixing is instantaneous


class NonContractionError(RuntimeError):
    """Backward products failed to contract within the horizon."""


class GraphSequence:
    """Deterministic sequence of row-stochastic adjacency matrices.

    Entry (i, j) of A_k is the weight agent i places on what it receives
    from agent j at step k; nonzero entries of compliant sequences stay at
    or above the declared floor and diagonals stay positive.
    """

    def __init__(self, kind: str, n_agents: int, matrix_fn: Callable[[int], np.ndarray],
                 window: int, weight_floor: float,
                 period: Optional[int] = None, seed: Optional[int] = None):
        self.kind = kind
        self.n_agents = int(n_agents)
        self.window = int(window)
        self.weight_floor = float(weight_floor)
        self.period = period
        self.seed = seed
        self._matrix_fn = matrix_fn
        self._cache: dict[int, np.ndarray] = {}

    def matrix(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("time index must be nonnegative")
        if self.period is None:
            return np.asarray(self._matrix_fn(k), dtype=float)
        key = k % self.period
        A = self._cache.get(key)
        if A is None:
            A = np.asarray(self._matrix_fn(key), dtype=float)
            A.flags.writeable = False
            self._cache[key] = A
        return A

    def describe(self) -> dict:
        return {"kind": self.kind, "n_agents": self.n_agents, "window": self.window,
                "weight_floor": self.weight_floor, "period": self.period, "seed": self.seed}


def uniform_row_stochastic(support: np.ndarray) -> np.ndarray:
    """Uniform weights over each row's support (in-neighbors incl. self)."""
    support = support.astype(bool)
    N = support.shape[0]
    A = np.zeros((N, N))
    for i in range(N):
        deg = int(support[i].sum())
        if deg == 0:
            raise ValueError("row with empty support")
        A[i, support[i]] = 1.0 / deg
    return A


def _edges_to_support(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Support matrix from directed edges (u -> v means entry (v, u))."""
    S = np.eye(n, dtype=bool)
    for u, v in edges:
        S[v, u] = True
    return S


# ---------------------------------------------------------------------------
# Built-in generators.  Each declares its own (window, floor); the checker
# below validates the declaration.
# ---------------------------------------------------------------------------

def static_complete(n_agents: int) -> GraphSequence:
    """All-to-all graph with equal weights 1/N."""
    A = np.full((n_agents, n_agents), 1.0 / n_agents)
    return GraphSequence("static-complete", n_agents, lambda k: A,
                         window=1, weight_floor=1.0 / n_agents, period=1)


def static_matrix(A, window: int = 1, weight_floor: Optional[float] = None) -> GraphSequence:
    """Constant sequence from an explicit row-stochastic matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("adjacency matrix must be square")
    if weight_floor is None:
        nz = A[A > 0]
        weight_floor = float(nz.min()) if nz.size else 0.0
    return GraphSequence("static-matrix", A.shape[0], lambda k: A,
                         window=int(window), weight_floor=float(weight_floor), period=1)


def periodic_rotating(n_agents: int) -> GraphSequence:
    """Self-loops plus the single edge (k mod N) -> (k+1 mod N) at step k.

    Any window of N consecutive steps contains every cycle edge, so the
    declared joint-connectivity window is N.
    """
    n = int(n_agents)
    mats = []
    for k in range(n):
        S = _edges_to_support(n, [(k % n, (k + 1) % n)])
        mats.append(uniform_row_stochastic(S))
    return GraphSequence("periodic-rotating", n, lambda k: mats[k % n],
                         window=n, weight_floor=1.0 / n, period=n)


def periodic_matrices(matrices, window: int) -> GraphSequence:
    """Periodic sequence cycling through explicit matrices."""
    mats = [np.atleast_2d(np.asarray(M, dtype=float)) for M in matrices]
    n = mats[0].shape[0]
    if any(M.shape != (n, n) for M in mats):
        raise ValueError("all matrices must be square and same size")
    nz = np.concatenate([M[M > 0] for M in mats])
    floor = float(nz.min()) if nz.size else 0.0
    return GraphSequence("periodic-matrices", n, lambda k: mats[k % len(mats)],
                         window=int(window), weight_floor=floor, period=len(mats))


def random_pool(n_agents: int, seed: int) -> GraphSequence:
    """Seeded draw, per step, from a pool of strongly connected templates.

    Each template (forward ring, backward ring, lazy all-to-all) is itself
    strongly connected, so the declared window is 1.  The all-to-all member
    keeps extra self-weight so no single template collapses disagreement in
    one step, which keeps the decay-rate fit well posed.  The matrix at
    step k is a pure function of (seed, k).
    """
    n = int(n_agents)
    fwd = uniform_row_stochastic(_edges_to_support(n, [(i, (i + 1) % n) for i in range(n)]))
    bwd = uniform_row_stochastic(_edges_to_support(n, [((i + 1) % n, i) for i in range(n)]))
    lazy = 0.75 * np.eye(n) + 0.25 * np.full((n, n), 1.0 / n)
    pool = [fwd, bwd, lazy]

    def fn(k):
        idx = substream_entropy(seed, "graph", k) % len(pool)
        return pool[idx]

    return GraphSequence("random-pool", n, fn, window=1, weight_floor=0.25 / n,
                         period=None, seed=int(seed))


def disconnected_pair(sizes: tuple[int, int]) -> GraphSequence:
    """Two permanently disconnected complete components (negative example)."""
    n = sizes[0] + sizes[1]
    A = np.zeros((n, n))
    A[:sizes[0], :sizes[0]] = 1.0 / sizes[0]
    A[sizes[0]:, sizes[0]:] = 1.0 / sizes[1]
    return GraphSequence("disconnected", n, lambda k: A,
                         window=1, weight_floor=1.0 / max(sizes), period=1)


# ---------------------------------------------------------------------------
# Assumption checking
# ---------------------------------------------------------------------------

def strongly_connected(support: np.ndarray) -> bool:
    """Double reachability sweep from node 0 over a support matrix.

    support[i, j] nonzero means an edge j -> i; the graph is strongly
    connected iff node 0 reaches every node and every node reaches node 0.
    """
    n = support.shape[0]
    out_edges = [np.flatnonzero(support[:, u]) for u in range(n)]   # u -> i
    in_edges = [np.flatnonzero(support[u, :]) for u in range(n)]    # j -> u

    def sweep(adj):
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return bool(seen.all())

    return sweep(out_edges) and sweep(in_edges)


@dataclass
class GraphCheckReport:
    """Outcome of the connectivity-and-weights verification."""

    ok: bool
    n_checked: int
    window: int
    violations: list = field(default_factory=list)  # (k, rule, detail)

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None

    def summary(self) -> str:
        if self.ok:
            return f"pass ({self.n_checked + 1} steps, window {self.window})"
        k, rule, detail = self.first_violation
        return f"fail at k={k}: {rule} ({detail})"


def check_graph_assumptions(g: GraphSequence, horizon: int) -> GraphCheckReport:
    """Verify row-stochasticity, positive diagonals, the weight floor, and
    joint strong connectivity of every length-Q window, over k = 0..horizon.

    Violations are report entries, not exceptions.
    """
    if horizon < g.window:
        raise ValueError("horizon must be at least the declared window")
    report = GraphCheckReport(ok=True, n_checked=int(horizon), window=g.window)

    def violate(k, rule, detail):
        report.ok = False
        report.violations.append((k, rule, detail))

    for k in range(horizon + 1):
        A = g.matrix(k)
        if A.shape != (g.n_agents, g.n_agents):
            violate(k, "shape", f"got {A.shape}")
            continue
        rows = A.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            violate(k, "row-stochastic", f"max row-sum defect {np.abs(rows - 1).max():.3e}")
        if np.any(A < 0):
            violate(k, "nonnegative", "negative weight present")
        if np.any(np.diag(A) <= 0):
            violate(k, "diagonal-positive", "some a_ii is zero")
        nz = A[A > 0]
        if nz.size and nz.min() < g.weight_floor - 1e-15:
            violate(k, "weight-floor", f"min nonzero weight {nz.min():.3e} < {g.weight_floor:.3e}")

    for k in range(horizon + 1):
        union = np.zeros((g.n_agents, g.n_agents), dtype=bool)
        for l in range(1, g.window + 1):
            union |= g.matrix(k + l) > 0
        if not strongly_connected(union):
            violate(k, "joint-connectivity",
                    f"union over steps {k + 1}..{k + g.window} not strongly connected")
            break

    report.violations.sort(key=lambda v: v[0])
    return report


# ---------------------------------------------------------------------------
# Backward products and mixing analysis
# ---------------------------------------------------------------------------

def backward_product(g: GraphSequence, s: int, k: int) -> np.ndarray:
    """Product A_{s-1} A_{s-2} ... A_k; the identity when s == k."""
    if not (s >= k >= 0):
        raise ValueError("need s >= k >= 0")
    P = np.eye(g.n_agents)
    for t in range(k, s):
        P = g.matrix(t) @ P
    return P


def _row_spread(P: np.ndarray) -> float:
    return float((P.max(axis=0) - P.min(axis=0)).max())


def _contracted_product(g: GraphSequence, k: int, horizon: int):
    """All partial backward products from k out to k + horizon."""
    P = np.eye(g.n_agents)
    prods = [P]
    for t in range(k, k + horizon):
        P = g.matrix(t) @ P
        prods.append(P)
    return prods


def _auto_horizon(g: GraphSequence, k: int, max_horizon: int = 16384) -> int:
    h = max(8 * g.window, 32)
    while h <= max_horizon:
        if _row_spread(backward_product(g, k + h, k)) <= CONTRACTION_TOL:
            return h
        h *= 2
    raise NonContractionError(
        f"backward products from k={k} did not contract within horizon {max_horizon}; "
        "the sequence may violate the connectivity assumptions")


@dataclass(frozen=True)
class MixingAnalysis:
    """Absorption vectors and fitted disagreement decay of a graph sequence.

    pi[k] holds the absorption vector for each analyzed k (one extra row
    past k_max so the stationarity recursion can be checked).  varpi and
    xi are the fitted scale and rate of the row-disagreement decay
    max_ij |(A^{s:k})_{ij} - pi_{j,k}| <= varpi * xi^(s-k); they come from
    a pooled log-linear least-squares fit whose rms residual is recorded.
    """

    n_agents: int
    k_max: int
    horizon: int
    pi: np.ndarray                 # (k_max + 2, N)
    varpi: float
    xi: float
    fit_residual: float
    degenerate_fit: bool
    pi_floor: float
    theory_floor: float
    recursion_defect: float

    @property
    def floor_ok(self) -> bool:
        return self.pi_floor >= self.theory_floor - 1e-12


def compute_mixing(g: GraphSequence, k_max: int, horizon: Optional[int] = None) -> MixingAnalysis:
    """Estimate absorption vectors and decay constants over k = 0..k_max.

    Each pi_k is read off an independently computed contracted backward
    product, so the stationarity recursion defect reported here is a real
    consistency check, not true by construction.
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    if horizon is None:
        horizon = _auto_horizon(g, 0)
    horizon = int(horizon)

    pis = np.empty((k_max + 2, g.n_agents))
    fit_s: list[float] = []
    fit_logd: list[float] = []
    for k in range(k_max + 2):
        prods = _contracted_product(g, k, horizon)
        spread = _row_spread(prods[-1])
        if spread > CONTRACTION_TOL:
            raise NonContractionError(
                f"row spread {spread:.3e} at k={k} after horizon {horizon}; "
                "increase the horizon or check the connectivity assumptions")
        pi_k = prods[-1].mean(axis=0)
        if abs(pi_k.sum() - 1.0) > PI_SUM_TOL:
            raise NonContractionError(f"absorption vector at k={k} does not normalize")
        pis[k] = pi_k
        if k <= k_max:
            for s_rel in range(1, horizon + 1):
                delta = float(np.abs(prods[s_rel] - pi_k[None, :]).max())
                if delta > FIT_FLOOR:
                    fit_s.append(float(s_rel))
                    fit_logd.append(np.log(delta))

    if fit_s:
        slope, intercept = np.polyfit(fit_s, fit_logd, 1)
        if slope >= 0:
            raise NonContractionError("row disagreement is not decaying")
        xi = float(np.exp(slope))
        varpi = float(np.exp(intercept))
        pred = slope * np.asarray(fit_s) + intercept
        fit_residual = float(np.sqrt(np.mean((pred - np.asarray(fit_logd)) ** 2)))
        degenerate = False
    else:
        # Instant mixing: every decay point sits below the noise floor.
        xi, varpi, fit_residual, degenerate = DEGENERATE_RATE, 1.0, 0.0, True

    recursion_defect = 0.0
    for k in range(k_max + 1):
        lhs = pis[k]
        rhs = pis[k + 1] @ g.matrix(k)
        recursion_defect = max(recursion_defect, float(np.abs(lhs - rhs).max()))

    pi_floor = float(pis[:k_max + 1].min())
    theory_floor = g.weight_floor ** (g.window * (g.n_agents - 1))
    return MixingAnalysis(n_agents=g.n_agents, k_max=int(k_max), horizon=horizon,
                          pi=pis, varpi=varpi, xi=xi, fit_residual=fit_residual,
                          degenerate_fit=degenerate, pi_floor=pi_floor,
                          theory_floor=theory_floor, recursion_defect=recursion_defect)


def stationary_weights(g: GraphSequence, k_hi: int, horizon: Optional[int] = None) -> np.ndarray:
    """Absorption vectors pi_k for k = 0..k_hi+1, filled by recursion.

    One contracted backward product pins pi at the far end; the exact
    stationarity recursion pi_k^T = pi_{k+1}^T A_k then fills the table
    downward.  Backward multiplication by row-stochastic matrices contracts
    discrepancies, so the recursion is numerically stable; agreement with
    per-k products is covered by tests.
    """
    if horizon is None:
        horizon = _auto_horizon(g, k_hi + 1)
    top = backward_product(g, k_hi + 1 + horizon, k_hi + 1)
    if _row_spread(top) > CONTRACTION_TOL:
        raise NonContractionError("backward products did not contract; bad horizon or graph")
    table = np.empty((k_hi + 2, g.n_agents))
    table[k_hi + 1] = top.mean(axis=0)
    for k in range(k_hi, -1, -1):
        table[k] = table[k + 1] @ g.matrix(k)
    return table


# ---------------------------------------------------------------------------
# Matrix-list export
# ---------------------------------------------------------------------------

def export_graph_sequence(g: GraphSequence, count: int, path) -> None:
    """Write A_0..A_{count} as one row-major record per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# fixnet-graphs v1 agents={g.n_agents} kind={g.kind}\n")
        for k in range(count + 1):
            flat = " ".join(f"{v:.17g}" for v in g.matrix(k).ravel())
            fh.write(f"{k} {flat}\n")


def read_graph_sequence(path) -> list[tuple[int, np.ndarray]]:
    """Parse a matrix-list file back into (k, A_k) pairs."""
    out = []
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("# fixnet-graphs v1"):
            raise ValueError("not a graph-sequence file")
        n = int(header.split("agents=")[1].split()[0])
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            k = int(parts[0])
            vals = np.array([float(v) for v in parts[1:]])
            if vals.size != n * n:
                raise ValueError(f"record {k} has {vals.size} entries, expected {n * n}")
            out.append((k, vals.reshape(n, n)))
    return out
