"""Nonexpansive operator catalog, combinators, and regularity estimation.

Every catalog operator is a 1-Lipschitz map on R^n, optionally bundled with
an exact projector onto its fixed set (the distance oracle used by the
diagnostics).  Regularity constants have no constructive formula, so they
are estimated by seeded sampling over a ball and recorded together with
their provenance (radius, sample count, seed); they are estimates, never
certificates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import substream
from .hilbert import Point

# Ratios whose denominator falls below this floor are skipped when
# estimating regularity constants (avoids 0/0 at fixed points).
RESIDUAL_FLOOR = 1e-9


class DomainError(ValueError):
    """Point lies outside an operator's declared domain."""


class EstimationError(RuntimeError):
    """A sampling-based estimate could not be formed."""


@dataclass(frozen=True)
class HalfOpenBox:
    """Axis-aligned domain [lo, hi) used by domain-restricted operators."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, x: np.ndarray) -> bool:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return bool(np.all(x >= lo) and np.all(x < hi))


class NonexpansiveOp:
    """A nonexpansive map with an optional exact fixed-set projector.

    Nonexpansiveness is a promise verified by property tests, not enforced
    per call.  Operators with a declared domain reject outside points with
    an explicit DomainError rather than extrapolating.
    """

    def __init__(self, name: str, dim: int, fn: Callable[[np.ndarray], np.ndarray],
                 projector: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 domain: Optional[HalfOpenBox] = None, quasi_only: bool = False):
        self.name = name
        self.dim = int(dim)
        self._fn = fn
        self._projector = projector
        self.domain = domain
        # quasi_only: the map only promises not to move away from its fixed
        # points (quasi-nonexpansive), not pairwise nonexpansiveness
        self.quasi_only = bool(quasi_only)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name}: expected vector of length {self.dim}, got {x.shape}")
        if self.domain is not None and not self.domain.contains(x):
            raise DomainError(f"{self.name}: point outside declared domain")
        return x

    def __call__(self, x) -> np.ndarray:
        return self._fn(self._check(x))

    @property
    def has_projector(self) -> bool:
        return self._projector is not None

    def fixed_projection(self, x) -> np.ndarray:
        if self._projector is None:
            raise EstimationError(f"{self.name}: no fixed-set projector available")
        return self._projector(self._check(x))

    def __repr__(self):
        return f"NonexpansiveOp({self.name!r}, dim={self.dim})"


def evaluate(op: NonexpansiveOp, x: Point) -> Point:
    """Apply an operator to a Point, returning a Point in the same layout."""
    return Point(op(x.coords), x.layout)


def residual(op: NonexpansiveOp, x) -> float:
    """||T(x) - x||, the standard fixed-point progress measure."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(op(x) - x))


def averaged(op: NonexpansiveOp, alpha: float) -> NonexpansiveOp:
    """Relaxed map (1 - alpha) Id + alpha T; keeps T's fixed set."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("averaging parameter must lie in (0, 1)")

    def fn(x):
        return (1.0 - alpha) * x + alpha * op(x)

    return NonexpansiveOp(f"averaged({op.name},{alpha})", op.dim, fn,
                          projector=op._projector, domain=op.domain,
                          quasi_only=op.quasi_only)


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

def identity_op(dim: int) -> NonexpansiveOp:
    return NonexpansiveOp("identity", dim, lambda x: x.copy(),
                          projector=lambda x: x.copy())


def box_projection(lo, hi) -> NonexpansiveOp:
    """Projection onto the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(lo > hi):
        raise ValueError("invalid box bounds")

    def fn(x):
        return np.clip(x, lo, hi)

    return NonexpansiveOp(f"box[{lo.tolist()},{hi.tolist()}]", lo.shape[0], fn, projector=fn)


def ball_projection(center, radius: float) -> NonexpansiveOp:
    """Projection onto the closed ball B(center; radius)."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    r = float(radius)
    if r <= 0:
        raise ValueError("radius must be positive")

    def fn(x):
        d = x - c
        nrm = np.linalg.norm(d)
        if nrm <= r:
            return x.copy()
        return c + (r / nrm) * d

    return NonexpansiveOp(f"ball(r={r})", c.shape[0], fn, projector=fn)


def halfspace_projection(a, b: float) -> NonexpansiveOp:
    """Projection onto {x : a.x <= b}: x - max(0, (a.x - b)/||a||^2) a."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    nsq = float(np.dot(a, a))
    if nsq <= 0:
        raise ValueError("halfspace normal must be nonzero")
    b = float(b)

    def fn(x):
        viol = np.dot(a, x) - b
        if viol <= 0:
            return x.copy()
        return x - (viol / nsq) * a

    return NonexpansiveOp(f"halfspace(b={b})", a.shape[0], fn, projector=fn)


def halfspace_distance(a, b: float) -> Callable[[np.ndarray], float]:
    """Closed-form distance to {x : a.x <= b}."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    nrm = float(np.linalg.norm(a))

    def dist(x):
        return max(0.0, (float(np.dot(a, x)) - b) / nrm)

    return dist


def affine_projector(A, d) -> Callable[[np.ndarray], np.ndarray]:
    """Exact projection onto the affine set {x : A x = d} (assumed consistent)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    pinv = np.linalg.pinv(A)

    def proj(x):
        return x - pinv @ (A @ x - d)

    return proj


def affine_projection_op(A, d) -> NonexpansiveOp:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    proj = affine_projector(A, d)
    return NonexpansiveOp(f"affine({A.shape[0]}x{A.shape[1]})", A.shape[1], proj, projector=proj)


def two_halfspace_projection(a1, b1: float, a2, b2: float) -> Callable[[np.ndarray], np.ndarray]:
    """Exact projection onto the intersection of two halfspaces.

    Case analysis over the active set: the nearest of {x itself, the two
    single-halfspace projections, the projection onto both boundary
    hyperplanes} that is feasible.  Exact for any pair with independent
    normals; verified against a constrained-minimization oracle in tests.
    """
    a1 = np.atleast_1d(np.asarray(a1, dtype=float))
    a2 = np.atleast_1d(np.asarray(a2, dtype=float))
    b1, b2 = float(b1), float(b2)
    p1 = halfspace_projection(a1, b1)
    p2 = halfspace_projection(a2, b2)
    both = affine_projector(np.stack([a1, a2]), np.array([b1, b2]))
    feas_tol = 1e-12

    def feasible(x):
        return (np.dot(a1, x) <= b1 + feas_tol * (1 + abs(b1))
                and np.dot(a2, x) <= b2 + feas_tol * (1 + abs(b2)))

    def proj(x):
        if feasible(x):
            return x.copy()
        best, best_d = None, np.inf
        for cand in (p1(x), p2(x), both(x)):
            if feasible(cand):
                d = np.linalg.norm(cand - x)
                if d < best_d:
                    best, best_d = cand, d
        if best is None:  # numerically degenerate normals
            return both(x)
        return best

    return proj


def gradient_descent_map(P, q, step: float) -> NonexpansiveOp:
    """x -> x - step * grad f(x) for the convex quadratic f = x'Px/2 - q'x.

    Nonexpansive for 0 < step < 2/L with L the largest eigenvalue of P.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if not np.allclose(P, P.T):
        raise ValueError("quadratic matrix must be symmetric")
    eigs = np.linalg.eigvalsh(P)
    if eigs[0] < -1e-12:
        raise ValueError("quadratic must be convex (P positive semidefinite)")
    L = float(eigs[-1])
    if not (0.0 < step < 2.0 / L):
        raise ValueError(f"step must lie in (0, {2.0 / L:g}) for this quadratic")
    proj = affine_projector(P, q)

    def fn(x):
        return x - step * (P @ x - q)

    return NonexpansiveOp(f"gradmap(step={step})", P.shape[0], fn, projector=proj)


def row_block_map(Ai, bi, sigma: Optional[float] = None) -> NonexpansiveOp:
    """Agent map x -> x - Ai'(Ai x - bi)/sigma for a row block of A x = b.

    With sigma at least the largest squared singular value of Ai the map is
    nonexpansive and its fixed set is {x : Ai x = bi} (for consistent bi).
    """
    Ai = np.atleast_2d(np.asarray(Ai, dtype=float))
    bi = np.atleast_1d(np.asarray(bi, dtype=float))
    smax_sq = float(np.linalg.svd(Ai, compute_uv=False)[0] ** 2)
    if sigma is None:
        sigma = smax_sq
    sigma = float(sigma)
    if sigma < smax_sq * (1 - 1e-12):
        raise ValueError("sigma must dominate the largest squared singular value")
    proj = affine_projector(Ai, bi)

    def fn(x):
        return x - (Ai.T @ (Ai @ x - bi)) / sigma

    return NonexpansiveOp(f"rowblock({Ai.shape[0]}x{Ai.shape[1]})", Ai.shape[1], fn,
                          projector=proj)


_UNIT = HalfOpenBox((0.0,), (1.0,))


def square_map() -> NonexpansiveOp:
    """T(x) = x^2 on the domain [0, 1); fixes only 0.

    Quasi-nonexpansive (x^2 <= x on the domain) but not pairwise
    nonexpansive, since |x^2 - y^2| = |x + y| |x - y| and |x + y| can reach
    almost 2.  Also not linearly regular: the residual x(1-x) vanishes as
    x -> 1 while the distance to the fixed point stays x.
    """
    return NonexpansiveOp("square[0,1)", 1, lambda x: x * x,
                          projector=lambda x: np.zeros(1), domain=_UNIT,
                          quasi_only=True)


def clip_half_map() -> NonexpansiveOp:
    """Projection onto [0, 1/2], domain-restricted to [0, 1)."""
    def fn(x):
        return np.clip(x, 0.0, 0.5)

    return NonexpansiveOp("clip[0,1/2]", 1, fn, projector=fn, domain=_UNIT)


# ---------------------------------------------------------------------------
# Operator collections
# ---------------------------------------------------------------------------

class OperatorSet:
    """The N agent operators plus an optional common-fixed-set projector."""

    def __init__(self, ops: Sequence[NonexpansiveOp],
                 common_projector: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        ops = list(ops)
        if len(ops) < 1:
            raise ValueError("need at least one operator")
        dim = ops[0].dim
        if any(op.dim != dim for op in ops):
            raise ValueError("all operators must share one dimension")
        self.ops = ops
        self.common_projector = common_projector

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    @property
    def dim(self) -> int:
        return self.ops[0].dim

    def __iter__(self):
        return iter(self.ops)

    def __getitem__(self, i):
        return self.ops[i]

    @property
    def has_common_projector(self) -> bool:
        return self.common_projector is not None

    def distance_to_common(self, x) -> float:
        if self.common_projector is None:
            raise EstimationError("no common-fixed-set projector available")
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.common_projector(x)))


def power_constant_from_linear(kappas: Sequence[float], mu: float) -> float:
    """Combined power-regularity constant mu * max_i kappa_i implied by
    per-operator linear regularity plus set-collection regularity."""
    kappas = [float(k) for k in kappas]
    if any(k < 0 for k in kappas) or mu < 0:
        raise ValueError("regularity constants must be nonnegative")
    return float(mu) * max(kappas)


# ---------------------------------------------------------------------------
# Sampling-based regularity estimation
# ---------------------------------------------------------------------------

def sample_in_ball(rng: np.random.Generator, dim: int, radius: float, count: int) -> np.ndarray:
    """Uniform samples over the closed ball B(0; radius)."""
    g = rng.standard_normal((count, dim))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    radii = radius * rng.random(count) ** (1.0 / dim)
    return g / nrm * radii[:, None]


def _admissible(points: np.ndarray, ops: Sequence[NonexpansiveOp]) -> np.ndarray:
    """Drop samples outside any declared operator domain."""
    keep = np.ones(points.shape[0], dtype=bool)
    for op in ops:
        if op.domain is not None:
            lo = np.asarray(op.domain.lo)
            hi = np.asarray(op.domain.hi)
            keep &= np.all(points >= lo, axis=1) & np.all(points < hi, axis=1)
    return points[keep]


def estimate_linear_regularity(op: NonexpansiveOp, radius: float, samples: int,
                               rng_seed: int) -> float:
    """Largest sampled ratio d_Fix(x) / ||x - T(x)|| over B(0; radius).

    Requires the operator's fixed-set projector; samples with residual
    below RESIDUAL_FLOOR are skipped.  Deterministic for a fixed seed.
    """
    if not op.has_projector:
        raise EstimationError(f"{op.name}: fixed-set projector required")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = substream(rng_seed, "linreg", op.name)
    pts = _admissible(sample_in_ball(rng, op.dim, radius, int(samples)), [op])
    best = -np.inf
    for x in pts:
        r = residual(op, x)
        if r <= RESIDUAL_FLOOR:
            continue
        d = float(np.linalg.norm(x - op.fixed_projection(x)))
        best = max(best, d / r)
    if not np.isfinite(best):
        raise EstimationError(
            f"{op.name}: all sampled residuals below {RESIDUAL_FLOOR}; cannot estimate")
    return float(best)


def estimate_power_regularity(ops: OperatorSet, radius: float, samples: int,
                              rng_seed: int) -> float:
    """Largest sampled ratio d_common(x) / sum_i ||x - F_i(x)||.

    Requires the common-fixed-set projector; samples whose residual sum is
    below RESIDUAL_FLOOR are skipped.  Deterministic for a fixed seed.
    """
    if not ops.has_common_projector:
        raise EstimationError("common-fixed-set projector required")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = substream(rng_seed, "powreg")
    pts = _admissible(sample_in_ball(rng, ops.dim, radius, int(samples)), ops.ops)
    best = -np.inf
    for x in pts:
        denom = sum(residual(op, x) for op in ops)
        if denom <= RESIDUAL_FLOOR:
            continue
        best = max(best, ops.distance_to_common(x) / denom)
    if not np.isfinite(best):
        raise EstimationError("all sampled residual sums below floor; cannot estimate")
    return float(best)


@dataclass(frozen=True)
class RegularityEstimate:
    """Sampled regularity constants with their provenance.

    kappas[i] bounds d_{Fix(F_i)} / residual_i per operator, kappa_set
    bounds d_common / max_i d_{Fix(F_i)} for the fixed-set collection,
    kappa_max is the largest per-operator constant, and nu bounds
    d_common / sum_i residual_i.  All maxima are taken over one shared
    sample set on B(0; radius).
    """

    kappas: tuple[float, ...]
    kappa_set: float
    kappa_max: float
    nu: float
    radius: float
    sample_count: int
    rng_seed: int


def estimate_regularity(ops: OperatorSet, radius: float, samples: int,
                        rng_seed: int) -> RegularityEstimate:
    """All regularity constants estimated on one shared sample set.

    Sharing samples makes the combination bound nu <= kappa_set * kappa_max
    hold by construction up to the residual floor, which the tests exploit.
    """
    if not ops.has_common_projector:
        raise EstimationError("common-fixed-set projector required")
    if any(not op.has_projector for op in ops):
        raise EstimationError("every operator needs a fixed-set projector")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = substream(rng_seed, "regularity")
    pts = _admissible(sample_in_ball(rng, ops.dim, radius, int(samples)), ops.ops)
    if pts.shape[0] == 0:
        raise EstimationError("no admissible samples inside operator domains")

    n = ops.n_ops
    kappas = np.full(n, -np.inf)
    mu_best = -np.inf
    nu_best = -np.inf
    for x in pts:
        res = np.array([residual(op, x) for op in ops])
        dists = np.array([float(np.linalg.norm(x - op.fixed_projection(x))) for op in ops])
        for i in range(n):
            if res[i] > RESIDUAL_FLOOR:
                kappas[i] = max(kappas[i], dists[i] / res[i])
        dstar = ops.distance_to_common(x)
        dmax = float(dists.max())
        if dmax > RESIDUAL_FLOOR:
            mu_best = max(mu_best, dstar / dmax)
        rsum = float(res.sum())
        if rsum > RESIDUAL_FLOOR:
            nu_best = max(nu_best, dstar / rsum)
    if not (np.all(np.isfinite(kappas)) and np.isfinite(mu_best) and np.isfinite(nu_best)):
        raise EstimationError("insufficient usable samples for a full regularity estimate")
    return RegularityEstimate(kappas=tuple(float(k) for k in kappas),
                              kappa_set=float(mu_best),
                              kappa_max=float(kappas.max()),
                              nu=float(nu_best),
                              radius=float(radius),
                              sample_count=int(pts.shape[0]),
                              rng_seed=int(rng_seed))


def quasi_nonexpansiveness_defect(op: NonexpansiveOp, radius: float, samples: int,
                                  rng_seed: int) -> float:
    """Largest sampled ratio ||T(x)-z|| / ||x-z|| minus one, z the nearest
    fixed point: the defect of the quasi-nonexpansiveness promise."""
    if not op.has_projector:
        raise EstimationError(f"{op.name}: fixed-set projector required")
    rng = substream(rng_seed, "qne", op.name)
    pts = _admissible(sample_in_ball(rng, op.dim, radius, int(samples)), [op])
    worst = -np.inf
    for x in pts:
        z = op.fixed_projection(x)
        dxz = float(np.linalg.norm(x - z))
        if dxz <= 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(op(x) - z)) / dxz - 1.0)
    if not np.isfinite(worst):
        raise EstimationError("no usable samples")
    return float(worst)


def nonexpansiveness_defect(op: NonexpansiveOp, radius: float, pairs: int,
                            rng_seed: int) -> float:
    """Largest sampled ratio ||T(x)-T(y)|| / ||x-y|| minus one.

    Nonpositive (up to floating error) for a genuinely nonexpansive map;
    used by scenario validation and the property tests.
    """
    rng = substream(rng_seed, "nonexp", op.name)
    xs = _admissible(sample_in_ball(rng, op.dim, radius, int(pairs)), [op])
    ys = _admissible(sample_in_ball(rng, op.dim, radius, int(pairs)), [op])
    m = min(len(xs), len(ys))
    worst = -np.inf
    for x, y in zip(xs[:m], ys[:m]):
        dxy = float(np.linalg.norm(x - y))
        if dxy <= 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(op(x) - op(y))) / dxy - 1.0)
    if not np.isfinite(worst):
        raise EstimationError("no usable sample pairs")
    return float(worst)
