"""Reproducible preset experiments.

A Scenario wires an operator set, a graph sequence, a relaxation schedule,
an error-model spec, an optional block scheme, and an initial-point spec
into one validated configuration.  Everything random is seeded explicitly;
stateful pieces (error and activation streams) are instantiated fresh per
run from labeled substreams of the run's master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import substream, substream_entropy
from .engine import BlockScheme, ErrorModel, RelaxationSchedule
from .graph import (GraphSequence, check_graph_assumptions, periodic_rotating,
                    static_complete)
from .hilbert import BlockLayout
from .operators import (EstimationError, NonexpansiveOp, OperatorSet,
                        affine_projector, ball_projection, box_projection,
                        clip_half_map, estimate_regularity, halfspace_projection,
                        identity_op, nonexpansiveness_defect,
                        quasi_nonexpansiveness_defect, row_block_map,
                        square_map, two_halfspace_projection)

INTERIOR_MARGIN = 1e-9   # strict-margin threshold for the interior criterion
NONEXP_TOL = 1e-10       # allowed nonexpansiveness defect in validation


@dataclass
class Scenario:
    """A named, fully seeded experiment configuration."""

    name: str
    layout: BlockLayout
    opset: OperatorSet
    graph: GraphSequence
    relaxation: RelaxationSchedule
    error_spec: dict
    block_probs: Optional[tuple[float, ...]]
    init_spec: dict
    seed: int
    expected: tuple[str, ...] = ()
    flags: dict = field(default_factory=dict)
    set_distances: Optional[list[Callable[[np.ndarray], float]]] = None
    extras: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.opset.n_ops

    @property
    def dim(self) -> int:
        return self.layout.dim

    def radius_hint(self) -> float:
        """Sampling radius for regularity estimation: generously covers the
        initial box (iterates of nonexpansive dynamics stay comparable)."""
        spec = self.init_spec
        if spec["kind"] == "uniform-box":
            reach = max(abs(float(spec["low"])), abs(float(spec["high"])))
        else:
            reach = float(np.abs(np.asarray(spec["points"])).max())
        return max(2.0 * reach * np.sqrt(self.dim), 1.0)

    # -- per-run instantiation ---------------------------------------------
    def make_error_model(self, master_seed: int, rep: int = 0) -> ErrorModel:
        spec = self.error_spec
        seed = substream_entropy(master_seed, "rep", rep, "errors")
        kind = spec["kind"]
        if kind == "zero":
            return ErrorModel.zero(self.dim, self.n_agents, seed)
        if kind == "geometric":
            return ErrorModel.geometric(self.dim, self.n_agents, seed,
                                        spec["scale"], spec["ratio"])
        if kind == "power":
            return ErrorModel.power_decay(self.dim, self.n_agents, seed,
                                          spec["scale"], spec["exponent"])
        if kind == "custom":
            return ErrorModel.custom(self.dim, self.n_agents, seed, spec["magnitudes"])
        raise ValueError(f"unknown error kind {kind!r}")

    def make_block_scheme(self, master_seed: int, rep: int = 0) -> Optional[BlockScheme]:
        if self.block_probs is None:
            return None
        seed = substream_entropy(master_seed, "rep", rep, "activations")
        return BlockScheme(self.block_probs, self.n_agents, seed)

    def initial_points(self, master_seed: int) -> np.ndarray:
        """Initial states; shared across repetitions (expectations are over
        the algorithmic randomness, conditional on the start)."""
        spec = self.init_spec
        if spec["kind"] == "given":
            pts = np.array(spec["points"], dtype=float)
            if pts.shape != (self.n_agents, self.dim):
                raise ValueError("initial points must be (n_agents, dim)")
            return pts
        if spec["kind"] == "uniform-box":
            rng = substream(master_seed, "init")
            lo, hi = float(spec["low"]), float(spec["high"])
            return lo + (hi - lo) * rng.random((self.n_agents, self.dim))
        raise ValueError(f"unknown init kind {spec['kind']!r}")

    def with_overrides(self, **kwargs) -> "Scenario":
        return replace(self, **kwargs)


@dataclass
class ValidationReport:
    """Outcome of the pre-run validation stage."""

    entries: list = field(default_factory=list)   # (check, ok, detail)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.entries)

    def add(self, check: str, ok: bool, detail: str = ""):
        self.entries.append((check, bool(ok), detail))

    def failures(self) -> list:
        return [e for e in self.entries if not e[1]]


def validate_scenario(sc: Scenario, nonexp_pairs: int = 500,
                      regularity_samples: int = 2000) -> ValidationReport:
    """Run the scenario's validation stage: graph assumptions, sampled
    nonexpansiveness, declared regularity estimates, domain safety."""
    report = ValidationReport()

    horizon = max(3 * sc.graph.window, 12)
    gr = check_graph_assumptions(sc.graph, horizon)
    report.add("graph-assumptions", gr.ok, gr.summary())

    radius = sc.radius_hint()
    for op in sc.opset:
        try:
            if op.quasi_only:
                defect = quasi_nonexpansiveness_defect(
                    op, radius, nonexp_pairs,
                    substream_entropy(sc.seed, "validate", op.name))
                report.add(f"quasi-nonexpansive[{op.name}]", defect <= NONEXP_TOL,
                           f"max ratio defect {defect:.3e}")
            else:
                defect = nonexpansiveness_defect(
                    op, radius, nonexp_pairs,
                    substream_entropy(sc.seed, "validate", op.name))
                report.add(f"nonexpansive[{op.name}]", defect <= NONEXP_TOL,
                           f"max ratio defect {defect:.3e}")
        except EstimationError as exc:
            report.add(f"nonexpansive[{op.name}]", False, str(exc))

    if "power-regularity" in sc.expected or "linear-regularity" in sc.expected:
        if sc.opset.has_common_projector and all(op.has_projector for op in sc.opset):
            try:
                est = estimate_regularity(sc.opset, radius, regularity_samples,
                                          substream_entropy(sc.seed, "validate", "regularity"))
                report.add("regularity-estimate", True,
                           f"kappa_max={est.kappa_max:.3g} kappa_set={est.kappa_set:.3g} "
                           f"nu={est.nu:.3g} (radius {est.radius:g}, {est.sample_count} samples)")
            except EstimationError as exc:
                report.add("regularity-estimate", False, str(exc))
        else:
            report.add("regularity-estimate", True,
                       "skipped: no fixed-set oracle, constants cannot be sampled")

    if sc.flags.get("square_clip"):
        ok, detail = _square_clip_domain_check(sc)
        report.add("domain-safety", ok, detail)

    return report


def _square_clip_domain_check(sc: Scenario, starts: int = 1000, steps: int = 60):
    """Error-free batch simulation confirming iterates stay inside [0, 1)."""
    rng = substream(sc.seed, "domain-check")
    x = rng.random((2, starts))
    alphas = np.asarray(sc.relaxation.values)[:, None]
    for k in range(steps):
        A = sc.graph.matrix(k)
        xh = A @ x
        fx = np.stack([xh[0] ** 2, np.clip(xh[1], 0.0, 0.5)])
        x = xh + alphas * (fx - xh)
        if np.any(x >= 1.0) or np.any(x < 0.0):
            return False, f"iterate left [0,1) at step {k}"
    return True, f"{starts} starts stayed in [0,1) for {steps} steps"


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _default_relaxation(n_agents: int) -> RelaxationSchedule:
    return RelaxationSchedule.constant(n_agents, 0.45)


def build_linear_equation_scenario(A, b, n_agents: int,
                                   graph: Optional[GraphSequence] = None,
                                   seed: int = 1234) -> Scenario:
    """Each agent owns a row block of a consistent system A x = b and moves
    along x -> x - A_i'(A_i x - b_i)/sigma_i; the common fixed set is the
    affine solution set, whose exact projector serves as the oracle."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m, n = A.shape
    if b.shape[0] != m:
        raise ValueError("right-hand side length mismatch")
    if n_agents < 1 or m < n_agents:
        raise ValueError("need at least one row per agent")
    x_ls, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.linalg.norm(A @ x_ls - b) > 1e-8 * (1.0 + np.linalg.norm(b)):
        raise ValueError("system A x = b is inconsistent")

    bounds = np.linspace(0, m, n_agents + 1).astype(int)
    ops = []
    for i in range(n_agents):
        rows = slice(bounds[i], bounds[i + 1])
        if bounds[i + 1] - bounds[i] < 1:
            raise ValueError("empty row block")
        ops.append(row_block_map(A[rows], b[rows]))
    opset = OperatorSet(ops, common_projector=affine_projector(A, b))
    graph = graph or periodic_rotating(n_agents)
    if graph.n_agents != n_agents:
        raise ValueError("graph size != agent count")
    return Scenario(
        name="linear-equation",
        layout=BlockLayout.flat(n),
        opset=opset,
        graph=graph,
        relaxation=_default_relaxation(n_agents),
        error_spec={"kind": "zero"},
        block_probs=None,
        init_spec={"kind": "uniform-box", "low": -5.0, "high": 5.0},
        seed=seed,
        expected=("graph-assumptions", "linear-regularity", "power-regularity"),
        extras={"system_A": A, "system_b": b},
    )


_SET_KINDS = ("halfspace", "box", "ball", "affine")


def _parse_set(spec: dict, dim: int):
    """Returns (op, distance, strict_margin) for one convex-set spec."""
    kind = spec["kind"]
    if kind == "halfspace":
        a = np.asarray(spec["a"], dtype=float)
        bb = float(spec["b"])
        op = halfspace_projection(a, bb)
        margin = lambda w: bb - float(np.dot(a, w))  # noqa: E731
    elif kind == "box":
        lo = np.asarray(spec["lo"], dtype=float)
        hi = np.asarray(spec["hi"], dtype=float)
        op = box_projection(lo, hi)
        margin = lambda w: float(min((w - lo).min(), (hi - w).min()))  # noqa: E731
    elif kind == "ball":
        c = np.asarray(spec["center"], dtype=float)
        r = float(spec["radius"])
        op = ball_projection(c, r)
        margin = lambda w: r - float(np.linalg.norm(w - c))  # noqa: E731
    elif kind == "affine":
        Am = np.atleast_2d(np.asarray(spec["A"], dtype=float))
        d = np.atleast_1d(np.asarray(spec["d"], dtype=float))
        op = affine_projection_op(Am, d)
        margin = lambda w: 0.0 if np.linalg.norm(Am @ w - d) <= INTERIOR_MARGIN else -1.0  # noqa: E731
    else:
        raise ValueError(f"unsupported set kind {kind!r} (supported: {_SET_KINDS})")
    if op.dim != dim:
        raise ValueError(f"set spec dimension {op.dim} != scenario dimension {dim}")
    dist = lambda x, _op=op: float(np.linalg.norm(np.asarray(x, float) - _op(np.asarray(x, float))))  # noqa: E731
    return op, dist, margin


def _common_projector_for_sets(specs: Sequence[dict], ops: Sequence[NonexpansiveOp]):
    """Exact intersection projector for the supported closed-form cases."""
    if all(s == specs[0] for s in specs[1:]):
        return ops[0]._fn if hasattr(ops[0], "_fn") else None
    kinds = [s["kind"] for s in specs]
    if kinds == ["halfspace", "halfspace"]:
        s1, s2 = specs
        return two_halfspace_projection(s1["a"], s1["b"], s2["a"], s2["b"])
    if all(k == "affine" for k in kinds):
        A = np.vstack([np.atleast_2d(np.asarray(s["A"], float)) for s in specs])
        d = np.concatenate([np.atleast_1d(np.asarray(s["d"], float)) for s in specs])
        return affine_projector(A, d)
    return None


def build_feasibility_scenario(set_specs: Sequence[dict], dim: int,
                               graph: Optional[GraphSequence] = None,
                               interior_point=None,
                               seed: int = 1234) -> Scenario:
    """Agent i projects onto its own convex set; the target is any point of
    the intersection.  When a witness point sits strictly inside all but at
    most one of the sets, the interior criterion for linear regularity of
    the set collection is recorded as satisfied."""
    specs = [dict(s) for s in set_specs]
    if len(specs) < 1:
        raise ValueError("need at least one set")
    parsed = [_parse_set(s, dim) for s in specs]
    ops = [p[0] for p in parsed]
    dists = [p[1] for p in parsed]
    margins = [p[2] for p in parsed]

    interior_ok = False
    interior_detail = "no witness supplied"
    if interior_point is not None:
        w = np.asarray(interior_point, dtype=float)
        feas = all(d(w) <= INTERIOR_MARGIN for d in dists)
        strict = sum(1 for mg in margins if mg(w) > INTERIOR_MARGIN)
        interior_ok = feas and strict >= len(specs) - 1
        interior_detail = f"witness feasible={feas}, strict margins in {strict}/{len(specs)} sets"

    n_agents = len(specs)
    opset = OperatorSet(ops, common_projector=_common_projector_for_sets(specs, ops))
    graph = graph or periodic_rotating(n_agents)
    if graph.n_agents != n_agents:
        raise ValueError("graph size != agent count")
    expected = ["graph-assumptions"]
    if interior_ok:
        expected += ["linear-regularity", "power-regularity"]
    return Scenario(
        name="feasibility",
        layout=BlockLayout.flat(dim),
        opset=opset,
        graph=graph,
        relaxation=_default_relaxation(n_agents),
        error_spec={"kind": "zero"},
        block_probs=None,
        init_spec={"kind": "uniform-box", "low": -5.0, "high": 5.0},
        seed=seed,
        expected=tuple(expected),
        flags={"interior_criterion": interior_ok,
               "interior_detail": interior_detail},
        set_distances=dists,
        extras={"set_specs": specs},
    )


def build_square_clip_scenario(graph: Optional[GraphSequence] = None,
                               seed: int = 1234) -> Scenario:
    """Two maps on [0, 1) of R: the squaring map (fixes only 0, not
    linearly regular near 1) and the projection onto [0, 1/2].  The common
    fixed set is {0}; the pair is power regular with constant 2."""
    ops = OperatorSet([square_map(), clip_half_map()],
                      common_projector=lambda x: np.zeros(1))
    graph = graph or static_complete(2)
    if graph.n_agents != 2:
        raise ValueError("this scenario is a two-agent construction")
    return Scenario(
        name="square-clip",
        layout=BlockLayout.flat(1),
        opset=ops,
        graph=graph,
        relaxation=_default_relaxation(2),
        error_spec={"kind": "zero"},
        block_probs=None,
        init_spec={"kind": "given", "points": [[0.9], [0.9]]},
        seed=seed,
        expected=("graph-assumptions", "power-regularity"),
        flags={"square_clip": True, "not_linearly_regular": ("square[0,1)",),
               "power_constant_cap": 2.0},
    )


def build_consensus_scenario(n_agents: int = 3, dim: int = 2,
                             graph: Optional[GraphSequence] = None,
                             seed: int = 1234) -> Scenario:
    """Identity operators: a pure consensus run (every point is fixed)."""
    ops = OperatorSet([identity_op(dim) for _ in range(n_agents)],
                      common_projector=lambda x: np.asarray(x, float).copy())
    graph = graph or static_complete(n_agents)
    return Scenario(
        name="consensus-identity",
        layout=BlockLayout.flat(dim),
        opset=ops,
        graph=graph,
        relaxation=_default_relaxation(n_agents),
        error_spec={"kind": "zero"},
        block_probs=None,
        init_spec={"kind": "uniform-box", "low": -1.0, "high": 1.0},
        seed=seed,
        expected=("graph-assumptions",),
    )


# ---------------------------------------------------------------------------
# Preset registry
# ---------------------------------------------------------------------------

def _preset_feasibility_2halfspace(dim: int = 2, seed: int = 1234) -> Scenario:
    dim = int(dim)
    if dim < 2:
        raise ValueError("this preset needs dimension >= 2")
    a1 = np.zeros(dim)
    a1[0] = 1.0
    a2 = np.zeros(dim)
    a2[0], a2[1] = -0.6, 0.8
    sc = build_feasibility_scenario(
        [{"kind": "halfspace", "a": a1.tolist(), "b": 1.0},
         {"kind": "halfspace", "a": a2.tolist(), "b": 0.5}],
        dim=dim, interior_point=np.zeros(dim), seed=seed)
    return sc.with_overrides(name="feasibility-2halfspace")


def _preset_ball_box(seed: int = 1234) -> Scenario:
    sc = build_feasibility_scenario(
        [{"kind": "ball", "center": [0.5, 0.0, 0.0], "radius": 1.2},
         {"kind": "box", "lo": [-1.0, -1.0, -1.0], "hi": [1.0, 1.0, 1.0]}],
        dim=3, interior_point=np.zeros(3), seed=seed)
    return sc.with_overrides(name="feasibility-ball-box")


def _preset_linear_3x3(seed: int = 1234) -> Scenario:
    A = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]
    b = [1.0, 2.0, 3.0]
    sc = build_linear_equation_scenario(A, b, n_agents=3, seed=seed)
    return sc.with_overrides(name="linear-equation-3x3")


PRESETS = {
    "feasibility-2halfspace": _preset_feasibility_2halfspace,
    "feasibility-ball-box": _preset_ball_box,
    "linear-equation-3x3": _preset_linear_3x3,
    "square-clip": build_square_clip_scenario,
    "consensus-identity": build_consensus_scenario,
}


def make_preset(name: str, **params) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](**params)
