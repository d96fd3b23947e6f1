"""Ground-truth verification by activation-pattern enumeration.

For small networks the exact optimum of a robustness query is computable: fix
a +/-1 sign pattern for every hidden neuron, check the deeper layers by pure
(exact rational) arithmetic, and reduce layer 1 to the question "does some
admissible input produce these signs?" -- a polytope membership query, decided
exactly by Fourier-Motzkin elimination for box regions and by a projected
gradient method on the dual of the nearest-point problem for Euclidean balls.

A pattern is *feasible* when the non-strict system sigma * (W x' + b) >= 0 is
satisfiable over the region -- the closure semantics every encoding in this
package relaxes.  This coincides with the forward semantics except on
measure-zero ties (exact zero pre-activations, where sign(0) := +1 picks one
branch); `ForwardTrace.zero_preactivation_flags` reports when that matters.

The exact optimum `tau` is the minimum of the objective over feasible
patterns, computed in exact rational arithmetic; it is the yardstick every
relaxation bound is tested against, so nothing here shares code with the
relaxation pipeline (the MILP route in `milp_feasible_patterns` reuses only
the polytope deciders, on an independently built constraint system).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from bnncert.encode import PerturbationRegion, VerificationInstance, substitute_pattern
from bnncert.model import FoldedBnn, forward
from bnncert.poly import MultilinearPoly, Var

__all__ = [
    "DEFAULT_PATTERN_CAP",
    "ExactResult",
    "PatternRecord",
    "SampleBound",
    "enumerate_patterns",
    "exact_verify",
    "feasible_patterns",
    "milp_feasible_patterns",
    "pattern_assignment",
    "relative_improvement",
    "sample_upper_bound",
]

DEFAULT_PATTERN_CAP = 20

#: a pattern is one +/-1 tuple per hidden layer
Pattern = tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class PatternRecord:
    pattern: Pattern
    witness: np.ndarray  # an input realizing the pattern (closure semantics)


@dataclass(frozen=True)
class ExactResult:
    """Exact optimum of an objective over all feasible activation patterns."""

    tau: Fraction
    minimizer: Pattern
    witness: np.ndarray
    n_feasible: int
    records: tuple[PatternRecord, ...]

    @property
    def value(self) -> float:
        return float(self.tau)


@dataclass(frozen=True)
class SampleBound:
    """Empirical upper bound: min objective over sampled region points."""

    value: float
    x0: np.ndarray
    n_samples: int
    seed: int


# ---------------------------------------------------------------------------
# pattern enumeration
# ---------------------------------------------------------------------------


def enumerate_patterns(net: FoldedBnn, cap: int = DEFAULT_PATTERN_CAP):
    """Yield every hidden sign pattern, layer-major; guarded by `cap`."""
    total = net.hidden_count()
    if total > cap:
        raise ValueError(
            f"pattern enumeration needs at most {cap} hidden neurons, got {total}"
        )
    widths = net.hidden_widths
    per_layer = [list(itertools.product((-1, 1), repeat=n)) for n in widths]
    for combo in itertools.product(*per_layer):
        yield tuple(combo)


def pattern_assignment(net: FoldedBnn, pattern: Pattern) -> dict[Var, int]:
    out: dict[Var, int] = {}
    for i, layer in enumerate(pattern, start=1):
        for j, s in enumerate(layer, start=1):
            out[Var(i, j)] = int(s)
    return out


def _trace_pattern(net: FoldedBnn, x0: np.ndarray) -> Pattern:
    tr = forward(net, x0)
    return tuple(tuple(int(v) for v in act) for act in tr.activations)


# ---------------------------------------------------------------------------
# exact polytope feasibility (box regions): Fourier-Motzkin with witness
# ---------------------------------------------------------------------------

Row = tuple[tuple[Fraction, ...], Fraction]  # sum coeffs*x + const >= 0


def _normalize_row(coeffs: Sequence[Fraction], const: Fraction) -> Row:
    scale = max((abs(c) for c in coeffs), default=Fraction(0))
    if scale == 0:
        scale = abs(const) if const else Fraction(1)
    return tuple(c / scale for c in coeffs), const / scale


def _strongest(rows) -> list[Row]:
    """Among rows sharing a (normalized) coefficient vector, only the one
    with the smallest constant can bind; the rest are implied."""
    best: dict[tuple[Fraction, ...], Fraction] = {}
    for coeffs, const in rows:
        prev = best.get(coeffs)
        if prev is None or const < prev:
            best[coeffs] = const
    return list(best.items())


def _fm_witness(rows: list[Row], n: int) -> Optional[list[Fraction]]:
    """Exact witness of {x : rows hold}, or None if empty.

    The caller must include finite lower/upper bound rows for every variable
    (the box rows), which keeps each back-substitution interval bounded.
    """
    stages: list[list[Row]] = [[] for _ in range(n)]
    cur = _strongest(_normalize_row(c, d) for c, d in rows)
    for k in range(n - 1, -1, -1):
        stages[k] = cur
        lows, ups, rest = [], [], []
        for coeffs, const in cur:
            a = coeffs[k]
            if a > 0:
                lows.append((coeffs, const))
            elif a < 0:
                ups.append((coeffs, const))
            else:
                rest.append((coeffs, const))
        new: list[Row] = list(rest)
        for lc, ld in lows:
            for uc, ud in ups:
                al, au = lc[k], -uc[k]
                coeffs = tuple(au * a + al * b for a, b in zip(lc, uc))
                new.append(_normalize_row(coeffs, au * ld + al * ud))
        cur = _strongest(new)
        if len(cur) > 200_000:
            raise RuntimeError("elimination blow-up; region system too large")
    if any(const < 0 for coeffs, const in cur if all(c == 0 for c in coeffs)):
        return None
    x: list[Fraction] = [Fraction(0)] * n
    for k in range(n):
        lo: Optional[Fraction] = None
        hi: Optional[Fraction] = None
        for coeffs, const in stages[k]:
            a = coeffs[k]
            if a == 0:
                continue
            val = const + sum(
                (coeffs[j] * x[j] for j in range(k) if coeffs[j]), Fraction(0)
            )
            bound = -val / a
            if a > 0:
                lo = bound if lo is None or bound > lo else lo
            else:
                hi = bound if hi is None or bound < hi else hi
        if lo is None or hi is None:
            raise AssertionError("unbounded variable; box rows missing")
        if lo > hi:
            return None
        x[k] = (lo + hi) / 2
    return x


def _box_rows(lower: Sequence[Fraction], upper: Sequence[Fraction]) -> list[Row]:
    n = len(lower)
    rows: list[Row] = []
    for k in range(n):
        e = [Fraction(0)] * n
        e[k] = Fraction(1)
        rows.append((tuple(e), -lower[k]))
        e2 = [Fraction(0)] * n
        e2[k] = Fraction(-1)
        rows.append((tuple(e2), upper[k]))
    return rows


# ---------------------------------------------------------------------------
# ball-region feasibility: nearest point in a polytope, solved on the dual
# ---------------------------------------------------------------------------


def _nearest_in_polytope(
    A: np.ndarray, d: np.ndarray, center: np.ndarray, max_iter: int = 5000
) -> tuple[float, np.ndarray]:
    """min ||x - center|| s.t. A x >= d, via accelerated projected gradient
    on the concave dual; returns (distance estimate, primal point)."""
    m = A.shape[0]
    if m == 0:
        return 0.0, center.copy()
    resid = d - A @ center  # positive components = violated rows
    if np.all(resid <= 0):
        return 0.0, center.copy()
    AAt = A @ A.T
    lip = float(np.linalg.norm(AAt, 2)) / 2.0
    if lip <= 0:
        return 0.0, center.copy()
    step = 1.0 / lip
    lam = np.zeros(m)
    lam_prev = lam
    tk = 1.0
    for _ in range(max_iter):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        mom = lam + ((tk - 1.0) / t_next) * (lam - lam_prev)
        grad = resid - 0.5 * (AAt @ mom)  # gradient of the concave dual
        nxt = np.maximum(mom + step * grad, 0.0)
        if np.linalg.norm(nxt - lam) <= 1e-14 * (1.0 + np.linalg.norm(lam)):
            lam_prev, lam = lam, nxt
            break
        lam_prev, lam, tk = lam, nxt, t_next
    x = center + 0.5 * (A.T @ lam)
    violation = np.maximum(d - A @ x, 0.0)
    dist = float(np.linalg.norm(x - center)) + float(np.linalg.norm(violation))
    return dist, x


def _ball_feasible(
    rows_A: np.ndarray,
    rows_d: np.ndarray,
    region: PerturbationRegion,
    rows_exact: Optional[list[Row]] = None,
) -> Optional[np.ndarray]:
    """Witness of {A x >= d} intersected with the l2 region, or None.

    The exact rows, when given, let the region center be accepted without any
    floating-point iteration.  Acceptance uses the relative slack
    radius * (1 + 1e-9) (+1e-12 absolute) documented by `exact_verify`.
    """
    center = region.center
    if rows_exact is not None:
        cvals = [Fraction(c) for c in center]
        if all(
            const + sum((coeffs[j] * cvals[j] for j in range(len(cvals)) if coeffs[j]), Fraction(0)) >= 0
            for coeffs, const in rows_exact
        ):
            return center.copy()
    A = np.vstack([rows_A, np.eye(region.dim), -np.eye(region.dim)])
    d = np.concatenate([rows_d, region.lower, -region.upper])
    dist, x = _nearest_in_polytope(A, d, center)
    if dist <= region.radius * (1.0 + 1e-9) + 1e-12:
        return x
    return None


# ---------------------------------------------------------------------------
# per-pattern systems from the network itself
# ---------------------------------------------------------------------------


def _deep_layers_consistent(net: FoldedBnn, pattern: Pattern) -> bool:
    for i in range(2, net.depth + 1):
        w = net.weight(i)
        b = net.bias(i)
        prev = pattern[i - 2]
        for j, s in enumerate(pattern[i - 1]):
            z = Fraction(b[j]) + sum(
                int(w[j, k]) * prev[k] for k in range(w.shape[1]) if w[j, k]
            )
            if s * z < 0:
                return False
    return True


def _layer1_rows(net: FoldedBnn, pattern: Pattern) -> list[Row]:
    """sigma_j * (<W1_j, x0> + b_j) >= 0 as exact rows over x0."""
    w = net.weight(1)
    b = net.bias(1)
    n0 = net.input_dim
    rows: list[Row] = []
    for j, s in enumerate(pattern[0]):
        coeffs = tuple(Fraction(s * int(w[j, k])) for k in range(n0))
        rows.append((coeffs, Fraction(s) * Fraction(b[j])))
    return rows


def _pattern_witness(
    net: FoldedBnn, region: PerturbationRegion, pattern: Pattern
) -> Optional[np.ndarray]:
    if not _deep_layers_consistent(net, pattern):
        return None
    rows = _layer1_rows(net, pattern)
    if region.kind == "linf":
        lo = [Fraction(v) for v in region.lower]
        hi = [Fraction(v) for v in region.upper]
        x = _fm_witness(rows + _box_rows(lo, hi), region.dim)
        return None if x is None else np.array([float(v) for v in x])
    A = np.array([[float(c) for c in coeffs] for coeffs, _ in rows])
    d = np.array([-float(const) for _, const in rows])
    return _ball_feasible(A, d, region, rows_exact=rows)


def feasible_patterns(
    net: FoldedBnn, region: PerturbationRegion, cap: int = DEFAULT_PATTERN_CAP
) -> list[PatternRecord]:
    """All feasible patterns with witnesses, in enumeration order."""
    net.require_stabilized()
    if region.dim != net.input_dim:
        raise ValueError("region dimension does not match the network input")
    out = []
    for pattern in enumerate_patterns(net, cap):
        witness = _pattern_witness(net, region, pattern)
        if witness is not None:
            out.append(PatternRecord(pattern, witness))
    return out


def exact_verify(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    cap: int = DEFAULT_PATTERN_CAP,
) -> ExactResult:
    """Exact minimum of a binary-variable objective over the region.

    The objective must involve hidden (binary) variables only, so its value
    is constant on each pattern; tau is then the exact rational minimum over
    feasible patterns.  For l2 regions, borderline patterns (whose layer-1
    cell touches the ball within relative slack 1e-9) are accepted.
    """
    if any(v.layer == 0 for v in objective.variables()):
        raise ValueError("exact verification needs an objective over binary variables only")
    records = feasible_patterns(net, region, cap)
    if not records:
        raise ValueError("no feasible pattern; region is empty or network unstable")
    exact_obj = objective.to_exact()
    best: Optional[tuple[Fraction, PatternRecord]] = None
    for rec in records:
        val = exact_obj.evaluate(pattern_assignment(net, rec.pattern))
        val = val if isinstance(val, Fraction) else Fraction(val)
        if best is None or val < best[0]:
            best = (val, rec)
    tau, rec = best
    return ExactResult(
        tau=tau,
        minimizer=rec.pattern,
        witness=rec.witness,
        n_feasible=len(records),
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# the MILP side of the same pattern question, from the encoded rows
# ---------------------------------------------------------------------------


def milp_feasible_patterns(
    instance: VerificationInstance, cap: int = DEFAULT_PATTERN_CAP
) -> list[PatternRecord]:
    """Feasible patterns of a MILP instance, decided from its own rows.

    Fixes each +/-1 assignment in the encoded constraints and feeds the
    restricted system to the same polytope deciders as the enumeration
    oracle; the constraint systems themselves are built independently, so
    agreement with `feasible_patterns` is a meaningful exactness check.

    Every MILP row except the l2 ball quadratic is jointly affine in the
    inputs and the binaries, so the rows are split once into an exact input
    part and binary part; per pattern only the binary part is re-evaluated.
    """
    if instance.encoding_kind != "milp":
        raise ValueError("expected a MILP instance")
    net = instance.net
    region = instance.region
    n0 = net.input_dim
    binary_order = instance.binary_vars

    # one-time exact split: row = <x0_coeffs, x0> + <bin_coeffs, sigma> + const
    split_rows = []
    has_ball = False
    for con in instance.constraints.inequalities:
        poly = con.poly.to_exact()
        if poly.degree > 1:
            if region.kind == "l2" and con.family == "region" and con.neuron == 0:
                has_ball = True  # handled by the ball decider below
                continue
            raise ValueError(f"row {con.family} is not affine; cannot fix a pattern")
        x0_coeffs = [Fraction(0)] * n0
        bin_coeffs: dict[int, Fraction] = {}
        const = Fraction(0)
        for mono, coeff in poly.terms.items():
            if not mono:
                const += coeff
            else:
                v = mono[0][0]
                if v.layer == 0:
                    x0_coeffs[v.index - 1] += coeff
                else:
                    pos = binary_order.index(v)
                    bin_coeffs[pos] = bin_coeffs.get(pos, Fraction(0)) + coeff
        split_rows.append((tuple(x0_coeffs), tuple(bin_coeffs.items()), const))

    lo = [Fraction(v) for v in region.lower]
    hi = [Fraction(v) for v in region.upper]
    box = _box_rows(lo, hi)
    out = []
    for pattern in enumerate_patterns(net, cap):
        flat = [s for layer in pattern for s in layer]
        rows: list[Row] = []
        ok = True
        for x0_coeffs, bin_coeffs, const in split_rows:
            val = const + sum((c * flat[p] for p, c in bin_coeffs), Fraction(0))
            if any(x0_coeffs):
                rows.append((x0_coeffs, val))
            elif val < 0:
                ok = False
                break
        if not ok:
            continue
        if region.kind == "linf":
            x = _fm_witness(rows + box, n0)
            witness = None if x is None else np.array([float(v) for v in x])
        else:
            if not has_ball:
                raise ValueError("l2 MILP instance lost its ball row")
            A = np.array([[float(c) for c in coeffs] for coeffs, _ in rows]).reshape(
                len(rows), n0
            )
            d = np.array([-float(const) for _, const in rows])
            witness = _ball_feasible(A, d, region, rows_exact=rows)
        if witness is not None:
            out.append(PatternRecord(pattern, witness))
    return out


# ---------------------------------------------------------------------------
# sampling upper bound and the improvement metric
# ---------------------------------------------------------------------------


def _sample_region(
    region: PerturbationRegion, n: int, rng: np.random.Generator
) -> np.ndarray:
    if region.kind == "linf":
        return rng.uniform(region.lower, region.upper, size=(n, region.dim))
    dim = region.dim
    raw = rng.normal(size=(n, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = region.radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    pts = region.center + raw / norms * radii
    # clipping to the global box cannot increase the distance to the center
    # (the center lies in the box and coordinate-wise projection is
    # non-expansive), so clipped samples stay inside the region
    return np.clip(pts, -1.0, 1.0)


def sample_upper_bound(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    n_samples: int = 256,
    seed: int = 0,
) -> SampleBound:
    """Minimum objective value over forward traces of sampled region points.

    Every sample is a true network execution, so the result is always an
    upper bound on the exact optimum (for radius 0 the single sample is the
    center).  Deterministic for a fixed seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if region.dim != net.input_dim:
        raise ValueError("region dimension does not match the network input")
    rng = np.random.default_rng(seed)
    if region.radius == 0:
        pts = np.tile(region.center, (1, 1))
    else:
        pts = _sample_region(region, n_samples, rng)
    best_val = None
    best_x = None
    for x0 in pts:
        tr = forward(net, x0)
        assignment: dict[Var, float] = {
            Var(0, k + 1): float(x0[k]) for k in range(net.input_dim)
        }
        for i, act in enumerate(tr.activations, start=1):
            for j, s in enumerate(act, start=1):
                assignment[Var(i, j)] = float(s)
        val = float(objective.evaluate(assignment))
        if best_val is None or val < best_val:
            best_val, best_x = val, x0
    return SampleBound(value=best_val, x0=np.asarray(best_x), n_samples=n_samples, seed=seed)


def relative_improvement(
    tau_sdp: float, tau_lp: float, upper: float
) -> Optional[float]:
    """(tau_sdp - tau_lp) / (upper - tau_lp); None when the denominator is
    not positive (the sampling bound failed to separate from the LP bound)."""
    if not upper > tau_lp:
        return None
    return (tau_sdp - tau_lp) / (upper - tau_lp)
