"""Optimization encodings of network robustness queries.

Given a folded, stabilized network and a perturbation region around a
reference input, this module builds the four encodings used throughout the
package:

* ``standard``  -- quadratic sign-consistency products x*(Wx'+b) >= 0 plus
  the binary-square equalities x^2 = 1;
* ``tightened`` -- the four-product family per hidden neuron: both one-sided
  sign products (x+1)*(Wx'+b) and (x-1)*(Wx'+b) and two always-valid
  "row-bound" products derived from |<W_row, x'>| <= row_norm1, which enlarge
  the order-1 multiplier cone without changing the feasible set;
* ``lp``        -- the linear relaxation: per-neuron linear envelopes of the
  sign constraint, box rows for the relaxed binaries, and interval rows for
  the inputs;
* ``milp``      -- the LP rows plus integrality marks on the hidden variables
  (exact once the region rows are exact).

Polynomial coefficients are exact rationals end to end (weights are integers,
biases are binary64 and hence dyadic rationals), so identity checks downstream
are exact and the numeric layers decide when to round.

Layer-1 subtlety: inputs are continuous in a box [l, u] rather than +/-1, so
the linear envelopes and the row-bound products use centered coefficients:
with c = (l+u)/2, r = (u-l)/2 the effective row bound is
sum_k |W_jk| r_k and the effective bias is b_j + <W_row, c>.  A neuron whose
linear envelope coefficient turns non-positive is constant over the region;
we signal `StabilizationNeeded` rather than emit a vacuous constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from bnncert.model import FoldedBnn, row_norm1
from bnncert.poly import MultilinearPoly, Var

__all__ = [
    "Clique",
    "Constraint",
    "ConstraintSet",
    "PerturbationRegion",
    "StabilizationNeeded",
    "VerificationInstance",
    "build_cliques",
    "check_rip",
    "encode_lp",
    "encode_milp",
    "encode_standard",
    "encode_tightened",
    "linear_identity_residuals",
    "linear_inequalities",
    "objective_targeted",
    "region_polynomials",
    "substitute_pattern",
    "write_lp_format",
    "write_mps",
]


class StabilizationNeeded(ValueError):
    """A hidden neuron is constant over the given region.

    Raised by the linear encodings when a layer-1 envelope coefficient is
    non-positive; the caller should constant-propagate the neuron (see
    `bnncert.model.stabilize`, applied after shrinking the region) and retry.
    """

    def __init__(self, layer: int, neuron: int, detail: str):
        self.layer = layer
        self.neuron = neuron
        super().__init__(
            f"neuron ({layer},{neuron}) is constant over the region ({detail}); "
            "stabilize against the region and re-encode"
        )


@dataclass(frozen=True)
class PerturbationRegion:
    """A norm ball around a reference input, intersected with [-1,1]^n0.

    kind "linf": the ball is itself a box; per-coordinate bounds are the
    clipped interval [center - radius, center + radius].
    kind "l2": a Euclidean ball; `lower`/`upper` hold its box enclosure
    (used by the linear encodings, which are then sound relaxations).

    radius = 0 describes the single point {center}; the polynomial and linear
    encoders reject it (they need interior), but exact evaluation paths
    accept it.
    """

    kind: str
    center: np.ndarray
    radius: float
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.kind not in ("linf", "l2"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1:
            raise ValueError("region center must be a vector")
        if np.any(np.abs(center) > 1):
            raise ValueError("region center must lie in [-1,1]^n0")
        if not self.radius >= 0:
            raise ValueError("region radius must be nonnegative")
        center = center.copy()
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        lower = np.clip(center - self.radius, -1.0, 1.0)
        upper = np.clip(center + self.radius, -1.0, 1.0)
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def linf(cls, center: Sequence[float], radius: float) -> "PerturbationRegion":
        return cls("linf", np.asarray(center, dtype=float), radius)

    @classmethod
    def l2(cls, center: Sequence[float], radius: float) -> "PerturbationRegion":
        return cls("l2", np.asarray(center, dtype=float), radius)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, x0: np.ndarray, slack: float = 1e-12) -> bool:
        x0 = np.asarray(x0, dtype=float)
        if np.any(np.abs(x0) > 1 + slack):
            return False
        if self.kind == "linf":
            return bool(np.all(np.abs(x0 - self.center) <= self.radius + slack))
        return bool(np.linalg.norm(x0 - self.center) <= self.radius + slack)


@dataclass(frozen=True)
class Constraint:
    """One tagged constraint polynomial; equalities mean poly = 0, else poly >= 0."""

    family: str
    layer: int
    neuron: int
    poly: MultilinearPoly


#: inequality family tags, in the order encodings emit them
FAMILIES = ("std", "g1", "g2", "t1", "t2", "region", "box", "lin1", "lin2", "lin0", "threshold")


@dataclass(frozen=True)
class ConstraintSet:
    equalities: tuple[Constraint, ...]
    inequalities: tuple[Constraint, ...]
    objective: MultilinearPoly

    def by_family(self, family: str) -> list[Constraint]:
        return [c for c in self.inequalities if c.family == family]

    def family_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for c in self.inequalities:
            counts[c.family] = counts.get(c.family, 0) + 1
        return counts


@dataclass(frozen=True)
class Clique:
    id: int
    variables: tuple[Var, ...]

    def __contains__(self, v: Var) -> bool:
        return v in self.variables

    def covers(self, vars_: Iterable[Var]) -> bool:
        return all(v in self.variables for v in vars_)


@dataclass(frozen=True)
class VerificationInstance:
    """A network, a region, an objective, and one encoding of the semantics."""

    net: FoldedBnn
    region: PerturbationRegion
    constraints: ConstraintSet
    encoding_kind: str
    true_label: Optional[int] = None
    target: Optional[int] = None
    binary_vars: tuple[Var, ...] = ()
    feasibility_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if self.encoding_kind not in ("standard", "tightened", "lp", "milp"):
            raise ValueError(f"unknown encoding kind {self.encoding_kind!r}")
        if self.true_label is not None and self.target is not None:
            if self.true_label == self.target:
                raise ValueError("attack target must differ from the true label")

    @property
    def objective(self) -> MultilinearPoly:
        return self.constraints.objective

    def variables(self) -> tuple[Var, ...]:
        """All decision variables: inputs, then hidden activations, sorted."""
        out = [Var(0, k) for k in range(1, self.net.input_dim + 1)]
        for i, n in enumerate(self.net.hidden_widths, start=1):
            out.extend(Var(i, j) for j in range(1, n + 1))
        return tuple(out)


# ---------------------------------------------------------------------------
# polynomial builders
# ---------------------------------------------------------------------------


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _pre_activation(net: FoldedBnn, layer: int, neuron: int) -> MultilinearPoly:
    """<W_row, x_{layer-1}> + b as an exact polynomial (1-based indices)."""
    w = net.weight(layer)[neuron - 1]
    coeffs = {Var(layer - 1, k + 1): int(w[k]) for k in range(w.shape[0]) if w[k] != 0}
    return MultilinearPoly.linear(coeffs, _frac(net.bias(layer)[neuron - 1]))


def _row_sum(net: FoldedBnn, layer: int, neuron: int) -> MultilinearPoly:
    """<W_row, x_{layer-1}> without the bias."""
    w = net.weight(layer)[neuron - 1]
    coeffs = {Var(layer - 1, k + 1): int(w[k]) for k in range(w.shape[0]) if w[k] != 0}
    return MultilinearPoly.linear(coeffs, 0)


def _centered_row_data(net: FoldedBnn, region: PerturbationRegion, neuron: int):
    """Layer-1 data under the box [l,u]: centered offset, effective row bound.

    Returns (zeta, row_bound, beta) with zeta = <W_row, x0 - c>,
    row_bound = sum_k |W_jk| r_k, beta = b_j + <W_row, c>, where c, r are the
    box center/half-width.  For +/-1 binary inputs (c=0, r=1) these reduce to
    the plain row sum, the row 1-norm and the bias.
    """
    w = net.weight(1)[neuron - 1]
    lo = [_frac(v) for v in region.lower]
    hi = [_frac(v) for v in region.upper]
    c = [(a + b) / 2 for a, b in zip(lo, hi)]
    r = [(b - a) / 2 for a, b in zip(lo, hi)]
    coeffs = {Var(0, k + 1): int(w[k]) for k in range(w.shape[0]) if w[k] != 0}
    shift = sum((int(w[k]) * c[k] for k in range(w.shape[0]) if w[k] != 0), Fraction(0))
    zeta = MultilinearPoly.linear(coeffs, -shift)
    row_bound = sum((abs(int(w[k])) * r[k] for k in range(w.shape[0])), Fraction(0))
    beta = _frac(net.bias(1)[neuron - 1]) + shift
    return zeta, row_bound, beta


def region_polynomials(region: PerturbationRegion) -> list[MultilinearPoly]:
    """Nonnegativity certificates of region membership.

    linf: one (u_j - x)(x - l_j) per coordinate.  l2: the ball quadratic
    radius^2 - |x0 - center|^2 followed by a (1-x)(1+x) box quadratic per
    coordinate (the ball is only meaningful inside the global box, and the
    box rows keep every layer-1 construction valid).
    """
    if not region.radius > 0:
        raise ValueError("region radius must be positive for polynomial encodings")
    n0 = region.dim
    polys: list[MultilinearPoly] = []
    if region.kind == "linf":
        for j in range(1, n0 + 1):
            v = Var(0, j)
            lo, hi = _frac(region.lower[j - 1]), _frac(region.upper[j - 1])
            upper = MultilinearPoly.linear({v: -1}, hi)
            above = MultilinearPoly.linear({v: 1}, -lo)
            polys.append(upper * above)
        return polys
    ball = MultilinearPoly.constant(_frac(region.radius) ** 2)
    for j in range(1, n0 + 1):
        v = Var(0, j)
        diff = MultilinearPoly.linear({v: 1}, -_frac(region.center[j - 1]))
        ball = ball - diff * diff
    polys.append(ball)
    for j in range(1, n0 + 1):
        v = Var(0, j)
        polys.append(MultilinearPoly.linear({v: -1}, 1) * MultilinearPoly.linear({v: 1}, 1))
    return polys


def _region_constraints(region: PerturbationRegion) -> list[Constraint]:
    polys = region_polynomials(region)
    if region.kind == "linf":
        return [Constraint("region", 0, j, p) for j, p in enumerate(polys, start=1)]
    out = [Constraint("region", 0, 0, polys[0])]
    out.extend(Constraint("box", 0, j, p) for j, p in enumerate(polys[1:], start=1))
    return out


def objective_targeted(net: FoldedBnn, true_label: int, target: int) -> MultilinearPoly:
    """Logit margin <out_row(true) - out_row(target), x_L> + bias difference.

    Positive on the whole region means no perturbation can push the target
    class above the true class.
    """
    n_out = net.n_classes
    if not (1 <= true_label <= n_out and 1 <= target <= n_out):
        raise ValueError(f"labels must lie in [1, {n_out}]")
    if target == true_label:
        raise ValueError("attack target must differ from the true label")
    w = net.weight(net.depth + 1)
    b = net.bias(net.depth + 1)
    row = w[true_label - 1] - w[target - 1]
    coeffs = {
        Var(net.depth, k + 1): int(row[k]) for k in range(row.shape[0]) if row[k] != 0
    }
    const = _frac(b[true_label - 1]) - _frac(b[target - 1])
    return MultilinearPoly.linear(coeffs, const)


def _check_objective(net: FoldedBnn, objective: MultilinearPoly) -> None:
    if objective.degree > 2:
        raise ValueError("objective degree must be at most 2")
    for v in objective.variables():
        if v.layer < 0 or v.layer > net.depth:
            raise ValueError(f"objective variable {v} outside network layers")
        width = net.widths[v.layer]
        if not (1 <= v.index <= width):
            raise ValueError(f"objective variable {v} outside layer width {width}")


def _equalities(net: FoldedBnn) -> list[Constraint]:
    eqs = []
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            v = Var(i, j)
            sq = MultilinearPoly({((v, 2),): 1, (): -1})
            eqs.append(Constraint("h", i, j, sq))
    return eqs


def encode_standard(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    *,
    true_label: Optional[int] = None,
    target: Optional[int] = None,
) -> VerificationInstance:
    """Quadratic sign-consistency encoding: x^2 = 1 and x*(Wx'+b) >= 0."""
    net.require_stabilized()
    _check_objective(net, objective)
    ineqs: list[Constraint] = []
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            x = MultilinearPoly.variable(Var(i, j))
            ineqs.append(Constraint("std", i, j, x * _pre_activation(net, i, j)))
    ineqs.extend(_region_constraints(region))
    cs = ConstraintSet(tuple(_equalities(net)), tuple(ineqs), objective)
    return VerificationInstance(net, region, cs, "standard", true_label, target)


def encode_tightened(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    *,
    true_label: Optional[int] = None,
    target: Optional[int] = None,
) -> VerificationInstance:
    """Four products per neuron: one-sided sign products plus row-bound products.

    The one-sided products (x+1)*(Wx'+b) and (x-1)*(Wx'+b) average to the
    standard product; the row-bound products pair (x+1) and (1-x) with the
    always-nonnegative row slack row_bound -/+ <W_row, x'> (layer 1 uses the
    centered, region-aware row bound).  All four are redundant for the exact
    feasible set but strictly enlarge the order-1 relaxation's multiplier cone.
    """
    net.require_stabilized()
    _check_objective(net, objective)
    ineqs: list[Constraint] = []
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            v = Var(i, j)
            x = MultilinearPoly.variable(v)
            z = _pre_activation(net, i, j)
            up = x + 1
            down = x - 1
            ineqs.append(Constraint("g1", i, j, up * z))
            ineqs.append(Constraint("g2", i, j, down * z))
            if i == 1:
                zeta, row_bound, _ = _centered_row_data(net, region, j)
                slack_pos = MultilinearPoly.constant(row_bound) - zeta
                slack_neg = MultilinearPoly.constant(row_bound) + zeta
            else:
                nv = int(row_norm1(net.weight(i))[j - 1])
                s = _row_sum(net, i, j)
                slack_pos = MultilinearPoly.constant(nv) - s
                slack_neg = MultilinearPoly.constant(nv) + s
            ineqs.append(Constraint("t1", i, j, up * slack_pos))
            ineqs.append(Constraint("t2", i, j, (1 - x) * slack_neg))
    ineqs.extend(_region_constraints(region))
    cs = ConstraintSet(tuple(_equalities(net)), tuple(ineqs), objective)
    return VerificationInstance(net, region, cs, "tightened", true_label, target)


def _envelope_coefficients(
    net: FoldedBnn, region: PerturbationRegion, layer: int, neuron: int
) -> tuple[Fraction, Fraction, MultilinearPoly]:
    """(c_plus, c_minus, z) for the linear envelopes of one neuron.

    c_plus/c_minus are the positive envelope slopes row_bound +/- effective
    bias; z is the pre-activation polynomial.  Layer 1 uses region-centered
    data; deeper layers the plain row 1-norm and bias.  Raises
    `StabilizationNeeded` when an envelope slope is non-positive.
    """
    if layer == 1:
        zeta, row_bound, beta = _centered_row_data(net, region, neuron)
        z = zeta + beta
        c_plus = row_bound + beta
        c_minus = row_bound - beta
    else:
        nv = int(row_norm1(net.weight(layer))[neuron - 1])
        b = _frac(net.bias(layer)[neuron - 1])
        z = _pre_activation(net, layer, neuron)
        c_plus = nv + b
        c_minus = nv - b
    if c_plus <= 0 or c_minus <= 0:
        sign = "never" if c_plus <= 0 else "always"
        raise StabilizationNeeded(layer, neuron, f"{sign} activated")
    return c_plus, c_minus, z


def _lp_rows(
    net: FoldedBnn, region: PerturbationRegion, objective: MultilinearPoly
) -> list[Constraint]:
    if not region.radius > 0:
        raise ValueError("region radius must be positive for the linear encodings")
    _check_objective(net, objective)
    if objective.degree > 1:
        raise ValueError("linear encodings need an affine objective")
    rows: list[Constraint] = []
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            v = Var(i, j)
            x = MultilinearPoly.variable(v)
            c_plus, c_minus, z = _envelope_coefficients(net, region, i, j)
            rows.append(Constraint("lin1", i, j, (x + 1) * c_plus - z * 2))
            rows.append(Constraint("lin2", i, j, (1 - x) * c_minus + z * 2))
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            x = MultilinearPoly.variable(Var(i, j))
            rows.append(Constraint("lin0", i, j, 1 - x))
            rows.append(Constraint("lin0", i, j, x + 1))
    for j in range(1, region.dim + 1):
        v = Var(0, j)
        lo, hi = _frac(region.lower[j - 1]), _frac(region.upper[j - 1])
        rows.append(Constraint("region", 0, j, MultilinearPoly.linear({v: -1}, hi)))
        rows.append(Constraint("region", 0, j, MultilinearPoly.linear({v: 1}, -lo)))
    return rows


def encode_lp(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    *,
    true_label: Optional[int] = None,
    target: Optional[int] = None,
) -> VerificationInstance:
    """All-linear relaxation: envelopes, box rows, interval rows; no equalities.

    For an l2 region the interval rows describe the ball's box enclosure, so
    the LP optimum stays a valid lower bound.
    """
    net.require_stabilized()
    rows = _lp_rows(net, region, objective)
    cs = ConstraintSet((), tuple(rows), objective)
    return VerificationInstance(net, region, cs, "lp", true_label, target)


def encode_milp(
    net: FoldedBnn,
    region: PerturbationRegion,
    objective: MultilinearPoly,
    feasibility_threshold: Optional[float] = None,
    *,
    true_label: Optional[int] = None,
    target: Optional[int] = None,
) -> VerificationInstance:
    """LP rows plus integrality marks; exact for the sign semantics.

    For an l2 region the exact ball quadratic is appended so the encoding
    stays faithful to the region (such instances export to SDPA-free formats
    only after dropping to linf; the MPS writer rejects them).

    With `feasibility_threshold` the objective moves into a constraint
    objective <= threshold and the reported objective becomes the constant 0:
    the instance then encodes attack feasibility rather than bound computation.
    """
    net.require_stabilized()
    rows = _lp_rows(net, region, objective)
    if region.kind == "l2":
        ball = region_polynomials(region)[0]
        rows.append(Constraint("region", 0, 0, ball))
    reported = objective
    if feasibility_threshold is not None:
        cut = MultilinearPoly.constant(_frac(feasibility_threshold)) - objective
        rows.append(Constraint("threshold", 0, 0, cut))
        reported = MultilinearPoly.zero()
    binaries = tuple(
        Var(i, j)
        for i, n in enumerate(net.hidden_widths, start=1)
        for j in range(1, n + 1)
    )
    cs = ConstraintSet((), tuple(rows), reported)
    return VerificationInstance(
        net,
        region,
        cs,
        "milp",
        true_label,
        target,
        binary_vars=binaries,
        feasibility_threshold=feasibility_threshold,
    )


# ---------------------------------------------------------------------------
# cliques
# ---------------------------------------------------------------------------


def build_cliques(net: FoldedBnn) -> list[Clique]:
    """Variable cliques covering all constraint interactions, in an order
    whose running intersections are each contained in one earlier clique.

    Depth 1: one clique per input coordinate, {x0_k} + layer 1.
    Depth 2: the depth-1 cliques, then layer 1 + each last-layer variable.
    Depth >= 3: adjacent hidden-layer pairs first, then input cliques, then
    last-hidden-layer + each last-layer variable.
    """
    L = net.depth
    widths = net.widths

    def layer_vars(i: int) -> list[Var]:
        return [Var(i, j) for j in range(1, widths[i] + 1)]

    cliques: list[list[Var]] = []
    if L >= 3:
        for i in range(1, L - 1):
            cliques.append(layer_vars(i) + layer_vars(i + 1))
    for k in range(1, widths[0] + 1):
        cliques.append([Var(0, k)] + layer_vars(1))
    if L >= 2:
        for k in range(1, widths[L] + 1):
            cliques.append(layer_vars(L - 1) + [Var(L, k)])
    return [
        Clique(i, tuple(sorted(vs))) for i, vs in enumerate(cliques, start=1)
    ]


def check_rip(cliques: Sequence[Clique]) -> bool:
    """Running intersection: each clique's overlap with all earlier ones is
    contained in a single earlier clique."""
    seen: set[Var] = set()
    for idx, clique in enumerate(cliques):
        if idx > 0:
            overlap = set(clique.variables) & seen
            if overlap and not any(
                overlap <= set(prev.variables) for prev in cliques[:idx]
            ):
                return False
        seen.update(clique.variables)
    return True


# ---------------------------------------------------------------------------
# identity suite: the linear envelopes as explicit combinations
# ---------------------------------------------------------------------------


def linear_identity_residuals(
    net: FoldedBnn, region: PerturbationRegion
) -> list[tuple[str, MultilinearPoly]]:
    """Differences that vanish identically modulo x^2 = 1, per hidden neuron.

    Each entry is (label, lhs - rhs) where lhs is a normalized linear-envelope
    polynomial and rhs an explicit nonnegative combination of encoding
    polynomials; a correct implementation reduces every residual to the exact
    zero polynomial.  Families:

    * box+/box-  : box rows as half-squares plus half the binary equality;
    * sos+/sos-  : normalized envelopes as square-weighted combinations of the
      sign product and per-coordinate slack squares (deep layers) or centered
      slack terms (layer 1);
    * comb+/comb-: normalized envelopes as plain sums of a one-sided product
      and a row-bound product, scaled by the envelope slope.

    All coefficients are exact rationals.
    """
    net.require_stabilized()
    out: list[tuple[str, MultilinearPoly]] = []
    half = Fraction(1, 2)
    for i, n in enumerate(net.hidden_widths, start=1):
        for j in range(1, n + 1):
            v = Var(i, j)
            x = MultilinearPoly.variable(v)
            up = x + 1
            dn = 1 - x
            h = MultilinearPoly({((v, 2),): 1, (): -1})
            c_plus, c_minus, z = _envelope_coefficients(net, region, i, j)
            g_std = x * z
            g_one_up = up * z
            g_one_dn = (x - 1) * z
            lhs_pos = up - z * (Fraction(2) / c_plus)
            lhs_neg = dn + z * (Fraction(2) / c_minus)

            out.append((f"box+[{i},{j}]", dn - (dn * dn * half + h * half)))
            out.append((f"box-[{i},{j}]", up - (up * up * half + h * half)))

            if i == 1:
                zeta, row_bound, _ = _centered_row_data(net, region, j)
                slack_pos = MultilinearPoly.constant(row_bound) - zeta
                slack_neg = MultilinearPoly.constant(row_bound) + zeta
                sos_pos = dn * dn * g_std * (half / c_plus) + up * up * slack_pos * (
                    half / c_plus
                )
                sos_neg = up * up * g_std * (half / c_minus) + dn * dn * slack_neg * (
                    half / c_minus
                )
            else:
                w = net.weight(i)[j - 1]
                sq_pos = MultilinearPoly.zero()
                sq_neg = MultilinearPoly.zero()
                for k in range(w.shape[0]):
                    if w[k] == 0:
                        continue
                    pred = MultilinearPoly.variable(Var(i - 1, k + 1), int(w[k]))
                    sq_pos = sq_pos + (1 - pred) * (1 - pred)
                    sq_neg = sq_neg + (1 + pred) * (1 + pred)
                slack_pos = MultilinearPoly.constant(
                    int(row_norm1(net.weight(i))[j - 1])
                ) - _row_sum(net, i, j)
                slack_neg = MultilinearPoly.constant(
                    int(row_norm1(net.weight(i))[j - 1])
                ) + _row_sum(net, i, j)
                sos_pos = dn * dn * g_std * (half / c_plus) + up * up * sq_pos * (
                    Fraction(1, 4) / c_plus
                )
                sos_neg = up * up * g_std * (half / c_minus) + dn * dn * sq_neg * (
                    Fraction(1, 4) / c_minus
                )
            out.append((f"sos+[{i},{j}]", lhs_pos - sos_pos))
            out.append((f"sos-[{i},{j}]", lhs_neg - sos_neg))

            comb_pos = (g_one_dn + up * slack_pos) * (Fraction(1) / c_plus)
            comb_neg = (g_one_up + dn * slack_neg) * (Fraction(1) / c_minus)
            out.append((f"comb+[{i},{j}]", lhs_pos - comb_pos))
            out.append((f"comb-[{i},{j}]", lhs_neg - comb_neg))
    return out


# ---------------------------------------------------------------------------
# linear materialization and pattern substitution
# ---------------------------------------------------------------------------


def _affine_parts(poly: MultilinearPoly) -> tuple[dict[Var, Fraction], Fraction]:
    coeffs: dict[Var, Fraction] = {}
    const = Fraction(0)
    for mono, coeff in poly.terms.items():
        if not mono:
            const += _frac(coeff)
        elif len(mono) == 1 and mono[0][1] == 1:
            coeffs[mono[0][0]] = coeffs.get(mono[0][0], Fraction(0)) + _frac(coeff)
        else:
            raise ValueError(f"polynomial is not affine: monomial {mono}")
    return coeffs, const


def linear_inequalities(
    instance: VerificationInstance,
) -> tuple[tuple[Var, ...], np.ndarray, np.ndarray]:
    """Materialize an all-linear instance as A x >= d over its variable order."""
    variables = instance.variables()
    index = {v: i for i, v in enumerate(variables)}
    rows = []
    rhs = []
    for c in instance.constraints.inequalities:
        coeffs, const = _affine_parts(c.poly)
        row = np.zeros(len(variables))
        for v, val in coeffs.items():
            row[index[v]] = float(val)
        rows.append(row)
        rhs.append(-float(const))
    A = np.vstack(rows) if rows else np.zeros((0, len(variables)))
    return variables, A, np.asarray(rhs)


def substitute_pattern(
    instance: VerificationInstance, pattern: dict[Var, int]
) -> list[MultilinearPoly]:
    """Fix the binary variables of a MILP instance to +/-1 values.

    Returns the constraint polynomials restricted to the input variables
    (constant rows included); feasibility of the pattern is then a question
    about x0 alone.
    """
    if instance.encoding_kind != "milp":
        raise ValueError("pattern substitution applies to MILP instances")
    missing = [v for v in instance.binary_vars if v not in pattern]
    if missing:
        raise ValueError(f"pattern misses variables {missing}")
    bad = [v for v, s in pattern.items() if s not in (-1, 1)]
    if bad:
        raise ValueError(f"pattern values must be +/-1, got {bad}")
    out = []
    for c in instance.constraints.inequalities:
        terms: dict = {}
        for mono, coeff in c.poly.terms.items():
            factor = 1
            rest = []
            for v, e in mono:
                if v in pattern:
                    factor *= pattern[v] ** e
                else:
                    rest.append((v, e))
            key = tuple(rest)
            terms[key] = terms.get(key, Fraction(0)) + _frac(coeff) * factor
        out.append(MultilinearPoly(terms))
    return out


# ---------------------------------------------------------------------------
# file export
# ---------------------------------------------------------------------------


def _mps_name(v: Var) -> str:
    return f"Z{v.layer}_{v.index}"


def _export_data(instance: VerificationInstance):
    if instance.encoding_kind not in ("lp", "milp"):
        raise ValueError("only linear encodings export to MPS/LP formats")
    for c in instance.constraints.inequalities:
        if c.poly.degree > 1:
            raise ValueError(
                "quadratic region constraint cannot be exported in a linear format; "
                "use an linf region"
            )
    variables, A, d = linear_inequalities(instance)
    obj_coeffs, obj_const = _affine_parts(instance.objective)
    c = np.zeros(len(variables))
    index = {v: i for i, v in enumerate(variables)}
    for v, val in obj_coeffs.items():
        c[index[v]] = float(val)
    return variables, A, d, c, float(obj_const)


def _z_bounds(instance: VerificationInstance, v: Var) -> tuple[float, float]:
    if v.layer == 0:
        lo = float(instance.region.lower[v.index - 1])
        hi = float(instance.region.upper[v.index - 1])
    else:
        lo, hi = -1.0, 1.0
    return (lo + 1.0) / 2.0, (hi + 1.0) / 2.0


def write_mps(instance: VerificationInstance, path) -> None:
    """Write the linear encoding as an MPS file over shifted variables.

    Every variable x in [-1,1] is written as z = (x+1)/2 in [0,1]; hidden
    variables are declared integer (hence binary).  The leading comment block
    records the affine map and the objective constant.  Rows are all of type
    G (>=) after the shift.
    """
    variables, A, d, c, c0 = _export_data(instance)
    # x = 2z - 1:  sum c_v x_v >= d  =>  sum 2 c_v z_v >= d + sum c_v
    binaries = set(instance.binary_vars)
    obj_const_z = c0 - float(np.sum(c))
    lines: list[str] = []
    lines.append("* Linear robustness encoding; variables shifted by x = 2z - 1.")
    lines.append("* Original variables lie in [-1,1]; integer z columns are the")
    lines.append("* hidden +/-1 activations (x = -1 <-> z = 0, x = +1 <-> z = 1).")
    lines.append(f"* Objective constant (add to solver optimum): {obj_const_z!r}")
    lines.append("* The constant is also encoded as RHS on the objective row")
    lines.append("* with the usual sign convention (rhs = -constant).")
    for v in variables:
        kind = "integer" if v in binaries else "continuous"
        lines.append(f"* map {_mps_name(v)} <-> x[{v.layer},{v.index}] ({kind})")
    lines.append("NAME          ROBUST")
    lines.append("ROWS")
    lines.append(" N  OBJ")
    row_names = [f"R{r+1:06d}" for r in range(A.shape[0])]
    for name in row_names:
        lines.append(f" G  {name}")
    lines.append("COLUMNS")
    marker_open = "    MK0001    'MARKER'                 'INTORG'"
    marker_close = "    MK0002    'MARKER'                 'INTEND'"

    def column_lines(j: int, v: Var) -> list[str]:
        entries = []
        if c[j] != 0.0:
            entries.append(("OBJ", 2.0 * float(c[j])))
        for r in range(A.shape[0]):
            if A[r, j] != 0.0:
                entries.append((row_names[r], 2.0 * float(A[r, j])))
        name = _mps_name(v)
        return [f"    {name:<10}{row:<10}{val!r}" for row, val in entries]

    int_cols = [(j, v) for j, v in enumerate(variables) if v in binaries]
    cont_cols = [(j, v) for j, v in enumerate(variables) if v not in binaries]
    if int_cols:
        lines.append(marker_open)
        for j, v in int_cols:
            lines.extend(column_lines(j, v))
        lines.append(marker_close)
    for j, v in cont_cols:
        lines.extend(column_lines(j, v))
    lines.append("RHS")
    if obj_const_z != 0.0:
        lines.append(f"    RHS       OBJ       {-obj_const_z!r}")
    for r in range(A.shape[0]):
        rhs = float(d[r]) + float(np.sum(A[r]))
        if rhs != 0.0:
            lines.append(f"    RHS       {row_names[r]:<10}{rhs!r}")
    lines.append("BOUNDS")
    for j, v in enumerate(variables):
        name = _mps_name(v)
        if v in binaries:
            lines.append(f" BV BND       {name}")
        else:
            lo, hi = _z_bounds(instance, v)
            lines.append(f" LO BND       {name:<10}{lo!r}")
            lines.append(f" UP BND       {name:<10}{hi!r}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_lp_format(instance: VerificationInstance, path) -> None:
    """Write the linear encoding in CPLEX LP text format (same variable shift)."""
    variables, A, d, c, c0 = _export_data(instance)
    binaries = set(instance.binary_vars)
    obj_const_z = c0 - float(np.sum(c))
    lines = ["\\ Linear robustness encoding; variables shifted by x = 2z - 1."]
    lines.append(f"\\ Objective constant folded into the expression: {obj_const_z!r}")
    lines.append("Minimize")
    terms = []
    for j, v in enumerate(variables):
        if c[j] != 0.0:
            terms.append(f"{2.0 * c[j]:+} {_mps_name(v)}")
    obj = " ".join(terms) if terms else "0 " + _mps_name(variables[0])
    if obj_const_z != 0.0:
        obj += f" {obj_const_z:+}"
    lines.append(" obj: " + obj)
    lines.append("Subject To")
    for r in range(A.shape[0]):
        row_terms = [
            f"{2.0 * A[r, j]:+} {_mps_name(v)}"
            for j, v in enumerate(variables)
            if A[r, j] != 0.0
        ]
        rhs = d[r] + float(np.sum(A[r]))
        body = " ".join(row_terms) if row_terms else f"0 {_mps_name(variables[0])}"
        lines.append(f" c{r+1}: {body} >= {rhs}")
    lines.append("Bounds")
    for v in variables:
        if v not in binaries:
            lo, hi = _z_bounds(instance, v)
            lines.append(f" {lo} <= {_mps_name(v)} <= {hi}")
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(_mps_name(v) for v in variables if v in binaries))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
