"""Operator-splitting solver for the block conic problems, plus certificate
rigorization.

One code path serves both the LP relaxation (no PSD blocks) and the moment
SDPs.  The iteration alternates a least-squares affine step with a projection
onto the cone product; the scaled dual variable is, by construction, always a
member of the dual cone (clipping for the nonnegative rows, an eigenvalue
floor for PSD blocks), so the final iterate doubles as a certificate:
nonnegative multipliers for the scalar rows and one Gram matrix per clique
block.

`rigorous_lower_bound` turns that approximate certificate into a bound that
holds despite floating-point error: the certificate combination is expanded
in exact rational arithmetic (binary64 values are dyadic rationals), reduced
modulo x^2 = 1, and the leftover polynomial is bounded coefficient-wise using
|x| <= 1 for every variable; approximate PSD-ness of the Gram blocks is
covered by an eigenvalue-deficit term.  Everything here is deterministic:
same problem, same options, bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from bnncert.encode import (
    Clique,
    VerificationInstance,
    build_cliques,
    linear_inequalities,
)
from bnncert.poly import MultilinearPoly, Var
from bnncert.sdp import ConicProblem, smat, svec

__all__ = [
    "RigorousBound",
    "SolveOptions",
    "SolveResult",
    "lp_to_conic",
    "rigorous_lower_bound",
    "solve_conic",
    "solve_lp",
]


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-6
    max_iter: int = 50000
    scaling: bool = True
    seed: int = 0
    rho: float = 1.0
    check_every: int = 25

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass(frozen=True)
class SolveResult:
    """Solver outcome with the full approximate primal/dual pair.

    `sigmas` are the multipliers of the scalar inequality rows (entrywise
    nonnegative up to projection roundoff) and `grams` the dual PSD blocks,
    both in problem row order; together with `primal_objective` and
    `dual_objective` they form the approximate certificate consumed by
    `rigorous_lower_bound`.
    """

    status: str  # optimal | max_iter | infeasible_certificate
    primal_objective: float
    dual_objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    y: np.ndarray
    slack_nonneg: np.ndarray
    slack_psd: tuple[np.ndarray, ...]
    sigmas: np.ndarray
    grams: tuple[np.ndarray, ...]
    options: SolveOptions
    problem: ConicProblem = field(repr=False)


@dataclass(frozen=True)
class RigorousBound:
    """A floor under the true optimum, valid despite solver inexactness.

    value = anchor - coefficient_residual - sum(eigenvalue_deficits), where
    the anchor is the exact-rational evaluation of the certificate's constant
    term.  All three reductions are themselves outward-rounded.
    """

    value: float
    anchor: float
    coefficient_residual: float
    eigenvalue_deficits: tuple[float, ...]

    @property
    def budget(self) -> float:
        return self.coefficient_residual + float(sum(self.eigenvalue_deficits))


# ---------------------------------------------------------------------------
# cone projection
# ---------------------------------------------------------------------------


def _project_cone(
    w: np.ndarray, n_nonneg: int, psd_sizes: Sequence[int]
) -> np.ndarray:
    s = w.copy()
    if n_nonneg:
        np.maximum(w[:n_nonneg], 0.0, out=s[:n_nonneg])
    pos = n_nonneg
    for size in psd_sizes:
        ln = size * (size + 1) // 2
        M = smat(w[pos : pos + ln], size)
        lam, V = np.linalg.eigh(M)
        np.maximum(lam, 0.0, out=lam)
        P = (V * lam) @ V.T
        P = (P + P.T) * 0.5
        s[pos : pos + ln] = svec(P)
        pos += ln
    return s


# ---------------------------------------------------------------------------
# equilibration
# ---------------------------------------------------------------------------


def _row_groups(n_nonneg: int, psd_sizes: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal row ranges that must share one scale (PSD blocks are rigid)."""
    groups = [(r, r + 1) for r in range(n_nonneg)]
    pos = n_nonneg
    for size in psd_sizes:
        ln = size * (size + 1) // 2
        groups.append((pos, pos + ln))
        pos += ln
    return groups


def _equilibrate(problem: ConicProblem, iters: int = 10):
    """Ruiz-style scaling with cone-respecting row groups; returns (E, D)."""
    A = problem.A.tocsr(copy=True)
    m, n = A.shape
    E = np.ones(m)
    D = np.ones(n)
    groups = _row_groups(problem.n_nonneg, problem.psd_sizes)
    for _ in range(iters):
        absA = abs(A)
        rmax = np.asarray(absA.max(axis=1).todense()).ravel()
        e = np.ones(m)
        for lo, hi in groups:
            g = rmax[lo:hi].max() if hi > lo else 0.0
            e[lo:hi] = 1.0 / math.sqrt(g) if g > 0 else 1.0
        cmax = np.asarray(absA.max(axis=0).todense()).ravel()
        d = np.where(cmax > 0, 1.0 / np.sqrt(cmax), 1.0)
        A = sp.diags(e) @ A @ sp.diags(d)
        E *= e
        D *= d
    return E, D


# ---------------------------------------------------------------------------
# main iteration
# ---------------------------------------------------------------------------


def _make_solver(AtA: sp.csc_matrix):
    n = AtA.shape[0]
    if n == 0:
        return lambda rhs: rhs
    if n <= 400:
        dense = AtA.toarray()
        chol = scipy.linalg.cho_factor(dense, lower=True)
        return lambda rhs: scipy.linalg.cho_solve(chol, rhs)
    lu = spla.splu(AtA.tocsc())
    return lambda rhs: lu.solve(rhs)


def solve_conic(problem: ConicProblem, opts: Optional[SolveOptions] = None) -> SolveResult:
    """Alternating projections with an exact affine step; deterministic.

    Residuals and the duality gap in the returned result are recomputed on
    the original (unscaled) problem from the final iterates, so re-deriving
    them from the result's vectors reproduces them exactly.
    """
    opts = opts or SolveOptions()
    A0, b0, c0vec = problem.A, problem.b, problem.c
    m, n = A0.shape

    if opts.scaling and m and n:
        E, D = _equilibrate(problem)
    else:
        E, D = np.ones(m), np.ones(n)
    A = sp.diags(E) @ A0 @ sp.diags(D)
    A = A.tocsr()
    b = E * b0
    c = D * c0vec

    At = A.T.tocsr()
    solve_normal = _make_solver((At @ A).tocsc())

    rho = opts.rho
    y = np.zeros(n)
    s = _project_cone(b, problem.n_nonneg, problem.psd_sizes)
    u = np.zeros(m)

    bnorm = 1.0 + np.linalg.norm(b0)
    cnorm = 1.0 + np.linalg.norm(c0vec)

    def unscaled(yv, sv, uv):
        y_o = D * yv
        s_o = sv / E
        z_o = E * (rho * uv)
        return y_o, s_o, z_o

    def true_residuals(y_o, s_o, z_o):
        pres = np.linalg.norm(A0 @ y_o + s_o - b0) / bnorm
        dres = np.linalg.norm(c0vec + A0.T @ z_o) / cnorm
        pobj = problem.c0 + float(c0vec @ y_o)
        dobj = problem.c0 - float(b0 @ z_o)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return pres, dres, gap, pobj, dobj

    status = "max_iter"
    it = 0
    pres = dres = gap = math.inf
    for it in range(1, opts.max_iter + 1):
        rhs = At @ (b - s - u) - c / rho
        y = solve_normal(rhs)
        Ay = A @ y
        w = b - Ay - u
        s = _project_cone(w, problem.n_nonneg, problem.psd_sizes)
        u = s - w  # = u + Ay + s - b

        if it % opts.check_every == 0 or it == opts.max_iter:
            y_o, s_o, z_o = unscaled(y, s, u)
            pres, dres, gap, pobj, dobj = true_residuals(y_o, s_o, z_o)
            if pres <= opts.tol and dres <= opts.tol and gap <= opts.tol:
                status = "optimal"
                break
            if it % 200 == 0:
                # certified infeasibility: a dual ray
                znorm = np.linalg.norm(z_o)
                if znorm > 1e-10:
                    ray = z_o / znorm
                    if (
                        np.linalg.norm(A0.T @ ray) <= 1e-9
                        and float(b0 @ ray) < -1e-9
                    ):
                        status = "infeasible_certificate"
                        break
                # residual balancing
                if pres > 10.0 * dres and rho < 1e6:
                    u *= 0.5
                    rho *= 2.0
                elif dres > 10.0 * pres and rho > 1e-6:
                    u *= 2.0
                    rho *= 0.5

    y_o, s_o, z_o = unscaled(y, s, u)
    pres, dres, gap, pobj, dobj = true_residuals(y_o, s_o, z_o)
    sig, grams = problem.split_cone_vector(z_o)
    s_nonneg, s_psd = problem.split_cone_vector(s_o)
    return SolveResult(
        status=status,
        primal_objective=pobj,
        dual_objective=dobj,
        iterations=it,
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        y=y_o,
        slack_nonneg=s_nonneg,
        slack_psd=tuple(s_psd),
        sigmas=sig,
        grams=tuple(grams),
        options=opts,
        problem=problem,
    )


# ---------------------------------------------------------------------------
# LP routing
# ---------------------------------------------------------------------------


def lp_to_conic(instance: VerificationInstance) -> ConicProblem:
    """Materialize an all-linear instance as a conic problem without PSD blocks."""
    if instance.encoding_kind != "lp":
        raise ValueError("expected an LP instance")
    variables, A_ge, d = linear_inequalities(instance)
    coeffs: dict[Var, Fraction] = {}
    const = Fraction(0)
    for mono, coeff in instance.objective.terms.items():
        if not mono:
            const += Fraction(coeff)
        else:
            coeffs[mono[0][0]] = Fraction(coeff)
    c = np.zeros(len(variables))
    for i, v in enumerate(variables):
        if v in coeffs:
            c[i] = float(coeffs[v])
    return ConicProblem(
        A=sp.csc_matrix(-A_ge),
        b=-d,
        c=c,
        c0=float(const),
        n_nonneg=A_ge.shape[0],
        psd_sizes=(),
        ids_order=tuple((v,) for v in variables),
    )


def solve_lp(
    instance: VerificationInstance, opts: Optional[SolveOptions] = None
) -> SolveResult:
    """Solve the linear relaxation through the same conic iteration."""
    return solve_conic(lp_to_conic(instance), opts)


# ---------------------------------------------------------------------------
# rigorous certificate bound
# ---------------------------------------------------------------------------


def _float_down(x: Fraction) -> float:
    f = float(x)
    if Fraction(f) > x:
        f = math.nextafter(f, -math.inf)
    return f


def _float_up(x: Fraction) -> float:
    f = float(x)
    if Fraction(f) < x:
        f = math.nextafter(f, math.inf)
    return f


def _exact_psd_check(G: np.ndarray) -> bool:
    """Exact rational LDL^T with PSD pivoting rules; True proves G >= 0."""
    n = G.shape[0]
    M = [[Fraction(G[i, j]) for j in range(n)] for i in range(n)]
    for k in range(n):
        pivot = M[k][k]
        if pivot < 0:
            return False
        if pivot == 0:
            if any(M[k][j] != 0 for j in range(k + 1, n)):
                return False
            continue
        row_k = M[k]
        for i in range(k + 1, n):
            if M[i][k] == 0:
                continue
            factor = M[i][k] / pivot
            row_i = M[i]
            for j in range(k + 1, n):
                if row_k[j]:
                    row_i[j] -= factor * row_k[j]
    return True


def _gram_polynomial(G: np.ndarray, variables: Sequence[Var]) -> MultilinearPoly:
    """(1, x_clique)^T G (1, x_clique) as an exact polynomial."""
    terms: dict = {}

    def add(mono, coeff: Fraction) -> None:
        if coeff:
            terms[mono] = terms.get(mono, Fraction(0)) + coeff

    s = G.shape[0]
    add((), Fraction(G[0, 0]))
    for p in range(1, s):
        v = variables[p - 1]
        add(((v, 1),), 2 * Fraction(G[0, p]))
        add(((v, 2),), Fraction(G[p, p]))
        for q in range(p + 1, s):
            wv = variables[q - 1]
            mono = tuple(sorted(((v, 1), (wv, 1))))
            add(mono, 2 * Fraction(G[p, q]))
    return MultilinearPoly(terms)


def rigorous_lower_bound(
    result: SolveResult,
    instance: VerificationInstance,
    cliques: Optional[Sequence[Clique]] = None,
) -> RigorousBound:
    """Bound the encoded optimum from below using only the dual certificate.

    Expands f - sum sigma_g * g - sum v_k^T G_k v_k in exact rational
    arithmetic (negative sigmas are clamped to zero first, which simply moves
    their term into the remainder), reduces modulo x^2 = 1, and charges the
    remainder coefficient-wise (every variable and variable product has
    magnitude at most 1 on the feasible set).  Gram blocks pay an eigenvalue
    deficit (block size) * max(0, -lambda_min_lower); exactly PSD blocks are
    recognized by an exact rational factorization and pay zero.  The reported
    value is finally capped at the solve's primal objective.
    """
    sig = np.asarray(result.sigmas, dtype=float)
    grams = result.grams
    if not np.all(np.isfinite(sig)) or any(
        not np.all(np.isfinite(G)) for G in grams
    ):
        raise ValueError("non-finite certificate entries")
    ineqs = instance.constraints.inequalities
    if sig.shape[0] != len(ineqs):
        raise ValueError(
            f"certificate has {sig.shape[0]} multipliers for {len(ineqs)} rows"
        )
    remainder = instance.objective.to_exact()
    for mult, con in zip(sig, ineqs):
        if mult > 0:
            remainder = remainder - con.poly.to_exact() * Fraction(mult)
    if grams:
        if cliques is None:
            cliques = build_cliques(instance.net)
        if len(grams) != len(cliques):
            raise ValueError(f"{len(grams)} Gram blocks for {len(cliques)} cliques")
        for G, clique in zip(grams, cliques):
            remainder = remainder - _gram_polynomial(G, clique.variables)
    remainder = remainder.reduce_binary_squares()

    anchor_exact = remainder.constant_term()
    anchor_exact = anchor_exact if isinstance(anchor_exact, Fraction) else Fraction(anchor_exact)
    coeff_budget = Fraction(0)
    for mono, coeff in remainder.terms.items():
        if mono:
            coeff = coeff if isinstance(coeff, Fraction) else Fraction(coeff)
            coeff_budget += abs(coeff)

    deficits: list[float] = []
    eps = float(np.finfo(float).eps)
    for G in grams:
        size = G.shape[0]
        if size <= 64 and _exact_psd_check(G):
            deficits.append(0.0)
            continue
        lam_min = float(np.linalg.eigvalsh(G)[0])
        widen = size * eps * float(np.linalg.norm(G, "fro"))
        lower = lam_min - widen
        deficits.append(size * max(0.0, -lower))

    value_exact = anchor_exact - coeff_budget
    value = _float_down(value_exact) - float(sum(deficits))
    # never report more than the solve's own objective estimate; anything
    # below a valid lower bound is still a valid lower bound
    pobj = float(result.primal_objective)
    if math.isfinite(pobj) and pobj < value:
        value = pobj
    return RigorousBound(
        value=value,
        anchor=_float_down(anchor_exact),
        coefficient_residual=_float_up(coeff_budget),
        eigenvalue_deficits=tuple(deficits),
    )
