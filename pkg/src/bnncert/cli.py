"""Command-line front end: `verify` for verdicts, `export` for solver files.

Exit codes: 0 the query is certified robust, 1 a counterexample was found,
2 inconclusive, 3 error (bad inputs, degenerate network, unsupported combo).

A robustness query is: does the predicted label of the reference input
survive every perturbation in the region?  `verify` answers per attack
target k != true label by lower-bounding the logit margin; "robust" demands a
strictly positive rigorous bound for every target, "falsified" demands an
explicit region point whose forward label differs.  Sampling always runs
opportunistically first (seeded, cheap) so an easily-falsified query never
burns solver time.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from bnncert.encode import (
    PerturbationRegion,
    build_cliques,
    encode_lp,
    encode_milp,
    encode_standard,
    encode_tightened,
    objective_targeted,
    write_mps,
)
from bnncert.model import (
    FoldedBnn,
    fold_batchnorm,
    forward,
    load_inputs,
    load_model,
    stabilize,
    weight_sparsity,
)
from bnncert.oracle import exact_verify, relative_improvement, sample_upper_bound
from bnncert.sdp import assemble_moment_sdp, export_sdpa, to_conic
from bnncert.solver import SolveOptions, rigorous_lower_bound, solve_conic, solve_lp

__all__ = ["TargetReport", "VerdictReport", "main", "run_verify", "run_export"]

METHODS = ("lp", "sdp1", "sdp1-tight", "oracle", "sample-ub")

#: pixel-value deltas are scaled to the [-1,1] input domain: out of 255 pixel
#: levels, an linf delta spans 2/255 per level of the symmetric domain
#: (1/127.5), while the l2 budget is conventionally quoted against the raw
#: 0..255 scale (1/255).
PIXEL_SCALE = {"linf": 1.0 / 127.5, "l2": 1.0 / 255.0}


@dataclass
class TargetReport:
    target: int
    method: str
    lower_bound: Optional[float]
    approximate: Optional[float]
    status: str  # robust | falsified | unknown
    wall_time: float
    iterations: Optional[int] = None
    solver_status: Optional[str] = None


@dataclass
class VerdictReport:
    model_path: str
    model_sha256: str
    widths: tuple
    input_index: int
    input_values: tuple
    true_label: int
    norm: str
    eps: float
    pixel_scale: bool
    method: str
    seed: int
    tol: float
    max_iter: int
    targets: list
    verdict: str
    counterexample: Optional[tuple]
    metrics: Optional[dict]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["input_values"] = list(self.input_values)
        d["counterexample"] = (
            None if self.counterexample is None else list(self.counterexample)
        )
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare(args) -> tuple[FoldedBnn, np.ndarray, int, PerturbationRegion, float]:
    net = stabilize(fold_batchnorm(load_model(args.model)))
    inputs = load_inputs(args.input)
    if not (1 <= args.index <= inputs.shape[0]):
        raise ValueError(f"--index {args.index} outside 1..{inputs.shape[0]}")
    x0 = inputs[args.index - 1]
    if x0.shape[0] != net.input_dim:
        raise ValueError(
            f"input width {x0.shape[0]} does not match network input {net.input_dim}"
        )
    eps = args.eps
    if eps < 0:
        raise ValueError("--eps must be nonnegative")
    if args.pixel_scale:
        eps = eps * PIXEL_SCALE[args.norm]
    region = (
        PerturbationRegion.linf(x0, eps)
        if args.norm == "linf"
        else PerturbationRegion.l2(x0, eps)
    )
    label = args.label if args.label is not None else forward(net, x0).label
    if not (1 <= label <= net.n_classes):
        raise ValueError(f"--label {label} outside 1..{net.n_classes}")
    return net, x0, label, region, eps


def _find_counterexample(
    net: FoldedBnn,
    region: PerturbationRegion,
    true_label: int,
    n_samples: int,
    seed: int,
) -> Optional[np.ndarray]:
    """Seeded sampling attack: any region point whose forward label differs."""
    if forward(net, region.center).label != true_label:
        return region.center.copy()
    if region.radius == 0:
        return None
    from bnncert.oracle import _sample_region  # deterministic given the seed

    rng = np.random.default_rng(seed)
    for x0 in _sample_region(region, n_samples, rng):
        if forward(net, x0).label != true_label:
            return x0
    return None


def _margin_targets(net: FoldedBnn, x0: np.ndarray, label: int) -> list[TargetReport]:
    """eps = 0: verdicts from the exact forward margins, no encodings."""
    tr = forward(net, x0)
    out = []
    for k in range(1, net.n_classes + 1):
        if k == label:
            continue
        t0 = time.perf_counter()
        margin = float(tr.logits[label - 1] - tr.logits[k - 1])
        status = "robust" if margin > 0 else ("falsified" if tr.label != label else "unknown")
        out.append(
            TargetReport(
                target=k,
                method="exact-forward",
                lower_bound=margin,
                approximate=margin,
                status=status,
                wall_time=time.perf_counter() - t0,
            )
        )
    return out


def _bound_one_target(
    net: FoldedBnn,
    region: PerturbationRegion,
    label: int,
    k: int,
    method: str,
    opts: SolveOptions,
) -> TargetReport:
    objective = objective_targeted(net, label, k)
    t0 = time.perf_counter()
    if method == "lp":
        instance = encode_lp(net, region, objective, true_label=label, target=k)
        res = solve_lp(instance, opts)
        rb = rigorous_lower_bound(res, instance)
        lower, approx = rb.value, res.primal_objective
        iters, sstat = res.iterations, res.status
    elif method in ("sdp1", "sdp1-tight"):
        encoder = encode_standard if method == "sdp1" else encode_tightened
        instance = encoder(net, region, objective, true_label=label, target=k)
        cliques = build_cliques(net)
        res = solve_conic(to_conic(assemble_moment_sdp(instance, cliques)), opts)
        rb = rigorous_lower_bound(res, instance, cliques)
        lower, approx = rb.value, res.primal_objective
        iters, sstat = res.iterations, res.status
    elif method == "oracle":
        result = exact_verify(net, region, objective)
        lower = approx = result.value
        iters, sstat = None, "exact"
    elif method == "sample-ub":
        sb = sample_upper_bound(net, region, objective, n_samples=512, seed=opts.seed)
        report = TargetReport(
            target=k,
            method=method,
            lower_bound=None,
            approximate=sb.value,
            status="unknown",
            wall_time=time.perf_counter() - t0,
            solver_status="sampling",
        )
        return report
    else:
        raise ValueError(f"unknown method {method!r}")
    status = "robust" if lower > 0 else "unknown"
    return TargetReport(
        target=k,
        method=method,
        lower_bound=lower,
        approximate=approx,
        status=status,
        wall_time=time.perf_counter() - t0,
        iterations=iters,
        solver_status=sstat,
    )


def _collect_metrics(
    net: FoldedBnn,
    region: PerturbationRegion,
    label: int,
    targets: Sequence[TargetReport],
    method: str,
    opts: SolveOptions,
) -> dict:
    metrics: dict = {
        "weight_sparsity": weight_sparsity(net),
        "widths": list(net.widths),
        "hidden_count": net.hidden_count(),
        "stabilization_log": list(net.log),
    }
    if method in ("sdp1", "sdp1-tight") and region.radius > 0:
        improvements = {}
        for entry in targets:
            if entry.lower_bound is None:
                continue
            objective = objective_targeted(net, label, entry.target)
            lp_inst = encode_lp(net, region, objective, true_label=label, target=entry.target)
            lp_res = solve_lp(lp_inst, opts)
            tau_lp = rigorous_lower_bound(lp_res, lp_inst).value
            ub = sample_upper_bound(
                net, region, objective, n_samples=512, seed=opts.seed
            ).value
            rel = relative_improvement(entry.lower_bound, tau_lp, ub)
            improvements[str(entry.target)] = {
                "lp_bound": tau_lp,
                "sample_upper": ub,
                "relative_improvement": rel,
            }
        metrics["improvement"] = improvements
    return metrics


def run_verify(args) -> int:
    net, x0, label, region, eps = _prepare(args)
    opts = SolveOptions(tol=args.tol, max_iter=args.max_iter, seed=args.seed)
    counterexample: Optional[np.ndarray] = None

    if eps == 0:
        targets = _margin_targets(net, x0, label)
        if any(t.status == "falsified" for t in targets):
            counterexample = x0
    else:
        counterexample = _find_counterexample(net, region, label, 200, args.seed)
        targets = []
        if counterexample is None:
            for k in range(1, net.n_classes + 1):
                if k == label:
                    continue
                entry = _bound_one_target(net, region, label, k, args.method, opts)
                # a negative exact bound pinpoints an attack pattern; confirm
                # it with a forward pass before downgrading the verdict
                if args.method == "oracle" and entry.lower_bound is not None and entry.lower_bound <= 0:
                    witness = exact_verify(
                        net, region, objective_targeted(net, label, k)
                    ).witness
                    if forward(net, witness).label != label:
                        entry.status = "falsified"
                        counterexample = witness
                if args.method == "sample-ub" and entry.approximate is not None and entry.approximate < 0:
                    sb = sample_upper_bound(
                        net,
                        region,
                        objective_targeted(net, label, k),
                        n_samples=512,
                        seed=args.seed,
                    )
                    if forward(net, sb.x0).label != label:
                        entry.status = "falsified"
                        counterexample = sb.x0
                targets.append(entry)

    if counterexample is not None:
        verdict = "falsified"
    elif targets and all(t.status == "robust" for t in targets):
        verdict = "robust"
    else:
        verdict = "unknown"

    metrics = (
        _collect_metrics(net, region, label, targets, args.method, opts)
        if args.metrics
        else None
    )
    report = VerdictReport(
        model_path=str(args.model),
        model_sha256=_sha256(args.model),
        widths=net.widths,
        input_index=args.index,
        input_values=tuple(float(v) for v in x0),
        true_label=label,
        norm=args.norm,
        eps=eps,
        pixel_scale=bool(args.pixel_scale),
        method=args.method,
        seed=args.seed,
        tol=args.tol,
        max_iter=args.max_iter,
        targets=[asdict(t) for t in targets],
        verdict=verdict,
        counterexample=(
            None if counterexample is None else tuple(float(v) for v in counterexample)
        ),
        metrics=metrics,
    )
    if args.json:
        report.save(args.json)

    print(f"model {args.model} (sha256 {report.model_sha256[:12]}...), widths {net.widths}")
    print(f"input #{args.index}, true label {label}, {args.norm} radius {eps:g}")
    for t in targets:
        lb = "-" if t.lower_bound is None else f"{t.lower_bound:.6g}"
        ap = "-" if t.approximate is None else f"{t.approximate:.6g}"
        print(
            f"  target {t.target}: [{t.method}] bound {lb} (approx {ap}) -> {t.status}"
            f" ({t.wall_time:.3f}s)"
        )
    print(f"verdict: {verdict}")
    return {"robust": 0, "falsified": 1, "unknown": 2}[verdict]


def run_export(args) -> int:
    net, x0, label, region, eps = _prepare(args)
    if eps == 0:
        raise ValueError("export needs a positive radius")
    target = args.target
    if target is None:
        target = 1 if label != 1 else 2
    if target == label:
        raise ValueError("--target must differ from the true label")
    objective = objective_targeted(net, label, target)
    if args.kind == "sdpa":
        encoder = encode_tightened if args.method == "sdp1-tight" else encode_standard
        instance = encoder(net, region, objective, true_label=label, target=target)
        export_sdpa(assemble_moment_sdp(instance), args.out)
    else:
        instance = encode_milp(
            net,
            region,
            objective,
            feasibility_threshold=args.threshold,
            true_label=label,
            target=target,
        )
        write_mps(instance, args.out)
    print(f"wrote {args.kind} file: {args.out} (true label {label}, target {target})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnncert",
        description="Certify sign-activation network robustness (LP / moment-SDP / exact).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--input", required=True, help="reference input file (one vector per line)")
        p.add_argument("--index", type=int, default=1, help="1-based input row (default 1)")
        p.add_argument("--label", type=int, default=None, help="true label (default: network's own prediction)")
        p.add_argument("--norm", choices=("linf", "l2"), default="linf")
        p.add_argument("--eps", type=float, required=True, help="perturbation radius")
        p.add_argument(
            "--pixel-scale",
            action="store_true",
            help="interpret --eps in 0..255 pixel levels (linf: /127.5, l2: /255)",
        )

    pv = sub.add_parser("verify", help="compute a robustness verdict")
    common(pv)
    pv.add_argument("--method", choices=METHODS, default="sdp1-tight")
    pv.add_argument("--tol", type=float, default=1e-6)
    pv.add_argument("--max-iter", type=int, default=50000)
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--json", default=None, help="write the full report to this path")
    pv.add_argument("--metrics", action="store_true", help="add LP/sampling comparison metrics")

    pe = sub.add_parser("export", help="write a solver exchange file")
    common(pe)
    pe.add_argument("--kind", choices=("sdpa", "mps"), required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument(
        "--method",
        choices=("sdp1", "sdp1-tight"),
        default="sdp1-tight",
        help="moment relaxation flavor for --kind sdpa",
    )
    pe.add_argument("--target", type=int, default=None, help="attack target class")
    pe.add_argument(
        "--threshold",
        type=float,
        default=None,
        help="MPS only: export attack feasibility (objective <= threshold) instead of the bound problem",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return run_verify(args)
        return run_export(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
