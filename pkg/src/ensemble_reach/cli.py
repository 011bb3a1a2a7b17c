"""Command-line front end.

Exit codes: 0 pass/success, 1 input error, 2 fail/not achieved, 3 inconclusive.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .certify import (Tolerances, _jsonable, certify_lq, certify_output,
                      certify_uniform_sufficient, output_moment_rank)
from .model import SpecError, dumps_canonical, load_ensemble, load_target, to_document
from .spectral import (SpectralError, curves_to_csv, decompose, eigen_curves, group_selections,
                       projection_residuals)
from .synth import NotAchievedError, parse_norm, steer_average, synthesize_uniform

EXIT_OK, EXIT_INPUT, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3
COMMANDS = ("certify", "synthesize", "decompose", "spectrum", "moments", "steer-average")
VERDICT_EXIT = {"pass": EXIT_OK, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _nonnegative(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return v
    return conv


def _norm(text):
    try:
        parse_norm(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _complex_list(text):
    try:
        return [complex(s.strip().replace("i", "j")) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse components {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ensemble-reach",
                description="Certify and synthesize ensemble reachability of sampled "
                            "parameter-dependent linear systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", required=True, help="ensemble spec (JSON)")
    p.add_argument("--out", help="output document path (default: stdout)")
    p.add_argument("--epsilon", type=_positive(float), default=1e-3)
    p.add_argument("--max-degree", type=_nonnegative(int), default=64)
    p.add_argument("--norm", type=_norm, default="sup", help="sup, l2 or lq:<q>")
    p.add_argument("--tol-rank", type=_positive(float))
    p.add_argument("--tol-spec", type=_positive(float))
    p.add_argument("--tol-measure", type=_positive(float))
    p.add_argument("--allow-isolated", action="store_true")
    p.add_argument("--real-coefficients", action="store_true")
    p.add_argument("--csv", help="write plot data (error curve or eigenvalue curves) here")
    p.add_argument("--horizon", type=_positive(int))
    p.add_argument("--kmax", type=_positive(int), help="number of moment terms")
    p.add_argument("--y-star", type=_complex_list, help="comma-separated output components")
    return p


def _tolerances(args) -> Tolerances:
    return Tolerances(rank=args.tol_rank, spec=args.tol_spec, measure=args.tol_measure or 0.0,
                      allow_isolated=args.allow_isolated)


def _clean(x):
    """JSON-safe copy: complex to [re, im], non-finite floats to strings."""
    x = _jsonable(x)
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _envelope(args, result, tolerances):
    return {"tool": "ensemble-reach", "version": __version__, "command": args.command,
            "input": str(args.input), "tolerances": tolerances, "result": result}


def _settings(args):
    return {"rank": args.tol_rank, "spec": args.tol_spec, "measure": args.tol_measure,
            "allow_isolated": args.allow_isolated, "epsilon": args.epsilon,
            "max_degree": args.max_degree, "norm": args.norm, "horizon": args.horizon,
            "real_coefficients": args.real_coefficients, "kmax": args.kmax}


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load(args):
    try:
        raw = Path(args.input).read_text()
    except OSError as exc:
        raise InputError(f"{args.input}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.input}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    ens = load_ensemble(doc)
    return doc, ens


def _cmd_certify(args, doc, ens):
    tols = _tolerances(args)
    kind, q = parse_norm(args.norm)
    rep = certify_lq(ens, q, tols) if kind == "lq" else certify_uniform_sufficient(ens, tols)
    result = rep.to_document()
    if ens.C is not None:
        out = certify_output(ens, tols, args.kmax)
        result["output"] = out.to_document()
    return result, rep.tolerances, VERDICT_EXIT[rep.verdict]


def _cmd_synthesize(args, doc, ens):
    target = load_target(doc, ens)
    if target is None:
        raise InputError("target: missing required key")
    try:
        res = synthesize_uniform(ens, target, args.epsilon, args.max_degree, args.norm,
                                 real=args.real_coefficients, horizon=args.horizon,
                                 raise_on_failure=False)
    except NotAchievedError as exc:  # pragma: no cover - raise_on_failure is off
        res = exc.result
    if args.csv:
        Path(args.csv).write_text(res.error_curve_csv())
    return res.to_document(), _settings(args), EXIT_OK if res.achieved else EXIT_FAIL


def _cmd_decompose(args, doc, ens):
    fam = eigen_curves(ens)
    tols = _tolerances(args)
    gap_tol = tols.spec_tol(fam.curves.ravel())
    grp = group_selections(fam, gap_tol)
    used = {"spec": gap_tol}
    if grp.k < 2:
        return {"groups": grp.groups, "error": "no nontrivial strictly disjoint grouping"}, used, EXIT_FAIL
    res = None
    for nodes in (64, 128, 256, 512):
        try:
            dec, subs = decompose(ens, grp, nodes)
        except SpectralError as exc:
            return {"groups": grp.groups, "error": str(exc)}, used, EXIT_FAIL
        res = projection_residuals(ens, dec)
        used["quadrature_nodes"] = nodes
        if max(res.values()) < 1e-7:
            break
    blocks = [to_document(s) for s in subs]
    result = {"groups": grp.groups, "ranks": dec.ranks[:, 0].tolist(),
              "min_gap": grp.min_gap(), "residuals": res,
              "contours": [{"fixed": c["fixed"]} for c in dec.contours]}
    if args.out:
        stem = Path(args.out)
        files = []
        for i, b in enumerate(blocks):
            path = stem.with_name(f"{stem.stem}.block{i}.json")
            path.write_text(dumps_canonical(_clean(b)))
            files.append(path.name)
        result["block_files"] = files
    else:
        result["blocks"] = blocks
    return result, used, EXIT_OK


def _cmd_spectrum(args, doc, ens):
    fam = eigen_curves(ens)
    csv = curves_to_csv(fam)
    target = args.csv or args.out
    if target is None:
        sys.stdout.write(csv)
        return None, {}, EXIT_OK
    Path(target).write_text(csv)
    if args.csv and args.out:
        return {"csv": str(args.csv), "monodromy": fam.monodromy}, {}, EXIT_OK
    return None, {}, EXIT_OK


def _cmd_moments(args, doc, ens):
    if ens.C is None:
        raise InputError("C: missing required key for moments")
    tol = args.tol_rank
    mm = output_moment_rank(ens, args.kmax, tol)
    result = {"rank": mm.rank, "k_max": mm.k_max, "p": ens.p, "verdict": mm.verdict,
              "columns": mm.columns.tolist()}
    return result, {"rank": mm.tol}, VERDICT_EXIT[mm.verdict]


def _cmd_steer(args, doc, ens):
    if args.y_star is None:
        raise InputError("--y-star is required for steer-average")
    if ens.C is None:
        raise InputError("C: missing required key for steer-average")
    try:
        res = steer_average(ens, args.y_star, args.epsilon, args.max_degree)
    except NotAchievedError as exc:
        return {"achieved": False, "reason": str(exc)}, _settings(args), EXIT_FAIL
    return res.to_document(), _settings(args), EXIT_OK


HANDLERS = {"certify": _cmd_certify, "synthesize": _cmd_synthesize,
            "decompose": _cmd_decompose, "spectrum": _cmd_spectrum,
            "moments": _cmd_moments, "steer-average": _cmd_steer}


def _thread_limit():
    raw = os.environ.get("ENSEMBLE_REACH_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"ENSEMBLE_REACH_THREADS: expected an integer, got {raw!r}") from None
    if n < 1:
        raise InputError("ENSEMBLE_REACH_THREADS: must be >= 1")
    return n


def run(args) -> int:
    try:
        limit = _thread_limit()
        doc, ens = _load(args)
        if limit is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=limit):
                result, tols, code = HANDLERS[args.command](args, doc, ens)
        else:
            result, tols, code = HANDLERS[args.command](args, doc, ens)
    except (InputError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if result is not None:
        _write(args.out, dumps_canonical(_clean(_envelope(args, result, tols))))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
