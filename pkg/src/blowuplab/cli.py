"""Command-line front end: ``blowuplab {classify,feller,lyapunov,simulate,gallery}``.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 engine
error, 4 inconclusive verdict caused by contradictory findings.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as ex
from . import feller as fl
from . import lyapunov as ly
from .errors import BlowupError, ConfigError
from .mc import estimate_explosion_prob, run_paths, threshold_sensitivity
from .model import LyapunovCandidate, RegionSpec, Verdict, load_model_file
from .report import NAMED_CANDIDATES, classify, sim_config_from, verdict_label

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_ENGINE, EXIT_CONTRADICTION = 0, 1, 2, 3, 4
log = logging.getLogger("blowuplab")


@dataclass
class RunManifest:
    config_path: str | None
    seed: int | None
    tool_version: str
    timestamp: str
    command: list
    outputs: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings inf, -inf, nan."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, Verdict):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2)


def _common(p):
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", type=Path, default=None, help="directory for artifacts and manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blowuplab", description="Explosion analysis for SDEs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("classify", help="run all applicable tests and combine them")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--paths", type=int, default=None, help="Monte Carlo paths (enables MC)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--no-mc", action="store_true", help="skip Monte Carlo")
    _common(p)

    p = sub.add_parser("feller", help="Feller boundary test (1-D)")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--anchor", type=float, default=None)
    p.add_argument("--csv", action="store_true", help="write the log w profile as CSV")
    _common(p)

    p = sub.add_parser("lyapunov", help="Lyapunov-function conditions")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--candidate", default=None,
                   help="named family (" + ", ".join(NAMED_CANDIDATES) + ") or an expression")
    p.add_argument("--csv", action="store_true", help="write per-shell ratio statistics as CSV")
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo explosion probability")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--csv", action="store_true", help="write (t, x) rows of the first paths")
    p.add_argument("--record", type=int, default=10, help="number of paths written with --csv")
    p.add_argument("--sensitivity", action="store_true",
                   help="also report the fraction for thresholds 1e6, 1e8, 1e10")
    _common(p)

    p = sub.add_parser("gallery", help="classify the bundled example models")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--no-mc", action="store_true")
    _common(p)
    return parser


class _Output:
    """Collects emitted artifacts and writes the manifest."""

    def __init__(self, args, argv):
        self.dir = args.out
        self.manifest = RunManifest(
            str(args.config) if getattr(args, "config", None) else None,
            args.seed, __version__,
            _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), list(argv))

    def _path(self, name):
        d = self.dir if self.dir is not None else Path(".")
        d.mkdir(parents=True, exist_ok=True)
        path = d / name
        self.manifest.outputs.append(str(path))
        return path

    def write_json(self, name, obj):
        if self.dir is not None:
            self._path(name).write_text(dumps(obj) + "\n")

    def write_csv(self, name, header, rows):
        path = self._path(name)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def close(self):
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            path = self.dir / "manifest.json"
            self.manifest.outputs.append(str(path))
            path.write_text(dumps(self.manifest) + "\n")


def _emit(args, obj, text):
    print(dumps(obj) if args.json else text)


def _cmd_classify(args, out):
    m = load_model_file(args.config)
    run_mc = False if args.no_mc else (True if args.paths is not None else None)
    sim = None
    if run_mc is not False and (run_mc or "mc" in m.analysis):
        sim = sim_config_from(m, args.seed, args.paths, args.horizon)
    rep = classify(m, run_mc, sim)
    out.write_json("classify.json", rep)
    lines = [f"model: {m.name or args.config}", f"final: {rep.final}"]
    lines += [f"  {f.source}: {f.status}" for f in rep.findings]
    lines += [f"contradiction: {c}" for c in rep.contradictions]
    lines += [f"caveat: {c}" for c in rep.caveats]
    _emit(args, rep, "\n".join(lines))
    if rep.final == Verdict.INCONCLUSIVE and rep.contradictions:
        return EXIT_CONTRADICTION
    return EXIT_OK


def _cmd_feller(args, out):
    m = load_model_file(args.config)
    anchor = args.anchor
    if anchor is None:
        anchor = (m.analysis.get("feller") or {}).get("anchor")
    rep = fl.classify_feller(m, anchor, with_profiles=args.csv)
    out.write_json("feller.json", rep)
    if args.csv:
        out.write_csv("feller_profile.csv", ["side", "y", "log_w"], rep.profile_rows())
    text = (f"verdict: {rep.verdict}\nanchor: {rep.anchor:g}\n"
            f"left endpoint: {rep.v_at_left.status}\nright endpoint: {rep.v_at_right.status}")
    text += "".join(f"\ncaveat: {c}" for c in rep.caveats)
    _emit(args, rep, text)
    return EXIT_OK


def _candidate(m, spec):
    if spec in NAMED_CANDIDATES:
        return NAMED_CANDIDATES[spec](m, 2.0, 0.5)
    try:
        return LyapunovCandidate(ex.parse(spec, params=m.params, dim=m.dim), spec)
    except BlowupError as err:
        raise ConfigError(f"bad candidate: {err}", key="--candidate") from None


def _cmd_lyapunov(args, out):
    m = load_model_file(args.config)
    lyb = m.analysis.get("lyapunov") or {}
    regions = RegionSpec(float(lyb.get("r_D", 3.0)), float(lyb.get("r_Gamma", 4.0)),
                         float(lyb.get("R", 1e6)))
    results = {}
    names = [args.candidate] if args.candidate else lyb.get("candidates",
                                                           ["squared_norm", "log_squared_norm"])
    for name in names:
        results[f"nonexplosion[{name}]"] = ly.check_nonexplosion(m, _candidate(m, name), regions)
    if m.jumps is None and m.domain.kind in ("full_line", "full_space"):
        results["chow_nonexplosion"] = ly.chow_nonexplosion_condition(m, regions)
        results["chow_explosion"] = ly.chow_explosion_condition(m, regions, float(lyb.get("eps", 0.5)))
    if m.dim == 1 and m.domain.kind == "positive_half_line":
        results["boundary_avoidance"] = ly.boundary_avoidance_check(m)
    out.write_json("lyapunov.json", results)
    if args.csv:
        rows = [(k, r_, v) for k, r in results.items() for r_, v in r.shells]
        out.write_csv("lyapunov_shells.csv", ["condition", "radius", "shell_ratio"], rows)
    lines = [f"{k}: {r.holds}" + (f" (C = {r.C:.6g})" if r.C is not None and r.yes else "")
             for k, r in results.items()]
    _emit(args, results, "\n".join(lines))
    return EXIT_OK


def _cmd_simulate(args, out):
    m = load_model_file(args.config)
    cfg = sim_config_from(m, args.seed, args.paths, args.horizon)
    if args.csv:
        cfg = replace(cfg, record=tuple(range(min(args.record, cfg.n_paths))))
    batch = run_paths(m, cfg)
    est = estimate_explosion_prob(m, cfg, batch)
    result = {"estimate": est, "config": asdict(cfg)}
    if args.sensitivity:
        result["threshold_sensitivity"] = threshold_sensitivity(m, cfg)
    out.write_json("simulate.json", result)
    if args.csv:
        header = ["path", "t"] + [f"x{i + 1}" for i in range(m.dim)]
        rows = [(p, *row) for p, traj in batch.trajectories.items() for row in traj]
        out.write_csv("paths.csv", header, rows)
    text = (f"explosion fraction {est.p_hat:.4g} (95% CI {est.ci_low:.4g} .. {est.ci_high:.4g})"
            f" over {est.n_paths} paths, mean steps {est.mean_steps:.1f}")
    if est.advisory:
        text += f"\nadvisory: {est.advisory}"
    _emit(args, result, text)
    return EXIT_OK


def gallery_paths():
    root = resources.files("blowuplab") / "gallery"
    return sorted((p for p in root.iterdir() if p.name.endswith(".yaml")), key=lambda p: p.name)


def run_gallery(seed=None, paths=None, mc=True):
    """Classify every bundled model; returns a list of row dicts and reports."""
    rows = []
    for path in gallery_paths():
        m = load_model_file(path)
        sim = None
        run_mc = mc and "mc" in m.analysis and not (m.analysis["mc"] or {}).get("advisory")
        if run_mc:
            sim = sim_config_from(m, seed, paths)
        rep = classify(m, run_mc, sim)
        expect = m.analysis.get("expect")
        rows.append({"model": m.name, "expected": expect, "final": str(rep.final),
                     "label": verdict_label(rep.final, m.domain.kind),
                     "match": expect == str(rep.final), "report": rep})
    return rows


def _cmd_gallery(args, out):
    rows = run_gallery(args.seed, args.paths, not args.no_mc)
    out.write_json("gallery.json", rows)
    width = max(len(r["model"]) for r in rows)
    lines = [f"{'model':{width}}  {'verdict':22}  {'expected':30} match"]
    lines += [f"{r['model']:{width}}  {r['label']:22}  {r['expected']:30} {'yes' if r['match'] else 'NO'}"
              for r in rows]
    _emit(args, rows, "\n".join(lines))
    if any(r["report"].final == Verdict.INCONCLUSIVE and r["report"].contradictions for r in rows):
        return EXIT_CONTRADICTION
    return EXIT_OK


_COMMANDS = {"classify": _cmd_classify, "feller": _cmd_feller, "lyapunov": _cmd_lyapunov,
             "simulate": _cmd_simulate, "gallery": _cmd_gallery}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(message)s")
    out = _Output(args, argv)
    try:
        code = _COMMANDS[args.command](args, out)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowupError, ValueError, ArithmeticError) as err:
        print(f"engine error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ENGINE
    out.close()
    return code


def main():
    sys.exit(run())
