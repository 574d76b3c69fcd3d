"""Command-line interface.

Exit codes: 0 on success, 1 on invalid input or usage, 2 on numerical
failure (divergence, stagnation, singular systems). Option values are
resolved as flags > ``--config`` JSON file > built-in defaults, and
``--show-config`` prints the resolved values without running anything.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .errors import FeanetError, NumericalError, StagnationError
from .fields import (
    BoundaryCondition,
    Dataset,
    FieldImage,
    PhaseImage,
    PhysicsKind,
    circular_inclusion,
    export_csv,
    export_pgm,
    load_dataset,
    load_image,
    save_dataset,
    save_image,
)
from .kernels import (
    MaterialParams,
    assemble_kernel,
    biphase_theta,
    coupling_kernel,
    element_stiffness_quadrature,
    kernel_for,
)
from .learning import (
    EstimateOptions,
    align_labels,
    check_loading_rank,
    estimate_joint,
    estimate_phase,
    estimate_properties,
    fit_multiphysics_filter,
    param_errors,
    relative_error,
)
from .net import InferenceConfig, infer
from .solver import MEMORY_PROBLEMS, generate_sample, memory_estimate

JSON_SCHEMA = "feanet.cli/1"

log = logging.getLogger("feanet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# defaults per subcommand; every key is overridable from the config file or a flag
DEFAULTS = {
    "generate": {"kind": "thermal", "n": 13, "seed": 0, "samples": 1, "loading": "random",
                 "E": 0.2e12, "nu": 0.25, "kappa": 11.82, "alpha": 12.92e-5, "E1": None, "nu1": None,
                 "inclusion_radius": None, "phase": None, "method": "direct", "out": None},
    "kernel": {"kind": "thermal", "E": 0.2e12, "nu": 0.25, "kappa": 11.82, "alpha": 12.92e-5,
               "E1": None, "nu1": None, "source": "closed-form", "out": None},
    "infer": {"input": None, "E": 0.2e12, "nu": 0.25, "kappa": 11.82, "alpha": 12.92e-5,
              "E1": None, "nu1": None, "phase": None, "depth": 1000, "omega": 2.0 / 3.0, "tol": None,
              "bc_value": 0.0, "oracle": None, "record_every": 1, "out": None, "history": None, "pgm": None},
    "learn-filter": {"data": None, "method": "lstsq", "out": None, "report": None},
    "learn-phase": {"data": None, "E0": None, "nu0": None, "E1": None, "nu1": None, "lr": 1e-2,
                    "max_iter": 50000, "tol": 1e-20, "seed": 0, "optimizer": "adam", "reduction": "mean",
                    "strict": False, "out": None, "history": None, "report": None},
    "learn-props": {"data": None, "lr": 1e-3, "max_iter": 20000, "tol": 1e-20, "seed": 0,
                    "optimizer": "adam", "reduction": "mean", "strict": False, "out": None,
                    "history": None, "report": None},
    "learn-joint": {"data": None, "lr": 1e-2, "lr_phase": None, "max_iter": 20000, "tol": 1e-20,
                    "seed": 0, "optimizer": "adam", "reduction": "mean", "strict": False,
                    "postprocess": True, "out": None, "history": None, "report": None},
    "memory-report": {"n": 100, "dim": None, "problem": None, "out": None},
    "export": {"input": None, "csv": None, "pgm": None},
}


def _common(p):
    p.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--show-config", action="store_true", help="print resolved options and exit")
    p.add_argument("--threads", type=int, help="worker threads (default: FEANET_THREADS or 1)")


def _material(p, second=True):
    p.add_argument("--E", type=float, help="Young's modulus (Pa)")
    p.add_argument("--nu", type=float, help="Poisson's ratio")
    p.add_argument("--kappa", type=float, help="thermal conductivity")
    p.add_argument("--alpha", type=float, help="thermal expansion coefficient")
    if second:
        p.add_argument("--E1", type=float, help="Young's modulus of phase 1 (bi-phase)")
        p.add_argument("--nu1", type=float, help="Poisson's ratio of phase 1 (bi-phase)")


def _optim(p, lr_phase=False):
    p.add_argument("--lr", type=float)
    if lr_phase:
        p.add_argument("--lr-phase", dest="lr_phase", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float, help="stop when loss <= tol * initial loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=("adam", "gd"))
    p.add_argument("--reduction", choices=("mean", "sum"))
    p.add_argument("--strict", action="store_const", const=True, help="stagnation is an error")
    p.add_argument("--out", help="output file for the learned quantity")
    p.add_argument("--history", help="loss-history CSV")
    p.add_argument("--report", help="error report JSON (needs ground truth in the dataset)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="feanet", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"feanet {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="synthesize (loading, response) samples with the sparse solver")
    _common(p)
    p.add_argument("--kind")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--loading", help="random | point | strip, or a JSON spec object")
    _material(p)
    p.add_argument("--inclusion-radius", dest="inclusion_radius", type=float,
                   help="radius of a centred phase-0 disc (bi-phase)")
    p.add_argument("--phase", help="phase image file (bi-phase)")
    p.add_argument("--method", choices=("direct", "cg"))
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("kernel", help="print a convolution kernel as CSV")
    _common(p)
    p.add_argument("--kind", help="thermal | elasticity | coupling | thermoelasticity | biphase")
    _material(p)
    p.add_argument("--source", choices=("closed-form", "quadrature"))
    p.add_argument("--out")

    p = sub.add_parser("infer", help="run the Jacobi network on a loading image")
    _common(p)
    p.add_argument("--input", help="loading image file")
    _material(p)
    p.add_argument("--phase", help="phase image file (bi-phase)")
    p.add_argument("--depth", type=int)
    p.add_argument("--omega", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--bc-value", dest="bc_value", type=float, help="clamped boundary value")
    p.add_argument("--oracle", help="reference response image for error tracking")
    p.add_argument("--record-every", dest="record_every", type=int)
    p.add_argument("--out", help="response image file")
    p.add_argument("--history", help="history CSV")
    p.add_argument("--pgm", help="PGM heatmap prefix")

    p = sub.add_parser("learn-filter", help="least-squares kernel from a dataset")
    _common(p)
    p.add_argument("--data", help="dataset directory or manifest")
    p.add_argument("--method", choices=("lstsq", "adam"))
    p.add_argument("--out", help="kernel CSV")
    p.add_argument("--report")

    p = sub.add_parser("learn-phase", help="estimate the phase image for known materials")
    _common(p)
    p.add_argument("--data")
    for name in ("E0", "nu0", "E1", "nu1"):
        p.add_argument(f"--{name}", type=float)
    _optim(p)

    p = sub.add_parser("learn-props", help="estimate both materials for a known phase image")
    _common(p)
    p.add_argument("--data")
    _optim(p)

    p = sub.add_parser("learn-joint", help="estimate materials and phase image together")
    _common(p)
    p.add_argument("--data")
    _optim(p, lr_phase=True)
    p.add_argument("--no-postprocess", dest="postprocess", action="store_const", const=False)

    p = sub.add_parser("memory-report", help="memory of sparse FEA versus the network, as CSV")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--problem", choices=MEMORY_PROBLEMS)
    p.add_argument("--out")

    p = sub.add_parser("export", help="convert an image file to CSV and/or PGM heatmaps")
    _common(p)
    p.add_argument("--input")
    p.add_argument("--csv")
    p.add_argument("--pgm")
    return ap


_META = {"json", "config", "show_config", "threads", "command"}


def resolve(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config key(s) for {args.command}: {sorted(unknown)}")
        cfg.update(loaded)
    for k, v in vars(args).items():
        if k not in _META and v is not None:
            cfg[k] = v
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _rho(cfg, kind) -> MaterialParams:
    kind = PhysicsKind.parse(kind)
    names = {PhysicsKind.THERMAL: ("kappa",), PhysicsKind.ELASTICITY: ("E", "nu"),
             PhysicsKind.THERMOELASTICITY: ("E", "nu", "kappa", "alpha")}[kind]
    return MaterialParams(**{k: cfg[k] for k in names}).validate(kind)


def _rho1(cfg):
    if cfg.get("E1") is None and cfg.get("nu1") is None:
        return None
    return MaterialParams(E=cfg.get("E1"), nu=cfg.get("nu1")).validate(PhysicsKind.ELASTICITY)


def _rho_json(r):
    return None if r is None else r.to_dict()


def _write_loss_history(path, losses):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "loss"])
        for k, v in enumerate(losses):
            wr.writerow([k, repr(float(v))])


def _write_report(path, report):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg):
    _require(cfg, "out")
    kind = PhysicsKind.parse(cfg["kind"])
    rho0 = _rho(cfg, kind)
    rho1 = _rho1(cfg)
    h = None
    if rho1 is not None:
        if kind is not PhysicsKind.ELASTICITY:
            raise UsageError("bi-phase data is only defined for elasticity")
        h = load_image(cfg["phase"]) if cfg.get("phase") else circular_inclusion(
            cfg["n"], radius=cfg.get("inclusion_radius"))
        if not isinstance(h, PhaseImage):
            raise UsageError("--phase file does not hold a phase image")
    spec = cfg["loading"]
    if isinstance(spec, str) and spec.strip().startswith("{"):
        spec = json.loads(spec)
    seeds = np.random.SeedSequence(int(cfg["seed"])).generate_state(int(cfg["samples"]))
    samples = [generate_sample(spec, kind, rho0, int(cfg["n"]), seed=int(s), rho1=rho1, h=h,
                               method=cfg["method"]) for s in seeds]
    ds = Dataset(samples)
    meta = {"seed": int(cfg["seed"]), "loading": spec, "generator": f"feanet {__version__}"}
    manifest = save_dataset(ds, cfg["out"], meta)
    return {"manifest": str(manifest), "samples": len(samples), "kind": kind.name.lower(), "n": int(cfg["n"])}


def _kernel_rows(cfg):
    kind = str(cfg["kind"]).lower()
    rho = MaterialParams(E=cfg["E"], nu=cfg["nu"], kappa=cfg["kappa"], alpha=cfg["alpha"])
    quad = cfg["source"] == "quadrature"
    rows = []
    if kind == "coupling":
        if quad:
            k = element_stiffness_quadrature("coupling", rho)
            w = assemble_kernel(k).w
            zero = np.zeros((3, 3))
            blocks = {"xt": w[:, :, 0, 0], "yt": w[:, :, 1, 0], "tx": zero, "ty": zero}
        else:
            blocks = coupling_kernel(rho.E, rho.nu, rho.alpha)
        for name, b in blocks.items():
            rows += [[name[0], "T", r] + [float(x) for x in b[r]] for r in range(3)]
        return rows
    if kind == "biphase":
        rho1 = _rho1(cfg)
        if rho1 is None:
            raise UsageError("biphase kernels need --E1 and --nu1")
        t = biphase_theta(MaterialParams(E=rho.E, nu=rho.nu), rho1).theta
        for h in range(2):
            for p, pl in enumerate("xy"):
                for q, ql in enumerate("xy"):
                    rows += [[h, pl, ql, a + 1] + [float(x) for x in t[h, p, q, a]] for a in range(4)]
        return rows
    pk = PhysicsKind.parse(kind)
    rho = _rho(cfg, pk)
    if quad:
        W = assemble_kernel(element_stiffness_quadrature(pk.name.lower(), rho))
    else:
        W = kernel_for(pk, rho)
    for p, pl in enumerate(pk.labels):
        for q, ql in enumerate(pk.labels):
            rows += [[pl, ql, r] + [float(x) for x in W.w[r, :, p, q]] for r in range(3)]
    return rows


def cmd_kernel(cfg):
    rows = _kernel_rows(cfg)
    biphase = str(cfg["kind"]).lower() == "biphase"
    header = ["phase", "out", "in", "node", "c1", "c2", "c3", "c4"] if biphase else ["out", "in", "row", "c1", "c2", "c3"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(x) if not isinstance(x, float) else repr(x) for x in r))
    text = "\n".join(lines) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return {"kind": cfg["kind"], "source": cfg["source"], "rows": rows, "header": header}


def cmd_infer(cfg):
    _require(cfg, "input")
    v = load_image(cfg["input"])
    if not isinstance(v, FieldImage):
        raise UsageError("--input must hold a field image")
    rho1 = _rho1(cfg)
    if rho1 is not None or cfg.get("phase"):
        _require(cfg, "phase", "E1", "nu1")
        h = load_image(cfg["phase"])
        kernel = (biphase_theta(_rho(cfg, "elasticity"), rho1), h)
    else:
        kernel = kernel_for(v.kind, _rho(cfg, v.kind))
    bc = BoundaryCondition.clamped(v.n, v.kind, value=cfg["bc_value"])
    oracle = load_image(cfg["oracle"]) if cfg.get("oracle") else None
    icfg = InferenceConfig(omega=cfg["omega"], max_depth=int(cfg["depth"]), tol=cfg["tol"],
                           record_every=int(cfg["record_every"]))
    u, hist = infer(v, kernel, bc, icfg, oracle=oracle)
    if cfg.get("out"):
        save_image(u, cfg["out"])
    if cfg.get("history"):
        hist.to_csv(cfg["history"])
    if cfg.get("pgm"):
        export_pgm(u, cfg["pgm"])
    res, err = hist.residual[-1], hist.error[-1]
    out = {"depth": hist.depth[-1], "residual": res, "error": None if math.isnan(err) else err}
    if cfg.get("out"):
        out["output"] = cfg["out"]
    return out


def cmd_learn_filter(cfg):
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    rank = check_loading_rank(ds)
    W = fit_multiphysics_filter(ds, method=cfg["method"])
    labels = ds.kind.labels
    rows = [[pl, ql, r] + [float(x) for x in W.w[r, :, p, q]] for p, pl in enumerate(labels)
            for q, ql in enumerate(labels) for r in range(3)]
    if cfg.get("out"):
        with open(cfg["out"], "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["out", "in", "row", "c1", "c2", "c3"])
            for r in rows:
                wr.writerow([x if not isinstance(x, float) else repr(x) for x in r])
    out = {"kind": ds.kind.name.lower(), "samples": len(ds), "rank": rank.to_dict()}
    rho = ds[0].rho0
    if rho is not None and ds[0].rho1 is None:
        ref = kernel_for(ds.kind, rho)
        out["error"] = {f"{pl}{ql}": relative_error(W.w[:, :, p, q], ref.w[:, :, p, q])
                        for p, pl in enumerate(labels) for q, ql in enumerate(labels)
                        if np.any(ref.w[:, :, p, q] != 0)}
        if cfg.get("report"):
            _write_report(cfg["report"], out)
    return out


def _options(cfg, **kw):
    return EstimateOptions(method=cfg["optimizer"], lr=cfg["lr"], max_iter=int(cfg["max_iter"]),
                           tol=cfg["tol"], seed=int(cfg["seed"]), reduction=cfg["reduction"],
                           strict=bool(cfg["strict"]), **kw)


def _finish_learning(cfg, res, out):
    if cfg.get("history"):
        _write_loss_history(cfg["history"], res.loss_history)
    if cfg.get("report"):
        _write_report(cfg["report"], out)
    if res.status == "stagnated" and cfg["strict"]:
        raise StagnationError("optimisation stagnated")
    return out


def cmd_learn_phase(cfg):
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    r0 = ds[0].rho0 if cfg.get("E0") is None else MaterialParams(E=cfg["E0"], nu=cfg["nu0"])
    r1 = ds[0].rho1 if cfg.get("E1") is None else MaterialParams(E=cfg["E1"], nu=cfg["nu1"])
    if r0 is None or r1 is None:
        raise UsageError("phase estimation needs both materials (flags or manifest)")
    res = estimate_phase(ds, r0, r1, _options(cfg))
    if cfg.get("out"):
        save_image(res.phase_binary, cfg["out"])
        save_image(res.phase, str(cfg["out"]) + ".continuous")
    out = {"status": res.status, "iterations": res.iterations, "loss": res.final_loss}
    if ds[0].H is not None:
        out["phase_error"] = relative_error(res.phase_binary, ds[0].H)
        out["phase_error_continuous"] = relative_error(res.phase, ds[0].H)
    return _finish_learning(cfg, res, out)


def _prop_errors(r0, r1, t0, t1):
    errs = {}
    for tag, p, t in (("0", r0, t0), ("1", r1, t1)):
        if t is not None:
            errs.update({k + tag: v for k, v in param_errors(p, t).items()})
    return errs


def cmd_learn_props(cfg):
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    res = estimate_properties(ds, ds[0].H, _options(cfg))
    out = {"status": res.status, "iterations": res.iterations, "loss": res.final_loss,
           "rho0": _rho_json(res.rho0), "rho1": _rho_json(res.rho1), "clip_fraction": res.clip_fraction}
    if ds[0].rho0 is not None and ds[0].rho1 is not None:
        out["error"] = _prop_errors(res.rho0, res.rho1, ds[0].rho0, ds[0].rho1)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(json.dumps({"rho0": out["rho0"], "rho1": out["rho1"]}, indent=2) + "\n")
    return _finish_learning(cfg, res, out)


def cmd_learn_joint(cfg):
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    res = estimate_joint(ds, _options(cfg, lr_phase=cfg.get("lr_phase"), postprocess=bool(cfg["postprocess"])))
    rho0, rho1, hb = res.rho0, res.rho1, res.phase_binary
    swapped = False
    if ds[0].H is not None:
        (rho0, rho1), hb, swapped = align_labels((rho0, rho1), hb, ds[0].H)
    out = {"status": res.status, "iterations": res.iterations, "loss": res.final_loss,
           "rho0": _rho_json(rho0), "rho1": _rho_json(rho1), "label_swapped": swapped,
           "threshold": res.extra.get("threshold")}
    if ds[0].H is not None:
        out["phase_error"] = relative_error(hb, ds[0].H)
        if ds[0].rho0 is not None:
            out["error"] = _prop_errors(rho0, rho1, ds[0].rho0, ds[0].rho1)
    if cfg.get("out"):
        save_image(hb, cfg["out"])
    return _finish_learning(cfg, res, out)


def cmd_memory_report(cfg):
    n = int(cfg["n"])
    dims = (cfg["dim"],) if cfg.get("dim") else (2, 3)
    problems = (cfg["problem"],) if cfg.get("problem") else MEMORY_PROBLEMS
    rows = [memory_estimate(p, n, d) for p in problems for d in dims]
    lines = ["problem,fea_bytes,feanet_bytes,ratio"]
    lines += [f"{r['problem']},{r['fea_bytes']},{r['feanet_bytes']},{r['ratio']!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return {"n": n, "rows": rows}


def cmd_export(cfg):
    _require(cfg, "input")
    img = load_image(cfg["input"])
    written = []
    if cfg.get("csv"):
        export_csv(img, cfg["csv"])
        written.append(cfg["csv"])
    if cfg.get("pgm"):
        written += [str(p) for p in export_pgm(img, cfg["pgm"])]
    if not written:
        raise UsageError("nothing to export: give --csv and/or --pgm")
    return {"written": written}


COMMANDS = {
    "generate": cmd_generate,
    "kernel": cmd_kernel,
    "infer": cmd_infer,
    "learn-filter": cmd_learn_filter,
    "learn-phase": cmd_learn_phase,
    "learn-props": cmd_learn_props,
    "learn-joint": cmd_learn_joint,
    "memory-report": cmd_memory_report,
    "export": cmd_export,
}

# commands whose primary output already goes to stdout
_STDOUT_COMMANDS = {"kernel", "memory-report"}


def _emit_json(payload):
    sys.stdout.write(json.dumps(payload, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, MaterialParams):
        return o.to_dict()
    raise TypeError(type(o).__name__)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    want_json = False
    try:
        args = parser.parse_args(argv)
        want_json = bool(getattr(args, "json", False))
        cfg = resolve(args)
        if args.show_config:
            _emit_json({"schema": JSON_SCHEMA, "command": args.command, "config": cfg})
            return 0
        threads = args.threads if args.threads is not None else os.environ.get("FEANET_THREADS")
        if threads:
            _backend.set_num_threads(int(threads))
        if want_json and args.command in _STDOUT_COMMANDS and not cfg.get("out"):
            # keep stdout a single JSON document
            with contextlib.redirect_stdout(io.StringIO()):
                result = COMMANDS[args.command](cfg)
        else:
            result = COMMANDS[args.command](cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, FeanetError, OSError, ValueError, KeyError) as exc:
        code = 2 if isinstance(exc, NumericalError) else 1
        if want_json:
            _emit_json({"schema": JSON_SCHEMA, "status": "error", "exit_code": code,
                        "error": {"type": type(exc).__name__, "message": str(exc)}})
        print(f"feanet: {exc}", file=sys.stderr)
        return code
    if want_json:
        _emit_json({"schema": JSON_SCHEMA, "command": args.command, "status": "ok", "result": result})
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
