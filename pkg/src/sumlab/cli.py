"""Command-line front end: ``sumlab <subcommand> [flags]``.

Subcommands: ``equiv-check``, ``converge``, ``stability``, ``generalize`` and
``bounds``.  Settings come from built-in defaults, then an optional
``--config`` file of ``key=value`` lines, then flags; later layers win.  Every
run that writes files also writes ``config.txt`` (replayable with
``--config``) and a JSON-lines ``manifest.jsonl``.

Exit codes: 0 success, 1 a checked property failed, 2 bad configuration,
3 divergence.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .convergence import (
    aggregate,
    compare_to_bound,
    default_record_every,
    replica_seed,
    run_replicas,
)
from .core import (
    METHODS,
    BoundInputs,
    SUMConfig,
    bound_thm1,
    bound_thm2,
    method_s,
    momentum_mismatch,
)
from .identities import run_suite
from .io import (
    TIMESTAMP_FIELD,
    ConfigError,
    config_text,
    csv_text,
    manifest_line,
    parse_config_text,
    write_outputs,
)
from .problems import KINDS, draw_test_set, estimate_constants, make_problem
from .seeding import derive_seed
from .stability import DivergenceError, gap_experiment, method_configs, stability_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _choice(options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {sorted(options)}")
        return text

    return conv


def _float_list(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


KEYS = {
    "problem": _choice(KINDS),
    "n": int,
    "dim": int,
    "hidden": int,
    "classes": int,
    "method": _choice(METHODS),
    "s": float,
    "beta": float,
    "betas": _float_list,
    "alpha": float,
    "schedule": _choice(("thm1", "thm2")),
    "L": float,
    "C": float,
    "G": float,
    "sigma2": float,
    "f0": float,
    "steps": int,
    "replicas": int,
    "seed": int,
    "out": str,
    "record_every": int,
    "n_test": int,
    "all_methods": _bool,
    "identical_neighbor": _bool,
    "drop_step": int,
    "drop_factor": float,
}

DEFAULTS = {
    "equiv-check": dict(n=200, dim=20, alpha=0.01, steps=1000, seed=0),
    "converge": dict(problem="sigreg", n=1000, dim=20, hidden=16, classes=3, method="shb", beta=0.9,
                     C=1.0, steps=10_000, replicas=20, seed=0, out="runs/converge"),
    "stability": dict(problem="sigreg", n=100, dim=10, hidden=16, classes=3, method="shb", beta=0.9,
                      alpha=0.05, steps=2000, replicas=100, seed=0, record_every=10,
                      out="runs/stability", all_methods=False, identical_neighbor=False),
    "generalize": dict(problem="mlp", n=300, dim=10, hidden=16, classes=3, beta=0.9, alpha=0.01,
                       steps=2000, replicas=20, seed=0, record_every=50, out="runs/generalize"),
    "bounds": dict(L=1.0, G=1.0, sigma2=1.0, f0=1.0, C=1.0, steps=99, betas=[0.0, 0.5, 0.9, 0.99], s=None),
}

# each group: setting one member in a higher layer clears the others from lower layers
EXCLUSIVE = (("alpha", "schedule"), ("method", "s"))


def _add_common(p: argparse.ArgumentParser, keys) -> None:
    S = argparse.SUPPRESS
    spec = {
        "problem": dict(choices=KINDS),
        "n": dict(type=int),
        "dim": dict(type=int),
        "hidden": dict(type=int),
        "classes": dict(type=int),
        "method": dict(choices=METHODS),
        "s": dict(type=float),
        "beta": dict(type=float),
        "betas": dict(type=_float_list, help="comma-separated grid"),
        "alpha": dict(type=float),
        "schedule": dict(choices=("thm1", "thm2")),
        "L": dict(type=float),
        "C": dict(type=float),
        "G": dict(type=float),
        "sigma2": dict(type=float),
        "f0": dict(type=float, help="f(x0) - f_*"),
        "steps": dict(type=int),
        "replicas": dict(type=int),
        "seed": dict(type=int),
        "out": dict(),
        "record_every": dict(type=int),
        "n_test": dict(type=int),
        "all_methods": dict(action="store_const", const=True),
        "identical_neighbor": dict(action="store_const", const=True),
        "drop_step": dict(type=int, help="divide the step size once at this step"),
        "drop_factor": dict(type=float),
    }
    for key in keys:
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, default=S, **spec[key])
    p.add_argument("--config", dest="config_file", default=None, help="key=value file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumlab", description="Stochastic unified momentum experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equiv-check", help="residuals of the SUM identities")
    _add_common(p, ["n", "dim", "alpha", "beta", "steps", "seed"])
    p.add_argument("--corrupt-s", dest="corrupt_s", type=float, default=0.0, help=argparse.SUPPRESS)

    run_keys = ["problem", "n", "dim", "hidden", "classes", "method", "s", "beta", "alpha", "schedule",
                "L", "C", "G", "sigma2", "steps", "replicas", "seed", "out", "record_every", "n_test"]
    p = sub.add_parser("converge", help="gradient-norm traces and bound comparison")
    _add_common(p, run_keys + ["drop_step", "drop_factor"])

    p = sub.add_parser("stability", help="coupled runs on neighbouring datasets")
    _add_common(p, run_keys + ["all_methods", "identical_neighbor"])

    p = sub.add_parser("generalize", help="train/test error gap curves")
    _add_common(p, run_keys + ["all_methods"])

    p = sub.add_parser("bounds", help="tabulate the convergence bounds")
    _add_common(p, ["L", "G", "sigma2", "f0", "C", "steps", "betas", "s"])
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one settings dict."""
    layers = [dict(DEFAULTS[command])]
    if args.config_file:
        path = Path(args.config_file)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        layers.append(parse_config_text(text, KEYS, source=str(path)))
    flags = {k: v for k, v in vars(args).items() if k in KEYS}
    layers.append(flags)
    for layer in layers[1:]:
        for group in EXCLUSIVE:
            present = [k for k in group if layer.get(k) is not None]
            if len(present) > 1:
                raise ConfigError(f"{' and '.join('--' + k for k in present)} are mutually exclusive")
    out = {}
    for layer in layers:
        for group in EXCLUSIVE:
            if any(layer.get(k) is not None for k in group):
                for k in group:
                    out.pop(k, None)
        out.update(layer)
    for group in EXCLUSIVE:
        for k in group:
            out.setdefault(k, None)
    return out


def _validate_run(cfg: dict) -> None:
    if cfg.get("alpha") is None and cfg.get("schedule") is None:
        raise ConfigError("give either --alpha or --schedule")
    if not 0.0 <= cfg["beta"] < 1.0:
        raise ConfigError("--beta must lie in [0, 1)")
    if cfg.get("alpha") is not None and not cfg["alpha"] > 0:
        raise ConfigError("--alpha must be > 0")
    if cfg.get("s") is not None and cfg["s"] < 0:
        raise ConfigError("--s must be >= 0")
    for key in ("steps", "replicas", "n", "dim"):
        if cfg.get(key) is not None and cfg[key] < 1:
            raise ConfigError(f"--{key} must be >= 1")
    if cfg.get("drop_step") is not None and not cfg.get("drop_factor"):
        raise ConfigError("--drop-step needs --drop-factor")


def _s_value(cfg: dict, method=None) -> float:
    if method is not None:
        return method_s(method, cfg["beta"])
    if cfg.get("s") is not None:
        return cfg["s"]
    return method_s(cfg.get("method") or "shb", cfg["beta"])


def _make_problem(cfg: dict):
    return make_problem(cfg["problem"], cfg["n"], cfg["dim"], cfg["seed"],
                        hidden=cfg.get("hidden") or 16, classes=cfg.get("classes") or 3)


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _label(cfg: dict) -> str:
    return cfg["method"] if cfg.get("s") is None else f"s={cfg['s']!r}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_equiv_check(cfg: dict, corrupt_s: float = 0.0, stream=None) -> int:
    stream = stream or sys.stdout
    problems = {
        "quadratic": make_problem("quadratic", 100, cfg["dim"], cfg["seed"]),
        "sigreg": make_problem("sigreg", cfg["n"], min(cfg["dim"], 10), cfg["seed"]),
    }
    betas = (cfg["beta"],) if cfg.get("beta") is not None else (0.0, 0.5, 0.9)
    report = run_suite(problems, betas=betas, alpha=cfg["alpha"], seed=cfg["seed"],
                       equiv_steps=cfg["steps"], s_offset=corrupt_s)
    for line in report.lines():
        print(line, file=stream)
    print("PASS" if report.ok else "FAIL", file=stream)
    return EXIT_OK if report.ok else EXIT_FAIL


def _bound_constants(problem, cfg, traces):
    """Constants for the convergence bound, with where they came from."""
    known = problem.constants
    G, sigma2 = cfg.get("G"), cfg.get("sigma2")
    origin = "user"
    if G is None or sigma2 is None:
        if known.G is not None and known.sigma2 is not None:
            origin = "analytic"
            G = known.G if G is None else G
            sigma2 = known.sigma2 if sigma2 is None else sigma2
        else:
            origin = "regional"
            x0 = problem.initial_point(cfg["seed"])
            pts = np.array([t.x_last for t in traces] + [t.x_argmin for t in traces] + [x0])
            radius = max(float(np.max(np.linalg.norm(pts - x0, axis=1))), 1e-3)
            est = estimate_constants(problem, 100, derive_seed(cfg["seed"], "bound-constants"),
                                     radius=radius, center=x0, points=pts)
            G = est.G if G is None else G
            sigma2 = est.sigma2 if sigma2 is None else sigma2
    return G, sigma2, origin


def cmd_converge(cfg: dict, stream=None) -> int:
    stream = stream or sys.stdout
    _validate_run(cfg)
    problem = _make_problem(cfg)
    steps = cfg["steps"]
    s = _s_value(cfg)
    if cfg.get("schedule"):
        if cfg.get("L") is None:
            L = problem.constants.L
            if L is None:
                L = estimate_constants(problem, 100, derive_seed(cfg["seed"], "L")).L
            cfg["L"] = L
        sum_cfg = SUMConfig.scheduled(cfg["schedule"], cfg["beta"], s, cfg["L"], cfg["C"], steps)
    else:
        sum_cfg = SUMConfig(alpha=cfg["alpha"], beta=cfg["beta"], s=s)
    record_every = cfg.get("record_every") or default_record_every(steps)
    cfg["record_every"] = record_every
    test_set = None
    if problem.kind == "mlp":
        test_set = draw_test_set(problem, cfg.get("n_test") or problem.n, cfg["seed"])
    lr_drop = (cfg["drop_step"], cfg["drop_factor"]) if cfg.get("drop_step") is not None else None

    x0 = problem.initial_point(cfg["seed"])
    traces = run_replicas(problem, sum_cfg, steps, cfg["seed"], cfg["replicas"], record_every,
                          x0=x0, test_set=test_set, lr_drop=lr_drop)

    out = Path(cfg["out"])
    header = ["k", "f", "grad_sq", "min_grad_sq", "train_err", "test_err"]
    files = {}
    for r, tr in enumerate(traces):
        files[out / f"replica_{r:03d}.csv"] = csv_text(header, tr.rows())
    agg = aggregate(traces)
    cols = [c for c in ("f", "grad_sq", "min_grad_sq", "train_err", "test_err") if c in agg]
    agg_header = ["k"] + [x for c in cols for x in (c, c + "_stderr")]
    agg_rows = [[int(agg["k"][i])] + [agg[x][i] for c in cols for x in (c, c + "_stderr")]
                for i in range(len(agg["k"]))]
    files[out / "aggregate.csv"] = csv_text(agg_header, agg_rows)

    status = EXIT_OK
    bound_info = None
    f0 = problem.loss(x0)
    if cfg.get("schedule"):
        G, sigma2, origin = _bound_constants(problem, cfg, traces)
        f_lower = problem.constants.f_lower
        b = BoundInputs(max(f0 - f_lower, 0.0), cfg["L"], G, sigma2, cfg["C"], steps)
        rep = compare_to_bound(traces, b, cfg["schedule"])
        bound_info = dict(which=rep.which, mean_min=rep.mean_min, stderr=rep.stderr, bound=rep.bound,
                          ratio=rep.ratio, passed=rep.passed, slack=rep.slack, constants=origin,
                          L=cfg["L"], G=G, sigma2=sigma2, f0_minus_fstar=b.f0_minus_fstar)
        lines = [
            f"bound {rep.which} ({origin} constants)",
            f"mean min grad_sq {rep.mean_min!r} +- {rep.stderr!r} over {rep.replicas} replicas",
            f"bound {rep.bound!r}  ratio {rep.ratio!r}  {'PASS' if rep.passed else 'FAIL'}",
        ]
        if origin == "regional":
            lines.append("note: regional constants (estimated over the visited region)")
        files[out / "bound_report.txt"] = "\n".join(lines) + "\n"
        status = EXIT_OK if rep.passed else EXIT_FAIL
    else:
        files[out / "bound_report.txt"] = "fixed step size: no theorem schedule, bound not evaluated\n"

    files[out / "config.txt"] = config_text(cfg)
    record = {
        "command": "converge", "config": cfg, "alpha": sum_cfg.alpha, "s": sum_cfg.s,
        "seeds": {"master": cfg["seed"], "replicas": [replica_seed(cfg["seed"], r) for r in range(cfg["replicas"])]},
        "constants": {"L": problem.constants.L, "G": problem.constants.G, "sigma2": problem.constants.sigma2,
                      "f_lower": problem.constants.f_lower},
        "f0": f0, "bound": bound_info, "divergence_factor": traces[0].divergence_factor,
        TIMESTAMP_FIELD: _timestamp(),
    }
    files[out / "manifest.jsonl"] = manifest_line(record)
    write_outputs(files)
    print(files[out / "bound_report.txt"], end="", file=stream)
    return status


def _ordering_summary(results: dict) -> list:
    finals = {m: float(r.delta_mean[-1]) for m, r in results.items()}
    lines = ["final mean delta: " + ", ".join(f"{m}={v!r}" for m, v in finals.items())]
    if all(m in finals for m in METHODS):
        ok = finals["shb"] <= finals["snag"] <= finals["sg"]
        lo_shb, hi_shb = map(float, results["shb"].final_interval(0.8))
        lo_sg, hi_sg = map(float, results["sg"].final_interval(0.8))
        sep = hi_shb < lo_sg
        lines.append(f"ordering shb <= snag <= sg on means: {'yes' if ok else 'no'}")
        lines.append(f"80% intervals shb [{lo_shb!r}, {hi_shb!r}] sg [{lo_sg!r}, {hi_sg!r}] "
                     f"separated: {'yes' if sep else 'no'}")
    return lines


def cmd_stability(cfg: dict, stream=None) -> int:
    stream = stream or sys.stdout
    _validate_run(cfg)
    if cfg.get("schedule"):
        raise ConfigError("stability runs take a fixed --alpha")
    problem = _make_problem(cfg)
    if cfg.get("all_methods"):
        configs = method_configs(cfg["alpha"], cfg["beta"])
    else:
        configs = {_label(cfg): SUMConfig(alpha=cfg["alpha"], beta=cfg["beta"], s=_s_value(cfg))}
    consts = problem.constants
    G = cfg.get("G") if cfg.get("G") is not None else consts.G
    L = cfg.get("L") if cfg.get("L") is not None else consts.L
    if G is None or L is None:
        est = estimate_constants(problem, 100, derive_seed(cfg["seed"], "stability-constants"))
        G = est.G if G is None else G
        L = est.L if L is None else L
    results = {}
    for name, c in configs.items():
        results[name] = stability_experiment(problem, c, cfg["steps"], cfg["replicas"], cfg["seed"], G=G, L=L,
                                             record_every=cfg.get("record_every") or 1,
                                             identical=bool(cfg.get("identical_neighbor")))
    out = Path(cfg["out"])
    files = {}
    status = EXIT_OK
    for name, res in results.items():
        rows = zip(res.t.tolist(), res.delta_mean, res.delta_stderr, res.bound)
        files[out / f"stability_{name}.csv"] = csv_text(["t", "delta_mean", "delta_stderr", "bound"], rows)
        if not res.dominated():
            status = EXIT_FAIL
    summary = _ordering_summary(results)
    files[out / "summary.txt"] = "\n".join(summary) + "\n"
    files[out / "config.txt"] = config_text(cfg)
    record = {
        "command": "stability", "config": cfg, "G": G, "L": L,
        "methods": {m: {"alpha": r.config.alpha, "beta": r.config.beta, "s": r.config.s,
                        "replaced_indices": r.js, "bound_tail_approx": r.tail_approx,
                        "dominated": r.dominated()} for m, r in results.items()},
        "seeds": {"master": cfg["seed"]}, "confidence_level": 0.8, "slack": 1.1,
        TIMESTAMP_FIELD: _timestamp(),
    }
    files[out / "manifest.jsonl"] = manifest_line(record)
    write_outputs(files)
    for line in summary:
        print(line, file=stream)
    return status


def cmd_generalize(cfg: dict, stream=None) -> int:
    stream = stream or sys.stdout
    _validate_run(cfg)
    if cfg["problem"] != "mlp":
        raise ConfigError("generalize needs --problem mlp")
    if cfg.get("schedule"):
        raise ConfigError("generalize runs take a fixed --alpha")
    problem = _make_problem(cfg)
    # all three methods unless one was asked for
    if cfg.get("method") is not None and not cfg.get("all_methods"):
        configs = {cfg["method"]: SUMConfig.for_method(cfg["method"], cfg["alpha"], cfg["beta"])}
    elif cfg.get("s") is not None:
        configs = {_label(cfg): SUMConfig(alpha=cfg["alpha"], beta=cfg["beta"], s=cfg["s"])}
    else:
        configs = method_configs(cfg["alpha"], cfg["beta"])
    curves = gap_experiment(problem, configs, cfg["steps"], cfg["replicas"], cfg["seed"],
                            record_every=cfg["record_every"], n_test=cfg.get("n_test"))
    out = Path(cfg["out"])
    files = {}
    lines = []
    header = ["t", "train_err", "test_err", "gap"]
    for name, c in curves.items():
        s = c.summary()
        t = c.t.tolist()
        files[out / f"gap_{name}.csv"] = csv_text(header, zip(t, s["train_err"], s["test_err"], s["gap"]))
        files[out / f"gap_{name}_stderr.csv"] = csv_text(
            header, zip(t, s["train_err_stderr"], s["test_err_stderr"], s["gap_stderr"]))
        last = {key: float(v[-1]) for key, v in s.items()}
        lines.append(f"{name}: final train_err {last['train_err']!r} test_err {last['test_err']!r} "
                     f"gap {last['gap']!r} +- {last['gap_stderr']!r}")
    files[out / "summary.txt"] = "\n".join(lines) + "\n"
    files[out / "config.txt"] = config_text(cfg)
    record = {"command": "generalize", "config": cfg,
              "methods": {m: {"alpha": c.alpha, "beta": c.beta, "s": c.s} for m, c in configs.items()},
              "seeds": {"master": cfg["seed"]}, "weight_decay": problem.weight_decay,
              TIMESTAMP_FIELD: _timestamp()}
    files[out / "manifest.jsonl"] = manifest_line(record)
    write_outputs(files)
    for line in lines:
        print(line, file=stream)
    return EXIT_OK


def bounds_table(cfg: dict) -> list:
    """Rows ``(beta, method, s, mismatch, bound_thm1, bound_thm2)``."""
    rows = []
    for beta in cfg["betas"]:
        if not 0.0 <= beta < 1.0:
            raise ConfigError(f"beta {beta} outside [0, 1)")
        b = BoundInputs(cfg["f0"], cfg["L"], cfg["G"], cfg["sigma2"], cfg["C"], cfg["steps"])
        labels = list(METHODS) + ([f"s={cfg['s']!r}"] if cfg.get("s") is not None else [])
        for label in labels:
            s = method_s(label, beta) if label in METHODS else cfg["s"]
            rows.append((beta, label, s, momentum_mismatch(beta, s), bound_thm1(b, beta, s), bound_thm2(b, beta, s)))
    return rows


def cmd_bounds(cfg: dict, stream=None) -> int:
    stream = stream or sys.stdout
    rows = bounds_table(cfg)
    print(f"t={cfg['steps']} L={cfg['L']!r} G={cfg['G']!r} sigma2={cfg['sigma2']!r} "
          f"f0-f*={cfg['f0']!r} C={cfg['C']!r}", file=stream)
    print(f"{'beta':>6} {'method':>8} {'s':>10} {'((1-b)s-1)^2':>14} {'thm1':>14} {'thm2':>14}", file=stream)
    for beta, label, s, mm, b1, b2 in rows:
        print(f"{beta:>6g} {label:>8} {s:>10.4g} {mm:>14.6g} {b1:>14.8g} {b2:>14.8g}", file=stream)
    for beta in cfg["betas"]:
        vals = {label: b1 for bt, label, _, _, b1, _ in rows if bt == beta}
        ordered = vals["shb"] >= vals["snag"] >= vals["sg"]
        print(f"beta={beta:g}: thm1 shb >= snag >= sg {'holds' if ordered else 'violated'}", file=stream)
    return EXIT_OK


COMMANDS = {
    "equiv-check": cmd_equiv_check,
    "converge": cmd_converge,
    "stability": cmd_stability,
    "generalize": cmd_generalize,
    "bounds": cmd_bounds,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        if args.command == "equiv-check":
            return cmd_equiv_check(cfg, corrupt_s=args.corrupt_s)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"sumlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"sumlab: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"sumlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
