"""Command-line entry point: ``cauchy-maps <command> ...``.

Exit codes: 0 success, 2 validation failure, 3 acceptance-band failure,
64 usage error. Tables may be cached in the directory named by the
CAUCHY_MAP_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_BANDS = 3
EXIT_USAGE = 64

CACHE_ENV = "CAUCHY_MAP_CACHE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """A reproducible run manifest; flags given on the command line override it."""

    kernel: str = "builtin:type2"
    experiments: dict = field(default_factory=dict)  # name -> overrides
    seed: int = 0
    workers: int = 1
    output: str = "reports"

    KEYS = ("kernel", "experiments", "seed", "workers", "output")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        from .estimators import ConfigError, experiment_config

        unknown = set(doc) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: doc[k] for k in cls.KEYS if k in doc})
        if isinstance(cfg.experiments, list):
            cfg.experiments = {name: {} for name in cfg.experiments}
        if not isinstance(cfg.experiments, dict):
            raise ConfigError("experiments must be a list of names or a mapping")
        for name, over in cfg.experiments.items():
            experiment_config(name, over)  # rejects unknown names and keys
        if not isinstance(cfg.seed, int) or cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(cfg.workers, int) or cfg.workers < 1:
            raise ConfigError("workers must be a positive integer")
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# kernels with an optional on-disk cache


def load_kernel(spec: str, K: int | None = None):
    """Resolve ``builtin:<name>``, a bare builtin name or a JSON path, using the cache if set."""
    from .kernel import BUILTINS, builtin_kernel, exact_type2_kernel, load_law, \
        quadrangulation_kernel, solve_type2_kernel

    name = spec.split(":", 1)[1] if spec.startswith("builtin:") else spec
    if name not in BUILTINS:
        return load_law(spec)
    if K is None:
        return builtin_kernel(name)
    cache = os.environ.get(CACHE_ENV)
    path = Path(cache) / f"{name}-K{K}.json" if cache else None
    if path is not None and path.exists():
        return load_law(str(path))
    build = {"type2": solve_type2_kernel, "type2-exact": exact_type2_kernel,
             "quad": quadrangulation_kernel}[name]
    law = build(K)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(law.to_json())
    return law


def _kernel_from_args(args):
    return load_kernel(args.kernel, getattr(args, "K", None))


def _write(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_kernel(args) -> int:
    from .kernel import model_constants
    from .oracles import tutte_defects

    name = "type2"
    if args.exact:
        name = "type2-exact"
    elif args.quad:
        name = "quad"
    elif args.builtin:
        name = args.builtin
    law = load_kernel(f"builtin:{name}", args.K)
    doc = law.to_dict()
    mc = model_constants(law)
    doc["defects"] = {
        "harmonic_max": law.max_harmonic_defect(args.check_upto),
        "mass": abs(law.total_mass() - 1.0),
        "tutte_max": float(np.abs(tutte_defects(law, 200)).max()),
    }
    doc["constants"] = {"p_q": mc.p_q, "b_q": mc.b_q, "gamma_q": mc.gamma_q,
                        "gamma_argmin": mc.gamma_argmin, "q1": mc.q1,
                        "k0": {str(k): v for k, v in mc.k0.items()}}
    _write(json.dumps(doc, indent=1), args.out)
    if args.out:
        print(json.dumps({"kernel": name, "K": law.K, "checksum": law.checksum(), **doc["defects"]}))
    ok = doc["defects"]["harmonic_max"] < 1e-8 and doc["defects"]["mass"] < 1e-10
    return EXIT_OK if ok else EXIT_INVALID


def cmd_oracle(args) -> int:
    from .oracles import (W_total, coupling_dp, death_decomposition, first_passage_law,
                          partition_table, tutte_defects)
    from .kernel import mu_law

    law = _kernel_from_args(args)
    if args.what == "build":
        table = partition_table(law, args.depth, args.horizon)
        cache = os.environ.get(CACHE_ENV)
        target = args.out or (str(Path(cache) / f"W-{law.checksum()}.npz") if cache else None)
        if target is None:
            raise UsageError("oracle build needs --out or the CAUCHY_MAP_CACHE directory")
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        table.save(target)
        rel = table.rel_err[1:]
        print(json.dumps({"path": target, "depth": args.depth, "horizon": args.horizon,
                          "max_rel_err": float(np.nanmax(rel)) if len(rel) else 0.0}))
        return EXIT_OK
    if args.what == "W":
        doc = {str(ell): W_total(law, ell).__dict__ for ell in args.ells}
    elif args.what == "first-passage":
        fpt = first_passage_law(mu_law(law), args.k, args.n)
        doc = {"k": args.k, "probs": fpt.probs.tolist(), "tail_mass": fpt.tail_mass}
    elif args.what == "coupling":
        c = coupling_dp(law, args.ell, args.n, M=args.M)
        doc = {"ell": c.ell, "n": c.n, "survival": c.survival, "coupled": c.coupled,
               "defect": c.defect}
    elif args.what == "death":
        left, right, esc = death_decomposition(law, args.ell, args.n)
        doc = {"max_abs_difference": float(np.abs(left - right).max()), "escaped": esc}
    else:
        doc = {"tutte_defects": tutte_defects(law, args.m_max).tolist()}
    _write(json.dumps(doc, indent=1), args.out)
    return EXIT_OK


def cmd_walk(args) -> int:
    from .rng import stream
    from .walks import sample_path

    law = _kernel_from_args(args)
    path = sample_path(law, args.kind, args.start, args.p, args.steps,
                       stream(args.seed, "cli-walk", 0))
    lines = ["step,state"] + [f"{i},{int(s)}" for i, s in enumerate(path.steps)]
    if path.finished:
        lines.append(f"{path.tau},{-path.target}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


EVENT_LABELS = ("C", "G_left", "G_right", "C_stop")


def _trajectory_csv(traj, gen) -> str:
    """Rows (n, P, D, H, T, event); T is the uniform-peeling clock along the same perimeter path."""
    rates = 2.0 * traj[:, 0]
    clock = np.concatenate([[0.0], np.cumsum(gen.standard_exponential(len(traj)) / rates)])
    lines = ["n,P,D,H,T,event"]
    for n, row in enumerate(traj):
        lines.append(f"{n},{row[0]},{row[1]},{row[2]},{float(clock[n])!r},{EVENT_LABELS[row[3]]}")
    return "\n".join(lines) + "\n"


def cmd_peel(args) -> int:
    from .peeling import default_budget, run_layers, run_uniform_fpp
    from .rng import stream

    if args.samples < 1:
        raise UsageError("--samples must be positive")
    if args.trajectory and args.algo == "uniform":
        raise UsageError("trajectories are recorded by the layers algorithm")
    law = _kernel_from_args(args)
    budget = args.max_steps or default_budget(args.ell)
    runs = []
    for i in range(args.samples):
        gen = stream(args.seed, "cli-peel", i)
        if args.algo == "uniform":
            r = run_uniform_fpp(law, args.ell, gen, budget)
            runs.append({"sample": i, "tau": r.tau, "d_fpp": r.d_fpp,
                         "conditional_mean": r.mean_given_path,
                         "conditional_variance": r.var_given_path})
        else:
            r = run_layers(law, args.ell, gen, budget, record=bool(args.trajectory) and i == 0)
            runs.append({"sample": i, "tau": r.tau, "d_gr": r.d_gr, "H": r.H})
            if args.trajectory and i == 0:
                _write(_trajectory_csv(r.trajectory, stream(args.seed, "cli-peel-clock", 0)),
                       args.trajectory)
    finished = [r for r in runs if r["tau"] > 0]
    doc = {"algorithm": args.algo, "ell": args.ell, "seed": args.seed, "samples": args.samples,
           "overflow": len(runs) - len(finished), "runs": runs}
    _write(json.dumps(doc, indent=1), args.out)
    return EXIT_OK


def cmd_map(args) -> int:
    from . import maps as mp
    from .rng import stream

    law = _kernel_from_args(args)
    gen = stream(args.seed, "cli-map", 0)
    if args.target_p:
        m = mp.build_targeted(law, args.ell, args.target_p, gen, args.max_half_edges)
    else:
        m = mp.build_boltzmann(law, args.ell, gen, args.max_half_edges)
    m.validate()
    if args.format == "binary":
        if not args.out:
            raise UsageError("binary output needs --out")
        m.save_binary(args.out)
    else:
        _write(m.to_json(), args.out)
    if args.dual_csv:
        _write(m.dual_csv(), args.dual_csv)
    return EXIT_OK


def _overrides_from_flags(args) -> dict:
    over = {}
    if args.ells:
        over["ells"] = args.ells
    if args.ns:
        over["ns"] = args.ns
    if args.samples:
        over["samples"] = args.samples
    return over


def cmd_experiment(args) -> int:
    from .estimators import EXPERIMENTS, PLOT_COLUMNS, run_experiment

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.kernel:
        cfg.kernel = args.kernel
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out:
        cfg.output = args.out
    if args.name:
        names = [args.name]
    else:
        names = list(cfg.experiments) or list(EXPERIMENTS)
    cfg = RunConfig.from_dict(cfg.__dict__)  # re-validate after flag overrides
    law = load_kernel(cfg.kernel)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    for name in names:
        over = dict(cfg.experiments.get(name, {}))
        over.update(_overrides_from_flags(args))
        rep = run_experiment(name, law, over, cfg.seed, cfg.workers)
        (out / f"{name}.json").write_text(rep.to_json())
        (out / f"{name}.csv").write_text(rep.to_csv())
        for x, y, err in PLOT_COLUMNS.get(name, []):
            (out / f"{name}.plot.{y}.csv").write_text(rep.plot_data(x, y, err))
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name}: {status} ({rep.wall_clock:.1f}s) digest {rep.digest()[:16]}")
        for key, ok in rep.checks.items():
            if not ok:
                print(f"  failed check: {key}")
        failed |= not rep.passed
    return EXIT_BANDS if failed else EXIT_OK


def cmd_report(args) -> int:
    failed = False
    for path in args.paths:
        doc = json.loads(Path(path).read_text())
        status = "PASS" if doc.get("passed") else "FAIL"
        print(f"{doc.get('experiment')}: {status} seed={doc.get('seed')} digest={doc.get('digest', '')[:16]}")
        for row in doc.get("rows", []):
            print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
        failed |= not doc.get("passed")
    return EXIT_BANDS if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _ints(text: str) -> list:
    try:
        return [int(float(x)) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cauchy-maps", description="Peeling simulations of random planar maps.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def kernel_opts(sp):
        sp.add_argument("--kernel", default="builtin:type2",
                        help="builtin:<type2|type2-exact|quad> or a kernel JSON path")

    k = sub.add_parser("kernel", help="build a kernel and report its defects")
    ksub = k.add_subparsers(dest="action", parser_class=_Parser)
    kb = ksub.add_parser("build")
    g = kb.add_mutually_exclusive_group()
    g.add_argument("--type2", action="store_true", help="numerically solved type-2 kernel")
    g.add_argument("--exact", action="store_true", help="closed-form type-2 kernel")
    g.add_argument("--quad", action="store_true", help="quadrangulation fixture")
    g.add_argument("--builtin")
    kb.add_argument("--K", type=int, default=4096)
    kb.add_argument("--check-upto", type=int, default=1000)
    kb.add_argument("--out")
    kb.set_defaults(func=cmd_kernel)

    o = sub.add_parser("oracle", help="exact oracles")
    o.add_argument("what", choices=["build", "W", "first-passage", "coupling", "death", "tutte"])
    o.add_argument("--depth", type=int, default=64, help="largest k of the W table (build)")
    o.add_argument("--horizon", type=int, default=64, help="largest n of W^(l)[n] (build)")
    kernel_opts(o)
    o.add_argument("--ells", type=_ints, default=[1, 2, 3])
    o.add_argument("--ell", type=int, default=3)
    o.add_argument("--n", type=int, default=6)
    o.add_argument("--k", type=int, default=2)
    o.add_argument("--M", type=int, default=1 << 16)
    o.add_argument("--m-max", type=int, default=200)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    w = sub.add_parser("walk", help="sample a conditioned walk path (CSV)")
    w.add_argument("--kind", choices=["up", "down"], default="down")
    w.add_argument("--start", type=int, default=1)
    w.add_argument("--p", type=int, default=1, help="kill level for the down walk")
    w.add_argument("--steps", type=int, default=10000)
    w.add_argument("--seed", type=int, default=0)
    kernel_opts(w)
    w.add_argument("--out")
    w.set_defaults(func=cmd_walk)

    pe = sub.add_parser("peel", help="peeling explorations")
    psub = pe.add_subparsers(dest="action", required=True)
    pr = psub.add_parser("run")
    pr.add_argument("--algo", choices=["uniform", "layers"], default="layers")
    pr.add_argument("--ell", type=int, required=True)
    pr.add_argument("--samples", type=int, default=1)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--max-steps", type=int)
    pr.add_argument("--trajectory", help="CSV path for the first sample's (n, P, D, H, T, event)")
    kernel_opts(pr)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_peel)

    m = sub.add_parser("map", help="build maps")
    msub = m.add_subparsers(dest="action", parser_class=_Parser)
    mb = msub.add_parser("build")
    mb.add_argument("--ell", type=int, required=True)
    mb.add_argument("--target-p", type=int, default=0)
    mb.add_argument("--seed", type=int, default=0)
    mb.add_argument("--max-half-edges", type=int, default=1 << 25)
    mb.add_argument("--format", choices=["json", "binary"], default="json")
    mb.add_argument("--dual-csv")
    kernel_opts(mb)
    mb.add_argument("--out")
    mb.set_defaults(func=cmd_map)

    e = sub.add_parser("experiment", help="run experiments")
    esub = e.add_subparsers(dest="action", parser_class=_Parser)
    er = esub.add_parser("run")
    er.add_argument("--name")
    er.add_argument("--config", help="JSON run manifest")
    er.add_argument("--seed", type=int)
    er.add_argument("--workers", type=int)
    er.add_argument("--kernel")
    er.add_argument("--ells", type=_ints)
    er.add_argument("--ns", type=_ints)
    er.add_argument("--samples", type=int)
    er.add_argument("--out")
    er.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="summarise report JSON files")
    rsub = r.add_subparsers(dest="action", parser_class=_Parser)
    rs = rsub.add_parser("show")
    rs.add_argument("paths", nargs="+")
    rs.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    from .estimators import ConfigError
    from .kernel import KernelError
    from .maps import MapInvariantError, SizeError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as exc:
        text = str(exc)
        sys.stderr.write(text if text.endswith("\n") else text + "\n")
        if "error:" in text:
            sys.stderr.write(parser.format_help())
        return EXIT_USAGE
    except (ConfigError, KernelError, MapInvariantError, SizeError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"validation failure: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
