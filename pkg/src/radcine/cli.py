"""Command-line entry point: ``radcine <subcommand> [options]``.

Stage subcommands work on one run directory (``--out``). Settings come
from ``--config`` if given, otherwise from the run directory's saved
config, otherwise the defaults; ``--set key=value`` and the dedicated
flags override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import (COMPRESSION_METHODS, PROX_CHOICES, RECON_METHODS, ConfigError,
                     PipelineConfig, dump_flat, load_config, set_dotted)
from .pipeline import STAGES, StageError, run_pipeline, run_stage

log = logging.getLogger("radcine")

EXIT_STAGE = 1
EXIT_CONFIG = 2


def _common(p):
    p.add_argument("--config", help="flat key=value or JSON config file")
    p.add_argument("--out", help="run directory (default: config 'out')")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set phantom.noise_sigma=0.1")
    p.add_argument("-v", "--verbose", action="store_true")


def _pipeline_opts(p):
    p.add_argument("--R", type=float, nargs="+", help="acceleration factors")
    p.add_argument("--T", type=int, help="number of cardiac phases")
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")


def _compress_opts(p):
    p.add_argument("--method", choices=COMPRESSION_METHODS)
    p.add_argument("--nv", type=int, help="number of virtual coils")
    p.add_argument("--rho-s", type=float)
    p.add_argument("--rho-i", type=float)


def _recon_opts(p):
    p.add_argument("--method", choices=RECON_METHODS, nargs="+", dest="recon_methods")
    p.add_argument("--prox", choices=PROX_CHOICES)
    p.add_argument("--lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--n-cg", type=int)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--lam-t-rel", type=float)
    p.add_argument("--weights", help="ResNet prox weight file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radcine", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _common(p)
        _pipeline_opts(p)
        if name == "compress":
            _compress_opts(p)
        if name == "recon":
            _recon_opts(p)
    p = sub.add_parser("run", help="run every stage and write the report")
    _common(p)
    _pipeline_opts(p)
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")
    for name in ("report", "profile"):
        p = sub.add_parser(name, help=f"write {name} artifacts from a finished run")
        p.add_argument("--out", default="run")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("selftest", help="NUFFT adjointness and accuracy checks")
    p.add_argument("component", nargs="?", default="nufft", choices=["nufft"])
    p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("make-random-weights", help="write a ResNet prox weight file")
    p.add_argument("path")
    p.add_argument("--n-blocks", type=int, default=2)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--scale", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero", action="store_true", help="all-zero weights (identity prox)")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> PipelineConfig:
    over = list(args.set)
    path = args.config
    if path is None and args.out and (Path(args.out) / "config.json").is_file():
        path = Path(args.out) / "config.json"
    flags = {"seed": args.seed, "out": args.out, "T": getattr(args, "T", None),
             "R": getattr(args, "R", None)}
    if args.command == "compress":
        flags.update({"compression.method": args.method, "compression.n_virtual": args.nv,
                      "compression.rho_s": args.rho_s, "compression.rho_i": args.rho_i})
    if args.command == "recon":
        flags.update({"recon.methods": args.recon_methods, "recon.prox": args.prox,
                      "recon.lam": args.lam, "recon.tau": args.tau, "recon.K": args.K,
                      "recon.n_cg": args.n_cg, "recon.n_iter": args.n_iter,
                      "recon.lam_t_rel": args.lam_t_rel, "recon.weight_file": args.weights})
    cfg = load_config(path, over)
    d = cfg.to_dict()
    for k, v in flags.items():
        if v is not None:
            set_dotted(d, k, v)
    return PipelineConfig.from_dict(d).validate()


def _selftest() -> int:
    from .nufft import adjoint_mismatch, direct_dft, nufft_adjoint, nufft_forward, plan_nufft
    from .preprocess import make_trajectory
    rng = np.random.default_rng(0)
    ok = True
    for N in (32, 64):
        coords = make_trajectory(32, N, 111.246).flat()
        for J in (4, 6):
            for alpha in (1.5, 2.0):
                plan = plan_nufft(N, coords, alpha, J)
                x = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
                y = rng.standard_normal(len(coords)) + 1j * rng.standard_normal(len(coords))
                err = adjoint_mismatch(lambda v: nufft_forward(plan, v),
                                       lambda v: nufft_adjoint(plan, v), x, y)
                good = err <= 1e-6
                ok &= good
                print(f"{'PASS' if good else 'FAIL'} adjoint N={N} J={J} alpha={alpha}: "
                      f"{err:.2e} (<= 1e-6)")
    N = 64
    coords = make_trajectory(32, N, 111.246).flat()
    x = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    ref = direct_dft(x, coords, N)
    err = np.linalg.norm(nufft_forward(plan_nufft(N, coords, 2.0, 6), x) - ref) / np.linalg.norm(ref)
    good = err <= 1e-4
    ok &= good
    print(f"{'PASS' if good else 'FAIL'} accuracy N=64 J=6 alpha=2: {err:.2e} (<= 1e-4)")
    return 0 if ok else EXIT_STAGE


def _make_weights(args) -> int:
    from .recon.resnet import make_random_weights, write_weights, zero_weights
    if args.zero:
        w = zero_weights(args.n_blocks, args.channels)
    else:
        w = make_random_weights(args.n_blocks, args.channels, args.scale, args.seed)
    write_weights(args.path, w)
    print(args.path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    stage = args.command
    try:
        if stage == "selftest":
            return _selftest()
        if stage == "make-random-weights":
            return _make_weights(args)
        if stage in ("report", "profile"):
            from .report import profile, report
            if stage == "report":
                print(report(args.out), end="")
            else:
                for p in profile(args.out):
                    print(p)
            return 0
        cfg = resolve_config(args)
        run_dir = Path(cfg.out)
        t0 = time.perf_counter()
        if stage == "run":
            if args.print_config:
                print(dump_flat(cfg), end="")
                return 0
            run_pipeline(cfg, run_dir, force=args.force)
            print((run_dir / "report" / "table.txt").read_text(), end="")
        else:
            rec = run_stage(stage, cfg, run_dir, force=args.force)
            print(json.dumps({"stage": stage, "key": rec["key"], "files": len(rec["files"])}))
        log.info("%s finished in %.1f s", stage, time.perf_counter() - t0)
        return 0
    except ConfigError as e:
        print(f"radcine: [config] error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"radcine: [{e.stage}] error: {e.message}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError) as e:
        print(f"radcine: [{stage}] error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
