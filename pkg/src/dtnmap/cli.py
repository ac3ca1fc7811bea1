"""Command-line entry point: ``dtnmap <subcommand> ...``.

Exit codes: 0 success, 1 a checked threshold failed (``--strict``) or the
problem could not be solved, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from . import parabolic, runner
from .config import ConfigError, RunConfig, build_pipeline, preset
from .fem import EllipticityError, IllPosedError
from .geometry import MeshingError, make_domain, triangulate
from .semigroup import kernel

THREADS_ENV = "DTNMAP_THREADS"


class UsageError(Exception):
    pass


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (flags below override it)")
    p.add_argument("--domain", choices=["disk", "star"])
    p.add_argument("--h", type=float, help="target interior mesh size")
    p.add_argument("--boundary-h", type=float, help="boundary spacing (defaults to --h)")
    p.add_argument("--coeff", choices=["const", "variable"])
    p.add_argument("--V", dest="potential", help="potential id: zero, 1, const:<v>, random[:seed], negative")
    p.add_argument("--seed", type=int)


def _config_from_args(args) -> RunConfig:
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "config", None):
        try:
            cfg = RunConfig.load(args.config)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config} ({exc.strerror})") from exc
    else:
        cfg = RunConfig()
    data = cfg.to_dict()
    for key in ("domain", "h", "boundary_h", "coeff", "potential", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def _emit(text: str, out: str | None) -> None:
    if out:
        runner.write_atomic(Path(out), text)
    else:
        sys.stdout.write(text)


def cmd_mesh(args) -> int:
    cfg = _config_from_args(args)
    mesh = triangulate(make_domain(cfg.domain, **cfg.domain_params), cfg.h, cfg.boundary_h, seed=cfg.seed)
    _emit(mesh.to_json() + "\n", args.out)
    return 0


def cmd_assemble(args) -> int:
    p = build_pipeline(_config_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in (("A0", p.forms.A0), ("B", p.forms.B), ("M", p.forms.M)):
        scipy.io.mmwrite(out / f"{name}.mtx", mat)
    scipy.io.mmwrite(out / "MG.mtx", scipy.sparse.coo_matrix(p.forms.MG))
    runner.write_atomic(out / "boundary.json", json.dumps({"boundary": p.mesh.boundary.tolist()}) + "\n")
    return 0


def cmd_dtn(args) -> int:
    p = build_pipeline(_config_from_args(args))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    p.op.export(args.out)
    return 0


def cmd_spectrum(args) -> int:
    p = build_pipeline(_config_from_args(args))
    text = p.op.spectrum_csv()
    if args.count:
        text = "\n".join(text.splitlines()[: args.count + 1]) + "\n"
    _emit(text, args.out)
    return 0


def _parse_complex(text: str) -> complex:
    parts = text.split(",")
    if len(parts) == 1:
        return complex(float(parts[0]), 0.0)
    if len(parts) == 2:
        return complex(float(parts[0]), float(parts[1]))
    raise UsageError(f"--z expects <re>,<im>, got {text!r}")


def cmd_kernel(args) -> int:
    p = build_pipeline(_config_from_args(args))
    try:
        z = _parse_complex(args.z)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.binary:
        np.ascontiguousarray(kernel(p.op, z).values, dtype="<c16").tofile(args.binary)
    else:
        _emit(kernel(p.op, z).to_csv(), args.out)
    return 0


VERIFY_CHECKS = {
    "poisson-real": "poisson_real",
    "poisson-sector": "poisson_sector",
    "continuity": "continuity",
    "perturbation": "perturbation",
    "commutator": "commutator",
    "schwartz": "schwartz",
    "schedule": "schedule",
}


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    if args.theta is not None:
        cfg.theta_deg = args.theta
    cfg.checks = [VERIFY_CHECKS[args.check]]
    cfg.validate()
    results, out = runner.run(cfg, args.out)
    result = results[0]
    runner.write_atomic(out / f"{cfg.checks[0]}_check.json",
                        json.dumps(runner.jsonable(asdict(result)), indent=2, sort_keys=True) + "\n")
    print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed or not args.strict else 1


def cmd_parabolic(args) -> int:
    p = build_pipeline(_config_from_args(args))
    op = p.op
    if args.forcing == "random":
        f = parabolic.band_limited_forcing(op, p.config.seed)
    elif args.forcing.startswith("mode:"):
        n = int(args.forcing.split(":", 1)[1])
        if not 1 <= n <= op.size:
            raise UsageError(f"mode index must lie in [1, {op.size}]")
        vec = op.vectors[:, n - 1]

        def f(t):
            return vec
    else:
        raise UsageError(f"--forcing expects random or mode:<n>, got {args.forcing!r}")
    problem = parabolic.EvolutionProblem(op, f, None, args.tau, args.steps, args.r, args.p)
    traj = parabolic.solve(problem)
    summary = traj.summary | {"ratio": parabolic.max_regularity_ratio(traj), "r": args.r, "p": args.p,
                              "tau": args.tau}
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        runner.write_atomic(Path(args.out), traj.to_csv())
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    results, out = runner.run(cfg, args.out)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    print(f"reports written to {out}")
    failed = [r.name for r in results if not r.passed]
    return 1 if failed and args.strict else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtnmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="triangulate a domain and print the mesh as JSON")
    _add_problem_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("assemble", help="write the assembled matrices as MatrixMarket files")
    _add_problem_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("dtn", help="export the DtN matrix (binary + JSON sidecar)")
    _add_problem_args(p)
    p.add_argument("--out", required=True, help="output stem")
    p.set_defaults(func=cmd_dtn)

    p = sub.add_parser("spectrum", help="print the Steklov spectrum as CSV")
    _add_problem_args(p)
    p.add_argument("--count", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("kernel", help="dump the heat kernel at complex time z")
    _add_problem_args(p)
    p.add_argument("--z", required=True, help="<re>,<im>")
    p.add_argument("--out")
    p.add_argument("--binary", help="write little-endian complex128 row-major instead of CSV")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("verify", help="run one verification check")
    p.add_argument("check", choices=sorted(VERIFY_CHECKS))
    _add_problem_args(p)
    p.add_argument("--theta", type=float, help="sector half-angle in degrees")
    p.add_argument("--out", default="dtn-output")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("parabolic", help="solve phi' + N phi = f and report maximal-regularity norms")
    _add_problem_args(p)
    p.add_argument("--r", type=float, default=2.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--forcing", default="random")
    p.add_argument("--out", help="trajectory CSV")
    p.set_defaults(func=cmd_parabolic)

    p = sub.add_parser("run", help="run a preset or configuration and write all reports")
    _add_problem_args(p)
    p.add_argument("--preset")
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true", help="exit 1 if any check fails")
    p.set_defaults(func=cmd_run)
    return parser


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(value))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    _limit_threads()
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MeshingError, EllipticityError, IllPosedError) as exc:
        print(f"error in {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
