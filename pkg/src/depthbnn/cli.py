"""Command-line entry point.

Subcommands: gen-data, train, suite, eval, gradcheck, depth-pmf.  Exit codes
are a stable contract: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import dist, spiral, trainer, vfe
from .optim import DepthPosterior, finite_diff_check
from .tape import RandomTape

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _coerce(value: str, target_type):
    if target_type is bool:
        return value.lower() in ("1", "true", "yes")
    return target_type(value)


def _load_config(path: str, overrides: list[str]) -> trainer.TrainConfig:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    raw = dict(raw)
    raw.pop("omegas", None)
    raw.pop("runs", None)
    raw.update(_parse_overrides(overrides))
    try:
        return trainer.config_from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _parse_overrides(overrides: list[str]) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(trainer.TrainConfig)}
    pytypes = {"float": float, "int": int, "str": str, "bool": bool}
    out = {}
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override must look like KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        if key not in types:
            raise UsageError(f"unknown config key in override: {key}")
        t = types[key]
        t = pytypes.get(t, t) if isinstance(t, str) else t
        try:
            out[key] = _coerce(value, t)
        except ValueError as exc:
            raise UsageError(f"cannot parse override {item!r}: {exc}") from exc
    return out


def _write_resolved_config(config: trainer.TrainConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)


def cmd_gen_data(args) -> int:
    cfg = spiral.SpiralConfig(omega=args.omega, n=args.n, seed=args.seed,
                              noise_var=args.noise_var)
    dataset = spiral.generate(cfg)
    spiral.save_csv(dataset, args.out)
    print(f"wrote {dataset.n} samples to {args.out} (checksum {dataset.checksum[:16]})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config, args.set)
    try:
        result = trainer.train(config, out_dir=args.output)
    except (trainer.TrainingError, vfe.SupportCapError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best_val_vfe={result.best_val_vfe:.4f} at epoch {result.best_epoch}, "
          f"test_accuracy={result.test_accuracy:.4f}")
    return EXIT_OK


def cmd_suite(args) -> int:
    if not os.path.exists(args.config):
        raise UsageError(f"config file not found: {args.config}")
    with open(args.config) as fh:
        raw = json.load(fh)
    omegas = raw.get("omegas")
    runs = raw.get("runs")
    if omegas is None or runs is None:
        raise UsageError("suite config must provide `omegas` (list) and `runs` (int)")
    base = _load_config(args.config, args.set)
    out_dir = args.output
    _write_resolved_config(base, out_dir)

    def progress(cell):
        status = "ok" if cell.result is not None else f"FAILED ({cell.error})"
        print(f"omega={cell.omega} run={cell.seed} prior={cell.prior_kind}: {status}")

    suite = trainer.run_suite(base, omegas, runs, out_dir=out_dir,
                              threads=args.threads, progress=progress)
    _write_rows(os.path.join(out_dir, "accuracy_vs_omega.csv"), suite.accuracy_rows)
    _write_rows(os.path.join(out_dir, "depth_posterior_vs_omega.csv"), suite.depth_rows)
    if suite.n_succeeded == 0:
        print("all suite cells failed", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{suite.n_succeeded}/{len(suite.cells)} cells succeeded; aggregates in {out_dir}")
    return EXIT_OK


def _write_rows(path: str, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_eval(args) -> int:
    config = _load_config(args.config, args.set)
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    net, q_depth, prior, tapes = trainer.restore_run(config, args.checkpoint)
    _, _, test_set = trainer.make_datasets(config)
    accuracy = vfe.evaluate_accuracy(net, q_depth, test_set.xs, test_set.ys,
                                     config.prediction_samples, tapes["test"])
    pmf = q_depth.pmf()
    payload = {
        "test_accuracy": accuracy,
        "depth_posterior_mean": pmf.mean(),
        "depth_posterior_std": pmf.std(),
        "test_checksum": test_set.checksum,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .net import UnboundedNetwork

    tape = RandomTape(args.seed)
    net = UnboundedNetwork(tape.child("init"), in_dim=2, hidden_width=4,
                           init_std=0.2, prior_mean=0.0, prior_std=1.0)
    net.ensure_depth(1)
    if args.prior == "trunc_normal":
        q_depth = DepthPosterior("trunc_normal", mu=0.4, sigma=0.55,
                                 lower_q=0.025, upper_q=0.975)
        prior = dist.TruncNormalDepth(0.0, 1.15)
    else:
        q_depth = DepthPosterior("poisson", rate=0.8, rate_upper_q=0.9)
        prior = dist.PoissonDepth(0.5)
    data = spiral.generate(spiral.SpiralConfig(omega=2.0, n=8, seed=args.seed))
    support = q_depth.support()
    net.ensure_depth(support.stop - 1)
    params = net.parameters() + q_depth.named_params()

    def objective(t):
        return vfe.compute_vfe(net, q_depth, prior, data.xs, data.ys, data.n, t,
                               support=support).loss

    report = finite_diff_check(objective, params, tape.child("noise"),
                               h=args.h, tol=args.tol)
    print(f"checked {report.n_checked} coordinates, max relative error "
          f"{report.max_rel_error:.3e}")
    for name, idx, a, nmr, rel in report.failures:
        print(f"  MISMATCH {name}[{idx}]: analytic={a:.6e} numeric={nmr:.6e} rel={rel:.2e}")
    if report.passed:
        print("gradient check PASSED")
        return EXIT_OK
    print("gradient check FAILED", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_depth_pmf(args) -> int:
    try:
        normal = dist.TruncNormalDepth(args.normal_mu, args.normal_sigma)
        poisson = dist.PoissonDepth(args.poisson_rate)
    except dist.ParameterError as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for l in range(args.lmax + 1):
        rows.append({
            "L": l,
            "log_pmf_trunc_normal": repr(dist.untruncated_log_pmf(normal, l)),
            "log_pmf_poisson": repr(dist.untruncated_log_pmf(poisson, l)),
        })
    if args.csv:
        _write_rows(args.csv, rows)
        print(f"wrote {len(rows)} rows to {args.csv}")
    else:
        print("L,log_pmf_trunc_normal,log_pmf_poisson")
        for r in rows:
            print(f"{r['L']},{r['log_pmf_trunc_normal']},{r['log_pmf_poisson']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthbnn",
        description="Variational depth estimation for Bayesian neural networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a spiral dataset CSV")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise-var", type=float, default=4e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("suite", help="run the omega sweep for both priors")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured test set")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the VFE gradient")
    p.add_argument("--prior", choices=list(trainer.PRIOR_KINDS), default="trunc_normal")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("depth-pmf", help="tabulate prior log-pmfs side by side")
    p.add_argument("--normal-mu", type=float, default=0.0)
    p.add_argument("--normal-sigma", type=float, default=1.15)
    p.add_argument("--poisson-rate", type=float, default=0.5)
    p.add_argument("--lmax", type=int, default=10)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_depth_pmf)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
