"""Stochastic variational inference training loop and experiment suites.

One run: shuffle the train set each epoch, recompute the depth support per
batch, grow the network to cover it, take an Adam step on the free energy
(depth parameters in their own smaller-lr group), validate periodically,
keep the checkpoint with the lowest validation free energy, and report that
model's test metrics.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import dist, spiral, vfe
from .net import UnboundedNetwork
from .optim import Adam, DepthPosterior, GradientError
from .tape import RandomTape, _tag_to_int

PRIOR_KINDS = ("trunc_normal", "poisson")


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss/gradient or runaway depth)."""


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of one training run; defaults reproduce the experiment setup."""

    prior_kind: str = "trunc_normal"
    # depth prior
    prior_mu: float = 0.0
    prior_sigma: float = 1.15
    prior_rate: float = 0.5
    # depth posterior initialization
    post_mu: float = 0.0
    post_sigma: float = 1.8
    post_lower_q: float = 0.025
    post_upper_q: float = 0.975
    post_rate: float = 1.0
    post_rate_upper_q: float = 0.95
    # optimization
    lr: float = 0.005
    depth_lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20000
    batch_size: int = 256
    # architecture
    hidden_width: int = 32
    leaky_alpha: float = 0.1
    weight_prior_mean: float = 0.0
    weight_prior_std: float = 1.0
    init_weight_std: float = 0.001
    # data
    seed: int = 1
    omega: float = 0.0
    noise_var: float = 4e-4
    n_train: int = 1024
    n_val: int = 1024
    n_test: int = 1024
    # evaluation
    prediction_samples: int = 10
    support_cap: int = 64
    eval_every: int = 100

    def __post_init__(self):
        if self.prior_kind not in PRIOR_KINDS:
            raise ValueError(f"prior_kind must be one of {PRIOR_KINDS}")
        if self.epochs < 0 or self.batch_size <= 0 or self.batch_size > self.n_train:
            raise ValueError("need 0 < batch_size <= n_train and epochs >= 0")
        if min(self.n_train, self.n_val, self.n_test, self.hidden_width,
               self.prediction_samples, self.eval_every, self.support_cap) <= 0:
            raise ValueError("sizes and cadence values must be positive")
        if min(self.lr, self.depth_lr, self.prior_sigma, self.prior_rate,
               self.post_sigma, self.post_rate, self.weight_prior_std,
               self.init_weight_std, self.noise_var) <= 0:
            raise ValueError("rates and scales must be positive")

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**d)


@dataclass
class HistoryRow:
    epoch: int
    train_vfe: float
    val_vfe: float | None
    depth_mean: float
    depth_std: float
    support_size: int


@dataclass
class RunResult:
    prior_kind: str
    omega: float
    seed: int
    best_val_vfe: float
    best_epoch: int
    test_accuracy: float
    depth_posterior_mean: float
    depth_posterior_std: float
    history: list[HistoryRow]
    dataset_checksums: tuple[str, str, str]


HISTORY_COLUMNS = ["epoch", "train_vfe", "val_vfe", "depth_mean", "depth_std", "support_size"]


def history_to_csv(rows: list[HistoryRow]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in rows:
        val = "" if r.val_vfe is None else repr(r.val_vfe)
        lines.append(
            f"{r.epoch},{r.train_vfe!r},{val},{r.depth_mean!r},{r.depth_std!r},{r.support_size}"
        )
    return "\n".join(lines) + "\n"


def make_datasets(config: TrainConfig) -> tuple[spiral.LabeledDataset, ...]:
    """Independently sampled train/val/test sets, deterministic in (seed, omega)."""
    out = []
    for split, n in (("train", config.n_train), ("val", config.n_val), ("test", config.n_test)):
        seed = _tag_to_int(f"data:{config.seed}:{config.omega!r}:{split}")
        out.append(spiral.generate(spiral.SpiralConfig(config.omega, n, seed, config.noise_var)))
    return tuple(out)


def build_model(config: TrainConfig):
    """Network, depth posterior, depth prior and the run's tape streams."""
    root = RandomTape(config.seed)
    tapes = {name: root.child(name) for name in ("init", "shuffle", "noise", "val", "test")}
    net = UnboundedNetwork(
        tapes["init"],
        in_dim=2,
        hidden_width=config.hidden_width,
        num_classes=2,
        leaky_alpha=config.leaky_alpha,
        init_std=config.init_weight_std,
        prior_mean=config.weight_prior_mean,
        prior_std=config.weight_prior_std,
    )
    if config.prior_kind == "trunc_normal":
        q_depth = DepthPosterior(
            "trunc_normal",
            mu=config.post_mu,
            sigma=config.post_sigma,
            lower_q=config.post_lower_q,
            upper_q=config.post_upper_q,
        )
        prior = dist.TruncNormalDepth(config.prior_mu, config.prior_sigma)
    else:
        q_depth = DepthPosterior(
            "poisson", rate=config.post_rate, rate_upper_q=config.post_rate_upper_q
        )
        prior = dist.PoissonDepth(config.prior_rate)
    return net, q_depth, prior, tapes


def select_best(records: list[tuple[int, float]]) -> int:
    """Index of the minimal validation VFE; ties go to the earlier record."""
    if not records:
        raise ValueError("no validation records")
    best = 0
    for i in range(1, len(records)):
        if records[i][1] < records[best][1]:
            best = i
    return best


def _param_dict(net, q_depth) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in net.parameters() + q_depth.named_params()}


def _restore_params(net, q_depth, params: dict[str, np.ndarray]) -> None:
    live = dict(net.parameters() + q_depth.named_params())
    for name, value in params.items():
        live[name].data[...] = value


def _validation_vfe(net, q_depth, prior, data, config, val_tape, epoch: int) -> float:
    """One-sample validation free energy; the noise stream is keyed by epoch
    so a restored checkpoint can reproduce the recorded value exactly."""
    support = q_depth.support()
    net.ensure_depth(support.stop - 1)
    bd = vfe.compute_vfe(net, q_depth, prior, data.xs, data.ys, data.n,
                         val_tape.child(epoch), support=support,
                         support_cap=config.support_cap)
    return bd.total


def train(config: TrainConfig, data=None, out_dir: str | None = None) -> RunResult:
    """Run SVI for config.epochs and return the validation-best model's metrics.

    On abort (non-finite loss, runaway support) the best checkpoint written so
    far is left on disk and a TrainingError is raised.
    """
    if data is None:
        data = make_datasets(config)
    train_set, val_set, test_set = data
    expected = (config.n_train, config.n_val, config.n_test)
    if tuple(d.n for d in data) != expected:
        raise ValueError(f"dataset sizes {tuple(d.n for d in data)} != configured {expected}")

    net, q_depth, prior, tapes = build_model(config)
    adam = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
            json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)

    def snapshot(epoch: int, val: float) -> dict:
        return {
            "params": _param_dict(net, q_depth),
            "adam_slots": {k: (m.copy(), v.copy()) for k, (m, v) in adam.slots.items()},
            "adam_step": adam.step_count,
            "epoch": epoch,
            "val_vfe": val,
        }

    def persist(snap: dict) -> None:
        if out_dir is None:
            return
        meta = {
            "format": "depthbnn-checkpoint-v1",
            "config_hash": config.config_hash(),
            "prior_kind": config.prior_kind,
            "epoch": snap["epoch"],
            "adam_step": snap["adam_step"],
            "val_vfe": snap["val_vfe"],
            "n_hidden_layers": len(net.hidden_layers),
            "n_heads": len(net.output_heads),
        }
        ckpt.save_checkpoint(os.path.join(out_dir, "best.ckpt"), snap["params"],
                             snap["adam_slots"], meta)

    val0 = _validation_vfe(net, q_depth, prior, val_set, config, tapes["val"], 0)
    best = snapshot(0, val0)
    persist(best)

    history: list[HistoryRow] = []
    n = train_set.n
    groups_depth = q_depth.named_params()

    for epoch in range(1, config.epochs + 1):
        perm = tapes["shuffle"].permutation(n)
        batch_totals = []
        try:
            for start in range(0, n - config.batch_size + 1, config.batch_size):
                idx = perm[start:start + config.batch_size]
                support = q_depth.support()
                if support.stop - 1 > config.support_cap:
                    raise TrainingError(
                        f"support reached depth {support.stop - 1} > cap {config.support_cap}"
                    )
                net.ensure_depth(support.stop - 1)
                bd = vfe.compute_vfe(net, q_depth, prior, train_set.xs[idx],
                                     train_set.ys[idx], n, tapes["noise"],
                                     support=support, support_cap=config.support_cap)
                if not math.isfinite(bd.total):
                    raise TrainingError(f"non-finite training VFE at epoch {epoch}")
                ad.zero_grads([p for _, p in net.parameters() + groups_depth])
                bd.loss.backward()
                adam.step([
                    ("weights", net.parameters(), None),
                    ("depth", groups_depth, config.depth_lr),
                ])
                batch_totals.append(bd.total)

            pmf = q_depth.pmf()
            val = None
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                val = _validation_vfe(net, q_depth, prior, val_set, config,
                                      tapes["val"], epoch)
                if val < best["val_vfe"]:
                    best = snapshot(epoch, val)
                    persist(best)
        except (GradientError, dist.EvaluationError, dist.ParameterError) as exc:
            # divergence symptom: degenerate depth parameters or bad gradients;
            # the best checkpoint written so far stays on disk
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        history.append(HistoryRow(
            epoch=epoch,
            train_vfe=float(np.mean(batch_totals)),
            val_vfe=val,
            depth_mean=pmf.mean(),
            depth_std=pmf.std(),
            support_size=len(q_depth.support()),
        ))

    _restore_params(net, q_depth, best["params"])
    pmf = q_depth.pmf()
    accuracy = vfe.evaluate_accuracy(net, q_depth, test_set.xs, test_set.ys,
                                     config.prediction_samples, tapes["test"])
    result = RunResult(
        prior_kind=config.prior_kind,
        omega=config.omega,
        seed=config.seed,
        best_val_vfe=best["val_vfe"],
        best_epoch=best["epoch"],
        test_accuracy=accuracy,
        depth_posterior_mean=pmf.mean(),
        depth_posterior_std=pmf.std(),
        history=history,
        dataset_checksums=(train_set.checksum, val_set.checksum, test_set.checksum),
    )
    if out_dir is not None:
        with open(os.path.join(out_dir, "history.csv"), "w") as fh:
            fh.write(history_to_csv(history))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary_dict(result, config), fh, indent=2, sort_keys=True)
    return result


def summary_dict(result: RunResult, config: TrainConfig) -> dict:
    return {
        "prior_kind": result.prior_kind,
        "omega": result.omega,
        "seed": result.seed,
        "best_val_vfe": result.best_val_vfe,
        "best_epoch": result.best_epoch,
        "test_accuracy": result.test_accuracy,
        "depth_posterior_mean": result.depth_posterior_mean,
        "depth_posterior_std": result.depth_posterior_std,
        "dataset_checksums": list(result.dataset_checksums),
        "config_hash": config.config_hash(),
        "epochs_run": len(result.history),
    }


def restore_run(config: TrainConfig, checkpoint_path: str):
    """Rebuild a model from a checkpoint file for evaluation."""
    data = ckpt.load_checkpoint(checkpoint_path)
    if data.meta.get("config_hash") != config.config_hash():
        raise ValueError("checkpoint was written under a different configuration")
    net, q_depth, prior, tapes = build_model(config)
    net.ensure_depth(int(data.meta["n_heads"]) - 1)
    _restore_params(net, q_depth, data.params)
    return net, q_depth, prior, tapes


def checkpoint_validation_vfe(config: TrainConfig, checkpoint_path: str) -> tuple[float, float]:
    """Recompute a checkpoint's validation VFE; returns (recomputed, recorded)."""
    data = ckpt.load_checkpoint(checkpoint_path)
    net, q_depth, prior, tapes = restore_run(config, checkpoint_path)
    _, val_set, _ = make_datasets(config)
    val = _validation_vfe(net, q_depth, prior, val_set, config, tapes["val"],
                          int(data.meta["epoch"]))
    return val, float(data.meta["val_vfe"])


# ---------------------------------------------------------------------------
# suites


@dataclass
class CellResult:
    omega: float
    seed: int
    prior_kind: str
    result: RunResult | None
    error: str | None = None


@dataclass
class SuiteResult:
    cells: list[CellResult]
    accuracy_rows: list[dict] = field(default_factory=list)
    depth_rows: list[dict] = field(default_factory=list)

    @property
    def n_succeeded(self) -> int:
        return sum(1 for c in self.cells if c.result is not None)


def _train_cell(args):
    config, data, cell_dir = args
    return train(config, data=data, out_dir=cell_dir)


def run_suite(base_config: TrainConfig, omegas, runs: int,
              out_dir: str | None = None, threads: int = 1,
              progress=None) -> SuiteResult:
    """Train both prior kinds for every (omega, run) cell on identical data.

    Runs are seeded 1..runs; failures are recorded per cell and do not stop
    the suite.  Aggregates use the sample standard deviation (n-1).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    jobs = []
    for omega in omegas:
        for run_idx in range(1, runs + 1):
            shared_cfg = dataclasses.replace(base_config, omega=float(omega), seed=run_idx)
            data = make_datasets(shared_cfg)
            for kind in PRIOR_KINDS:
                cfg = dataclasses.replace(shared_cfg, prior_kind=kind)
                cell_dir = None
                if out_dir is not None:
                    cell_dir = os.path.join(out_dir, "cells", f"omega{omega}_run{run_idx}_{kind}")
                jobs.append((cfg, data, cell_dir))

    cells: list[CellResult] = []

    def finish(cfg, outcome, error=None):
        cells.append(CellResult(cfg.omega, cfg.seed, cfg.prior_kind, outcome, error))
        if progress is not None:
            progress(cells[-1])

    if threads > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_train_cell, job): job[0] for job in jobs}
            for fut in cf.as_completed(futures):
                cfg = futures[fut]
                try:
                    finish(cfg, fut.result())
                except Exception as exc:  # cell failure must not kill the suite
                    finish(cfg, None, f"{type(exc).__name__}: {exc}")
    else:
        for cfg, data, cell_dir in jobs:
            try:
                result = train(cfg, data=data, out_dir=cell_dir)
                finish(cfg, result)
            except Exception as exc:
                finish(cfg, None, f"{type(exc).__name__}: {exc}")

    cells.sort(key=lambda c: (c.omega, c.seed, c.prior_kind))
    suite = SuiteResult(cells=cells)
    for omega in omegas:
        for kind in PRIOR_KINDS:
            group = [c for c in cells if c.omega == float(omega) and c.prior_kind == kind]
            ok = [c.result for c in group if c.result is not None]
            accs = [r.test_accuracy for r in ok]
            row = {
                "omega": float(omega),
                "prior": kind,
                "accuracy_mean": float(np.mean(accs)) if accs else float("nan"),
                "accuracy_std": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
                "n_runs": len(group),
                "n_failed": len(group) - len(ok),
            }
            suite.accuracy_rows.append(row)
            first = next((c.result for c in group if c.seed == 1 and c.result), None)
            suite.depth_rows.append({
                "omega": float(omega),
                "prior": kind,
                "depth_mean_first_run": first.depth_posterior_mean if first else float("nan"),
                "depth_std_first_run": first.depth_posterior_std if first else float("nan"),
                "depth_mean_avg": float(np.mean([r.depth_posterior_mean for r in ok])) if ok else float("nan"),
                "depth_std_avg": float(np.mean([r.depth_posterior_std for r in ok])) if ok else float("nan"),
            })
    return suite
