"""End-to-end drivers behind the CLI subcommands.

Every function takes a :class:`RunConfig` and returns plain payload dicts (or
BoundReports); persistence and exit codes are handled by the CLI.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng
from ..bounds import (
    BoundInput,
    BoundReport,
    assemble_bound,
    baseline_bounded_complexity,
    complexity_from_stats,
    expected_risks,
    global_onaverage_complexity,
    linear_complexity,
    linear_lambda_max,
    posterior_around,
    prior_loss_grad_stats,
)
from ..distributions import (
    DiagonalGaussian,
    Dataset,
    LabeledMixture,
    empirical_label_stats,
    kl_diag_gaussian,
    make_synthetic_mixture,
    mixture_from_config,
    mixture_to_config,
    sample_mixture,
)
from ..errors import ConfigError, ConstraintViolation, InvalidInputError
from ..models import LossKind, Network, cnn, linear, load_checkpoint, lipschitz_bound_hat_loss, loss, mlp_by_depth, save_checkpoint
from ..train import TrainConfig, TrainTrace, depth_sweep_complexity, prior_label_balance, prior_sweep_stats, sgd_train
from .config import RunConfig, dump_config, parse_list, resolve_lambda
from .io import load_csv, load_idx, write_csv, write_table


@dataclass(frozen=True)
class DataBundle:
    train: Dataset
    test: Dataset | None
    dist: LabeledMixture  # true mixture (synthetic) or per-label Gaussian fit (files)
    sigma_y: object
    sigma_y_source: str
    source: str

    @property
    def n_classes(self) -> int:
        return self.dist.n_classes


def _require_file(path: str, key: str) -> str:
    if not Path(path).is_file():
        raise ConfigError(f"{key}: file {path!r} does not exist")
    return path


def synthetic_mixture(cfg: RunConfig) -> LabeledMixture:
    if cfg.mixture_entries():
        return mixture_from_config(cfg.mixture_entries())
    return make_synthetic_mixture(
        cfg["data.classes"], cfg["data.dim"], cfg["data.separation"], cfg["data.std"], seed=rng.subseed(cfg["seed"], "mixture")
    )


def fitted_mixture(data: Dataset, k: int) -> LabeledMixture:
    """Per-label diagonal Gaussian fit with empirical label frequencies."""
    stats = empirical_label_stats(data, k)
    freq = np.array([s.count for s in stats], dtype=float)
    comps = tuple(DiagonalGaussian(s.mean, s.std**2) for s in stats)
    return LabeledMixture(freq / freq.sum(), comps)


def _resolve_sigma_y(cfg: RunConfig, train: Dataset, dist: LabeledMixture, synthetic: bool):
    raw = cfg["data.sigma_y"]
    if raw == "auto" and synthetic:
        return dist.stds, "mixture"
    if raw in ("auto", "estimate"):
        return np.stack([s.std for s in empirical_label_stats(train, dist.n_classes)]), "estimated"
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"data.sigma_y must be auto, estimate or a number, got {raw!r}") from None
    if not value >= 0 or not math.isfinite(value):
        raise ConfigError("data.sigma_y must be finite and non-negative")
    return value, "config"


def load_data(cfg: RunConfig) -> DataBundle:
    source = cfg["data.source"]
    seed = cfg["seed"]
    k = cfg["data.classes"]
    if source == "synthetic":
        dist = synthetic_mixture(cfg)
        train = sample_mixture(dist, cfg["data.n_train"], rng.subseed(seed, "train-data"))
        test = sample_mixture(dist, cfg["data.n_test"], rng.subseed(seed, "test-data"))
    else:
        if source == "idx":
            train = load_idx(_require_file(cfg["data.images"], "data.images"), _require_file(cfg["data.labels"], "data.labels"))
            test = None
            if cfg["data.test_images"]:
                test = load_idx(
                    _require_file(cfg["data.test_images"], "data.test_images"),
                    _require_file(cfg["data.test_labels"], "data.test_labels"),
                )
        else:
            train = load_csv(_require_file(cfg["data.csv"], "data.csv"), k)
            test = load_csv(_require_file(cfg["data.test_csv"], "data.test_csv"), k) if cfg["data.test_csv"] else None
        if train.y.max() >= k:
            raise ConfigError(f"data has label {int(train.y.max())} but data.classes = {k}")
        dist = fitted_mixture(train, k)
    sigma_y, how = _resolve_sigma_y(cfg, train, dist, source == "synthetic")
    return DataBundle(train, test, dist, sigma_y, how, source)


def _input_shape(cfg: RunConfig, d: int) -> tuple[int, ...]:
    text = cfg["model.input_shape"]
    if text:
        shape = tuple(parse_list(text, int))
    else:
        side = math.isqrt(d)
        if side * side != d:
            raise ConfigError("model.input_shape is required when the input is not a square image")
        shape = (1, side, side)
    if math.prod(shape) != d:
        raise ConfigError(f"model.input_shape {shape} does not match input dimension {d}")
    return shape


def build_model(cfg: RunConfig, d: int, k: int, depth: int | None = None) -> Network:
    """Untrained (all-zero) network of the configured architecture."""
    arch = cfg["model.arch"]
    if arch == "linear":
        return linear(d, k)
    if arch == "cnn":
        channels = [cfg["model.channels"]] * max(1, (depth or cfg["model.depth"]) - 1)
        return cnn(_input_shape(cfg, d), k, channels, cfg["model.kernel"], cfg["model.hidden"])
    width = cfg["model.width"] or None
    budget = cfg["model.param_budget"] or None
    return mlp_by_depth(d, k, depth or cfg["model.depth"], width=width, budget=budget)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        cfg["train.learning_rate"],
        cfg["train.momentum"],
        cfg["train.batch_size"],
        cfg["train.epochs"],
        cfg["seed"],
        LossKind.parse(cfg["train.loss"]),
    )


def bound_input(cfg: RunConfig, bundle: DataBundle, lam: float | None = None, m: int | None = None) -> BoundInput:
    m = len(bundle.train) if m is None else m
    if lam is None:
        expr = cfg["bound.lambda"]
        lam = resolve_lambda(expr, m, _linear_lambda_max(cfg, bundle, m) if "max" in expr else None)
    return BoundInput(
        lam=lam,
        m=m,
        delta=cfg["bound.delta"],
        prior_var=cfg["bound.prior_var"],
        sigma_y=bundle.sigma_y,
        b=float(cfg["bound.b"]) if cfg["bound.b"] else None,
        g=float(cfg["bound.g"]) if cfg["bound.g"] else None,
        n_prior=cfg["bound.n_prior"],
        n_data=cfg["bound.n_data"],
        n_posterior=cfg["bound.n_posterior"],
        seed=cfg["seed"],
        sigma_y_source=bundle.sigma_y_source,
    )


def _linear_lambda_max(cfg: RunConfig, bundle: DataBundle, m: int) -> float:
    g = float(cfg["bound.lipschitz"]) if cfg["bound.lipschitz"] else lipschitz_bound_hat_loss(cfg["train.loss"])
    sigma_y = float(np.max(bundle.sigma_y))
    return linear_lambda_max(g, math.sqrt(cfg["bound.prior_var"]), sigma_y, m)


# ---- pipelines --------------------------------------------------------------


def gen_data(cfg: RunConfig, out) -> dict:
    """Sample the synthetic train/test sets and write them as CSV, plus the mixture as config."""
    if cfg["data.source"] != "synthetic":
        raise ConfigError("gen-data needs data.source = synthetic")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_data(cfg)
    train_path = write_csv(bundle.train, out / "train.csv")
    test_path = write_csv(bundle.test, out / "test.csv")
    mix_path = out / "mixture.cfg"
    mix_path.write_text(dump_config(mixture_to_config(bundle.dist)), encoding="utf-8")
    return {
        "train_csv": str(train_path),
        "test_csv": str(test_path),
        "mixture": str(mix_path),
        "n_train": len(bundle.train),
        "n_test": len(bundle.test),
        "classes": bundle.n_classes,
        "dim": bundle.dist.dim,
    }


def trained_model(cfg: RunConfig, bundle: DataBundle) -> tuple[Network, TrainTrace | None]:
    """Load ``model.checkpoint`` if set, otherwise train from the configured initializer."""
    if cfg["model.checkpoint"]:
        net = load_checkpoint(_require_file(cfg["model.checkpoint"], "model.checkpoint"))
        if net.input_dim != bundle.train.dim or net.n_classes != bundle.n_classes:
            raise ConfigError("checkpoint does not match the data dimensions")
        return net, None
    net = build_model(cfg, bundle.train.dim, bundle.n_classes)
    trace = sgd_train(net, bundle.train, train_config(cfg), init=True)
    return trace.network, trace


def run_train(cfg: RunConfig, out) -> tuple[dict, float]:
    """Train, save the checkpoint under ``out`` and return the trace payload and wall time."""
    bundle = load_data(cfg)
    net = build_model(cfg, bundle.train.dim, bundle.n_classes)
    trace = sgd_train(net, bundle.train, train_config(cfg), init=True)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(trace.network, out / "model.lsib")
    payload = {
        "epoch_loss": trace.epoch_loss.tolist(),
        "final_train_loss": float(trace.epoch_loss[-1]) if trace.epoch_loss.size else None,
        "label_balance": trace.balance.to_dict(),
        "n_params": trace.network.n_params,
        "layers": [layer.kind for layer in trace.network.layers],
        "checkpoint": str(ckpt),
    }
    return payload, trace.wall_time


def run_estimate(cfg: RunConfig) -> dict:
    """Prior-averaged loss / gradient-norm statistics and per-label balance."""
    bundle = load_data(cfg)
    kind = LossKind.parse(cfg["train.loss"])
    net = build_model(cfg, bundle.train.dim, bundle.n_classes)
    inp = bound_input(cfg, bundle, lam=1.0, m=len(bundle.train))
    b, g = prior_loss_grad_stats(net, inp.prior_var, bundle.dist, inp, kind, cfg["bound.workers"])
    balance = prior_label_balance(net, inp.prior_var, bundle.dist, kind, inp.n_prior, inp.n_data, inp.seed)
    payload = {
        "prior_var": inp.prior_var,
        "n_params": net.n_params,
        "mean_loss": float(b.mean()),
        "max_loss": float(b.max()),
        "mean_grad_sq": float(g.mean()),
        "max_grad_sq": float(g.max()),
        "label_balance": balance.to_dict(),
        "label_balance_relative_std": balance.relative_std,
        "sigma_y_source": bundle.sigma_y_source,
    }
    if cfg["model.checkpoint"]:
        trained, _ = trained_model(cfg, bundle)
        losses = loss(trained, bundle.train.X, bundle.train.y, kind)
        payload["checkpoint_train_loss"] = float(losses.mean())
    return payload


@dataclass(frozen=True)
class _Shared:
    """Quantities computed once and shared by every report of a run."""

    bundle: DataBundle
    inp: BoundInput
    center: Network
    prior: DiagonalGaussian
    posterior: DiagonalGaussian
    kl: float
    train_risk: float
    true_risk: float
    kind: LossKind
    trace: TrainTrace | None


def _shared(cfg: RunConfig) -> _Shared:
    bundle = load_data(cfg)
    kind = LossKind.parse(cfg["train.loss"])
    inp = bound_input(cfg, bundle)
    check_lambda(inp.lam, inp.m, cfg["bound.theorem"])
    center, trace = trained_model(cfg, bundle)
    prior = DiagonalGaussian.isotropic(center.n_params, inp.prior_var)
    posterior = posterior_around(center, inp.prior_var, cfg["bound.posterior_var_ratio"])
    kl = kl_diag_gaussian(posterior, prior)
    risks = expected_risks(
        center, posterior, bundle.train, bundle.dist, bundle.test, inp.n_posterior, inp.n_data, inp.seed, kind
    )
    return _Shared(bundle, inp, center, prior, posterior, kl, risks.train_risk, risks.true_risk, kind, trace)


def _common_meta(cfg: RunConfig, s: _Shared) -> dict:
    meta = {
        "seed": cfg["seed"],
        "true_risk_estimate": s.true_risk,
        "true_risk_source": "held-out set" if s.bundle.test is not None else "fitted mixture",
        "data_source": s.bundle.source,
        "sigma_y_source": s.bundle.sigma_y_source,
        "posterior_var": float(s.posterior.variance[0]),
        "n_params": s.center.n_params,
    }
    if s.trace is not None:
        meta["label_balance"] = s.trace.balance.to_dict()
        meta["final_train_loss"] = float(s.trace.epoch_loss[-1]) if s.trace.epoch_loss.size else None
    return meta


def _theorem_report(cfg: RunConfig, s: _Shared, theorem: str) -> BoundReport:
    inp = s.inp
    meta = _common_meta(cfg, s)
    if theorem == "linear":
        if len(s.center.layers) != 1 or s.center.layers[0].kind != "dense" or s.center.layers[0].bias:
            raise ConfigError("the linear bound needs model.arch = linear")
        lam_max = _linear_lambda_max(cfg, s.bundle, inp.m)
        meta["lambda_max"] = lam_max
        if inp.lam > lam_max:
            raise ConstraintViolation(f"lambda = {inp.lam:g} exceeds the linear-model cap {lam_max:g}")
        complexity = linear_complexity(s.bundle.n_classes, s.bundle.train.dim)
    elif theorem == "onaverage":
        if inp.b is None or inp.g is None:
            # estimate b and g as the worst prior draw; g already carries sigma_y
            b, g = prior_loss_grad_stats(s.center, s.prior, s.bundle.dist, inp, s.kind, cfg["bound.workers"])
            est = BoundInput(**{**inp.settings(), "b": float(b.max()), "g": float(g.max()), "sigma_y": 1.0})
            meta["b_g_source"] = "max over prior draws"
            complexity = global_onaverage_complexity(est)
            meta.update(b=est.b, g=est.g)
        else:
            meta["b_g_source"] = "config"
            complexity = global_onaverage_complexity(inp)
    else:
        b, g = prior_loss_grad_stats(s.center, s.prior, s.bundle.dist, inp, s.kind, cfg["bound.workers"])
        pc = complexity_from_stats(b, g, inp.lam, inp.m)
        meta.update(pc.metadata())
        complexity = pc.value
    return assemble_bound(s.train_risk, complexity, s.kl, inp, theorem, meta)


def run_bound(cfg: RunConfig) -> BoundReport:
    return _theorem_report(cfg, _shared(cfg), cfg["bound.theorem"])


def run_compare(cfg: RunConfig) -> tuple[BoundReport, BoundReport]:
    """Our bound and the bounded-loss baseline, sharing risk and KL estimates."""
    s = _shared(cfg)
    ours = _theorem_report(cfg, s, cfg["bound.theorem"])
    losses = loss(s.center, s.bundle.train.X, s.bundle.train.y, s.kind)
    B = float(losses.max() if cfg["bound.baseline_B"] == "max" else losses.mean())
    meta = _common_meta(cfg, s)
    meta.update(B=B, B_rule=f"{cfg['bound.baseline_B']} train loss at the posterior mean")
    base = assemble_bound(s.train_risk, baseline_bounded_complexity(B, s.inp.lam, s.inp.m), s.kl, s.inp, "baseline", meta)
    return ours, base


# ---- sweeps -----------------------------------------------------------------


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _depths(cfg: RunConfig) -> list[int]:
    depths = parse_list(cfg["sweep.depths"], int)
    if not depths:
        raise ConfigError("sweep.depths is empty")
    return depths


def lambda_table(cfg: RunConfig, bundle: DataBundle, depths=None) -> list[dict]:
    """Prior-expectation complexity against lambda, one block of rows per depth.

    The per-draw statistics do not depend on lambda, so they are computed once
    per depth and every lambda reuses them.
    """
    m = len(bundle.train)
    kind = LossKind.parse(cfg["train.loss"])
    lams = [resolve_lambda(t, m) for t in cfg["sweep.lambdas"].split(",") if t.strip()]
    if not lams:
        raise ConfigError("sweep.lambdas is empty")
    inp = bound_input(cfg, bundle, lam=1.0, m=m)
    log_inv_delta = -math.log(inp.delta)
    depths = depths if depths is not None else [cfg["model.depth"]]

    def one(depth):
        net = build_model(cfg, bundle.train.dim, bundle.n_classes, depth)
        b, g = prior_loss_grad_stats(net, inp.prior_var, bundle.dist, inp, kind)
        rows = []
        for lam in lams:
            c = complexity_from_stats(b, g, lam, m).value
            rows.append(
                {
                    "depth": depth,
                    "lambda": lam,
                    "complexity": c,
                    "complexity_over_lambda": c / lam,
                    "bound_term": (c + log_inv_delta) / lam,
                }
            )
        return rows

    return [row for block in _map(one, depths, cfg["bound.workers"]) for row in block]


def depth_table(cfg: RunConfig, bundle: DataBundle) -> tuple[list[dict], bool]:
    m = len(bundle.train)
    inp = bound_input(cfg, bundle, lam=resolve_lambda(cfg["bound.lambda"], m), m=m)
    rows, monotone = depth_sweep_complexity(
        _depths(cfg),
        bundle.dist,
        inp,
        LossKind.parse(cfg["train.loss"]),
        build=lambda depth: build_model(cfg, bundle.train.dim, bundle.n_classes, depth),
        workers=cfg["bound.workers"],
    )
    table = [{"depth": r.depth, "lambda": inp.lam, "complexity": r.complexity, "n_params": r.n_params} for r in rows]
    return table, monotone


def prior_table(cfg: RunConfig, bundle: DataBundle, depths=None) -> list[dict]:
    prior_vars = parse_list(cfg["sweep.prior_vars"], float)
    if not prior_vars:
        raise ConfigError("sweep.prior_vars is empty")
    depths = depths if depths is not None else [cfg["model.depth"]]
    kind = LossKind.parse(cfg["train.loss"])

    def one(depth):
        net = build_model(cfg, bundle.train.dim, bundle.n_classes, depth)
        rows = prior_sweep_stats(net, prior_vars, bundle.dist, kind, cfg["bound.n_prior"], cfg["bound.n_data"], cfg["seed"])
        return [{"depth": depth, "prior_var": r.prior_var, "mean_loss": r.mean_loss, "mean_grad_sq": r.mean_grad_sq} for r in rows]

    return [row for block in _map(one, depths, cfg["bound.workers"]) for row in block]


def run_sweep(cfg: RunConfig, out) -> tuple[list[dict], dict]:
    """Rows for the configured sweep plus a summary (written files, trend flags)."""
    kind = cfg["sweep.kind"]
    if kind == "figures":
        return reproduce_figures(cfg, out)
    bundle = load_data(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"kind": kind}
    if kind == "lambda":
        rows = lambda_table(cfg, bundle)
    elif kind == "depth":
        rows, summary["non_increasing"] = depth_table(cfg, bundle)
    else:
        rows = prior_table(cfg, bundle)
    summary["table"] = str(write_table(rows, out / f"sweep_{kind}.csv"))
    return rows, summary


def reproduce_figures(cfg: RunConfig, out) -> tuple[list[dict], dict]:
    """Write the four figure tables (and, if ``sweep.plot``, a PNG beside each)."""
    bundle = load_data(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    depths = _depths(cfg)
    prior_rows = prior_table(cfg, bundle, depths)
    lam_rows = lambda_table(cfg, bundle, depths)
    depth_rows, monotone = depth_table(cfg, bundle)
    tables = {
        "fig1_loss": [{k: r[k] for k in ("depth", "prior_var", "mean_loss")} for r in prior_rows],
        "fig1_grad": [{k: r[k] for k in ("depth", "prior_var", "mean_grad_sq")} for r in prior_rows],
        "fig2_lambda": lam_rows,
        "fig2_depth": depth_rows,
    }
    files = {}
    for name, rows in tables.items():
        files[name] = str(write_table(rows, out / f"{name}.csv"))
    if cfg["sweep.plot"]:
        from .plotting import plot_tables

        files.update(plot_tables(tables, out))
    rows = [{"table": name, **row} for name, rows in tables.items() for row in rows]
    return rows, {"kind": "figures", "files": files, "depth_non_increasing": monotone}


def check_lambda(lam: float, m: int, theorem: str) -> None:
    """Fail before any training when lambda violates the theorem's range."""
    if theorem in ("onaverage", "perw") and lam > m:
        raise ConstraintViolation(f"lambda = {lam:g} exceeds m = {m}; the on-average bounds need 0 < lambda <= m")
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
