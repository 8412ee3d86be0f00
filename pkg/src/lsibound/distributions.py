"""Diagonal Gaussians, labeled Gaussian mixtures, sampling and KL divergence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from . import rng
from .errors import InsufficientDataError, InvalidInputError

MARGINAL_TOL = 1e-12
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DiagonalGaussian:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.ndim != 1 or var.shape != mean.shape:
            raise InvalidInputError(
                f"mean and variance must be vectors of equal length, got {mean.shape} and {var.shape}"
            )
        if np.any(var < 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mean)):
            raise InvalidInputError("variance must be finite and non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @classmethod
    def isotropic(cls, dim: int, variance: float, mean: float = 0.0) -> "DiagonalGaussian":
        return cls(np.full(dim, float(mean)), np.full(dim, float(variance)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class LabeledMixture:
    """``D = sum_y D_y N_y``: label marginals plus one diagonal Gaussian per label."""

    label_marginals: np.ndarray
    components: tuple

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.label_marginals, dtype=float))
        comps = tuple(self.components)
        if len(comps) == 0 or p.size == 0:
            raise InvalidInputError("mixture must have at least one component")
        if p.shape != (len(comps),):
            raise InvalidInputError(f"{p.size} marginals for {len(comps)} components")
        if np.any(p < 0) or abs(p.sum() - 1.0) > MARGINAL_TOL:
            raise InvalidInputError(
                f"label marginals must be non-negative and sum to 1 within {MARGINAL_TOL}; sum={p.sum()!r}"
            )
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise InvalidInputError(f"components have differing dimensions {sorted(dims)}")
        object.__setattr__(self, "label_marginals", p)
        object.__setattr__(self, "components", comps)

    @property
    def n_classes(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def stds(self) -> np.ndarray:
        """``(k, d)`` per-label per-dimension standard deviations."""
        return np.stack([c.std for c in self.components])

    def is_point_mass(self) -> bool:
        return all(np.all(c.variance == 0) for c in self.components)


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Dataset:
    """A batch of samples stored column-wise: ``X`` is ``(n, d)``, ``y`` is ``(n,)``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise InvalidInputError(f"incompatible shapes X{X.shape}, y{y.shape}")
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
            raise InvalidInputError("labels must be non-negative integers")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64, copy=False))

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for x, y in zip(self.X, self.y):
            yield Sample(x, int(y))

    def __getitem__(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            raise InvalidInputError("no samples")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]))


def sample_gaussian(g: DiagonalGaussian, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. vectors from ``g``; returns an ``(n, d)`` array."""
    if g.dim == 0:
        raise InvalidInputError("zero-dimensional Gaussian")
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    z = rng.chunked_standard_normal(seed, "gaussian", n, g.dim)
    return g.mean + g.std * z


def sample_labels(marginals: np.ndarray, n: int, seed: int) -> np.ndarray:
    cum = np.cumsum(marginals)
    cum[-1] = 1.0
    u = rng.chunked_uniform(seed, "labels", n)
    return np.searchsorted(cum, u, side="right").astype(np.int64)


def sample_mixture(m: LabeledMixture, n: int, seed: int) -> Dataset:
    """Label from the marginals, then ``x`` from that label's component."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    y = sample_labels(m.label_marginals, n, seed)
    z = rng.chunked_standard_normal(seed, "mixture-x", n, m.dim)
    X = m.means[y] + m.stds[y] * z
    return Dataset(X, y)


def sample_component(m: LabeledMixture, label: int, n: int, seed: int) -> np.ndarray:
    """``n`` draws from the component of one label (stratified sampling)."""
    z = rng.chunked_standard_normal(seed, f"component-{label}", n, m.dim)
    c = m.components[label]
    return c.mean + c.std * z


def kl_diag_gaussian(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """KL(q || p) for diagonal Gaussians, in nats."""
    if q.dim != p.dim:
        raise InvalidInputError(f"dimension mismatch {q.dim} vs {p.dim}")
    if np.any(p.variance <= 0):
        raise InvalidInputError("prior variance must be strictly positive; KL is infinite otherwise")
    if np.any(q.variance <= 0):
        raise InvalidInputError("posterior variance must be strictly positive")
    ratio = q.variance / p.variance
    terms = 0.5 * (-np.log(ratio) + ratio + (q.mean - p.mean) ** 2 / p.variance - 1.0)
    return float(max(np.sum(terms), 0.0))


class LabelStats(NamedTuple):
    mean: np.ndarray
    std: np.ndarray
    count: int


def empirical_label_stats(data: Dataset, k: int, floor: float = STD_FLOOR) -> list[LabelStats]:
    """Per-label mean and (n-1)-divisor standard deviation, floored at ``floor``."""
    out = []
    for label in range(k):
        Xy = data.X[data.y == label]
        if Xy.shape[0] < 2:
            raise InsufficientDataError(
                f"label {label} has {Xy.shape[0]} samples; need at least 2", label=label
            )
        std = np.maximum(Xy.std(axis=0, ddof=1), floor)
        out.append(LabelStats(Xy.mean(axis=0), std, Xy.shape[0]))
    return out


def make_synthetic_mixture(
    k: int,
    d: int,
    separation: float = 3.0,
    std: float = 1.0,
    marginals: Sequence[float] | None = None,
    seed: int = 0,
) -> LabeledMixture:
    """A k-class mixture with isotropic components.

    When ``d >= k`` the means are ``separation * e_y``, so the mixture is
    symmetric under relabeling (together with the matching coordinate
    permutation). Otherwise means are drawn i.i.d. ``N(0, separation^2)``.
    """
    if k < 1 or d < 1:
        raise InvalidInputError("k and d must be >= 1")
    if d >= k:
        means = separation * np.eye(k, d)
    else:
        means = separation * rng.generator(seed, "mixture-means").standard_normal((k, d))
    p = np.full(k, 1.0 / k) if marginals is None else np.asarray(marginals, dtype=float)
    comps = tuple(DiagonalGaussian(mu, np.full(d, std**2)) for mu in means)
    return LabeledMixture(p, comps)


def _fmt(v: np.ndarray) -> str:
    return ",".join(repr(float(a)) for a in np.atleast_1d(v))


def mixture_to_config(m: LabeledMixture, prefix: str = "data.mixture") -> dict[str, str]:
    out = {f"{prefix}.marginals": _fmt(m.label_marginals)}
    for i, c in enumerate(m.components):
        out[f"{prefix}.mean.{i}"] = _fmt(c.mean)
        out[f"{prefix}.var.{i}"] = _fmt(c.variance)
    return out


def mixture_from_config(cfg: Mapping[str, str], prefix: str = "data.mixture") -> LabeledMixture:
    try:
        marg = [float(v) for v in cfg[f"{prefix}.marginals"].split(",")]
        comps = []
        for i in range(len(marg)):
            mean = [float(v) for v in cfg[f"{prefix}.mean.{i}"].split(",")]
            var = [float(v) for v in cfg[f"{prefix}.var.{i}"].split(",")]
            comps.append(DiagonalGaussian(mean, var))
    except KeyError as exc:
        raise InvalidInputError(f"mixture config missing key {exc.args[0]}") from None
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"bad mixture value: {exc}") from None
    return LabeledMixture(np.array(marg), tuple(comps))
