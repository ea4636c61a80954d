"""Finite-sum objectives with per-example gradient oracles.

Three problem kinds are provided:

* ``quadratic``: ``l(x, c) = 0.5 * ||x - c||^2``.  Smoothness is exactly 1 and
  the minimiser is the mean of the centres.
* ``sigreg``: sigmoid regression ``l(x, (a, b)) = (sigmoid(a.x) - b)^2``.  Smooth,
  non-convex, with analytic gradient and smoothness bounds.
* ``mlp``: a one-hidden-layer tanh network with softmax cross-entropy and an
  L2 penalty on the weight matrices.

Datasets carry the generator that produced them so that fresh examples from
the same distribution (test sets, neighbouring datasets) can be drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .seeding import derive_seed

KINDS = ("quadratic", "sigreg", "mlp")

DEFAULT_R = 5.0
LABEL_NOISE = 0.1
WEIGHT_DECAY = 0.0005


def _clamp_norms(features: np.ndarray, R: float) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1)
    scale = np.minimum(1.0, R / np.maximum(norms, 1e-300))
    return features * scale[:, None]


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticSource:
    d: int
    R: float = DEFAULT_R

    kind = "quadratic"

    def draw(self, rng: np.random.Generator, count: int):
        centers = _clamp_norms(rng.normal(size=(count, self.d)), self.R)
        return centers, np.zeros(count)


@dataclass(frozen=True)
class SigmoidSource:
    """Two Gaussian clusters at ``+-m`` along the all-ones direction, 10% label flips."""

    d: int
    R: float = DEFAULT_R
    separation: float = 1.0
    spread: float = 0.5
    label_noise: float = LABEL_NOISE

    kind = "sigreg"

    def draw(self, rng: np.random.Generator, count: int):
        y = rng.integers(0, 2, size=count)
        direction = np.ones(self.d) / math.sqrt(self.d)
        means = np.where(y[:, None] == 1, 1.0, -1.0) * self.separation * direction
        a = _clamp_norms(means + self.spread * rng.normal(size=(count, self.d)), self.R)
        flip = rng.random(count) < self.label_noise
        b = np.where(flip, 1 - y, y).astype(np.float64)
        return a, b


@dataclass(frozen=True)
class BlobSource:
    """Isotropic Gaussian blobs around class centres fixed by ``center_seed``."""

    d: int
    classes: int
    center_seed: int
    R: float = DEFAULT_R
    center_scale: float = 1.5
    spread: float = 1.0

    kind = "mlp"

    @property
    def centers(self) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.center_seed, "blob-centers"))
        return self.center_scale * rng.normal(size=(self.classes, self.d))

    def draw(self, rng: np.random.Generator, count: int):
        y = rng.integers(0, self.classes, size=count)
        a = self.centers[y] + self.spread * rng.normal(size=(count, self.d))
        return _clamp_norms(a, self.R), y.astype(np.int64)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    seed: int
    R: float
    kind: str
    source: Optional[object] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.n < 2:
            raise ValueError("a dataset needs at least two examples")
        if self.labels.shape[0] != self.n:
            raise ValueError("labels and features disagree on n")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.R == other.R
            and self.kind == other.kind
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def with_example(self, j: int, feature, label) -> "Dataset":
        features = self.features.copy()
        labels = self.labels.copy()
        features[j] = feature
        labels[j] = label
        return Dataset(features, labels, self.seed, self.R, self.kind, self.source)

    def to_text(self) -> str:
        lines = [f"{self.n} {self.d} {self.seed} {self.R!r} {self.kind}"]
        for a, b in zip(self.features, self.labels):
            lab = str(int(b)) if self.kind == "mlp" else repr(float(b))
            lines.append(" ".join(repr(float(v)) for v in a) + " " + lab)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        rows = text.splitlines()
        try:
            n_s, d_s, seed_s, R_s, kind = rows[0].split()
            n, d, seed, R = int(n_s), int(d_s), int(seed_s), float(R_s)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line 1: malformed header {rows[0] if rows else ''!r}") from exc
        if kind not in KINDS:
            raise ValueError(f"line 1: unknown kind {kind!r}")
        body = [r for r in rows[1:] if r.strip()]
        if len(body) != n:
            raise ValueError(f"header says n={n} but found {len(body)} examples")
        features = np.empty((n, d))
        labels = np.empty(n, dtype=np.int64 if kind == "mlp" else np.float64)
        for i, row in enumerate(body):
            parts = row.split()
            if len(parts) != d + 1:
                raise ValueError(f"line {i + 2}: expected {d + 1} fields, got {len(parts)}")
            features[i] = [float(p) for p in parts[:d]]
            labels[i] = int(parts[d]) if kind == "mlp" else float(parts[d])
        if kind == "quadratic":
            source = QuadraticSource(d, R)
        elif kind == "sigreg":
            source = SigmoidSource(d, R)
        else:
            source = BlobSource(d, int(labels.max()) + 1, seed, R)
        return cls(features, labels, seed, R, kind, source)

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_text(Path(path).read_text())


def generate_dataset(source, n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(derive_seed(seed, "dataset"))
    features, labels = source.draw(rng, n)
    return Dataset(features, labels, seed, source.R, source.kind, source)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    L: Optional[float]
    G: Optional[float]
    sigma2: Optional[float]
    f_lower: float
    L_is_analytic: bool = False


@dataclass(frozen=True)
class GradientSample:
    index: int
    grad: np.ndarray
    k: int


class IndexStream:
    """Uniform indices in ``[0, n)``, with replacement, drawn in blocks."""

    block = 4096

    def __init__(self, n: int, seed: int):
        self.n = n
        self._rng = np.random.default_rng(seed)
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> int:
        if self._pos == self._buf.shape[0]:
            self._buf = self._rng.integers(0, self.n, size=self.block)
            self._pos = 0
        i = int(self._buf[self._pos])
        self._pos += 1
        return i

    def take(self, count: int) -> np.ndarray:
        return np.array([self.next() for _ in range(count)], dtype=np.int64)


class StochasticProblem:
    """Base class: ``f(x) = mean_i l(x, q_i)`` over a :class:`Dataset`."""

    kind = "abstract"

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def dim(self) -> int:
        raise NotImplementedError

    # subclasses implement the three oracles below
    def example_losses(self, x, features=None, labels=None) -> np.ndarray:
        raise NotImplementedError

    def example_grad(self, x, i: int) -> np.ndarray:
        raise NotImplementedError

    def example_grads(self, x) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x) -> float:
        return float(np.mean(self.example_losses(x)))

    def full_grad(self, x) -> np.ndarray:
        return self.example_grads(x).mean(axis=0)

    def point_variance(self, x) -> float:
        """Exact ``E_i ||grad_i(x) - grad f(x)||^2`` by enumerating all examples."""
        g = self.example_grads(x)
        return float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))

    def sample_gradient(self, x, stream: IndexStream, k: int) -> GradientSample:
        i = stream.next()
        return GradientSample(i, self.example_grad(x, i), k)

    def error(self, x, features=None, labels=None) -> Optional[float]:
        """0/1 error on the given examples; ``None`` when not a classifier."""
        return None

    def initial_point(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.dim)

    def with_dataset(self, dataset: Dataset) -> "StochasticProblem":
        return type(self)(dataset)

    @property
    def constants(self) -> Constants:
        return Constants(L=None, G=None, sigma2=None, f_lower=0.0)


class QuadraticProblem(StochasticProblem):
    kind = "quadratic"

    @property
    def dim(self) -> int:
        return self.dataset.d

    @property
    def minimizer(self) -> np.ndarray:
        return self.dataset.features.mean(axis=0)

    @property
    def f_star(self) -> float:
        c = self.dataset.features
        return 0.5 * float(np.mean(np.sum((c - c.mean(axis=0)) ** 2, axis=1)))

    def example_losses(self, x, features=None, labels=None):
        c = self.dataset.features if features is None else features
        return 0.5 * np.sum((np.asarray(x) - c) ** 2, axis=1)

    def example_grad(self, x, i):
        return np.asarray(x, dtype=np.float64) - self.dataset.features[i]

    def example_grads(self, x):
        return np.asarray(x, dtype=np.float64)[None, :] - self.dataset.features

    def full_grad(self, x):
        return np.asarray(x, dtype=np.float64) - self.minimizer

    @property
    def constants(self):
        # the per-point variance does not depend on x
        return Constants(L=1.0, G=None, sigma2=2.0 * self.f_star, f_lower=self.f_star, L_is_analytic=True)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sigmoid_loss_curvature() -> float:
    """``max_z |d^2/dz^2 (sigmoid(z) - b)^2|`` for ``b`` in {0, 1}.

    With ``u = sigmoid(z)`` and ``b = 0`` the second derivative is
    ``2 u^2 (1-u)(2-3u)``; its stationary points solve ``12u^2 - 15u + 4 = 0``.
    The ``b = 1`` case is the mirror image.
    """
    roots = [(15 - math.sqrt(33)) / 24, (15 + math.sqrt(33)) / 24]
    return max(abs(2 * u * u * (1 - u) * (2 - 3 * u)) for u in roots)


class SigmoidRegression(StochasticProblem):
    kind = "sigreg"

    @property
    def dim(self) -> int:
        return self.dataset.d

    def example_losses(self, x, features=None, labels=None):
        a = self.dataset.features if features is None else features
        b = self.dataset.labels if labels is None else labels
        return (_sigmoid(a @ np.asarray(x)) - b) ** 2

    def example_grad(self, x, i):
        a = self.dataset.features[i]
        u = _sigmoid_scalar(float(a @ x))
        return (2.0 * (u - self.dataset.labels[i]) * u * (1.0 - u)) * a

    def example_grads(self, x):
        a = self.dataset.features
        u = _sigmoid(a @ np.asarray(x, dtype=np.float64))
        coef = 2.0 * (u - self.dataset.labels) * u * (1.0 - u)
        return coef[:, None] * a

    def full_grad(self, x):
        a = self.dataset.features
        u = _sigmoid(a @ np.asarray(x, dtype=np.float64))
        coef = 2.0 * (u - self.dataset.labels) * u * (1.0 - u)
        return (coef @ a) / self.n

    def error(self, x, features=None, labels=None):
        a = self.dataset.features if features is None else features
        b = self.dataset.labels if labels is None else labels
        pred = (a @ np.asarray(x)) > 0
        return float(np.mean(pred != (b > 0.5)))

    @property
    def G_analytic(self) -> float:
        # |2(u - b) u (1 - u)| <= 2 * 1 * 1/4
        return 0.5 * self.dataset.R

    @property
    def L_analytic(self) -> float:
        return sigmoid_loss_curvature() * self.dataset.R**2

    @property
    def constants(self):
        G = self.G_analytic
        # Var_i g_i <= E_i ||g_i||^2 <= G^2 everywhere
        return Constants(L=self.L_analytic, G=G, sigma2=G * G, f_lower=0.0, L_is_analytic=True)


class TinyMLP(StochasticProblem):
    """Parameters are packed as ``[W1 (h, d), b1 (h), W2 (c, h), b2 (c)]``, row-major."""

    kind = "mlp"

    def __init__(self, dataset: Dataset, hidden: int = 16, classes: Optional[int] = None,
                 weight_decay: float = WEIGHT_DECAY):
        super().__init__(dataset)
        if classes is None:
            classes = dataset.source.classes if dataset.source is not None else int(dataset.labels.max()) + 1
        if not 1 <= hidden <= 64:
            raise ValueError(f"hidden must be in [1, 64], got {hidden}")
        if not 2 <= classes <= 10:
            raise ValueError(f"classes must be in [2, 10], got {classes}")
        if dataset.n > 10_000:
            raise ValueError("at most 10^4 examples")
        if dataset.labels.min() < 0 or dataset.labels.max() >= classes:
            raise ValueError("labels out of range for the configured number of classes")
        self.hidden = hidden
        self.classes = classes
        self.weight_decay = weight_decay
        d, h, c = dataset.d, hidden, classes
        self._shapes = [(h, d), (h,), (c, h), (c,)]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        self._onehot = np.eye(c)[dataset.labels]

    def with_dataset(self, dataset):
        return TinyMLP(dataset, self.hidden, self.classes, self.weight_decay)

    @property
    def dim(self) -> int:
        return sum(self._sizes)

    def unpack(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        out, pos = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            out.append(x[pos:pos + size].reshape(shape))
            pos += size
        return out

    def _forward(self, x, a):
        W1, b1, W2, b2 = self.unpack(x)
        H = np.tanh(a @ W1.T + b1)
        Z = H @ W2.T + b2
        Z = Z - Z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(Z).sum(axis=1))
        return H, Z, logsum

    def _penalty(self, x) -> float:
        W1, _, W2, _ = self.unpack(x)
        return 0.5 * self.weight_decay * (np.sum(W1 * W1) + np.sum(W2 * W2))

    def example_losses(self, x, features=None, labels=None):
        a = self.dataset.features if features is None else features
        y = self.dataset.labels if labels is None else labels
        _, Z, logsum = self._forward(x, a)
        ce = logsum - Z[np.arange(a.shape[0]), y]
        return ce + self._penalty(x)

    def _grads(self, x, a, onehot, per_example: bool):
        W1, b1, W2, b2 = self.unpack(x)
        H, Z, logsum = self._forward(x, a)
        P = np.exp(Z - logsum[:, None])
        dZ = P - onehot
        dpre = (dZ @ W2) * (1.0 - H * H)
        lam = self.weight_decay
        if per_example:
            m = a.shape[0]
            gW1 = dpre[:, :, None] * a[:, None, :] + lam * W1
            gW2 = dZ[:, :, None] * H[:, None, :] + lam * W2
            return np.concatenate(
                [gW1.reshape(m, -1), dpre, gW2.reshape(m, -1), dZ], axis=1
            )
        m = a.shape[0]
        gW1 = dpre.T @ a / m + lam * W1
        gW2 = dZ.T @ H / m + lam * W2
        return np.concatenate([gW1.ravel(), dpre.mean(axis=0), gW2.ravel(), dZ.mean(axis=0)])

    def example_grad(self, x, i):
        a = self.dataset.features[i:i + 1]
        return self._grads(x, a, self._onehot[i:i + 1], per_example=True)[0]

    def example_grads(self, x):
        return self._grads(x, self.dataset.features, self._onehot, per_example=True)

    def full_grad(self, x):
        return self._grads(x, self.dataset.features, self._onehot, per_example=False)

    def error(self, x, features=None, labels=None):
        a = self.dataset.features if features is None else features
        y = self.dataset.labels if labels is None else labels
        _, Z, _ = self._forward(x, a)
        return float(np.mean(np.argmax(Z, axis=1) != y))

    def initial_point(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(seed, "mlp-init"))
        d, h, c = self.dataset.d, self.hidden, self.classes
        W1 = rng.normal(size=(h, d)) / math.sqrt(d)
        W2 = rng.normal(size=(c, h)) / math.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(c)])


PROBLEM_TYPES = {"quadratic": QuadraticProblem, "sigreg": SigmoidRegression, "mlp": TinyMLP}


def make_quadratic(d: int, seed: int, n: int = 100, R: float = DEFAULT_R) -> QuadraticProblem:
    if d < 1:
        raise ValueError("d must be >= 1")
    return QuadraticProblem(generate_dataset(QuadraticSource(d, R), n, seed))


def quadratic_from_centers(centers, seed: int = 0, R: float = DEFAULT_R) -> QuadraticProblem:
    c = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    return QuadraticProblem(Dataset(c, np.zeros(c.shape[0]), seed, R, "quadratic", QuadraticSource(c.shape[1], R)))


def make_sigmoid_regression(n: int, d: int, seed: int, R: float = DEFAULT_R) -> SigmoidRegression:
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    return SigmoidRegression(generate_dataset(SigmoidSource(d, R), n, seed))


def make_tiny_mlp(n: int, d_in: int, hidden: int, classes: int, seed: int,
                  R: float = DEFAULT_R) -> TinyMLP:
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    if not 2 <= classes <= 10:
        raise ValueError(f"classes must be in [2, 10], got {classes}")
    source = BlobSource(d_in, classes, seed, R)
    return TinyMLP(generate_dataset(source, n, seed), hidden=hidden, classes=classes)


def make_problem(kind: str, n: int, d: int, seed: int, hidden: int = 16, classes: int = 3):
    if kind == "quadratic":
        return make_quadratic(d, seed, n=n)
    if kind == "sigreg":
        return make_sigmoid_regression(n, d, seed)
    if kind == "mlp":
        return make_tiny_mlp(n, d, hidden, classes, seed)
    raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")


def draw_test_set(problem: StochasticProblem, count: int, seed: int):
    """Fresh i.i.d. examples from the distribution behind ``problem.dataset``."""
    rng = np.random.default_rng(derive_seed(seed, "test-set"))
    return problem.dataset.source.draw(rng, count)


def estimate_constants(p: StochasticProblem, samples: int, seed: int, radius: float = 1.0,
                       center=None, points=None) -> Constants:
    """Empirical smoothness, gradient bound and variance over a region.

    Points are drawn from a Gaussian cloud of scale ``radius`` around
    ``center`` (the problem's initial point by default); any ``points`` given,
    such as iterates of a run, are included as well.  Analytic smoothness wins
    over the sampled estimate when the problem knows it.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if not radius > 0:
        raise ValueError("degenerate sampling region: radius must be > 0")
    rng = np.random.default_rng(derive_seed(seed, "estimate-constants"))
    c = p.initial_point(seed) if center is None else np.asarray(center, dtype=np.float64)
    xs = c + radius * rng.normal(size=(samples, p.dim)) / math.sqrt(p.dim)
    if points is not None:
        xs = np.vstack([xs, np.atleast_2d(np.asarray(points, dtype=np.float64))])
    G = 0.0
    var = 0.0
    for x in xs:
        g = p.example_grads(x)
        gbar = g.mean(axis=0)
        G = max(G, float(np.linalg.norm(gbar)))
        var = max(var, float(np.mean(np.sum((g - gbar) ** 2, axis=1))))
    known = p.constants
    if known.L_is_analytic:
        L = known.L
    else:
        L = 0.0
        step = 1e-2 * radius
        for x in xs[:samples]:
            u = rng.normal(size=p.dim)
            y = x + step * u / np.linalg.norm(u)
            L = max(L, float(np.linalg.norm(p.full_grad(y) - p.full_grad(x)) / np.linalg.norm(y - x)))
    return Constants(L=L, G=G, sigma2=var, f_lower=known.f_lower, L_is_analytic=known.L_is_analytic)
