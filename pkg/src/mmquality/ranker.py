"""Siamese fusion ranker.

An item's score is a ReLU MLP applied to ``concat(text_embedding,
nextvlad(images))``. Both branches of a pair go through the same
:class:`RankerModel`, so there is exactly one parameter set. Pairs are
trained with the logistic cross-entropy on the score difference::

    o = sigma * (s_i - s_j)
    p = 1 / (1 + exp(-o))
    p_bar = (1 + x_ij) / 2
    c = -p_bar * o + log(1 + exp(o))
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nextvlad
from .core_math import (
    AdamState,
    ParamBlock,
    ShapeError,
    adam_step,
    relu,
    sgd_step,
    sigmoid,
)
from .dataset_io import ContentItem, truncate_images
from .labeling import PairSample
from .nextvlad import NeXtVLADConfig

OPTIMIZERS = ("adam", "sgd")


HIDDEN_BIAS_INIT = 0.01


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class RankerConfig:
    widths: tuple[int, ...] = (128, 32, 1)
    sigma: float = 1.0
    optimizer: str = "adam"
    lr: float = 1e-4
    lr_decay_factor: float = 1.0
    decay_every: int = 10_000
    total_iterations: int = 5000
    batch_pairs: int = 32
    seed: int = 7
    m_max: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self) -> None:
        if not self.widths or any(w < 1 for w in self.widths) or self.widths[-1] != 1:
            raise ValueError(f"widths must be positive and end in 1, got {self.widths}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not self.lr_decay_factor > 0:
            raise ValueError("lr_decay_factor must be positive")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")


def sgd_schedule_preset(**overrides) -> RankerConfig:
    """Plain SGD at 1e-5, multiplied by 0.08 every 10k of 50k iterations."""
    kw = dict(optimizer="sgd", lr=1e-5, lr_decay_factor=0.08, decay_every=10_000, total_iterations=50_000)
    kw.update(overrides)
    return RankerConfig(**kw)


# ---------------------------------------------------------------------------
# pair loss


def pair_prob(s_i: float, s_j: float, sigma: float = 1.0) -> float:
    """Modelled probability that item i ranks above item j."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(sigmoid(sigma * (s_i - s_j)))


@dataclass
class PairLossTerms:
    s_i: float
    s_j: float
    o: float
    p: float
    p_bar: float
    c: float
    grad_s_i: float
    grad_s_j: float


def pair_loss_arrays(s_i: np.ndarray, s_j: np.ndarray, x: np.ndarray, sigma: float = 1.0):
    """Vectorized pair loss; returns ``(o, p, p_bar, c, grad_s_i, grad_s_j)``."""
    o = sigma * (np.asarray(s_i, dtype=np.float64) - np.asarray(s_j, dtype=np.float64))
    p = sigmoid(o)
    p_bar = 0.5 * (1.0 + np.asarray(x, dtype=np.float64))
    c = -p_bar * o + np.logaddexp(0.0, o)
    g = sigma * (p - p_bar)
    return o, p, p_bar, c, g, -g


def pair_loss(s_i: float, s_j: float, x_ij: int, sigma: float = 1.0) -> PairLossTerms:
    if x_ij not in (-1, 0, 1):
        raise ValueError(f"x_ij must be -1, 0 or +1, got {x_ij!r}")
    o, p, p_bar, c, gi, gj = (float(v) for v in pair_loss_arrays(s_i, s_j, x_ij, sigma))
    return PairLossTerms(float(s_i), float(s_j), o, p, p_bar, c, gi, gj)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class PackedItems:
    ids: tuple[str, ...]
    text: np.ndarray    # (B, D_t)
    images: np.ndarray  # (B, m_max, D_v)
    mask: np.ndarray    # (B, m_max)

    def take(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.text[rows], self.images[rows], self.mask[rows]


class RankerModel:
    """Scoring network with a single shared :class:`ParamBlock`.

    Slots are ``nextvlad.*`` followed by ``head.L{i}.W`` / ``head.L{i}.b``.
    """

    def __init__(self, d_text: int, vlad: NeXtVLADConfig, widths: Sequence[int] = (128, 32, 1),
                 m_max: int = 4, params: ParamBlock | None = None, seed: int = 0):
        self.d_text = int(d_text)
        self.vlad = vlad
        self.widths = tuple(int(w) for w in widths)
        self.m_max = int(m_max)
        if not self.widths or self.widths[-1] != 1:
            raise ValueError("head widths must end in 1")
        shapes = nextvlad.param_shapes(vlad)
        fan_in = self.fused_dim
        for i, w in enumerate(self.widths):
            shapes[f"head.L{i}.W"] = (w, fan_in)
            shapes[f"head.L{i}.b"] = (w,)
            fan_in = w
        if params is not None and params.shapes() != shapes:
            raise ShapeError("checkpoint slots do not match the model architecture")
        self.params = params if params is not None else ParamBlock(shapes)
        if params is None:
            self._init(np.random.default_rng(seed))

    @property
    def fused_dim(self) -> int:
        return self.d_text + self.vlad.output_dim

    @property
    def d_image(self) -> int:
        return self.vlad.input_dim

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    def _init(self, rng: np.random.Generator) -> None:
        nextvlad.init_params(self.params, self.vlad, rng)
        for i in range(self.n_layers):
            W = self.params[f"head.L{i}.W"]
            W[:] = rng.normal(0.0, math.sqrt(2.0 / W.shape[1]), W.shape)
            # A small positive bias keeps hidden ReLU units off the kink at
            # zero when every unit of the previous layer is inactive.
            self.params[f"head.L{i}.b"][:] = HIDDEN_BIAS_INIT if i < self.n_layers - 1 else 0.0
        self.params.version += 1

    # -- serialization -----------------------------------------------------

    def spec(self) -> dict:
        return {
            "d_text": self.d_text,
            "vlad": asdict(self.vlad),
            "widths": list(self.widths),
            "m_max": self.m_max,
        }

    @classmethod
    def from_spec(cls, spec: dict, params: ParamBlock | None = None, seed: int = 0) -> "RankerModel":
        return cls(spec["d_text"], NeXtVLADConfig(**spec["vlad"]), spec["widths"], spec["m_max"],
                   params=params, seed=seed)

    @classmethod
    def build(cls, d_text: int, d_image: int, config: RankerConfig, expansion: int = 2, groups: int = 4,
              clusters: int = 8, normalize: bool = True) -> "RankerModel":
        vlad = NeXtVLADConfig(d_image, expansion, groups, clusters, normalize)
        return cls(d_text, vlad, config.widths, config.m_max, seed=config.seed)

    # -- forward / backward ------------------------------------------------

    def pack(self, items: Sequence[ContentItem]) -> PackedItems:
        B = len(items)
        text = np.zeros((B, self.d_text))
        images = np.zeros((B, self.m_max, self.d_image))
        mask = np.zeros((B, self.m_max))
        for b, item in enumerate(items):
            if item.text_embedding.shape != (self.d_text,):
                raise ShapeError(
                    f"item {item.id!r}: text_embedding has shape {item.text_embedding.shape}, "
                    f"expected ({self.d_text},)"
                )
            text[b] = item.text_embedding
            for i, v in enumerate(truncate_images(item, self.m_max).image_embeddings):
                if v.shape != (self.d_image,):
                    raise ShapeError(
                        f"item {item.id!r}: image {i} has shape {v.shape}, expected ({self.d_image},)"
                    )
                images[b, i] = v
                mask[b, i] = 1.0
        return PackedItems(tuple(it.id for it in items), text, images, mask)

    def forward(self, text: np.ndarray, images: np.ndarray, mask: np.ndarray):
        """Scores ``(B,)`` and a cache for :meth:`backward`."""
        desc, vcache = nextvlad.forward_batch(images, mask, self.params, self.vlad)
        h = np.concatenate([text, desc], axis=1)
        acts = [h]
        pre = []
        for i in range(self.n_layers):
            z = h @ self.params[f"head.L{i}.W"].T + self.params[f"head.L{i}.b"]
            pre.append(z)
            h = relu(z) if i < self.n_layers - 1 else z
            acts.append(h)
        return h[:, 0], (vcache, acts, pre, self.params.version)

    def backward(self, grad_scores: np.ndarray, cache, grads: ParamBlock) -> None:
        """Accumulate parameter gradients of ``sum(grad_scores * scores)`` into ``grads``."""
        vcache, acts, pre, version = cache
        if version != self.params.version:
            raise ValueError("stale forward cache: parameters changed since the forward pass")
        g = np.asarray(grad_scores, dtype=np.float64)[:, None]
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = np.where(pre[i] > 0.0, g, 0.0)
            W = self.params[f"head.L{i}.W"]
            grads[f"head.L{i}.W"] += g.T @ acts[i]
            grads[f"head.L{i}.b"] += g.sum(axis=0)
            g = g @ W
        vgrads, _ = nextvlad.backward_batch(g[:, self.d_text:], vcache)
        for name, value in vgrads.items():
            grads[name] += value

    # -- scoring -----------------------------------------------------------

    def score(self, item: ContentItem) -> float:
        return float(self.forward(*self.pack([item]).take(np.arange(1)))[0][0])

    def predict_batch(self, items: Sequence[ContentItem], chunk: int = 512) -> list[float]:
        out: list[float] = []
        for start in range(0, len(items), chunk):
            part = items[start:start + chunk]
            packed = self.pack(part)
            scores, _ = self.forward(packed.text, packed.images, packed.mask)
            out.extend(float(s) for s in scores)
        return out


def score(item: ContentItem, model: RankerModel) -> float:
    return model.score(item)


def predict_batch(items: Sequence[ContentItem], model: RankerModel) -> list[float]:
    return model.predict_batch(items)


def pair_objective(model: RankerModel, items_a: Sequence[ContentItem], items_b: Sequence[ContentItem],
                   x: Sequence[int], sigma: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean pair loss over aligned pairs and its flat gradient w.r.t. ``model.params``."""
    a, b = model.pack(items_a), model.pack(items_b)
    s_i, cache_i = model.forward(a.text, a.images, a.mask)
    s_j, cache_j = model.forward(b.text, b.images, b.mask)
    *_, c, g_i, g_j = pair_loss_arrays(s_i, s_j, np.asarray(x, dtype=np.float64), sigma)
    grads = model.params.zeros_like()
    model.backward(g_i / len(c), cache_i, grads)
    model.backward(g_j / len(c), cache_j, grads)
    return float(c.mean()), grads.flat.copy()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    iteration: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def append(self, it: int, loss: float, lr: float) -> None:
        self.iteration.append(it)
        self.loss.append(loss)
        self.lr.append(lr)

    def to_csv(self) -> str:
        rows = ["iteration,loss,lr"]
        rows += [f"{i},{l!r},{r!r}" for i, l, r in zip(self.iteration, self.loss, self.lr)]
        return "\n".join(rows) + "\n"


class _Optimizer:
    def __init__(self, params: ParamBlock, config: RankerConfig):
        self.config = config
        self.lr = config.lr
        self.adam = (
            AdamState.fresh(len(params), config.lr, config.beta1, config.beta2, config.adam_eps)
            if config.optimizer == "adam" else None
        )

    def step(self, params: ParamBlock, grads: np.ndarray) -> None:
        if self.adam is not None:
            self.adam.lr = self.lr
            adam_step(params, grads, self.adam)
        else:
            sgd_step(params, grads, self.lr)

    def after_iteration(self, it: int) -> None:
        if it % self.config.decay_every == 0:
            self.lr *= self.config.lr_decay_factor


def batch_schedule(n: int, batch: int, iterations: int, seed: int):
    """Yield index arrays: shuffled epochs over ``range(n)``, ``batch`` at a time."""
    rng = np.random.default_rng([seed, 3])
    order = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        idx = []
        while len(idx) < batch:
            if pos == n:
                order = rng.permutation(n)
                pos = 0
            take = min(batch - len(idx), n - pos)
            idx.extend(order[pos:pos + take].tolist())
            pos += take
        yield np.asarray(idx)


def _run(model: RankerModel, config: RankerConfig, n_samples: int,
         batch_loss: Callable[[np.ndarray, ParamBlock], float],
         progress: Callable[[int, float], None] | None = None) -> TrainLog:
    grads = model.params.zeros_like()
    opt = _Optimizer(model.params, config)
    out = TrainLog()
    for it, idx in enumerate(batch_schedule(n_samples, config.batch_pairs, config.total_iterations,
                                            config.seed), start=1):
        grads.flat[:] = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            loss = batch_loss(idx, grads)
        if not (math.isfinite(loss) and np.all(np.isfinite(grads.flat))):
            raise DivergenceError(f"non-finite loss or gradient at iteration {it}")
        out.append(it, loss, opt.lr)
        opt.step(model.params, grads.flat)
        opt.after_iteration(it)
        if progress is not None:
            progress(it, loss)
    return out


def train(model: RankerModel, items: Sequence[ContentItem], pairs: Sequence[PairSample],
          config: RankerConfig, progress: Callable[[int, float], None] | None = None) -> TrainLog:
    """Train ``model`` in place on ``pairs`` drawn from ``items``."""
    config.validate()
    if not pairs:
        raise ValueError("no training pairs")
    row = {it.id: r for r, it in enumerate(items)}
    missing = sorted({p.id_a for p in pairs if p.id_a not in row} | {p.id_b for p in pairs if p.id_b not in row})
    if missing:
        raise KeyError(f"{len(missing)} pair ids not in the training items, e.g. {missing[:3]}")
    packed = model.pack(items)
    a = np.array([row[p.id_a] for p in pairs])
    b = np.array([row[p.id_b] for p in pairs])
    x = np.array([p.x for p in pairs], dtype=np.float64)

    def batch_loss(idx: np.ndarray, grads: ParamBlock) -> float:
        s_i, cache_i = model.forward(*packed.take(a[idx]))
        s_j, cache_j = model.forward(*packed.take(b[idx]))
        *_, c, g_i, g_j = pair_loss_arrays(s_i, s_j, x[idx], config.sigma)
        n = len(idx)
        model.backward(g_i / n, cache_i, grads)
        model.backward(g_j / n, cache_j, grads)
        return float(c.mean())

    return _run(model, config, len(pairs), batch_loss, progress)


def train_square_loss(model: RankerModel, items: Sequence[ContentItem], targets: Sequence[float],
                      config: RankerConfig, progress: Callable[[int, float], None] | None = None) -> TrainLog:
    """Pointwise regression baseline: same model and optimizer, loss ``0.5 * (s - y)^2``.

    Each iteration uses ``2 * batch_pairs`` items so the number of forward
    passes matches the pairwise trainer.
    """
    config.validate()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(items),):
        raise ValueError("targets must align with items")
    packed = model.pack(items)
    doubled = RankerConfig(**{**asdict(config), "batch_pairs": 2 * config.batch_pairs})

    def batch_loss(idx: np.ndarray, grads: ParamBlock) -> float:
        s, cache = model.forward(*packed.take(idx))
        r = s - targets[idx]
        model.backward(r / len(idx), cache, grads)
        return float(0.5 * np.mean(r * r))

    return _run(model, doubled, len(items), batch_loss, progress)
