"""Synthetic corpus with a planted latent quality ``q ~ U(0, 1)``.

Text and image embeddings carry ``rho * q`` along fixed random unit
directions plus ``(1 - rho)``-weighted Gaussian noise; engagement counts are
``round(exp(rate * q + eps))`` per channel. ``q`` is stored as
``human_score`` so evaluation can use the exact latent value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import ContentItem, CorpusHeader, save_corpus


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_items: int = 2500
    d_text: int = 64
    d_image: int = 32
    min_images: int = 1
    max_images: int = 6
    rho: float = 0.8
    noise_scale: float = 0.5
    likes_rate: float = 8.0
    retweets_rate: float = 5.0
    comments_rate: float = 4.0
    engagement_noise: float = 1.0
    seed: int = 7

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise SynthConfigError(f"synth.{name}: {why} (got {getattr(self, name)!r})")

        if not 0.0 <= self.rho <= 1.0:
            bad("rho", "must lie in [0, 1]")
        if self.n_items < 0:
            bad("n_items", "must be >= 0")
        if self.d_text < 1:
            bad("d_text", "must be >= 1")
        if self.d_image < 1:
            bad("d_image", "must be >= 1")
        if self.min_images < 0:
            bad("min_images", "must be >= 0")
        if not self.min_images <= self.max_images <= 8:
            bad("max_images", "must satisfy min_images <= max_images <= 8")
        for name in ("noise_scale", "engagement_noise", "likes_rate", "retweets_rate", "comments_rate"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                bad(name, "must be finite and non-negative")


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    u = rng.normal(size=d)
    return u / np.linalg.norm(u)


def generate_items(config: SynthConfig) -> list[ContentItem]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    u_text = _unit(rng, config.d_text)
    u_image = _unit(rng, config.d_image)
    rates = np.array([config.likes_rate, config.retweets_rate, config.comments_rate])
    rho = config.rho
    width = len(str(max(config.n_items - 1, 0)))
    items = []
    for i in range(config.n_items):
        q = float(rng.uniform())
        text = rho * q * u_text + (1.0 - rho) * config.noise_scale * rng.normal(size=config.d_text)
        n_img = int(rng.integers(config.min_images, config.max_images + 1))
        images = [
            rho * q * u_image + (1.0 - rho) * config.noise_scale * rng.normal(size=config.d_image)
            for _ in range(n_img)
        ]
        counts = np.rint(np.exp(rates * q + config.engagement_noise * rng.normal(size=3))).astype(int)
        items.append(ContentItem(
            id=f"syn{i:0{width}d}",
            text_embedding=text,
            image_embeddings=tuple(images),
            likes=int(counts[0]),
            retweets=int(counts[1]),
            comments=int(counts[2]),
            human_score=q,
        ))
    return items


def generate(config: SynthConfig, path) -> CorpusHeader:
    """Write a synthetic corpus to ``path`` in the standard JSONL format."""
    items = generate_items(config)
    return save_corpus(Path(path), items, config.d_text, config.d_image)
