"""Line-delimited JSON corpus of embedded content items.

The first line is a header::

    {"format_version":1,"d_text":64,"d_image":32,"item_count":2500}

followed by one record per item::

    {"id":"...","text_embedding":[...],"image_embeddings":[[...],...],
     "likes":0,"retweets":0,"comments":0,"human_score":null}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


class CorpusError(ValueError):
    """The corpus file violates the format or its invariants."""


@dataclass(frozen=True)
class CorpusHeader:
    d_text: int
    d_image: int
    item_count: int
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": self.format_version,
                "d_text": self.d_text,
                "d_image": self.d_image,
                "item_count": self.item_count,
            },
            separators=(",", ":"),
        )


@dataclass(frozen=True, eq=False)
class ContentItem:
    id: str
    text_embedding: np.ndarray
    image_embeddings: tuple[np.ndarray, ...] = ()
    likes: int = 0
    retweets: int = 0
    comments: int = 0
    human_score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "text_embedding", np.asarray(self.text_embedding, dtype=np.float64))
        object.__setattr__(
            self,
            "image_embeddings",
            tuple(np.asarray(v, dtype=np.float64) for v in self.image_embeddings),
        )

    def __eq__(self, other):
        if not isinstance(other, ContentItem):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.text_embedding, other.text_embedding)
            and len(self.image_embeddings) == len(other.image_embeddings)
            and all(np.array_equal(a, b) for a, b in zip(self.image_embeddings, other.image_embeddings))
            and (self.likes, self.retweets, self.comments) == (other.likes, other.retweets, other.comments)
            and self.human_score == other.human_score
        )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text_embedding": self.text_embedding.tolist(),
            "image_embeddings": [v.tolist() for v in self.image_embeddings],
            "likes": int(self.likes),
            "retweets": int(self.retweets),
            "comments": int(self.comments),
            "human_score": None if self.human_score is None else float(self.human_score),
        }


def truncate_images(item: ContentItem, m_max: int) -> ContentItem:
    """Keep the first ``m_max`` image embeddings in file order."""
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    if len(item.image_embeddings) <= m_max:
        return item
    return replace(item, image_embeddings=item.image_embeddings[:m_max])


# ---------------------------------------------------------------------------
# validation / IO


def _check_vector(values, dim: int, what: str, item_id: str) -> np.ndarray:
    if not isinstance(values, list):
        raise CorpusError(f"item {item_id!r}: {what} must be a list of floats")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size != dim:
        raise CorpusError(f"item {item_id!r}: {what} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise CorpusError(f"item {item_id!r}: {what} contains non-finite values")
    return arr


def _parse_record(rec: dict, header: CorpusHeader, lineno: int) -> ContentItem:
    if not isinstance(rec, dict):
        raise CorpusError(f"line {lineno}: record must be a JSON object")
    item_id = rec.get("id")
    if not isinstance(item_id, str) or not item_id:
        raise CorpusError(f"line {lineno}: missing or empty id")
    text = _check_vector(rec.get("text_embedding"), header.d_text, "text_embedding", item_id)
    images = rec.get("image_embeddings")
    if not isinstance(images, list):
        raise CorpusError(f"item {item_id!r}: image_embeddings must be a list")
    images = tuple(
        _check_vector(v, header.d_image, f"image_embeddings[{i}]", item_id) for i, v in enumerate(images)
    )
    counts = {}
    for key in ("likes", "retweets", "comments"):
        value = rec.get(key)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise CorpusError(f"item {item_id!r}: {key} must be a non-negative integer")
        counts[key] = value
    human = rec.get("human_score")
    if human is not None:
        if isinstance(human, bool) or not isinstance(human, (int, float)) or not (0.0 <= human <= 1.0):
            raise CorpusError(f"item {item_id!r}: human_score must be null or a float in [0, 1]")
        human = float(human)
    return ContentItem(item_id, text, images, human_score=human, **counts)


def _parse_header(obj, path) -> CorpusHeader:
    if not isinstance(obj, dict):
        raise CorpusError(f"{path}: line 1: header must be a JSON object")
    if obj.get("format_version") != FORMAT_VERSION:
        raise CorpusError(f"{path}: unsupported format_version {obj.get('format_version')!r}")
    for key in ("d_text", "d_image", "item_count"):
        v = obj.get(key)
        if isinstance(v, bool) or not isinstance(v, int) or v < (0 if key == "item_count" else 1):
            raise CorpusError(f"{path}: header field {key!r} invalid: {v!r}")
    return CorpusHeader(obj["d_text"], obj["d_image"], obj["item_count"], obj["format_version"])


def load_corpus(path) -> tuple[CorpusHeader, list[ContentItem]]:
    """Load and validate a corpus file; any violation rejects the whole file."""
    path = Path(path)
    items: list[ContentItem] = []
    seen: set[str] = set()
    header = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            if header is None:
                header = _parse_header(obj, path)
                continue
            item = _parse_record(obj, header, lineno)
            if item.id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    if header is None:
        raise CorpusError(f"{path}: missing header line")
    if header.item_count != len(items):
        raise CorpusError(f"{path}: header item_count={header.item_count} but found {len(items)} records")
    return header, items


def save_corpus(path, items: Sequence[ContentItem], d_text: int, d_image: int) -> CorpusHeader:
    header = CorpusHeader(d_text, d_image, len(items))
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header.to_json() + "\n")
        for item in items:
            fh.write(json.dumps(item.to_record(), separators=(",", ":")) + "\n")
    return header


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, float, float]
    seed: int
    counts: dict[str, int] = field(default_factory=dict)

    def ids(self, bucket: str) -> set[str]:
        return {k for k, v in self.assignment.items() if v == bucket}

    def select(self, items: Iterable[ContentItem], bucket: str) -> list[ContentItem]:
        return [it for it in items if self.assignment[it.id] == bucket]


def hash_unit(seed: int, item_id: str) -> float:
    """Deterministic uniform number in [0, 1) from ``(seed, id)``."""
    digest = hashlib.sha256(f"{seed}\x1f{item_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def split(items: Iterable[ContentItem | str], ratios=(0.8, 0.1, 0.1), seed: int = 7) -> SplitAssignment:
    """Assign each id to train/val/test by a stable hash of ``(seed, id)``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 or not math.isfinite(r) for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    cut_train = ratios[0]
    cut_val = ratios[0] + ratios[1]
    assignment = {}
    for it in items:
        item_id = it if isinstance(it, str) else it.id
        u = hash_unit(seed, item_id)
        if u < cut_train or ratios[1] == ratios[2] == 0.0:
            bucket = "train"
        elif u < cut_val or ratios[2] == 0.0:
            bucket = "val"
        else:
            bucket = "test"
        assignment[item_id] = bucket
    counts = {b: 0 for b in SPLITS}
    for b in assignment.values():
        counts[b] += 1
    return SplitAssignment(assignment, ratios, seed, counts)
