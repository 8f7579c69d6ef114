"""Image-side candidate generation from region embeddings.

Images without entity labels are split into regions (four quadrants, or
detector bounding boxes). An external image encoder embeds each region; here
triples are scored against every region and the per-region selections are
unioned, keeping each triple's best score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbeddingProvider, _as_vector, cosine_many, stack
from .errors import RegionError
from .filtering import ScoredTriple, _embed_triples
from .kg import Triple

QUADRANT = "quadrant"
BOUNDING_BOX = "bounding-box"
FULL_IMAGE = "full-image"


@dataclass(frozen=True)
class Region:
    x: int
    y: int
    w: int
    h: int
    source: str = QUADRANT

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise RegionError(f"negative region offset ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise RegionError(f"region size must be positive, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ImageDescriptor:
    id: str
    width: int
    height: int
    patch_embeddings: tuple[tuple[Region, np.ndarray], ...] | None = None
    boxes: tuple[Region, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise RegionError(f"image {self.id!r}: size must be positive")
        regions = [r for r, _ in self.patch_embeddings or ()] + list(self.boxes or ())
        for region in regions:
            if not region.fits(self.width, self.height):
                raise RegionError(
                    f"image {self.id!r}: region {region.as_tuple()} exceeds "
                    f"{self.width}x{self.height}"
                )


def split_quadrants(width: int, height: int) -> list[Region]:
    """Four tiles split at ``width // 2`` and ``height // 2``.

    Order is top-left, top-right, bottom-left, bottom-right; on odd sizes the
    right and bottom tiles take the extra pixel.
    """
    if width < 2 or height < 2:
        raise RegionError(f"cannot split a {width}x{height} image into quadrants")
    cx, cy = width // 2, height // 2
    return [
        Region(0, 0, cx, cy),
        Region(cx, 0, width - cx, cy),
        Region(0, cy, cx, height - cy),
        Region(cx, cy, width - cx, height - cy),
    ]


def full_image_region(width: int, height: int) -> Region:
    return Region(0, 0, width, height, FULL_IMAGE)


def region_candidates(
    image: ImageDescriptor,
    triples: Iterable[Triple],
    triple_provider: EmbeddingProvider,
    lam: float = 0.8,
) -> list[ScoredTriple]:
    """Triples reaching ``lam`` in at least one region, with their best score.

    The result is ordered by descending score, ties by serialized triple.
    """
    if not image.patch_embeddings:
        raise RegionError("image embeddings required")
    pool = sorted(set(triples))
    if not pool:
        return []
    matrix = stack(_embed_triples(triple_provider, pool))
    best = np.full(len(pool), -np.inf)
    for _, region_vec in image.patch_embeddings:
        best = np.maximum(best, cosine_many(region_vec, matrix))
    hits = [ScoredTriple(t, float(s)) for t, s in zip(pool, best) if s >= lam]
    return sorted(hits, key=ScoredTriple.sort_key)


def load_image_embeddings(path) -> list[ImageDescriptor]:
    """Read ``{"image_id", "regions": [{"x","y","w","h","source","vector"}]}`` rows.

    Optional ``width``/``height`` keys give the image size; otherwise it is
    taken as the bounding extent of the regions.
    """
    images = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                patches = tuple(
                    (
                        Region(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"]),
                               r.get("source", QUADRANT)),
                        _as_vector(r["vector"]),
                    )
                    for r in row["regions"]
                )
                width = row.get("width") or max(r.x + r.w for r, _ in patches)
                height = row.get("height") or max(r.y + r.h for r, _ in patches)
                images.append(ImageDescriptor(str(row["image_id"]), int(width), int(height), patches))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RegionError(f"{path}:{lineno}: bad image embedding row ({exc})") from None
    return images


def region_union(selections: Sequence[Sequence[ScoredTriple]]) -> list[ScoredTriple]:
    """Merge per-region selections, keeping the max score per triple."""
    best: dict[Triple, ScoredTriple] = {}
    for selection in selections:
        for item in selection:
            prev = best.get(item.triple)
            if prev is None or item.score > prev.score:
                best[item.triple] = item
    return sorted(best.values(), key=ScoredTriple.sort_key)
