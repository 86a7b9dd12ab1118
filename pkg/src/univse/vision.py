"""Precomputed image feature maps: binary container, projection, pooling.

Feature maps are R x C grids of depth-D_in region vectors produced outside
this library (synthetic scenes or a CNN extraction script). A trainable
affine map (the 1x1 projection) carries each region into the joint space;
the whole-image embedding is the L2-normalized mean of the projected
regions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .tensor_utils import glorot_scale, l2_normalize, uniform_init

UVSE_MAGIC = b"UVSE"
UVSE_VERSION = 1


class FeatureFormatError(ValueError):
    """Corrupt UVSE container. ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class RawFeatureMap:
    """One image's unprojected region grid, float32 (rows, cols, depth)."""

    image_id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"feature map must be (rows, cols, depth), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError(f"feature map {self.image_id!r} contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class ProjectionParams:
    """Affine region projection into the joint space."""

    p: torch.Tensor
    b: torch.Tensor

    @classmethod
    def init(cls, embed_dim: int, input_depth: int, rng: np.random.Generator) -> "ProjectionParams":
        scale = glorot_scale(input_depth, embed_dim)
        return cls(p=uniform_init(rng, (embed_dim, input_depth), scale), b=uniform_init(rng, (embed_dim,), scale))

    @property
    def input_depth(self) -> int:
        return self.p.shape[1]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {"projection.p": self.p, "projection.b": self.b}


@dataclass
class ProjectedMap:
    """Projected region grid (rows, cols, d) and pooled unit vector (d,)."""

    regions: torch.Tensor
    pooled: torch.Tensor

    @property
    def flat_regions(self) -> torch.Tensor:
        return self.regions.reshape(-1, self.regions.shape[-1])


def project(raw: RawFeatureMap, params: ProjectionParams) -> ProjectedMap:
    """Project every region and mean-pool into the whole-image embedding."""
    rows, cols, depth = raw.shape
    if depth != params.input_depth:
        raise ValueError(f"feature depth {depth} does not match projection ({params.input_depth})")
    grid = torch.from_numpy(raw.data).to(params.p.dtype).reshape(rows * cols, depth)
    regions = grid @ params.p.T + params.b
    pooled = l2_normalize(regions.mean(dim=0), what="pooled image embedding")
    return ProjectedMap(regions=regions.reshape(rows, cols, -1), pooled=pooled)


def project_batch(stack: torch.Tensor, params: ProjectionParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Project a (batch, rows, cols, depth) stack.

    Returns region embeddings (batch, rows*cols, d) and pooled unit rows
    (batch, d).
    """
    batch, rows, cols, depth = stack.shape
    if depth != params.input_depth:
        raise ValueError(f"feature depth {depth} does not match projection ({params.input_depth})")
    flat = stack.reshape(batch, rows * cols, depth)
    regions = flat @ params.p.T + params.b
    pooled = l2_normalize(regions.mean(dim=1), what="pooled image embedding")
    return regions, pooled


def write_feature_file(path: str, maps: list[RawFeatureMap]) -> None:
    """Write maps to the little-endian UVSE container."""
    with open(path, "wb") as fh:
        fh.write(UVSE_MAGIC)
        fh.write(struct.pack("<II", UVSE_VERSION, len(maps)))
        for m in maps:
            ident = m.image_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ValueError(f"image id too long: {m.image_id!r}")
            rows, cols, depth = m.shape
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<III", rows, cols, depth))
            fh.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())


def load_feature_file(path: str) -> list[RawFeatureMap]:
    """Read a UVSE container back into feature maps, bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()

    offset = 0

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(blob):
            raise FeatureFormatError(f"truncated while reading {what}", offset)
        chunk = blob[offset : offset + count]
        offset += count
        return chunk

    if take(4, "magic") != UVSE_MAGIC:
        raise FeatureFormatError("bad magic, not a UVSE file", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != UVSE_VERSION:
        raise FeatureFormatError(f"unsupported version {version}", 4)

    maps = []
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2, "id length"))
        ident = take(id_len, "image id").decode("utf-8")
        rows, cols, depth = struct.unpack("<III", take(12, "grid dims"))
        if min(rows, cols, depth) < 1:
            raise FeatureFormatError(f"non-positive dims {(rows, cols, depth)}", offset - 12)
        data = np.frombuffer(take(rows * cols * depth * 4, f"map data for {ident!r}"), dtype="<f4")
        maps.append(RawFeatureMap(image_id=ident, data=data.reshape(rows, cols, depth).copy()))
    if offset != len(blob):
        raise FeatureFormatError("trailing bytes after last record", offset)
    return maps


class FeatureSet:
    """Feature maps keyed by image id, with a fixed iteration order."""

    def __init__(self, maps: list[RawFeatureMap]):
        self.by_id: dict[str, RawFeatureMap] = {}
        for m in maps:
            if m.image_id in self.by_id:
                raise ValueError(f"duplicate image id {m.image_id!r}")
            self.by_id[m.image_id] = m
        self.image_ids = list(self.by_id)

    @classmethod
    def load(cls, path: str) -> "FeatureSet":
        return cls(load_feature_file(path))

    def __len__(self) -> int:
        return len(self.by_id)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.by_id

    def __getitem__(self, image_id: str) -> RawFeatureMap:
        return self.by_id[image_id]

    def stack(self, image_ids: list[str], dtype=torch.float64) -> torch.Tensor:
        """Stack maps of equal shape into a (n, rows, cols, depth) tensor."""
        if not image_ids:
            raise ValueError("no image ids to stack")
        arrays = [self.by_id[i].data for i in image_ids]
        shapes = {a.shape for a in arrays}
        if len(shapes) > 1:
            raise ValueError(f"feature maps differ in shape: {sorted(shapes)}")
        return torch.from_numpy(np.stack(arrays)).to(dtype)
