"""Manifest types describing one feature-extraction run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


@dataclass(frozen=True)
class ResizePolicy:
    """How images are brought to the encoder's input size.

    The shorter side is scaled to ``side`` pixels, then a central
    ``crop`` x ``crop`` window is taken. ``crop`` matches the encoder's
    native input size so the output grid never drifts; only the pre-crop
    scale is adjustable.
    """

    side: int = 256
    crop: int = 224
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.crop < 1:
            raise ValueError(f"crop must be positive, got {self.crop}")
        if self.side < self.crop:
            raise ValueError(f"resize side {self.side} is smaller than the crop {self.crop}")
        if self.interpolation != "bilinear":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")

    def to_json(self) -> dict:
        return {"side": self.side, "crop": self.crop, "interpolation": self.interpolation}


@dataclass
class ExtractionManifest:
    """One run: which images, which encoder, where the feature file goes."""

    entries: list[tuple[str, str]]
    model: str
    out_path: str
    policy: ResizePolicy = field(default_factory=ResizePolicy)

    def __post_init__(self):
        seen = set()
        for ident, _path in self.entries:
            if not ident:
                raise ValueError("image id must be non-empty")
            if ident in seen:
                raise ValueError(f"duplicate image id {ident!r}")
            seen.add(ident)
        if not self.out_path:
            raise ValueError("out_path must be non-empty")


def manifest_from_directory(
    images_dir: str, model: str, out_path: str, policy: ResizePolicy | None = None
) -> ExtractionManifest:
    """Scan ``images_dir`` recursively and build a manifest from what it finds.

    Image ids are relative paths with the suffix dropped, so a directory
    holding both ``a.png`` and ``a.jpg`` is rejected rather than silently
    keeping one of them.
    """
    root = Path(images_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory not found: {images_dir}")
    paths = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    entries: list[tuple[str, str]] = []
    first_with_id: dict[str, Path] = {}
    for p in paths:
        ident = p.relative_to(root).with_suffix("").as_posix()
        if ident in first_with_id:
            raise ValueError(f"image id {ident!r} maps to both {first_with_id[ident]} and {p}; rename one")
        first_with_id[ident] = p
        entries.append((ident, str(p)))
    return ExtractionManifest(
        entries=entries, model=model, out_path=str(out_path), policy=policy or ResizePolicy()
    )
