"""Run a frozen image encoder over a directory and write one feature file."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

import torch
from univse.vision import RawFeatureMap, write_feature_file

from .encoder import GRID, MODEL_DEPTHS, build_encoder, preprocess
from .manifest import ExtractionManifest, ResizePolicy, manifest_from_directory

log = logging.getLogger("uvse_extract")


class ExtractionError(RuntimeError):
    """A non-empty manifest produced no usable images."""


@dataclass
class ExtractionResult:
    out_path: str
    written: list[str]
    skipped: list[str]
    grid: int
    depth: int


def extract(
    manifest: ExtractionManifest,
    batch_size: int = 16,
    weights: str = "pretrained",
    seed: int = 0,
) -> ExtractionResult:
    """Encode every readable image in the manifest and write the feature file.

    Unreadable images are skipped with a logged warning. An empty manifest
    still writes a valid zero-record file; a non-empty manifest where every
    image fails raises ExtractionError instead of writing anything.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    encoder = build_encoder(manifest.model, weights=weights, seed=seed)
    depth = MODEL_DEPTHS[manifest.model]

    maps: list[RawFeatureMap] = []
    skipped: list[str] = []
    pending: list[torch.Tensor] = []
    pending_ids: list[str] = []

    def flush():
        if not pending:
            return
        with torch.no_grad():
            feats = encoder(torch.stack(pending))
        if feats.shape[1:] != (depth, GRID, GRID):
            raise RuntimeError(
                f"encoder produced {tuple(feats.shape[1:])}, expected {(depth, GRID, GRID)}"
            )
        arrays = feats.permute(0, 2, 3, 1).contiguous().numpy()
        for ident, arr in zip(pending_ids, arrays):
            maps.append(RawFeatureMap(image_id=ident, data=arr))
        pending.clear()
        pending_ids.clear()

    for ident, path in manifest.entries:
        try:
            x = preprocess(path, manifest.policy)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s (%s): %s", ident, path, exc)
            skipped.append(ident)
            continue
        pending.append(x)
        pending_ids.append(ident)
        if len(pending) == batch_size:
            flush()
    flush()

    if manifest.entries and not maps:
        raise ExtractionError(f"none of the {len(manifest.entries)} images could be read")

    write_feature_file(manifest.out_path, maps)
    sidecar = {
        "model": manifest.model,
        "weights": weights,
        "policy": manifest.policy.to_json(),
        "grid": GRID,
        "depth": depth,
        "count": len(maps),
        "skipped": skipped,
    }
    if weights == "random":
        sidecar["seed"] = seed
    with open(manifest.out_path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExtractionResult(
        out_path=manifest.out_path,
        written=[m.image_id for m in maps],
        skipped=skipped,
        grid=GRID,
        depth=depth,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract.py",
        description="Encode a directory of images into one UVSE feature file.",
    )
    parser.add_argument("--images", required=True, metavar="DIR", help="directory scanned recursively for images")
    parser.add_argument("--out", required=True, metavar="FILE", help="feature file to write (sidecar goes to FILE.json)")
    parser.add_argument("--batch", type=int, default=16, help="images per forward pass")
    parser.add_argument("--model", default="resnet18", choices=sorted(MODEL_DEPTHS), help="encoder trunk")
    parser.add_argument("--weights", default="pretrained", help="'pretrained', 'random', or a state-dict path")
    parser.add_argument("--seed", type=int, default=0, help="init seed when --weights random")
    parser.add_argument("--resize-side", type=int, default=256, help="shorter-side size before the center crop")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        policy = ResizePolicy(side=args.resize_side)
        manifest = manifest_from_directory(args.images, model=args.model, out_path=args.out, policy=policy)
        result = extract(manifest, batch_size=args.batch, weights=args.weights, seed=args.seed)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one line, machine parseable, nonzero exit
        print(f"extract: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %d feature maps (%d skipped) to %s", len(result.written), len(result.skipped), result.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
