"""Training machinery: gradients, optimizer steps, checkpoints, gradient checks.

The forward losses live in :mod:`univse.objective`; this module owns the
reverse pass, the adaptive-moment optimizer, the binary checkpoint format
(magic ``UVCK``) and a central finite-difference oracle used to audit the
analytic gradients group by group.

Determinism contract: with a fixed seed, fixed thread count and fixed
inputs, two runs produce bitwise-identical checkpoints and metric logs.
Every source of randomness is a numpy generator derived from the run seed
and the epoch index, which also makes resumed runs bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Corpus
from .model import ALL_FAMILIES, DEFAULT_ALPHA, JointModel, ModelDims
from .objective import LossConfig, assemble_batch, cosine_rows, total_loss
from .vision import FeatureSet

logger = logging.getLogger(__name__)

UVCK_MAGIC = b"UVCK"
UVCK_VERSION = 1

LAST_CHECKPOINT = "last.uvck"
BEST_CHECKPOINT = "best.uvck"
METRICS_LOG = "metrics.jsonl"


def apply_thread_cap() -> int:
    """Cap torch intra-op threads from UNIVSE_THREADS (default 1)."""
    raw = os.environ.get("UNIVSE_THREADS", "1").strip() or "1"
    count = max(1, int(raw))
    torch.set_num_threads(count)
    return count


@dataclass
class OptimConfig:
    """Optimizer, schedule and sampling settings for one training run."""

    algorithm: str = "adam"
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    n_negatives: int = 8
    families: tuple[str, ...] = ALL_FAMILIES
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer algorithm {self.algorithm!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.n_negatives < 1:
            raise ValueError("n_negatives must be at least 1")
        self.families = tuple(self.families)
        unknown = set(self.families) - set(ALL_FAMILIES)
        if unknown or not self.families:
            raise ValueError(f"families must be a non-empty subset of {ALL_FAMILIES}")


class ParamStore:
    """Named view over a model's trainable tensors and their gradients."""

    def __init__(self, tensors: dict[str, torch.Tensor]):
        self.tensors = dict(tensors)
        self.names = sorted(self.tensors)
        owners: dict[int, str] = {}
        for name in self.names:
            key = id(self.tensors[name])
            if key in owners:
                raise ValueError(f"tensor shared by {owners[key]} and {name}")
            owners[key] = name

    @classmethod
    def from_model(cls, model: JointModel) -> "ParamStore":
        return cls(model.named_parameters())

    @staticmethod
    def group_of(name: str) -> str:
        """Parameter group a tensor belongs to.

        The vocabulary tables count as separate groups (basic and modifier
        halves train at very different effective rates); everything else
        groups by its leading component.
        """
        if name.startswith("vocab."):
            return name
        return name.split(".", 1)[0]

    @property
    def groups(self) -> list[str]:
        return sorted({self.group_of(n) for n in self.names})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            if t.grad is not None:
                t.grad.zero_()

    def gradients(self) -> dict[str, torch.Tensor]:
        out = {}
        for name in self.names:
            t = self.tensors[name]
            out[name] = t.grad.clone() if t.grad is not None else torch.zeros_like(t)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.tensors[name].detach().numpy().copy() for name in self.names}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.names:
            if name not in arrays:
                raise ValueError(f"checkpoint is missing parameter {name}")
            src = arrays[name]
            dst = self.tensors[name]
            if tuple(src.shape) != tuple(dst.shape):
                raise ValueError(
                    f"checkpoint shape {tuple(src.shape)} does not match {name} {tuple(dst.shape)}")
            with torch.no_grad():
                dst.copy_(torch.from_numpy(np.ascontiguousarray(src, dtype=np.float64)))


def backward(model: JointModel, batch, features: FeatureSet, cfg: OptimConfig,
             ) -> tuple[dict[str, torch.Tensor], float, dict[str, float]]:
    """Evaluate the multi-task loss and return exact reverse-mode gradients.

    Raises when any loss family comes out non-finite, naming the term.
    """
    store = ParamStore.from_model(model)
    store.zero_grad()
    total, parts = total_loss(model, batch, features, cfg.loss, families=cfg.families)
    for name, value in parts.items():
        if not np.isfinite(value):
            raise ArithmeticError(f"{name} is non-finite ({value})")
    if not torch.isfinite(total):
        raise ArithmeticError(f"total loss is non-finite ({float(total)})")
    total.backward()
    return store.gradients(), float(total.detach()), parts


# optimizers ----------------------------------------------------------------


class AdamState:
    """Hand-stepped adaptive-moment optimizer whose state checkpoints."""

    def __init__(self, store: ParamStore, cfg: OptimConfig):
        self.store = store
        self.cfg = cfg
        self.t = 0
        self.m = {n: torch.zeros_like(t) for n, t in store.tensors.items()}
        self.v = {n: torch.zeros_like(t) for n, t in store.tensors.items()}

    def step(self, grads: dict[str, torch.Tensor]) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        with torch.no_grad():
            for name in self.store.names:
                g = grads[name]
                m = self.m[name]
                v = self.v[name]
                m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
                v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
                update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
                self.store.tensors[name].sub_(update, alpha=cfg.lr)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"adam.t": np.float64(self.t).reshape(())}
        for name in self.store.names:
            out[f"adam.m.{name}"] = self.m[name].numpy().copy()
            out[f"adam.v.{name}"] = self.v[name].numpy().copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if "adam.t" not in arrays:
            raise ValueError("checkpoint has no adaptive-moment state to resume from")
        self.t = int(arrays["adam.t"])
        for name in self.store.names:
            for prefix, slot in (("adam.m.", self.m), ("adam.v.", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise ValueError(f"checkpoint is missing optimizer slot {key}")
                slot[name] = torch.from_numpy(np.ascontiguousarray(arrays[key], dtype=np.float64)).clone()


class SgdState:
    """Plain gradient descent; kept as the trivially-checkable baseline."""

    def __init__(self, store: ParamStore, cfg: OptimConfig):
        self.store = store
        self.cfg = cfg

    def step(self, grads: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name in self.store.names:
                self.store.tensors[name].sub_(grads[name], alpha=self.cfg.lr)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


def make_optimizer(store: ParamStore, cfg: OptimConfig):
    if cfg.algorithm == "adam":
        return AdamState(store, cfg)
    return SgdState(store, cfg)


def step(store: ParamStore, grads: dict[str, torch.Tensor], cfg: OptimConfig) -> None:
    """One-shot parameter update (fresh optimizer state); see make_optimizer
    for the stateful variant used by the training loop."""
    make_optimizer(store, cfg).step(grads)


# checkpoint format ---------------------------------------------------------


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


def write_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Serialize named float64 arrays: magic, version, then name/shape/data."""
    chunks = [UVCK_MAGIC, struct.pack("<II", UVCK_VERSION, len(arrays))]
    for name in sorted(arrays):
        # asarray, not ascontiguousarray: the latter silently promotes
        # 0-d scalars to shape (1,), breaking rank round-tripping
        data = np.asarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(count: int, what: str) -> bytes:
        nonlocal pos
        if pos + count > len(blob):
            raise CheckpointFormatError(f"truncated while reading {what}", pos)
        piece = blob[pos:pos + count]
        pos += count
        return piece

    if take(4, "magic") != UVCK_MAGIC:
        raise CheckpointFormatError("bad magic, not a UVCK checkpoint", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != UVCK_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape")) if ndim else ()
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = take(8 * n_items, f"data of {name}")
        if name in out:
            raise CheckpointFormatError(f"duplicate entry {name}", pos)
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - pos} trailing bytes", pos)
    return out


def checkpoint_arrays(model: JointModel, optimizer, epoch: int,
                      best_r1: float, best_epoch: int) -> dict[str, np.ndarray]:
    arrays = ParamStore.from_model(model).state_arrays()
    arrays.update(optimizer.state_arrays())
    arrays["meta.epoch"] = np.float64(epoch).reshape(())
    arrays["meta.best_r1"] = np.float64(best_r1).reshape(())
    arrays["meta.best_epoch"] = np.float64(best_epoch).reshape(())
    d = model.dims
    arrays["meta.dims"] = np.array(
        [d.embed_dim, d.basic_dim, d.modifier_dim, d.feature_depth], dtype=np.float64)
    return arrays


def restore_model(path: str | Path, corpus: Corpus) -> tuple[JointModel, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint plus the corpus it was trained on.

    The vocabulary is reconstructed from the corpus (its build order is
    deterministic), then every tensor is overwritten from the file.
    """
    arrays = read_checkpoint(path)
    if "meta.dims" not in arrays:
        raise CheckpointFormatError("checkpoint carries no model dimensions")
    e, b, m, f = (int(x) for x in arrays["meta.dims"])
    dims = ModelDims(embed_dim=e, basic_dim=b, modifier_dim=m, feature_depth=f)
    model = JointModel.from_corpus(corpus, dims=dims, seed=0)
    ParamStore.from_model(model).load_state_arrays(arrays)
    return model, arrays


# training loop --------------------------------------------------------------


@dataclass
class TrainResult:
    metrics: list[dict]
    last_path: Path
    best_path: Path
    model: JointModel


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def validation_r1(model: JointModel, corpus: Corpus, features: FeatureSet,
                  alpha: float) -> float:
    """Caption-to-image R@1 with ties broken by ascending image index."""
    if not corpus.records:
        return 0.0
    with torch.no_grad():
        encodings = model.encode_records(corpus.records, alpha=alpha)
        u = torch.stack([e.u_cap for e in encodings])
        image_ids = corpus.image_ids
        _, pooled = model.encode_images(features, image_ids)
        sims = cosine_rows(u, pooled)
        top = sims.argmax(dim=1)
    hits = sum(1 for rec, t in zip(corpus.records, top) if image_ids[int(t)] == rec.image_id)
    return hits / len(corpus.records)


def check_feature_coverage(corpus: Corpus, features: FeatureSet) -> None:
    missing = [i for i in corpus.image_ids if i not in features.by_id]
    if missing:
        shown = ", ".join(missing[:8])
        more = f" (+{len(missing) - 8} more)" if len(missing) > 8 else ""
        raise ValueError(f"features missing for image ids: {shown}{more}")


def train(corpus: Corpus, features: FeatureSet, cfg: OptimConfig, out_dir: str | Path,
          dims: ModelDims | None = None, val_corpus: Corpus | None = None,
          val_features: FeatureSet | None = None, resume: str | Path | None = None,
          ) -> TrainResult:
    """Run the full loop: shuffle, sample negatives, step, log, checkpoint.

    Writes ``metrics.jsonl`` (one JSON object per epoch), ``last.uvck``
    after every epoch and ``best.uvck`` whenever validation R@1 improves.
    With ``resume`` pointing at a previous ``last.uvck``, training picks up
    at the stored epoch and reproduces an uninterrupted run bit for bit.
    """
    apply_thread_cap()
    check_feature_coverage(corpus, features)
    if val_corpus is not None:
        check_feature_coverage(val_corpus, val_features if val_features is not None else features)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dims = dims or ModelDims()

    model = JointModel.from_corpus(corpus, dims=dims, seed=cfg.seed)
    store = ParamStore.from_model(model)
    optimizer = make_optimizer(store, cfg)

    start_epoch = 0
    best_r1 = -1.0
    best_epoch = -1
    if resume is not None:
        arrays = read_checkpoint(resume)
        store.load_state_arrays(arrays)
        optimizer.load_state_arrays(arrays)
        start_epoch = int(arrays.get("meta.epoch", np.float64(0)))
        best_r1 = float(arrays.get("meta.best_r1", np.float64(-1.0)))
        best_epoch = int(arrays.get("meta.best_epoch", np.float64(-1)))
        logger.info("resumed from %s at epoch %d", resume, start_epoch)

    last_path = out / LAST_CHECKPOINT
    best_path = out / BEST_CHECKPOINT
    metrics_path = out / METRICS_LOG
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    metrics: list[dict] = []

    eval_corpus = val_corpus if val_corpus is not None else corpus
    eval_features = val_features if val_features is not None else features

    if start_epoch >= cfg.epochs:
        write_checkpoint(last_path, checkpoint_arrays(model, optimizer, start_epoch, best_r1, best_epoch))
        if not best_path.exists():
            write_checkpoint(best_path, checkpoint_arrays(model, optimizer, start_epoch, best_r1, best_epoch))
        if mode == "w":
            metrics_path.write_text("")
        return TrainResult(metrics=metrics, last_path=last_path, best_path=best_path, model=model)

    with open(metrics_path, mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, cfg.epochs):
            tic = time.monotonic()
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(len(corpus.records))
            sums = {"loss_sent": 0.0, "loss_comp": 0.0, "loss_rel": 0.0, "loss_obj": 0.0}
            n_batches = 0
            for lo in range(0, len(order), cfg.batch_size):
                chunk = [corpus.records[i] for i in order[lo:lo + cfg.batch_size]]
                if len(chunk) < 2:
                    continue  # a single stranded pair has no in-batch negatives
                batch = assemble_batch(chunk, corpus, rng, cfg.n_negatives)
                grads, _, parts = backward(model, batch, features, cfg)
                optimizer.step(grads)
                for key in sums:
                    sums[key] += parts[key]
                n_batches += 1
            denom = max(1, n_batches)
            r1 = validation_r1(model, eval_corpus, eval_features, cfg.alpha)
            row = {"epoch": epoch, **{k: sums[k] / denom for k in sums}, "r1_val": r1}
            metrics.append(row)
            log.write(json.dumps(row) + "\n")
            log.flush()
            if r1 > best_r1:
                best_r1 = r1
                best_epoch = epoch
                write_checkpoint(best_path, checkpoint_arrays(model, optimizer, epoch + 1, best_r1, best_epoch))
            write_checkpoint(last_path, checkpoint_arrays(model, optimizer, epoch + 1, best_r1, best_epoch))
            logger.info("epoch %d done in %.1fs, r1_val=%.3f", epoch, time.monotonic() - tic, r1)

    if not best_path.exists():
        write_checkpoint(best_path, checkpoint_arrays(model, optimizer, cfg.epochs, best_r1, best_epoch))
    return TrainResult(metrics=metrics, last_path=last_path, best_path=best_path, model=model)


# finite-difference oracle ---------------------------------------------------


@dataclass
class GroupCheck:
    name: str
    n_coords: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    groups: list[GroupCheck]
    elapsed_s: float

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    def format(self) -> str:
        lines = [f"{g.name:<16} coords={g.n_coords:<5} max_rel_err={g.max_rel_err:.3e}"
                 for g in self.groups]
        lines.append(f"overall max_rel_err={self.max_rel_err:.3e} in {self.elapsed_s:.1f}s")
        return "\n".join(lines)


def finite_diff_check(loss_fn, store: ParamStore, eps: float = 1e-5,
                      coords_per_group: int = 200,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Audit analytic gradients against central finite differences.

    ``loss_fn`` evaluates the loss at the store's current parameter values
    and must be pure in them. The analytic gradient is taken from one
    backward pass; each sampled coordinate is then nudged by ±eps and the
    secant slope compared using
    ``|g_an - g_fd| / max(1e-8, |g_an| + |g_fd|)``.
    """
    rng = rng or np.random.default_rng(0)
    tic = time.monotonic()

    store.zero_grad()
    value = loss_fn()
    if not torch.isfinite(value):
        raise ArithmeticError("loss is non-finite at the checked point")
    value.backward()
    analytic = {name: (t.grad.clone() if t.grad is not None else torch.zeros_like(t))
                for name, t in store.tensors.items()}

    by_group: dict[str, list[str]] = {}
    for name in store.names:
        by_group.setdefault(store.group_of(name), []).append(name)

    reports = []
    for group in sorted(by_group):
        members = by_group[group]
        sizes = [store.tensors[n].numel() for n in members]
        total = int(sum(sizes))
        n_sample = min(total, coords_per_group)
        picks = rng.choice(total, size=n_sample, replace=False)
        worst = 0.0
        offsets = np.cumsum([0] + sizes)
        with torch.no_grad():
            for flat in sorted(int(p) for p in picks):
                slot = int(np.searchsorted(offsets, flat, side="right") - 1)
                name = members[slot]
                idx = flat - int(offsets[slot])
                tensor = store.tensors[name]
                view = tensor.reshape(-1)
                orig = view[idx].item()
                view[idx] = orig + eps
                f_plus = float(loss_fn())
                view[idx] = orig - eps
                f_minus = float(loss_fn())
                view[idx] = orig
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                g_an = float(analytic[name].reshape(-1)[idx])
                rel = abs(g_an - g_fd) / max(1e-8, abs(g_an) + abs(g_fd))
                worst = max(worst, rel)
        reports.append(GroupCheck(name=group, n_coords=n_sample, max_rel_err=worst))
    return GradCheckReport(groups=reports, elapsed_s=time.monotonic() - tic)
