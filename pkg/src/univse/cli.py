"""Command-line entry point wiring every module together.

Configuration is declarative: an INI file (``--config``) supplies
defaults, explicit flags override it, and every producing run writes its
resolved configuration next to its outputs so results can be reproduced
from the artifacts alone. All randomness flows from ``--seed``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import adversary, evalkit, synthcorpus, trainkit
from .corpus import Corpus, load_corpus
from .model import DEFAULT_ALPHA, ModelDims
from .objective import LossConfig
from .semparse import load_conllu, parse_caption
from .trainkit import OptimConfig, read_checkpoint, restore_model
from .vision import FeatureSet, load_feature_file

logger = logging.getLogger(__name__)

TRAIN_DIR = "train"
TEST_DIR = "test"


# configuration plumbing -----------------------------------------------------


def _load_config(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    if not Path(path).exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    return dict(parser[section]) if parser.has_section(section) else {}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def resolve(args: argparse.Namespace, section: str, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    from_file = _load_config(getattr(args, "config", None), section)
    for key, raw in from_file.items():
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r} in section [{section}]")
        merged[key] = _coerce(raw, defaults[key])
    for key in defaults:
        provided = getattr(args, key, None)
        if provided is not None:
            merged[key] = provided
    return merged


def write_resolved(out_dir: Path, section: str, values: dict) -> None:
    parser = configparser.ConfigParser()
    parser[section] = {k: str(v) for k, v in sorted(values.items())}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{section}.resolved.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_partition(data_dir: str | Path, split: str) -> tuple[Corpus, FeatureSet]:
    base = Path(data_dir) / split
    captions = base / synthcorpus.CAPTIONS_FILE
    conllu = base / synthcorpus.CONLLU_FILE
    feats = base / synthcorpus.FEATURES_FILE
    for p in (captions, conllu, feats):
        if not p.exists():
            raise FileNotFoundError(f"missing {p}")
    corpus = load_corpus(str(captions), str(conllu))
    features = FeatureSet(load_feature_file(str(feats)))
    return corpus, features


# subcommands -----------------------------------------------------------------

SYNTH_DEFAULTS = dict(scenes=200, test_scenes=50, rows=4, cols=4, depth=32,
                      noise=0.05, captions_per_scene=2, seed=7)


def cmd_synth(args) -> int:
    values = resolve(args, "synth", SYNTH_DEFAULTS)
    out = Path(args.out)
    for split, n, part in ((TRAIN_DIR, values["scenes"], 0), (TEST_DIR, values["test_scenes"], 1)):
        cfg = synthcorpus.CorpusConfig(
            n_scenes=n, rows=values["rows"], cols=values["cols"],
            noise=values["noise"], feature_depth=values["depth"],
            captions_per_scene=values["captions_per_scene"],
            seed=values["seed"], partition=part)
        result = synthcorpus.generate_corpus(cfg, out / split)
        logger.info("%s: %d scenes, %d captions", split, len(result.scenes), len(result.corpus.records))
    write_resolved(out, "synth", values)
    print(json.dumps({"out": str(out), **values}))
    return 0


def cmd_parse(args) -> int:
    groups = load_conllu(args.conllu)
    lines = [json.dumps({"id": sid, "graph": parse_caption(tokens).to_json()}, sort_keys=True)
             for sid, tokens in groups]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


TRAIN_DEFAULTS = dict(epochs=30, batch_size=32, lr=5e-3, seed=0, alpha=DEFAULT_ALPHA,
                      margin=0.2, hard_mining=True, n_negatives=8, algorithm="adam",
                      embed_dim=64, basic_dim=32, modifier_dim=16)


def cmd_train(args) -> int:
    values = resolve(args, "train", TRAIN_DEFAULTS)
    corpus, features = load_partition(args.data, TRAIN_DIR)
    val_corpus = val_features = None
    if (Path(args.data) / TEST_DIR).exists():
        val_corpus, val_features = load_partition(args.data, TEST_DIR)
    depth = features.by_id[features.image_ids[0]].data.shape[2]
    dims = ModelDims(embed_dim=values["embed_dim"], basic_dim=values["basic_dim"],
                     modifier_dim=values["modifier_dim"], feature_depth=depth)
    cfg = OptimConfig(
        algorithm=values["algorithm"], lr=values["lr"], epochs=values["epochs"],
        batch_size=values["batch_size"], seed=values["seed"], alpha=values["alpha"],
        n_negatives=values["n_negatives"],
        loss=LossConfig(margin=values["margin"], hard_mining=values["hard_mining"]))
    out = Path(args.out)
    result = trainkit.train(corpus, features, cfg, out, dims=dims,
                            val_corpus=val_corpus, val_features=val_features,
                            resume=args.resume)
    write_resolved(out, "train", values)
    summary = {
        "epochs_run": len(result.metrics),
        "last": str(result.last_path),
        "best": str(result.best_path),
        "final_r1_val": result.metrics[-1]["r1_val"] if result.metrics else None,
    }
    print(json.dumps(summary))
    return 0


def _load_model(args) -> tuple:
    train_corpus, train_features = load_partition(args.data, TRAIN_DIR)
    model, arrays = restore_model(args.checkpoint, train_corpus)
    split = getattr(args, "split", TEST_DIR) or TEST_DIR
    if split == TRAIN_DIR:
        corpus, features = train_corpus, train_features
    else:
        corpus, features = load_partition(args.data, split)
    return model, corpus, features


def _emit_report(args, section: str, payload: dict, values: dict) -> None:
    text = json.dumps(payload, indent=1, sort_keys=True)
    if getattr(args, "report", None):
        report = Path(args.report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(text + "\n", encoding="utf-8")
        write_resolved(report.parent, section, values)
    print(text)


EVAL_DEFAULTS = dict(alpha=DEFAULT_ALPHA, seed=0, n=5, family="all", cases=100,
                     tau=evalkit.VISUAL_TAU, direction="t2i")


def cmd_eval(args) -> int:
    values = resolve(args, "eval", EVAL_DEFAULTS)
    model, corpus, features = _load_model(args)
    mode = args.eval_command
    if mode == "retrieval":
        report = evalkit.retrieval_report(model, corpus, features, alpha=values["alpha"],
                                          direction=values["direction"])
        _emit_report(args, "eval", report.to_json(), values)
    elif mode == "adversarial":
        spec = adversary.AttackSpec(family=values["family"], n_per_caption=values["n"],
                                    rng_seed=values["seed"])
        suite = adversary.build_attack_suite(corpus, spec)
        report = evalkit.adversarial_eval(model, corpus, features, suite, alpha=values["alpha"])
        payload = report.to_json()
        payload["n_adversarials"] = len(suite.adversarials)
        payload["n_skipped"] = sum(suite.skipped.values())
        _emit_report(args, "eval", payload, values)
    elif mode == "unified":
        report = evalkit.unified_retrieval_map(model, corpus, features, alpha=values["alpha"])
        _emit_report(args, "eval", report.to_json(), values)
    elif mode == "disambiguate":
        cases = synthcorpus.generate_ambiguity_cases(corpus, n=values["cases"], seed=values["seed"])
        report = evalkit.disambiguation_accuracy(cases, model, features,
                                                 baseline_seed=values["seed"])
        _emit_report(args, "eval", report.to_json(), values)
    elif mode == "relevance":
        out_json = args.out_json or "relevance.json"
        grid = evalkit.export_relevance(model, features, args.image, args.query,
                                        out_json=out_json, tau=values["tau"],
                                        out_ppm=args.out_ppm)
        print(json.dumps({"image_id": args.image, "query": args.query,
                          "rows": grid.shape[0], "cols": grid.shape[1],
                          "out": str(out_json)}))
    else:
        raise ValueError(f"unknown eval mode {mode!r}")
    return 0


def cmd_attack(args) -> int:
    captions = Path(args.corpus)
    conllu = Path(args.conllu) if args.conllu else captions.parent / synthcorpus.CONLLU_FILE
    corpus = load_corpus(str(captions), str(conllu))
    spec = adversary.AttackSpec(family=args.family, n_per_caption=args.n, rng_seed=args.seed)
    suite = adversary.build_attack_suite(corpus, spec)
    rows = [json.dumps({"original_id": a.source_caption_id, "image_id": a.source_image_id,
                        "text": a.text, "family": a.family, "mode": a.mode}, sort_keys=True)
            for a in suite.adversarials]
    text = "\n".join(rows) + ("\n" if rows else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    logger.info("%d adversarials, %d skipped", len(suite.adversarials), sum(suite.skipped.values()))
    return 0


def cmd_features(args) -> int:
    if args.features_command != "inspect":
        raise ValueError(f"unknown features mode {args.features_command!r}")
    maps = load_feature_file(args.file)
    payload = {
        "count": len(maps),
        "records": [
            {"id": m.image_id, "rows": int(m.data.shape[0]), "cols": int(m.data.shape[1]),
             "depth": int(m.data.shape[2])}
            for m in maps
        ],
    }
    print(json.dumps(payload, indent=1))
    return 0


def cmd_gradcheck(args) -> int:
    """Run the finite-difference oracle on a freshly trained tiny model."""
    corpus, features = load_partition(args.data, TRAIN_DIR)
    model, _ = restore_model(args.checkpoint, corpus)
    import numpy as np

    from .objective import assemble_batch, total_loss

    rng = np.random.default_rng(args.seed)
    picks = rng.choice(len(corpus.records), size=min(4, len(corpus.records)), replace=False)
    records = [corpus.records[int(i)] for i in picks]
    batch = assemble_batch(records, corpus, rng, 2)
    loss_cfg = LossConfig(margin=0.2 + 1e-3)

    def loss_fn():
        return total_loss(model, batch, features, loss_cfg)[0]

    store = trainkit.ParamStore.from_model(model)
    report = trainkit.finite_diff_check(loss_fn, store, coords_per_group=args.coords,
                                        rng=np.random.default_rng(args.seed))
    print(report.format())
    return 0 if report.max_rel_err < 1e-4 else 1


# argument wiring -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="univse",
                                     description="unified visual-semantic embeddings")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int)
    p.add_argument("--test-scenes", dest="test_scenes", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--captions-per-scene", dest="captions_per_scene", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parse", help="parse annotated sentences into graphs")
    p.add_argument("--conllu", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train", help="fit the joint embedding")
    p.add_argument("--data", required=True, help="directory with train/ (and test/) partitions")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--mean-negatives", dest="hard_mining", action="store_false", default=None)
    p.add_argument("--n-negatives", dest="n_negatives", type=int)
    p.add_argument("--algorithm", choices=["adam", "sgd"])
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--basic-dim", dest="basic_dim", type=int)
    p.add_argument("--modifier-dim", dest="modifier_dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    ev = p.add_subparsers(dest="eval_command", required=True)
    for name in ("retrieval", "adversarial", "unified", "disambiguate", "relevance"):
        q = ev.add_parser(name)
        q.add_argument("--data", required=True)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--split", choices=[TRAIN_DIR, TEST_DIR])
        q.add_argument("--alpha", type=float)
        q.add_argument("--seed", type=int)
        q.add_argument("--config")
        q.add_argument("--report")
        if name == "retrieval":
            q.add_argument("--direction", choices=["t2i", "i2t"])
        if name == "adversarial":
            q.add_argument("--family", choices=["all", "object", "attribute", "relation"])
            q.add_argument("--n", type=int)
        if name == "disambiguate":
            q.add_argument("--cases", type=int)
        if name == "relevance":
            q.add_argument("--image", required=True)
            q.add_argument("--query", required=True)
            q.add_argument("--tau", type=float)
            q.add_argument("--out-json", dest="out_json")
            q.add_argument("--out-ppm", dest="out_ppm")
        q.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="generate adversarial captions")
    p.add_argument("--corpus", required=True, help="captions JSONL file")
    p.add_argument("--conllu", help="annotations (defaults to the corpus directory)")
    p.add_argument("--family", default="all", choices=["all", "object", "attribute", "relation"])
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("features", help="inspect feature containers")
    fs = p.add_subparsers(dest="features_command", required=True)
    q = fs.add_parser("inspect")
    q.add_argument("--file", required=True)
    q.set_defaults(func=cmd_features)

    p = sub.add_parser("gradcheck", help="finite-difference audit of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    trainkit.apply_thread_cap()
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # one line, machine parseable, nonzero exit
        message = " ".join(str(exc).split())
        print(f"univse: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
