"""Command-line entry point wiring every stage together.

Commands: ingest, split, synthesize, train, evaluate, explain, ablate.
stdout carries data, stderr carries diagnostics. Exit codes are stable:
0 ok, 1 generic failure, 2 input not found, 3 duplicate post ids,
4 synthesis shortfall, 5 bad checkpoint, 6 empty evaluation subset.

Configuration is layered: dataclass defaults, then the --config JSON file
(sections "model", "train", "encoder", "synthesis"), then explicit flags.
Every command emits one run manifest recording the effective config hash,
seed, and content hashes of its inputs and outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .corpus import (
    CorpusSplit,
    DuplicatePostIdError,
    Rejection,
    ingest,
    serialize,
    split,
    subset,
)
from .encoders import EncoderConfig, StubTextEncoder
from .events import LexiconEventTagger, default_tagger
from .model import (
    CheckpointError,
    ConsistencyModel,
    Featurizer,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .synthesis import InsufficientFakesError, build_balanced_dataset, default_stub_suite
from .train_eval import (
    AblationRow,
    EmptySubsetError,
    TrainConfig,
    ablate_frames,
    ablate_modality_pairs,
    ablate_modules,
    eval_summary,
    evaluate,
    train,
    write_table,
)

logger = logging.getLogger("vtcheck")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT_NOT_FOUND = 2
EXIT_DUPLICATE_IDS = 3
EXIT_SYNTH_SHORTFALL = 4
EXIT_BAD_CHECKPOINT = 5
EXIT_EMPTY_SUBSET = 6


def cache_dir() -> Path:
    root = os.environ.get("VTCHECK_CACHE_DIR")
    path = Path(root) if root else Path.home() / ".cache" / "vtcheck"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest(command: str, config: dict, seed: int | None,
                   inputs: Sequence[Path], outputs: Sequence[Path],
                   manifest_path: Path | None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if p.exists()},
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if manifest_path is None:
        manifest_path = cache_dir() / f"manifest-{command}-{manifest['config_hash'][:12]}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest_path


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(path)
    data = json.loads(file_path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _merge(defaults: dict, file_section: dict, overrides: dict) -> dict:
    merged = dict(defaults)
    merged.update({k: v for k, v in file_section.items() if k in defaults})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _model_config(file_cfg: dict, args: argparse.Namespace) -> ModelConfig:
    overrides = {
        "dim": getattr(args, "dim", None),
        "threshold": getattr(args, "threshold", None),
        "seed": getattr(args, "seed", None),
    }
    return ModelConfig(**_merge(asdict(ModelConfig()), file_cfg.get("model", {}), overrides))


def _train_config(file_cfg: dict, args: argparse.Namespace) -> TrainConfig:
    overrides = {
        "learning_rate": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "epochs": getattr(args, "epochs", None),
        "max_frames": getattr(args, "max_frames", None),
        "seed": getattr(args, "seed", None),
    }
    merged = _merge(asdict(TrainConfig()), file_cfg.get("train", {}), overrides)
    return TrainConfig(**merged)


def _require_seed(args: argparse.Namespace, file_cfg: dict, section: str) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in file_cfg.get(section, {}):
        return int(file_cfg[section]["seed"])
    raise ValueError("a seed is required (pass --seed or set it in the config file)")


def _make_featurizer(model_config: ModelConfig, file_cfg: dict, max_frames: int) -> Featurizer:
    enc_section = dict(file_cfg.get("encoder", {}))
    tagger_kind = enc_section.pop("tagger", "stub")
    if tagger_kind != "stub":
        raise ValueError(f"tagger kind {tagger_kind!r} is not available in this build")
    defaults = asdict(EncoderConfig())
    defaults["d_t"] = model_config.text_dim
    defaults["d_v"] = model_config.patch_dim
    merged = _merge(defaults, enc_section, {})
    encoder = StubTextEncoder(EncoderConfig(**merged))
    return Featurizer(encoder, default_tagger(), max_frames=max_frames,
                      max_tokens=model_config.max_tokens)


def _read_split(path: str) -> CorpusSplit:
    split_path = Path(path)
    if not split_path.exists():
        raise FileNotFoundError(path)
    return CorpusSplit.from_json(split_path.read_text(encoding="utf-8"))


def _ingest_existing(path: str, *, drop_unverified: bool = False,
                     report: list[Rejection] | None = None):
    corpus_path = Path(path)
    if not corpus_path.exists():
        raise FileNotFoundError(path)
    return ingest(corpus_path, drop_unverified=drop_unverified, report=report)


# --------------------------------------------------------------------------
# command handlers


def cmd_ingest(args: argparse.Namespace, file_cfg: dict) -> int:
    rejections: list[Rejection] = []
    corpus = _ingest_existing(args.input, drop_unverified=args.drop_unverified,
                              report=rejections)
    out = Path(args.out)
    serialize(corpus, out)
    for rej in rejections:
        print(f"rejected line {rej.line} ({rej.post_id}): {rej.reason}", file=sys.stderr)
    print(f"posts\t{len(corpus)}")
    print(f"rejected\t{len(rejections)}")
    write_manifest("ingest", {"drop_unverified": args.drop_unverified}, None,
                   [Path(args.input)], [out], out.with_suffix(out.suffix + ".manifest.json"))
    return EXIT_OK


def cmd_split(args: argparse.Namespace, file_cfg: dict) -> int:
    corpus = _ingest_existing(args.corpus)
    result = split(corpus, args.seed)
    out = Path(args.out)
    out.write_text(result.to_json() + "\n", encoding="utf-8")
    sizes = result.sizes()
    print(f"train\t{sizes[0]}")
    print(f"val\t{sizes[1]}")
    print(f"test\t{sizes[2]}")
    write_manifest("split", {"seed": args.seed}, args.seed, [Path(args.corpus)], [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace, file_cfg: dict) -> int:
    seed = _require_seed(args, file_cfg, "synthesis")
    mix = tuple(float(x) for x in args.mix.split(","))
    synth_cfg = file_cfg.get("synthesis", {})
    corpus = _ingest_existing(args.corpus)
    suite = default_stub_suite(seed)
    combined, report = build_balanced_dataset(
        corpus, suite, mix, seed,
        k=synth_cfg.get("k", 10),
        span_policy=synth_cfg.get("span_policy", "prefer_argument"),
        evidence_m=synth_cfg.get("evidence_m", 1),
        allow_claim_replacement=synth_cfg.get("allow_claim_replacement", False),
    )
    out = Path(args.out)
    serialize(combined, out)
    report_path = Path(args.report)
    report_path.write_text(report.to_jsonl(), encoding="utf-8")
    print(f"posts\t{len(combined)}")
    print(f"fakes\t{len(report.provenance)}")
    config = {"mix": list(mix), "seed": seed, **synth_cfg}
    write_manifest("synthesize", config, seed, [Path(args.corpus)], [out, report_path],
                   out.with_suffix(out.suffix + ".manifest.json"))
    return EXIT_OK


def cmd_train(args: argparse.Namespace, file_cfg: dict) -> int:
    seed = _require_seed(args, file_cfg, "train")
    args.seed = seed
    corpus = _ingest_existing(args.corpus)
    corpus_split = _read_split(args.split)
    model_config = _model_config(file_cfg, args)
    train_config = _train_config(file_cfg, args)
    if corpus.d_v and corpus.d_v != model_config.patch_dim:
        raise ValueError(
            f"corpus patch dim {corpus.d_v} != model patch_dim {model_config.patch_dim}"
        )
    featurizer = _make_featurizer(model_config, file_cfg, train_config.max_frames)
    result = train(corpus, corpus_split, model_config, train_config, featurizer)
    out = Path(args.out)
    save_checkpoint(out, result.model)
    print(f"epochs\t{len(result.train_losses)}")
    if result.train_losses:
        print(f"final_train_loss\t{result.train_losses[-1]:.6f}")
    if result.val_accuracies:
        print(f"best_val_accuracy\t{max(result.val_accuracies):.6f}")
        print(f"best_epoch\t{result.best_epoch}")
    config = {"model": model_config.to_dict(), "train": asdict(train_config)}
    write_manifest("train", config, seed, [Path(args.corpus), Path(args.split)], [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, file_cfg: dict) -> int:
    corpus = _ingest_existing(args.corpus)
    corpus_split = _read_split(args.split)
    model = load_checkpoint(args.checkpoint)
    ids = getattr(corpus_split, args.subset)
    posts = subset(corpus, ids)
    featurizer = _make_featurizer(model.config, file_cfg, args.max_frames or 18)
    result = evaluate(model, posts, featurizer)
    summary = eval_summary(result)
    print(summary, end="")
    outputs = []
    if args.out:
        Path(args.out).write_text(summary, encoding="utf-8")
        outputs.append(Path(args.out))
    config = {"subset": args.subset, "model": model.config.to_dict()}
    write_manifest("evaluate", config, None,
                   [Path(args.corpus), Path(args.split), Path(args.checkpoint)],
                   outputs, Path(args.out + ".manifest.json") if args.out else None)
    return EXIT_OK


def cmd_explain(args: argparse.Namespace, file_cfg: dict) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = _ingest_existing(args.corpus)
    try:
        post = corpus.get(args.post_id)
    except KeyError:
        raise ValueError(f"post id {args.post_id!r} not in corpus") from None
    featurizer = _make_featurizer(model.config, file_cfg, args.max_frames or 18)
    verdict = model.predict([featurizer.featurize(post)])[0]
    print(f"post_id\t{verdict.post_id}")
    print(f"label\t{verdict.predicted_label}")
    print(f"p_inconsistent\t{verdict.p_inconsistent:.6f}")
    print(f"score_video_speech\t{verdict.scores.video_speech:.6f}")
    print(f"score_video_claim\t{verdict.scores.video_claim:.6f}")
    print(f"score_claim_speech\t{verdict.scores.claim_speech:.6f}")
    print(f"inconsistent_modality\t{verdict.explanation}")
    write_manifest("explain", {"post_id": args.post_id, "model": model.config.to_dict()},
                   None, [Path(args.corpus), Path(args.checkpoint)], [], None)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, file_cfg: dict) -> int:
    seed = _require_seed(args, file_cfg, "train")
    args.seed = seed
    corpus = _ingest_existing(args.corpus)
    corpus_split = _read_split(args.split)
    model_config = _model_config(file_cfg, args)
    train_config = _train_config(file_cfg, args)

    def make_featurizer(max_frames: int) -> Featurizer:
        return _make_featurizer(model_config, file_cfg, max_frames)

    if args.kind == "modules":
        rows = ablate_modules(corpus, corpus_split, model_config, train_config, make_featurizer)
    elif args.kind == "pairs":
        rows = ablate_modality_pairs(corpus, corpus_split, model_config, train_config,
                                     make_featurizer)
    else:
        counts = [int(x) for x in args.frame_counts.split(",")]
        rows = ablate_frames(corpus, corpus_split, model_config, train_config,
                             make_featurizer, counts)
    out = Path(args.out)
    key = "frames" if args.kind == "frames" else "run"
    write_table(out, rows, key)
    print(out.read_text(encoding="utf-8"), end="")
    config = {"kind": args.kind, "model": model_config.to_dict(),
              "train": asdict(train_config)}
    write_manifest("ablate", config, seed, [Path(args.corpus), Path(args.split)], [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtcheck",
                                     description="Video-post consistency toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (sections: model, train, encoder, synthesis)")

    p = sub.add_parser("ingest", help="validate and normalize a corpus file")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-unverified", action="store_true")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("split", help="deterministic stratified 80/10/10 split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("synthesize", help="generate a balanced inconsistent set")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mix", default="1,1,1", help="claim,speech,video fractions")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("train", help="train a consistency model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-frames", type=int, dest="max_frames")
    p.add_argument("--dim", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="metrics on a split subset")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.add_argument("--out")
    p.add_argument("--max-frames", type=int, dest="max_frames")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("explain", help="verdict and modality explanation for one post")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--post-id", required=True, dest="post_id")
    p.add_argument("--max-frames", type=int, dest="max_frames")
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("ablate", help="module, pair, or frame-length ablations")
    common(p)
    p.add_argument("--kind", choices=("frames", "modules", "pairs"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-counts", default="1,6,18", dest="frame_counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-frames", type=int, dest="max_frames")
    p.add_argument("--dim", type=int)
    p.set_defaults(handler=cmd_ablate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config_file(getattr(args, "config", None))
        return args.handler(args, file_cfg)
    except FileNotFoundError as exc:
        print(f"input not found: {exc}", file=sys.stderr)
        return EXIT_INPUT_NOT_FOUND
    except DuplicatePostIdError as exc:
        print(f"duplicate post ids: {exc}", file=sys.stderr)
        return EXIT_DUPLICATE_IDS
    except InsufficientFakesError as exc:
        print(f"synthesis shortfall: {exc}", file=sys.stderr)
        for taxonomy, missing in exc.shortfall.items():
            if missing:
                print(f"short\t{taxonomy}\t{missing}", file=sys.stderr)
        return EXIT_SYNTH_SHORTFALL
    except CheckpointError as exc:
        print(f"bad checkpoint: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except EmptySubsetError as exc:
        print(f"empty subset: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SUBSET
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
