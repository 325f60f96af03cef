"""Training loop, evaluation metrics, ablation protocols, and the
finite-difference gradient oracle."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import Corpus, CorpusSplit, VideoPost, subset
from .model import ConsistencyModel, Featurizer, ModelConfig, PostInputs

logger = logging.getLogger(__name__)

EXPECTED_MODALITY = {
    "fake_claim": "claim",
    "fake_speech": "speech",
    "filled_speech": "speech",
    "fake_video": "video",
}


class TrainingDivergedError(RuntimeError):
    pass


class EmptySubsetError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 16
    epochs: int = 200
    max_frames: int = 18
    seed: int = 0
    patience: int = 10
    # linear learning-rate warmup over the first optimizer steps; tames the
    # large first Adam steps on wide dot-product readouts
    warmup_steps: int = 8
    # optional harness control: stop once train accuracy reaches the target,
    # but never before min_epochs epochs have completed
    stop_at_train_accuracy: float | None = None
    min_epochs: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")


@dataclass(frozen=True)
class TaxonomyStats:
    total: int
    correct: int


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_taxonomy: dict[str, TaxonomyStats]
    explanation_accuracy: float
    n: int


def confusion_metrics(y_true: Sequence[int], y_pred: Sequence[int]) -> dict[str, float]:
    """Accuracy and binary precision/recall/F1 on the positive class.
    Degenerate convention: with no positives anywhere (predicted or true),
    precision, recall, and F1 are all 1.0."""
    if len(y_true) != len(y_pred):
        raise ValueError("label/prediction length mismatch")
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 1)
    fp = sum(1 for t, p in zip(y_true, y_pred) if t == 0 and p == 1)
    fn = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 0)
    tn = sum(1 for t, p in zip(y_true, y_pred) if t == 0 and p == 0)
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    if tp + fp + fn == 0:
        precision = recall = f1 = 1.0
    else:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "accuracy": accuracy,
            "precision": precision, "recall": recall, "f1": f1}


def _batched(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def evaluate(model: ConsistencyModel, posts: Sequence[VideoPost],
             featurizer: Featurizer, batch_size: int = 32) -> EvalResult:
    """Accuracy, binary F1 on the inconsistent class, per-taxonomy counts,
    and explanation accuracy over the correctly flagged inconsistent records
    (vacuously 1.0 when there are none)."""
    if not posts:
        raise EmptySubsetError("cannot evaluate an empty subset")
    inputs = [featurizer.featurize(p) for p in posts]
    y_true = [1 if p.label == "inconsistent" else 0 for p in posts]
    y_pred: list[int] = []
    explanations: list[str | None] = []
    full_variant = model.config.variant != "one_stream" and model.config.drop_pair is None
    for batch in _batched(list(range(len(posts))), batch_size):
        chunk = [inputs[i] for i in batch]
        if full_variant:
            verdicts = model.predict(chunk)
            y_pred.extend(1 if v.predicted_label == "inconsistent" else 0 for v in verdicts)
            explanations.extend(v.explanation for v in verdicts)
        else:
            probs = model.predict_proba(chunk)
            y_pred.extend(int(p >= model.config.threshold) for p in probs)
            explanations.extend(None for _ in batch)

    metrics = confusion_metrics(y_true, y_pred)

    taxonomy: dict[str, TaxonomyStats] = {}
    for post, t, p in zip(posts, y_true, y_pred):
        stats = taxonomy.get(post.taxonomy, TaxonomyStats(0, 0))
        taxonomy[post.taxonomy] = TaxonomyStats(stats.total + 1, stats.correct + (t == p))

    matches = []
    for post, t, p, expl in zip(posts, y_true, y_pred, explanations):
        if t == 1 and p == 1 and expl is not None:
            matches.append(expl == EXPECTED_MODALITY.get(post.taxonomy))
    explanation_accuracy = sum(matches) / len(matches) if matches else 1.0

    return EvalResult(metrics["accuracy"], metrics["precision"], metrics["recall"],
                      metrics["f1"], taxonomy, explanation_accuracy, len(posts))


@dataclass
class TrainResult:
    model: ConsistencyModel
    train_losses: list[float]  # loss over the whole training set at each epoch end
    val_accuracies: list[float]
    best_epoch: int


def train(corpus: Corpus, corpus_split: CorpusSplit, model_config: ModelConfig,
          config: TrainConfig, featurizer: Featurizer) -> TrainResult:
    """Adam on clamped cross-entropy, deterministic under the config seed,
    early stopping and checkpointing on best validation accuracy."""
    train_posts = subset(corpus, corpus_split.train)
    val_posts = subset(corpus, corpus_split.val)
    if not train_posts:
        raise EmptySubsetError("training split is empty")

    torch.manual_seed(config.seed)
    model = ConsistencyModel(model_config)
    inputs = {p.post_id: featurizer.featurize(p) for p in train_posts}
    labels = {p.post_id: 1 if p.label == "inconsistent" else 0 for p in train_posts}
    ids = sorted(inputs)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = random.Random(config.seed)
    train_losses: list[float] = []
    val_accuracies: list[float] = []
    best_state = None
    best_acc = -1.0
    best_epoch = -1
    stale = 0
    step = 0

    for epoch in range(config.epochs):
        order = list(ids)
        rng.shuffle(order)
        for batch_ids in _batched(order, config.batch_size):
            batch = [inputs[i] for i in batch_ids]
            y = [labels[i] for i in batch_ids]
            loss = model.loss(batch, y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss.item()} at epoch {epoch}"
                )
            step += 1
            scale = min(1.0, step / config.warmup_steps) if config.warmup_steps else 1.0
            for group in optimizer.param_groups:
                group["lr"] = config.learning_rate * scale
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        with torch.no_grad():
            epoch_loss = model.loss([inputs[i] for i in ids], [labels[i] for i in ids])
        train_losses.append(float(epoch_loss))

        if val_posts:
            acc = evaluate(model, val_posts, featurizer).accuracy
            val_accuracies.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break

        if (config.stop_at_train_accuracy is not None
                and epoch + 1 >= config.min_epochs
                and evaluate(model, train_posts, featurizer).accuracy
                >= config.stop_at_train_accuracy):
            logger.info("train accuracy target reached at epoch %d", epoch)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = config.epochs - 1
    return TrainResult(model, train_losses, val_accuracies, best_epoch)


# --------------------------------------------------------------------------
# gradient oracle

PARAMETER_GROUPS = (
    "gate_table", "proj_claim", "proj_speech", "proj_screen", "proj_patch",
    "text_aoa", "patch_aoa", "fuser_video_speech", "fuser_video_claim",
    "fuser_claim_speech", "score_heads", "combiner",
)


def _group_of(name: str) -> str:
    head = name.split(".")[0]
    if head.startswith("head_") or head == "single_head":
        return "score_heads"
    if head == "pos_token":
        return "text_aoa"
    if head == "pos_patch":
        return "patch_aoa"
    if head == "single_fuser":
        return "fuser_single"
    return head


def finite_difference_check(
    model: ConsistencyModel,
    inputs: Sequence[PostInputs],
    labels: Sequence[int],
    *,
    step: float = 1e-5,
    max_entries_per_tensor: int = 128,
) -> dict[str, float]:
    """Relative error per parameter group between autograd gradients of the
    training loss and central finite differences. Tensors larger than the
    cap are sampled on an evenly spaced index subset; the comparison always
    covers every group. Use a float64 model for meaningful tolerances."""
    model.zero_grad()
    loss = model.loss(inputs, labels)
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters() if p.requires_grad
    }

    diffs: dict[str, list[tuple[float, float]]] = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            if not p.requires_grad:
                continue
            flat = p.view(-1)
            n = flat.numel()
            if n <= max_entries_per_tensor:
                indices = range(n)
            else:
                picks = torch.linspace(0, n - 1, max_entries_per_tensor)
                indices = sorted(set(int(i) for i in picks.round().tolist()))
            grads = analytic[name].view(-1)
            entry = diffs.setdefault(_group_of(name), [])
            for i in indices:
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(model.loss(inputs, labels))
                flat[i] = orig - step
                down = float(model.loss(inputs, labels))
                flat[i] = orig
                entry.append((float(grads[i]), (up - down) / (2 * step)))

    errors: dict[str, float] = {}
    for group, pairs in diffs.items():
        ga = np.array([a for a, _ in pairs])
        gn = np.array([b for _, b in pairs])
        denom = max(float(np.linalg.norm(ga)), float(np.linalg.norm(gn)), 1e-12)
        errors[group] = float(np.linalg.norm(ga - gn)) / denom
    return errors


# --------------------------------------------------------------------------
# ablation protocols


@dataclass(frozen=True)
class AblationRow:
    run: str
    accuracy: float
    f1: float


FeaturizerFactory = Callable[[int], Featurizer]


def _run_once(corpus: Corpus, corpus_split: CorpusSplit, model_config: ModelConfig,
              config: TrainConfig, featurizer: Featurizer, run: str) -> AblationRow:
    result = train(corpus, corpus_split, model_config, config, featurizer)
    test_posts = subset(corpus, corpus_split.test)
    evaluation = evaluate(result.model, test_posts, featurizer)
    return AblationRow(run, evaluation.accuracy, evaluation.f1)


def ablate_modules(corpus: Corpus, corpus_split: CorpusSplit, model_config: ModelConfig,
                   config: TrainConfig, make_featurizer: FeaturizerFactory) -> list[AblationRow]:
    """Full model, all-ones event gate (frozen table), and single-stream
    fusion instead of pairwise aggregation. Identical seeds across runs."""
    featurizer = make_featurizer(config.max_frames)
    rows = []
    for run, variant in (("full", "full"), ("no_event_alert", "no_event_alert"),
                         ("no_pca", "one_stream")):
        cfg = replace(model_config, variant=variant)
        rows.append(_run_once(corpus, corpus_split, cfg, config, featurizer, run))
    return rows


def ablate_modality_pairs(corpus: Corpus, corpus_split: CorpusSplit,
                          model_config: ModelConfig, config: TrainConfig,
                          make_featurizer: FeaturizerFactory) -> list[AblationRow]:
    """Full model, then each pairwise link removed from the combiner; the
    removed pair's fuser is never computed, so it receives no gradient."""
    featurizer = make_featurizer(config.max_frames)
    rows = [_run_once(corpus, corpus_split, replace(model_config, drop_pair=None),
                      config, featurizer, "full")]
    for run, pair in (("no_pair_claim_video", "video_claim"),
                      ("no_pair_claim_speech", "claim_speech"),
                      ("no_pair_speech_video", "video_speech")):
        cfg = replace(model_config, drop_pair=pair)
        rows.append(_run_once(corpus, corpus_split, cfg, config, featurizer, run))
    return rows


def ablate_frames(corpus: Corpus, corpus_split: CorpusSplit, model_config: ModelConfig,
                  config: TrainConfig, make_featurizer: FeaturizerFactory,
                  frame_counts: Sequence[int]) -> list[AblationRow]:
    """One full train+evaluate per frame budget, identical seeds."""
    rows = []
    for count in frame_counts:
        run_cfg = replace(config, max_frames=count)
        featurizer = make_featurizer(count)
        rows.append(_run_once(corpus, corpus_split, model_config, run_cfg,
                              featurizer, str(count)))
    return rows


def write_table(path: str | Path, rows: Sequence[AblationRow], key: str = "run") -> None:
    lines = [f"{key}\taccuracy\tf1"]
    lines += [f"{r.run}\t{r.accuracy:.6f}\t{r.f1:.6f}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def eval_summary(result: EvalResult) -> str:
    lines = [
        f"records\t{result.n}",
        f"accuracy\t{result.accuracy:.6f}",
        f"precision\t{result.precision:.6f}",
        f"recall\t{result.recall:.6f}",
        f"f1\t{result.f1:.6f}",
        f"explanation_accuracy\t{result.explanation_accuracy:.6f}",
    ]
    for taxonomy in sorted(result.per_taxonomy):
        stats = result.per_taxonomy[taxonomy]
        lines.append(f"taxonomy/{taxonomy}\t{stats.correct}/{stats.total}")
    return "\n".join(lines) + "\n"
