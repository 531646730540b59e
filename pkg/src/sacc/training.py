"""Asymmetric self-supervised alignment and pseudo-label fine-tuning.

The pipeline owns five parameter groups and updates exactly one per phase:

    downstream   backbone + classifier train on labeled normal images
    pretext (N)  jigsaw head trains against the frozen backbone
    curve (L)    the curve predictor trains against frozen backbone + head
    plus         a copy of the classifier fine-tunes on normal labels plus
                 confidence-filtered pseudo labels of enhanced dark images

Everything else is frozen, checked by group checksums at phase boundaries.

Phase L enhances before augmenting. Because curve application commutes
exactly with 90-degree rotations and tile permutations, it is implemented
as augment-then-lookup with the curve predicted from the unaugmented image,
which keeps rotation/shuffle off the gradient tape.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .curves import (ConcaveCurveSet, build_curve, build_integral_operator,
                     integrate_normalize, lookup_curves)
from .data import DegradationSpec, DeskCorpus, ImageBatch, VideoClip, \
    build_desk_corpus
from .engine import Tensor, reshape, softmax_cross_entropy, transpose
from .errors import ConfigError, ContractViolation, InputError
from .jigsaw import (DEFAULT_ANGLES, build_codebook, jigsaw_crop,
                     sample_batch)
from .networks import (Backbone, CurvePredictor, MlpHead, classify,
                       extract_features, predict_second_derivative, to_nchw)
from .params import ParameterStore, make_optimizer

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EVAL_BATCH = 50

PHASE_DOWNSTREAM = "downstream"
PHASE_NORMAL = "pretext_normal"
PHASE_LOW = "curve_low"
PHASE_PLUS = "finetune_plus"
ALL_PHASES = (PHASE_DOWNSTREAM, PHASE_NORMAL, PHASE_LOW, PHASE_PLUS)


@dataclass
class TrainConfig:
    """Every knob of the desk-scale pipeline; all randomness flows from seed."""

    seed: int = 7
    bit_depth: int = 256
    # corpus
    corpus_train: int = 2000
    corpus_test: int = 500
    image_size: int = 64
    num_classes: int = 10
    gamma_d: float = 4.0
    color_bias: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.01
    # pretext task
    codebook_size: int = 100
    angles: tuple[int, ...] = DEFAULT_ANGLES
    constraint_order: int = 2
    # budgets (batch 16 keeps conv buffers cache-sized on one core)
    batch_size: int = 16
    steps_downstream: int = 800
    lr_downstream: float = 0.01
    steps_pretext: int = 2000
    lr_pretext: float = 0.01
    steps_curve: int = 2000
    lr_curve: float = 0.01
    steps_finetune: int = 400
    lr_finetune: float = 0.003
    optimizer: str = "sgd"
    momentum: float = 0.9
    # SACC+
    confidence_tau: float = 0.9
    run_plus: bool = True

    def __post_init__(self):
        self.color_bias = tuple(self.color_bias)
        self.angles = tuple(self.angles)
        if not 0.0 < self.confidence_tau <= 1.0:
            raise ConfigError("confidence threshold must be in (0, 1]")
        for name in ("steps_downstream", "steps_pretext", "steps_curve",
                     "steps_finetune", "batch_size", "corpus_train",
                     "corpus_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.constraint_order not in (0, 1, 2, 3):
            raise ConfigError(f"unsupported constraint order "
                              f"{self.constraint_order}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["color_bias"] = list(self.color_bias)
        out["angles"] = list(self.angles)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def degradation(self) -> DegradationSpec:
        return DegradationSpec(gamma=self.gamma_d, bias=self.color_bias,
                               noise_sigma=self.noise_sigma, seed=self.seed + 1)


@dataclass
class PseudoLabelSet:
    """Confidence-filtered predictions used as labels for SACC+."""

    entries: list[tuple[str, int, float]]
    tau: float

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InputError("pseudo-label ids must be unique")
        if any(conf < self.tau for _, _, conf in self.entries):
            raise InputError("pseudo label below the confidence threshold")

    def __len__(self) -> int:
        return len(self.entries)


class MetricsLog:
    """Per-step JSON-lines metrics plus in-memory series for the report."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._fh = None
        self.series: dict[str, list[dict]] = {}
        if self.path:
            self._fh = open(self.path, "w")
            self._fh.write(json.dumps({"schema_version": SCHEMA_VERSION,
                                       "kind": "metrics"}) + "\n")

    def log(self, phase: str, step: int, loss: float, accuracy: float) -> None:
        row = {"step": step, "phase": phase, "loss": float(loss),
               "accuracy": float(accuracy)}
        self.series.setdefault(phase, []).append(row)
        if self._fh:
            self._fh.write(json.dumps(row, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


class SaccModels:
    """The model bundle plus its parameter store and fixed pretext assets."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        streams = [np.random.default_rng(s)
                   for s in np.random.SeedSequence(cfg.seed).spawn(5)]
        self.predictor = CurvePredictor(streams[0], cfg.bit_depth)
        self.backbone = Backbone(streams[1])
        self.classifier = MlpHead(streams[2], self.backbone.feature_dim,
                                  cfg.num_classes)
        self.classifier_ft = MlpHead(streams[3], self.backbone.feature_dim,
                                     cfg.num_classes)
        self.pretext = MlpHead(streams[4], self.backbone.feature_dim,
                               cfg.codebook_size)
        self.store = ParameterStore()
        self.store.register("predictor", self.predictor.parameters())
        self.store.register("backbone", self.backbone.parameters())
        self.store.register("classifier", self.classifier.parameters())
        self.store.register("classifier_ft", self.classifier_ft.parameters())
        self.store.register("pretext", self.pretext.parameters())
        self.operator = build_integral_operator(cfg.bit_depth,
                                                cfg.constraint_order)
        self.codebook = build_codebook(cfg.codebook_size, seed=cfg.seed)
        self.completed: set[str] = set()

    def activate_only(self, group: str | None) -> None:
        """Freeze every parameter group except ``group``."""
        for g in self.store.groups():
            if g == group:
                self.store.unfreeze(g)
            else:
                self.store.freeze(g)

    def checksums(self) -> dict[str, str]:
        return {g: self.store.checksum(g) for g in self.store.groups()}


def _phase_rng(cfg: TrainConfig, phase: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, hash_phase(phase)])


def hash_phase(phase: str) -> int:
    return {PHASE_DOWNSTREAM: 11, PHASE_NORMAL: 22, PHASE_LOW: 33,
            PHASE_PLUS: 44, "eval": 55, "probe": 66}[phase]


def _batch_logits_labels(models: SaccModels, images: np.ndarray,
                         labels: np.ndarray, head: MlpHead):
    x = to_nchw(images)
    feats = models.backbone(x)
    return classify(head, feats), labels


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def pretrain_downstream(models: SaccModels, corpus: DeskCorpus,
                        metrics: MetricsLog) -> dict:
    """Supervised pretraining of backbone + classifier on normal light."""
    cfg = models.cfg
    models.activate_only(None)
    models.store.unfreeze("backbone")
    models.store.unfreeze("classifier")
    opt = make_optimizer(cfg.optimizer, models.store, cfg.lr_downstream,
                         cfg.momentum)
    rng = _phase_rng(cfg, PHASE_DOWNSTREAM)
    data, labels = corpus.normal_train.data, corpus.train_labels
    final = {}
    for step in range(cfg.steps_downstream):
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        logits, y = _batch_logits_labels(models, data[idx], labels[idx],
                                         models.classifier)
        loss = softmax_cross_entropy(logits, y)
        models.store.zero_grad()
        loss.backward()
        opt.step()
        acc = _accuracy(logits.data, y)
        metrics.log(PHASE_DOWNSTREAM, step, loss.item(), acc)
        final = {"loss": loss.item(), "accuracy": acc}
    # the SACC+ classifier starts from the pretrained one
    for (_, src), (_, dst) in zip(models.store.group_items("classifier"),
                                  models.store.group_items("classifier_ft")):
        dst.data[...] = src.data
    models.completed.add(PHASE_DOWNSTREAM)
    return {"steps": cfg.steps_downstream, "final": final}


def _puzzle_batch(images_hwc, models: SaccModels, rng) -> tuple[list, np.ndarray]:
    samples = sample_batch(images_hwc, models.codebook, rng,
                           angles=models.cfg.angles)
    labels = np.array([s.perm_index for s in samples], dtype=np.int64)
    return samples, labels


def pretext_accuracy(models: SaccModels, images: ImageBatch, rng,
                     n_samples: int = 500) -> float:
    """Accuracy of the pretext head on fresh puzzles from ``images``."""
    cfg = models.cfg
    hits = 0
    done = 0
    with engine.no_grad():
        while done < n_samples:
            take = min(EVAL_BATCH, n_samples - done)
            idx = rng.integers(0, len(images), size=take)
            crops = [jigsaw_crop(images.data[i]) for i in idx]
            samples, labels = _puzzle_batch(crops, models, rng)
            x = to_nchw(np.stack([s.image for s in samples]))
            logits = classify(models.pretext, models.backbone(x))
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            done += take
    return hits / n_samples


def train_phase_normal(models: SaccModels, corpus: DeskCorpus,
                       metrics: MetricsLog) -> dict:
    """Phase N: fit the pretext head on rotated-jigsaw normal images."""
    cfg = models.cfg
    if PHASE_DOWNSTREAM not in models.completed:
        raise ContractViolation("phase N requires the pretrained backbone")
    models.activate_only("pretext")
    if not models.store.is_frozen("backbone"):
        raise ContractViolation("backbone must be frozen during phase N")
    backbone_sum = models.store.checksum("backbone")

    rng = _phase_rng(cfg, PHASE_NORMAL)
    probe_rng = np.random.default_rng([cfg.seed, hash_phase("probe")])
    untrained_acc = pretext_accuracy(models, corpus.normal_test, probe_rng)

    opt = make_optimizer(cfg.optimizer, models.store, cfg.lr_pretext,
                         cfg.momentum)
    data = corpus.normal_train.data
    final = {}
    for step in range(cfg.steps_pretext):
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        crops = [jigsaw_crop(data[i]) for i in idx]
        samples, labels = _puzzle_batch(crops, models, rng)
        x = to_nchw(np.stack([s.image for s in samples]))
        logits = classify(models.pretext, models.backbone(x))
        loss = softmax_cross_entropy(logits, labels)
        models.store.zero_grad()
        loss.backward()
        opt.step()
        acc = _accuracy(logits.data, labels)
        metrics.log(PHASE_NORMAL, step, loss.item(), acc)
        final = {"loss": loss.item(), "accuracy": acc}

    if models.store.checksum("backbone") != backbone_sum:
        raise ContractViolation("backbone changed during phase N")
    probe_rng = np.random.default_rng([cfg.seed, hash_phase("probe")])
    trained_acc = pretext_accuracy(models, corpus.normal_test, probe_rng)
    models.completed.add(PHASE_NORMAL)
    return {"steps": cfg.steps_pretext, "final": final,
            "accuracy_untrained": untrained_acc,
            "accuracy_trained": trained_acc,
            "chance": 1.0 / cfg.codebook_size}


def _enhanced_puzzle_loss(models: SaccModels, images_hwc: list,
                          rng) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Differentiable phase-L loss for a list of HWC puzzle-ready images."""
    cfg = models.cfg
    n = len(images_hwc)
    channels = models.predictor.channels
    x = to_nchw(np.stack(images_hwc))
    v = predict_second_derivative(models.predictor, x)        # (N, P-1, C)
    cols = reshape(transpose(v, (1, 0, 2)), (cfg.bit_depth - 1, n * channels))
    g = integrate_normalize(cols, models.operator)            # (P, N*C)
    samples, labels = _puzzle_batch(images_hwc, models, rng)
    aug = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
    levels = np.clip(np.rint(aug * (cfg.bit_depth - 1)), 0,
                     cfg.bit_depth - 1).astype(np.intp)
    enhanced = lookup_curves(levels, g)
    logits = classify(models.pretext, models.backbone(enhanced))
    loss = softmax_cross_entropy(logits, labels)
    return loss, logits.data, labels


def train_phase_low(models: SaccModels, corpus: DeskCorpus,
                    metrics: MetricsLog) -> dict:
    """Phase L: fit the curve predictor against the frozen head."""
    cfg = models.cfg
    if PHASE_NORMAL not in models.completed:
        raise ContractViolation("phase L requires a head trained in phase N")
    models.activate_only("predictor")
    for group in ("backbone", "pretext"):
        if not models.store.is_frozen(group):
            raise ContractViolation(f"{group} must be frozen during phase L")
    frozen_sums = {g: models.store.checksum(g) for g in ("backbone", "pretext")}

    data = corpus.dark_train.data
    probe_rng = np.random.default_rng([cfg.seed, hash_phase("probe")])
    probe_idx = probe_rng.integers(0, len(data), size=cfg.batch_size * 4)

    def probe_loss() -> float:
        r = np.random.default_rng([cfg.seed, hash_phase("probe"), 2])
        total = 0.0
        with engine.no_grad():
            for lo in range(0, len(probe_idx), cfg.batch_size):
                chunk = probe_idx[lo:lo + cfg.batch_size]
                crops = [jigsaw_crop(data[i]) for i in chunk]
                loss, _, _ = _enhanced_puzzle_loss(models, crops, r)
                total += loss.item() * len(chunk)
        return total / len(probe_idx)

    eval_before = probe_loss()
    opt = make_optimizer(cfg.optimizer, models.store, cfg.lr_curve,
                         cfg.momentum)
    rng = _phase_rng(cfg, PHASE_LOW)
    final = {}
    for step in range(cfg.steps_curve):
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        crops = [jigsaw_crop(data[i]) for i in idx]
        loss, logits, labels = _enhanced_puzzle_loss(models, crops, rng)
        models.store.zero_grad()
        loss.backward()
        opt.step()
        acc = _accuracy(logits, labels)
        metrics.log(PHASE_LOW, step, loss.item(), acc)
        final = {"loss": loss.item(), "accuracy": acc}

    for group, digest in frozen_sums.items():
        if models.store.checksum(group) != digest:
            raise ContractViolation(f"{group} changed during phase L")
    eval_after = probe_loss()
    models.completed.add(PHASE_LOW)
    return {"steps": cfg.steps_curve, "final": final,
            "eval_loss_before": eval_before, "eval_loss_after": eval_after}


def enhance(images: ImageBatch, models: SaccModels
            ) -> tuple[ImageBatch, list[ConcaveCurveSet]]:
    """Predict one curve set per image and apply it."""
    from .curves import apply_curve

    out = np.empty_like(images.data)
    curve_sets: list[ConcaveCurveSet] = []
    with engine.no_grad():
        for lo in range(0, len(images), EVAL_BATCH):
            chunk = images.select(np.arange(lo, min(lo + EVAL_BATCH,
                                                    len(images))))
            v = predict_second_derivative(models.predictor, chunk)
            for i in range(len(chunk)):
                curves = build_curve(v.data[i], models.operator)
                single = ImageBatch(data=chunk.data[i:i + 1],
                                    bit_depth=images.bit_depth,
                                    ids=[chunk.ids[i]])
                out[lo + i] = apply_curve(single, curves).data[0]
                curve_sets.append(curves)
    return ImageBatch(data=out, bit_depth=images.bit_depth,
                      ids=list(images.ids)), curve_sets


def enhance_video(clip: VideoClip, models: SaccModels
                  ) -> tuple[VideoClip, ConcaveCurveSet]:
    """One shared curve for the whole clip, predicted from the frame stack
    merged into a single tall image."""
    from .curves import apply_curve_video

    t, h, w, c = clip.frames.shape
    merged = clip.frames.reshape(1, t * h, w, c)
    with engine.no_grad():
        v = predict_second_derivative(
            models.predictor, ImageBatch(data=merged, bit_depth=clip.bit_depth))
    curves = build_curve(v.data[0], models.operator)
    return apply_curve_video(clip, curves), curves


def classifier_probabilities(models: SaccModels, images: ImageBatch,
                             head: MlpHead) -> np.ndarray:
    probs = np.empty((len(images), head.n_out))
    with engine.no_grad():
        for lo in range(0, len(images), EVAL_BATCH):
            chunk = images.data[lo:lo + EVAL_BATCH]
            logits = classify(head, extract_features(models.backbone,
                                                     to_nchw(chunk)))
            probs[lo:lo + len(chunk)] = engine.softmax(logits.data)
    return probs


def generate_pseudo_labels(models: SaccModels, enhanced: ImageBatch,
                           tau: float) -> PseudoLabelSet:
    """Keep classifier predictions whose confidence reaches ``tau``."""
    probs = classifier_probabilities(models, enhanced, models.classifier)
    entries = []
    for i in range(len(enhanced)):
        conf = float(probs[i].max())
        if conf >= tau:
            entries.append((enhanced.ids[i], int(probs[i].argmax()), conf))
    return PseudoLabelSet(entries=entries, tau=tau)


def finetune_downstream(models: SaccModels, corpus: DeskCorpus,
                        enhanced_train: ImageBatch, pseudo: PseudoLabelSet,
                        metrics: MetricsLog, steps: int | None = None) -> dict:
    """SACC+ fine-tuning of the classifier copy on a 1:1 normal/pseudo mix."""
    cfg = models.cfg
    steps = cfg.steps_finetune if steps is None else steps
    predictor_sum = models.store.checksum("predictor")
    # start from the SACC classifier
    for (_, src), (_, dst) in zip(models.store.group_items("classifier"),
                                  models.store.group_items("classifier_ft")):
        dst.data[...] = src.data
    if steps == 0:
        models.completed.add(PHASE_PLUS)
        return {"steps": 0, "final": {}, "pseudo_count": len(pseudo)}

    models.activate_only("classifier_ft")
    opt = make_optimizer(cfg.optimizer, models.store, cfg.lr_finetune,
                         cfg.momentum)
    rng = _phase_rng(cfg, PHASE_PLUS)

    id_to_index = {img_id: i for i, img_id in enumerate(enhanced_train.ids)}
    pseudo_idx = np.array([id_to_index[e[0]] for e in pseudo.entries],
                          dtype=np.int64)
    pseudo_labels = np.array([e[1] for e in pseudo.entries], dtype=np.int64)
    if len(pseudo) == 0:
        logger.warning("empty pseudo-label set; fine-tuning on normal "
                       "images only")

    half = cfg.batch_size // 2
    normal_data, normal_labels = corpus.normal_train.data, corpus.train_labels
    final = {}
    for step in range(steps):
        n_idx = rng.integers(0, len(normal_data), size=half)
        batch = [normal_data[n_idx]]
        labels = [normal_labels[n_idx]]
        if len(pseudo) > 0:
            p_pick = rng.integers(0, len(pseudo), size=cfg.batch_size - half)
            batch.append(enhanced_train.data[pseudo_idx[p_pick]])
            labels.append(pseudo_labels[p_pick])
        images = np.concatenate(batch)
        y = np.concatenate(labels)
        logits, y = _batch_logits_labels(models, images, y,
                                         models.classifier_ft)
        loss = softmax_cross_entropy(logits, y)
        models.store.zero_grad()
        loss.backward()
        opt.step()
        acc = _accuracy(logits.data, y)
        metrics.log(PHASE_PLUS, step, loss.item(), acc)
        final = {"loss": loss.item(), "accuracy": acc}

    if models.store.checksum("predictor") != predictor_sum:
        raise ContractViolation("predictor changed during SACC+ fine-tuning")
    models.completed.add(PHASE_PLUS)
    return {"steps": steps, "final": final, "pseudo_count": len(pseudo)}


def classification_accuracy(models: SaccModels, images: ImageBatch,
                            labels: np.ndarray, head: MlpHead) -> float:
    probs = classifier_probabilities(models, images, head)
    return float((probs.argmax(axis=1) == labels).mean())


def evaluate(models: SaccModels, corpus: DeskCorpus,
             with_plus: bool = True) -> dict:
    """Baseline / SACC / SACC+ accuracies on the darkened test split."""
    enhanced_test, curve_sets = enhance(corpus.dark_test, models)
    out = {
        "normal": classification_accuracy(models, corpus.normal_test,
                                          corpus.test_labels,
                                          models.classifier),
        "baseline_dark": classification_accuracy(models, corpus.dark_test,
                                                 corpus.test_labels,
                                                 models.classifier),
        "sacc": classification_accuracy(models, enhanced_test,
                                        corpus.test_labels,
                                        models.classifier),
        "mean_brightness_dark": float(corpus.dark_test.data.mean()),
        "mean_brightness_enhanced": float(enhanced_test.data.mean()),
        "degenerate_channels": int(sum(c.degenerate.sum()
                                       for c in curve_sets)),
    }
    if with_plus:
        out["sacc_plus"] = classification_accuracy(models, enhanced_test,
                                                   corpus.test_labels,
                                                   models.classifier_ft)
    drop = out["normal"] - out["baseline_dark"]
    out["drop"] = drop
    if drop > 0:
        out["recovery_fraction"] = (out["sacc"] - out["baseline_dark"]) / drop
    return out


def mean_curve(models: SaccModels, images: ImageBatch,
               max_images: int = 100) -> np.ndarray:
    """Average predicted curve (P, C) over up to ``max_images`` images."""
    take = min(max_images, len(images))
    with engine.no_grad():
        v = predict_second_derivative(models.predictor,
                                      images.select(np.arange(take)))
    acc = np.zeros((models.cfg.bit_depth, models.predictor.channels))
    for i in range(take):
        acc += build_curve(v.data[i], models.operator).g
    return acc / take


def run_pipeline(cfg: TrainConfig, corpus: DeskCorpus | None = None,
                 phases=ALL_PHASES, metrics: MetricsLog | None = None,
                 models: SaccModels | None = None) -> tuple[dict, SaccModels]:
    """Run the requested phases in order and assemble the final report."""
    if corpus is None:
        corpus = build_desk_corpus(cfg.seed, n_train=cfg.corpus_train,
                                   n_test=cfg.corpus_test,
                                   size=cfg.image_size,
                                   bit_depth=cfg.bit_depth,
                                   degradation=cfg.degradation())
    metrics = metrics or MetricsLog()
    models = models or SaccModels(cfg)
    report: dict = {"schema_version": SCHEMA_VERSION,
                    "config": cfg.to_dict(),
                    "phases": {},
                    "checksums": {"initial": models.checksums()}}

    for phase in phases:
        if phase == PHASE_DOWNSTREAM:
            report["phases"][phase] = pretrain_downstream(models, corpus,
                                                          metrics)
        elif phase == PHASE_NORMAL:
            report["phases"][phase] = train_phase_normal(models, corpus,
                                                         metrics)
        elif phase == PHASE_LOW:
            report["phases"][phase] = train_phase_low(models, corpus, metrics)
        elif phase == PHASE_PLUS:
            if not cfg.run_plus:
                continue
            enhanced_train, _ = enhance(corpus.dark_train, models)
            pseudo = generate_pseudo_labels(models, enhanced_train,
                                            cfg.confidence_tau)
            report["phases"][phase] = finetune_downstream(
                models, corpus, enhanced_train, pseudo, metrics)
        else:
            raise ConfigError(f"unknown phase {phase!r}")
        report["checksums"][f"after_{phase}"] = models.checksums()

    report["eval"] = evaluate(models, corpus,
                              with_plus=PHASE_PLUS in models.completed)
    return report, models
