"""Training and evaluation orchestration.

Two stages: clean contrastive pretraining produces the model that gets frozen
as the teacher, then adversarial fine-tuning (the full method or one of its
ablation variants) trains a student against that teacher. Evaluation covers
clean/robust accuracy, text-embedding geometry, and similarity-matrix
diagnostics, all deterministic per seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import AttackConfig, classify, pgd_attack, robust_accuracy
from .data import Dataset
from .errors import (
    EmptyDataset,
    InvalidConfig,
    InvalidVariant,
    IoFailure,
    ReportSchemaError,
    TooFewClasses,
)
from .losses import LossWeights, cosine_sim_matrix, tima_loss
from .model import DualEncoder, TeacherSnapshot
from .tensor import Tensor, backward, l2_normalize_rows, row_log_softmax

Array = np.ndarray

VARIANTS = ("tima", "tecoa", "iat_only", "tai_only", "mhe_only")

REPORT_KEYS = ("config", "seed", "clean_accuracy", "robust_accuracy",
               "text_min_distance", "text_mean_distance", "matrices",
               "superclass_confusion")


def _default_train_attack() -> AttackConfig:
    return AttackConfig(eps=1 / 255, step_size=1 / 255, steps=2, restarts=0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 128
    variant: str = "tima"
    freeze_text: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)
    train_attack: AttackConfig = field(default_factory=_default_train_attack)
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")


class _Momentum:
    """Plain SGD with momentum: v <- mu v + g; w <- w - lr v."""

    def __init__(self, params: Sequence[Tensor], lr: float, mu: float):
        self.params = list(params)
        self.lr = lr
        self.mu = mu
        self.velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, grads: Dict[Tensor, Array]) -> None:
        for p in self.params:
            v = self.mu * self.velocity[id(p)] + grads[p]
            self.velocity[id(p)] = v
            p.data -= self.lr * v


def _batches(n: int, batch_size: int, rng) -> List[Array]:
    perm = rng.permutation(n)
    return [perm[lo:lo + batch_size] for lo in range(0, n, batch_size)]


def contrastive_ce(model: DualEncoder, x: Array, y: Array) -> Tensor:
    """Clean contrastive cross-entropy at the model temperature."""
    z = model.encode_images(x)
    t = model.encode_classes()
    log_p = row_log_softmax(cosine_sim_matrix(z, t), model.tau)
    n, c = log_p.shape
    one_hot = np.zeros((n, c))
    one_hot[np.arange(n), y] = 1.0
    return (log_p * Tensor(one_hot, op="const")).sum() * (-1.0 / n)


def pretrain_clean(model: DualEncoder, train_data: Dataset,
                   cfg: TrainConfig) -> Tuple[DualEncoder, List[float]]:
    """Clean contrastive pretraining of both encoders; this is the model that
    then gets frozen via snapshot_teacher. Returns (model, per-epoch losses)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x9E)))
    opt = _Momentum(model.parameters(), cfg.learning_rate, cfg.momentum)
    trace = []
    n = train_data.num_samples
    for _ in range(cfg.epochs):
        total = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            loss = contrastive_ce(model, train_data.images[idx], train_data.labels[idx])
            opt.step(backward(loss, opt.params))
            total += loss.item() * len(idx)
        trace.append(total / n)
    return model, trace


def resolve_variant(variant: str, w: LossWeights, freeze_text: bool,
                    attack: AttackConfig) -> Tuple[LossWeights, bool, AttackConfig]:
    """Map an ablation variant onto (loss weights, freeze_text, attack)."""
    if variant == "tima":
        return w, freeze_text, attack
    if variant == "tecoa":
        w = dataclasses.replace(w, m=0.0, lam=0.0, lam_v=0.0)
        return w, True, dataclasses.replace(attack, text_source="teacher")
    if variant == "iat_only":
        return dataclasses.replace(w, m=0.0, lam_v=0.0), freeze_text, attack
    if variant == "tai_only":
        return dataclasses.replace(w, lam=0.0), True, attack
    if variant == "mhe_only":
        return dataclasses.replace(w, m=0.0, lam_t=0.0, lam_v=0.0), freeze_text, attack
    raise InvalidVariant(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def finetune(model: DualEncoder, teacher: TeacherSnapshot, train_data: Dataset,
             cfg: TrainConfig) -> Tuple[DualEncoder, List[float]]:
    """Adversarial fine-tuning against a frozen teacher.

    Per batch: attack the current student inside the training epsilon-ball,
    evaluate the variant-filtered combined loss, update with SGD momentum.
    Returns (model, per-epoch mean losses).
    """
    w, freeze_text, attack = resolve_variant(cfg.variant, cfg.loss_weights,
                                             cfg.freeze_text, cfg.train_attack)
    params = model.image_parameters()
    if not freeze_text:
        params = params + model.text_parameters()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xF7)))
    opt = _Momentum(params, cfg.learning_rate, cfg.momentum)
    trace = []
    n = train_data.num_samples
    for epoch in range(cfg.epochs):
        total = 0.0
        for bi, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            xb = train_data.images[idx]
            yb = train_data.labels[idx]
            if attack.text_source == "student":
                text = model.encode_classes().data
            else:
                text = teacher.t_hat
            batch_attack = dataclasses.replace(
                attack, seed=attack.seed + 1000003 * epoch + bi)
            x_adv = pgd_attack(model, text, xb, yb, batch_attack)
            loss, _ = tima_loss(model, teacher, xb, x_adv, yb, w)
            opt.step(backward(loss, opt.params))
            total += loss.item() * len(idx)
        trace.append(total / n)
    return model, trace


def eval_clean(model: DualEncoder, test_data: Dataset, batch_size: int = 256) -> float:
    """Fraction classified correctly on clean images (nearest text embedding)."""
    n = test_data.num_samples
    if n == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    text = model.encode_classes().data
    correct = 0
    for lo in range(0, n, batch_size):
        preds = classify(model, text, test_data.images[lo:lo + batch_size])
        correct += int(np.sum(preds == test_data.labels[lo:lo + batch_size]))
    return correct / n


def interclass_stats(t) -> Tuple[float, float]:
    """(min, mean) Euclidean distance over unordered pairs of embedding rows."""
    t = np.asarray(getattr(t, "data", t), dtype=np.float64)
    c = t.shape[0]
    if c < 2:
        raise TooFewClasses(f"need at least 2 embeddings, got {c}")
    iu = np.triu_indices(c, k=1)
    diffs = t[iu[0]] - t[iu[1]]
    dists = np.sqrt(np.sum(diffs * diffs, axis=1))
    return float(dists.min()), float(dists.mean())


def superclass_confusion(model: DualEncoder, test_data: Dataset,
                         batch_size: int = 256) -> List[List[int]]:
    """Counts of (true superclass, predicted superclass) on clean images."""
    supers = test_data.superclass_of
    s = int(supers.max()) + 1
    counts = np.zeros((s, s), dtype=np.int64)
    text = model.encode_classes().data
    for lo in range(0, test_data.num_samples, batch_size):
        preds = classify(model, text, test_data.images[lo:lo + batch_size])
        true = supers[test_data.labels[lo:lo + batch_size]]
        np.add.at(counts, (true, supers[preds]), 1)
    return counts.tolist()


# -- similarity-matrix diagnostics ---------------------------------------------


def _normalize_rows_np(m: Array) -> Array:
    return l2_normalize_rows(Tensor(m, op="const")).data


def _class_mean_embeddings(encoder: DualEncoder, images: Array, labels: Array,
                           num_classes: int, batch_size: int = 256) -> Array:
    d = encoder.cfg.embed_dim
    sums = np.zeros((num_classes, d))
    counts = np.zeros(num_classes)
    for lo in range(0, len(labels), batch_size):
        z = encoder.encode_images(images[lo:lo + batch_size]).data
        np.add.at(sums, labels[lo:lo + batch_size], z)
        np.add.at(counts, labels[lo:lo + batch_size], 1)
    return _normalize_rows_np(sums / np.maximum(counts, 1.0)[:, None])


def _write_csv(matrix: Array, path: Path) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    path.write_text("\n".join(lines) + "\n")


def _write_pgm(matrix: Array, path: Path) -> None:
    # linear map [-1, 1] -> [0, 255]
    levels = np.clip(np.round((matrix + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = levels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + levels.tobytes())


def eps_tag(eps_text: str) -> str:
    return eps_text.replace("/", "_")


def export_similarity_matrices(model: DualEncoder, teacher: TeacherSnapshot,
                               test_data: Dataset, eps_list: Sequence[Tuple[str, float]],
                               out_dir, attack: Optional[AttackConfig] = None
                               ) -> Dict[str, Dict[str, str]]:
    """Write class-level cosine-similarity matrices as CSV + PGM heatmaps.

    For both the student and the frozen teacher: text-text, clean
    image-text (per-class mean image embedding vs class text), and one
    adversarial image-image matrix per epsilon. Returns a manifest of
    relative file paths keyed by matrix name.
    """
    attack = attack or AttackConfig()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    c = test_data.num_classes
    manifest: Dict[str, Dict[str, str]] = {}

    def emit(name: str, matrix: Array) -> None:
        try:
            _write_csv(matrix, out_dir / f"{name}.csv")
            _write_pgm(matrix, out_dir / f"{name}.pgm")
        except OSError as exc:
            raise IoFailure(f"cannot write matrix {name}: {exc}") from exc
        manifest[name] = {"csv": f"{name}.csv", "pgm": f"{name}.pgm"}

    for who, encoder, text in (("student", model, model.encode_classes().data),
                               ("teacher", teacher.model, teacher.t_hat)):
        emit(f"{who}_text_text", text @ text.T)
        means = _class_mean_embeddings(encoder, test_data.images, test_data.labels, c)
        emit(f"{who}_image_text", means @ text.T)
        for eps_text, eps in eps_list:
            adv_sums = np.zeros((c, encoder.cfg.embed_dim))
            counts = np.zeros(c)
            for lo in range(0, test_data.num_samples, 128):
                xb = test_data.images[lo:lo + 128]
                yb = test_data.labels[lo:lo + 128]
                cfg = dataclasses.replace(attack, eps=eps, seed=attack.seed + lo)
                x_adv = pgd_attack(encoder, text, xb, yb, cfg)
                np.add.at(adv_sums, yb, encoder.encode_images(x_adv).data)
                np.add.at(counts, yb, 1)
            adv_means = _normalize_rows_np(adv_sums / np.maximum(counts, 1.0)[:, None])
            emit(f"{who}_adv_adv_eps_{eps_tag(eps_text)}", adv_means @ adv_means.T)
    return manifest


# -- reports --------------------------------------------------------------------


@dataclass
class EvalReport:
    clean_accuracy: float
    robust_accuracy: Dict[str, float]            # eps text -> accuracy
    text_min_distance: Dict[str, float]          # student / teacher
    text_mean_distance: Dict[str, float]
    superclass_confusion: List[List[int]]
    matrices: Dict[str, Dict[str, str]]
    config: Dict[str, str]
    seed: int


def evaluate(model: DualEncoder, teacher: TeacherSnapshot, test_data: Dataset,
             eps_list: Sequence[Tuple[str, float]], attack: Optional[AttackConfig] = None,
             matrices_dir=None, config_echo: Optional[Dict[str, str]] = None,
             seed: int = 0) -> EvalReport:
    """Full evaluation pass; eps_list entries are (display text, value)."""
    attack = attack or AttackConfig()
    clean = eval_clean(model, test_data)
    robust = {}
    for eps_text, eps in eps_list:
        cfg = dataclasses.replace(attack, eps=eps)
        robust[eps_text] = robust_accuracy(model, teacher, test_data, cfg)
    s_min, s_mean = interclass_stats(model.encode_classes().data)
    t_min, t_mean = interclass_stats(teacher.t_hat)
    matrices = {}
    if matrices_dir is not None:
        matrices = export_similarity_matrices(model, teacher, test_data,
                                              eps_list, matrices_dir, attack)
    return EvalReport(
        clean_accuracy=clean,
        robust_accuracy=robust,
        text_min_distance={"student": s_min, "teacher": t_min},
        text_mean_distance={"student": s_mean, "teacher": t_mean},
        superclass_confusion=superclass_confusion(model, test_data),
        matrices=matrices,
        config=dict(config_echo or {}),
        seed=seed,
    )


def write_report(report: EvalReport, path) -> None:
    """Serialize to JSON; identical reports produce byte-identical files."""
    payload = {
        "config": report.config,
        "seed": report.seed,
        "clean_accuracy": report.clean_accuracy,
        "robust_accuracy": report.robust_accuracy,
        "text_min_distance": report.text_min_distance,
        "text_mean_distance": report.text_mean_distance,
        "matrices": report.matrices,
        "superclass_confusion": report.superclass_confusion,
    }
    try:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc


def read_report(path) -> dict:
    """Parse a report file, checking the documented key set."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read report {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportSchemaError(f"{path}: invalid JSON: {exc}") from exc
    missing = [k for k in REPORT_KEYS if k not in payload]
    if missing:
        raise ReportSchemaError(f"{path}: missing required keys {missing}")
    return payload
