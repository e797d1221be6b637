"""l-infinity PGD adversarial example generation and robust evaluation.

The same routine serves the cheap 2-step training attack and the 10-step
(optionally multi-restart) evaluation attack: iterated signed-gradient ascent
on the contrastive cross-entropy, projected into the epsilon-ball around the
clean input and into the valid pixel range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, InvalidConfig
from .losses import cosine_sim_matrix
from .tensor import Tensor, backward, row_log_softmax

Array = np.ndarray

TEXT_SOURCES = ("student", "teacher")


@dataclass(frozen=True)
class AttackConfig:
    """Defaults follow the evaluation protocol: 10 steps of size 1/255.

    ``restarts`` counts the extra random starts; 0 means a single run from
    the clean input. ``text_source`` picks whose class-text embeddings
    parameterize the attacked objective (and classification downstream).
    """

    eps: float = 1 / 255
    step_size: float = 1 / 255
    steps: int = 10
    restarts: int = 0
    seed: int = 0
    text_source: str = "student"

    def __post_init__(self):
        if self.eps < 0:
            raise InvalidConfig(f"eps must be >= 0, got {self.eps}")
        if self.steps < 0 or self.restarts < 0:
            raise InvalidConfig("steps and restarts must be >= 0")
        if self.steps > 0 and not self.step_size > 0:
            raise InvalidConfig(f"step_size must be positive, got {self.step_size}")
        if self.text_source not in TEXT_SOURCES:
            raise InvalidConfig(f"text_source must be one of {TEXT_SOURCES}")


def _one_hot(y: Array, c: int) -> Array:
    out = np.zeros((len(y), c))
    out[np.arange(len(y)), y] = 1.0
    return out


def per_sample_ce(encoder, text_matrix: Array, x: Array, y: Array) -> Array:
    """Contrastive cross-entropy of each sample at the encoder's temperature."""
    z = encoder.encode_images(np.asarray(x, dtype=np.float64))
    log_p = row_log_softmax(cosine_sim_matrix(z, text_matrix), encoder.tau)
    return -log_p.data[np.arange(len(y)), np.asarray(y)]


def _ce_input_grad(encoder, text_matrix: Array, x: Array, y: Array) -> Array:
    xt = Tensor(x, op="leaf")
    z = encoder.encode_images(xt)
    log_p = row_log_softmax(cosine_sim_matrix(z, text_matrix), encoder.tau)
    mask = Tensor(_one_hot(np.asarray(y), log_p.shape[1]), op="const")
    loss = (log_p * mask).sum() * -1.0
    return backward(loss, [xt])[xt]


def pgd_steps(encoder, text_matrix: Array, x_center: Array, x_start: Array,
              y: Array, eps: float, step_size: float, steps: int) -> Array:
    """The bare iteration, memoryless in x: running k steps and then k' more
    from the result equals a single (k+k')-step run."""
    x = np.array(x_start, dtype=np.float64)
    lo = np.maximum(x_center - eps, 0.0)
    hi = np.minimum(x_center + eps, 1.0)
    for _ in range(steps):
        grad = _ce_input_grad(encoder, text_matrix, x, y)
        x = np.clip(x + step_size * np.sign(grad), lo, hi)
    return x


def pgd_attack(encoder, text_matrix: Array, x: Array, y: Array,
               cfg: AttackConfig) -> Array:
    """Strongest-of-restarts PGD within the l-inf ball of radius cfg.eps.

    Run 0 starts at the clean input; later runs start at seeded uniform
    points of the ball. Per sample, the candidate with the highest final
    cross-entropy wins (earliest run on ties, for determinism).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if cfg.eps == 0.0:
        return x.copy()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xAD)))
    best_x = None
    best_ce = None
    for run in range(cfg.restarts + 1):
        if run == 0:
            start = x.copy()
        else:
            start = np.clip(x + rng.uniform(-cfg.eps, cfg.eps, size=x.shape), 0.0, 1.0)
        cand = pgd_steps(encoder, text_matrix, x, start, y,
                         cfg.eps, cfg.step_size, cfg.steps)
        ce = per_sample_ce(encoder, text_matrix, cand, y)
        if best_x is None:
            best_x, best_ce = cand, ce
        else:
            better = ce > best_ce
            best_x = np.where(better[:, None], cand, best_x)
            best_ce = np.where(better, ce, best_ce)
    assert np.max(np.abs(best_x - x)) <= cfg.eps + 1e-9, "left the epsilon ball"
    assert best_x.min() >= 0.0 and best_x.max() <= 1.0, "left the pixel range"
    return best_x


def classify(encoder, text_matrix: Array, x: Array) -> Array:
    """argmax_k cosine(z, t_k); np.argmax breaks ties toward the lowest index."""
    z = encoder.encode_images(np.asarray(x, dtype=np.float64))
    return np.argmax(cosine_sim_matrix(z, text_matrix).data, axis=1)


def robust_accuracy(model, teacher, dataset, cfg: AttackConfig | None = None,
                    batch_size: int = 128) -> float:
    """Fraction of samples still classified correctly after the attack.

    ``cfg.text_source`` selects the class-text embeddings used for both the
    attack objective and classification: "student" evaluates the fine-tuned
    model end-to-end, "teacher" pins the frozen text embeddings.
    """
    cfg = cfg or AttackConfig()
    n = dataset.num_samples
    if n == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    if cfg.text_source == "student":
        text = model.encode_classes().data
    else:
        text = teacher.t_hat
    correct = 0
    for lo in range(0, n, batch_size):
        xb = dataset.images[lo:lo + batch_size]
        yb = dataset.labels[lo:lo + batch_size]
        batch_cfg = AttackConfig(eps=cfg.eps, step_size=cfg.step_size,
                                 steps=cfg.steps, restarts=cfg.restarts,
                                 seed=cfg.seed + lo, text_source=cfg.text_source)
        x_adv = pgd_attack(model, text, xb, yb, batch_cfg)
        correct += int(np.sum(classify(model, text, x_adv) == yb))
    return correct / n
