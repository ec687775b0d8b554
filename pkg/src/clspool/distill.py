"""Teacher-student training: random-erasing augmentation, the two
training losses, Adam with a trapezoid learning-rate curve, and the
simultaneous-update step.

The teacher trains on plain cross-entropy of its class-token output.
The student trains on cross-entropy of its class token plus the KL
divergence from the teacher's (gradient-severed) posteriors to its
distillation-token posteriors. Both models see independently augmented
copies of the same batch and sample their class tokens independently.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tokens as tok
from .autodiff import Tensor
from .model import TokenPoolingModel


@dataclass
class EraseSpec:
    """Random-erasing parameters: one time-feature rectangle per draw.

    `area` is the erased fraction of the T x D grid, `aspect` the
    height/width ratio of the rectangle (time rows over feature
    columns). Fill level 0 assumes roughly centered features.
    """

    probability: float = 0.5
    area: tuple = (0.02, 0.2)
    aspect: tuple = (0.3, 3.3)
    fill: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        lo, hi = self.area
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"area range {self.area} outside (0, 1]")
        lo, hi = self.aspect
        if not 0.0 < lo <= hi:
            raise ValueError(f"aspect range {self.aspect} invalid")


def random_erase(frames, spec, rng):
    """Overwrite one random rectangle with the fill value (maybe).

    With probability `spec.probability` a rectangle is erased: its
    width comes from the drawn area and aspect, its height then meets
    the drawn area, both clamped to the grid, so a full-area draw
    erases everything. Returns an (unmodified) copy otherwise.
    """
    rng = np.random.default_rng(rng)
    out = frames.copy()
    if rng.uniform() >= spec.probability:
        return out
    n_rows, n_cols = frames.shape
    area = rng.uniform(*spec.area) * n_rows * n_cols
    aspect = rng.uniform(*spec.aspect)
    width = min(n_cols, max(1, round(np.sqrt(area / aspect))))
    height = min(n_rows, max(1, round(area / width)))
    r0 = rng.integers(0, n_rows - height + 1)
    c0 = rng.integers(0, n_cols - width + 1)
    out[r0:r0 + height, c0:c0 + width] = spec.fill
    return out


def _check_distribution(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {p.shape}")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a probability distribution")
    return p


def kld_loss(p_teacher, p_student):
    """KL divergence D(p_teacher || p_student), >= 0 and 0 iff equal.

    Student probabilities are floored at 1e-12 inside the log; zero
    teacher entries contribute exactly zero.
    """
    p_t = _check_distribution(p_teacher, "p_teacher")
    p_s = _check_distribution(p_student, "p_student")
    if p_t.shape != p_s.shape:
        raise ValueError(f"length mismatch: {p_t.shape} vs {p_s.shape}")
    log_ratio = np.log(np.maximum(p_t, ad.LOG_FLOOR)) - np.log(np.maximum(p_s, ad.LOG_FLOOR))
    return float(np.where(p_t > 0, p_t * log_ratio, 0.0).sum())


def teacher_loss(cls_logits, labels):
    """Mean cross-entropy of the class-token logits vs ground truth."""
    return ad.cross_entropy(cls_logits, labels)


def student_loss(cls_logits, dist_logits, labels, teacher_posteriors):
    """Class-token cross-entropy plus mean KL from the teacher.

    `teacher_posteriors` is a plain (B, C) probability array: the
    teacher's softmaxed class-token outputs with gradients severed, so
    nothing here can train the teacher.
    """
    p_t = np.asarray(teacher_posteriors, dtype=np.float64)
    if p_t.shape != dist_logits.values.shape:
        raise ad.ShapeError(
            f"teacher posteriors {p_t.shape} vs dist logits {dist_logits.values.shape}"
        )
    n = p_t.shape[0]
    log_p_t = np.log(np.maximum(p_t, ad.LOG_FLOOR))
    p_s = ad.softmax(dist_logits, axis=1)
    log_p_s = ad.log(p_s)
    per_entry = ad.mul(Tensor(p_t), ad.sub(Tensor(log_p_t), log_p_s))
    kld = ad.scale(ad.tensor_sum(per_entry), 1.0 / n)
    return ad.add(kld, ad.cross_entropy(cls_logits, labels))


@dataclass
class TrapezoidLr:
    """Piecewise-linear learning rate: ramp up, then decay.

    Step round(ramp_fraction * total_steps) sits exactly at lr_peak;
    step 0 is lr_start and the final step (total_steps - 1) is lr_end.
    """

    total_steps: int
    lr_start: float = 1e-3
    lr_peak: float = 5e-3
    lr_end: float = 1e-4
    ramp_fraction: float = 0.5

    def __call__(self, step):
        ramp = max(1, min(self.total_steps - 1, round(self.total_steps * self.ramp_fraction)))
        if step <= ramp:
            t = step / ramp
            return self.lr_start * (1.0 - t) + self.lr_peak * t
        t = (step - ramp) / max(1, self.total_steps - 1 - ramp)
        return self.lr_peak * (1.0 - t) + self.lr_end * t


class Adam:
    """First/second-moment adaptive updates over a fixed parameter list."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        params = list(params)
        if params and isinstance(params[0], tuple):
            params = [p for _, p in params]
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        """Moment buffers in parameter order, for checkpointing."""
        return self.m, self.v


@dataclass
class ModelPair:
    """Teacher and student sharing one architecture config."""

    teacher: TokenPoolingModel
    student: TokenPoolingModel

    @classmethod
    def init(cls, config, input_dim, n_classes, n_tokens, rng):
        teacher = TokenPoolingModel(config, input_dim, n_classes, n_tokens,
                                    distillation=False, rng=rng)
        student = TokenPoolingModel(config, input_dim, n_classes, n_tokens,
                                    distillation=True, rng=rng)
        return cls(teacher, student)


def pair_forward(pair, inputs_teacher, inputs_student, idx_teacher, idx_student):
    """Batched logits for both networks.

    Returns (teacher_cls, student_cls, student_dist) as (B, C) tensors.
    """
    t_rows, s_rows, d_rows = [], [], []
    for b in range(len(inputs_teacher)):
        cls_t, _, _ = pair.teacher.classify(inputs_teacher[b], int(idx_teacher[b]))
        cls_s, dist_s, _ = pair.student.classify(inputs_student[b], int(idx_student[b]))
        t_rows.append(cls_t)
        s_rows.append(cls_s)
        d_rows.append(dist_s)
    return (ad.concat_rows(t_rows), ad.concat_rows(s_rows), ad.concat_rows(d_rows))


def train_step(pair, batch, labels, alpha_n, *, opt_teacher, opt_student, lr,
               erase, rng_erase_teacher, rng_erase_student,
               rng_tokens_teacher, rng_tokens_student, combine):
    """One simultaneous update of teacher and student.

    `batch` is a list of feature sequences; `combine(frames, positions)`
    yields the model input. Each network gets its own erasing draw per
    example and its own token-index draw per batch. The teacher steps on
    its cross-entropy only; the student steps on its combined loss with
    the teacher posteriors severed. Returns (teacher_loss, student_loss)
    as floats.
    """
    if not batch:
        raise ValueError("empty batch")
    n = len(batch)
    idx_t = tok.sample_tokens(pair.teacher.tokens, alpha_n, n, rng_tokens_teacher)
    idx_s = tok.sample_tokens(pair.student.tokens, alpha_n, n, rng_tokens_student)
    inputs_t, inputs_s = [], []
    for seq in batch:
        inputs_t.append(combine(random_erase(seq.frames, erase, rng_erase_teacher),
                                seq.positions))
        inputs_s.append(combine(random_erase(seq.frames, erase, rng_erase_student),
                                seq.positions))
    logits_t, logits_s, logits_d = pair_forward(pair, inputs_t, inputs_s, idx_t, idx_s)

    loss_t = teacher_loss(logits_t, labels)
    posteriors = ad.softmax_values(logits_t.values, axis=1)
    loss_s = student_loss(logits_s, logits_d, labels, posteriors)

    opt_teacher.zero_grad()
    ad.backward(loss_t)
    opt_teacher.step(lr)

    opt_student.zero_grad()
    ad.backward(loss_s)
    opt_student.step(lr)
    return float(loss_t.values), float(loss_s.values)
