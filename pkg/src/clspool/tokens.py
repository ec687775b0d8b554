"""Class-token machinery: the matrix of candidate tokens, the per-epoch
availability schedule that shrinks it to a single survivor, per-batch
index sampling, attachment/extraction around the encoder, and the
per-head supervector view of the token's attention.

Tokens always sit at the end of the sequence: class token right after
the last frame, distillation token (students only) after that. Row 0 of
the token matrix is the one left available at the end of training, so
evaluation never samples.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import init_param


class TokenMatrix:
    """Trainable n_tokens x d_model matrix of candidate class tokens."""

    def __init__(self, vectors):
        if vectors.values.ndim != 2 or vectors.values.shape[0] < 1:
            raise ValueError(f"token matrix must be (R, d_model), got {vectors.values.shape}")
        self.vectors = vectors

    @classmethod
    def init(cls, n_tokens, d_model, rng):
        return cls(init_param(rng, d_model, (n_tokens, d_model)))

    @property
    def n_tokens(self):
        return self.vectors.values.shape[0]

    @property
    def d_model(self):
        return self.vectors.values.shape[1]

    def row(self, index):
        """One token as a 1 x d_model tensor; gradients flow to that row."""
        if not 0 <= index < self.n_tokens:
            raise IndexError(f"token index {index} out of range ({self.n_tokens} tokens)")
        return ad.gather_rows(self.vectors, [index])


@dataclass
class Schedule:
    """Available-token counts per epoch, non-increasing from R down to 1."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.int64)
        a = self.alpha
        if a.size < 1 or a.min() < 1:
            raise ValueError("schedule entries must be positive")
        if (np.diff(a) > 0).any():
            raise ValueError("schedule must be non-increasing")
        if a.size > 1 and a[-1] != 1:
            raise ValueError("schedule must end at a single token")

    @property
    def n_epochs(self):
        return int(self.alpha.size)


def build_schedule(n_tokens, n_epochs):
    """Linear-in-epoch reduction from n_tokens available down to 1.

    alpha[n] = max(1, round(R * (N-1-n) / (N-1))) with the first epoch
    pinned at R; degenerates to all-ones when R == 1 or N == 1.
    """
    if n_tokens < 1 or n_epochs < 1:
        raise ValueError(f"counts must be positive, got R={n_tokens}, N={n_epochs}")
    if n_tokens == 1 or n_epochs == 1:
        return Schedule(np.ones(n_epochs, dtype=np.int64))
    alpha = [max(1, round(n_tokens * (n_epochs - 1 - n) / (n_epochs - 1)))
             for n in range(n_epochs)]
    alpha[0] = n_tokens
    return Schedule(np.asarray(alpha, dtype=np.int64))


def sample_tokens(matrix, alpha_n, batch_size, rng):
    """Uniform token indices over the first alpha_n rows, one per example."""
    if not 1 <= alpha_n <= matrix.n_tokens:
        raise ValueError(f"alpha_n {alpha_n} out of range [1, {matrix.n_tokens}]")
    rng = np.random.default_rng(rng)
    return rng.integers(0, alpha_n, size=batch_size)


def attach_tokens(seq, cls_token, dist_token=None):
    """Append the class token (and optionally the distillation token)
    after the last frame."""
    parts = [seq, cls_token]
    if dist_token is not None:
        parts.append(dist_token)
    for t in parts[1:]:
        if t.values.shape != (1, seq.values.shape[1]):
            raise ad.ShapeError(
                f"token shape {t.values.shape} does not match width {seq.values.shape[1]}"
            )
    return ad.concat_rows(parts)


def extract_token_states(encoded, n_tokens):
    """Final states of the appended tokens, in attachment order.

    The first returned row is the class-token state (the utterance
    embedding); with n_tokens == 2 the second is the distillation token.
    """
    if n_tokens not in (1, 2):
        raise ValueError(f"n_tokens must be 1 or 2, got {n_tokens}")
    total = encoded.values.shape[0]
    if total <= n_tokens:
        raise ValueError(f"sequence of {total} rows cannot hold {n_tokens} tokens")
    return [ad.slice_rows(encoded, total - n_tokens + i, total - n_tokens + i + 1)
            for i in range(n_tokens)]


@dataclass
class SupervectorView:
    """Per-head token attention summaries from the final MSA layer.

    subvectors[h] is the token row of A_h V_h; `concatenated` stacks
    them in head order and reproduces the encoder's token output row
    before the output projection. weights[h] is the token's attention
    row, i.e. the normalized pooling weights of head h.
    """

    subvectors: list
    concatenated: np.ndarray
    weights: list


def supervector_view(record, token_row=-1):
    """Build the supervector view from the last recorded MSA layer.

    token_row indexes the attention rows (-1 for a lone class token,
    -2 when a distillation token was attached after it).
    """
    layer = record.last()
    subvectors = []
    weights = []
    for a, v in zip(layer.attention, layer.values):
        subvectors.append((a @ v)[token_row])
        weights.append(a[token_row])
    return SupervectorView(
        subvectors=subvectors,
        concatenated=np.concatenate(subvectors),
        weights=weights,
    )
