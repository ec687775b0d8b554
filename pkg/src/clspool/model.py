"""Full sequence classifier: encoder stack plus token pooling and
softmax heads.

A model owns its encoder parameters, its token matrix, and a class
head; a student model additionally owns a distillation token and a
second head for it. Inputs arrive as plain (T, input_dim) arrays with
positional features already combined in.
"""

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import tokens as tok
from .autodiff import Tensor
from .encoder import init_param


class TokenPoolingModel:
    """Encoder + token matrix + classifier heads for one network."""

    def __init__(self, config, input_dim, n_classes, n_tokens, distillation, rng):
        self.config = config
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.encoder = enc.EncoderParams.init(config, rng, input_dim)
        self.tokens = tok.TokenMatrix.init(n_tokens, config.d_model, rng)
        self.cls_head = init_param(rng, config.d_model, (config.d_model, n_classes))
        if distillation:
            self.dist_token = init_param(rng, config.d_model, (1, config.d_model))
            self.dist_head = init_param(rng, config.d_model, (config.d_model, n_classes))
        else:
            self.dist_token = None
            self.dist_head = None

    @property
    def has_distillation(self):
        return self.dist_token is not None

    @property
    def n_attached_tokens(self):
        return 2 if self.has_distillation else 1

    def parameters(self):
        """Named parameters in a fixed order (checkpoint layout order)."""
        for name, p in self.encoder.parameters():
            yield f"encoder.{name}", p
        yield "tokens", self.tokens.vectors
        yield "cls_head", self.cls_head
        if self.has_distillation:
            yield "dist_token", self.dist_token
            yield "dist_head", self.dist_head

    def zero_grads(self):
        for _, p in self.parameters():
            p.zero_grad()

    def encode_with_tokens(self, combined, token_index, record=None, uniform_token_rows=0):
        """Run the frontend, attach this model's tokens, run the blocks.

        Tokens live in model space, so they join after the frontend and
        ride the residual path untouched. Returns (token_states,
        record): the class-token state first, then the
        distillation-token state when the model has one.
        """
        seq = combined if isinstance(combined, Tensor) else Tensor(combined)
        x = enc.frontend_forward(seq, self.encoder)
        attached = tok.attach_tokens(x, self.tokens.row(token_index), self.dist_token)
        out, record = enc.blocks_forward(attached, self.config, self.encoder,
                                         record, uniform_token_rows)
        return tok.extract_token_states(out, self.n_attached_tokens), record

    def encode_plain(self, combined, record=None):
        """Run the encoder with no tokens attached (average-pooling path)."""
        seq = combined if isinstance(combined, Tensor) else Tensor(combined)
        return enc.encoder_forward(seq, self.config, self.encoder, record)

    def classify(self, combined, token_index, record=None):
        """Token-pooled logits: (cls_logits, dist_logits | None, record)."""
        states, record = self.encode_with_tokens(combined, token_index, record)
        cls_logits = ad.matmul(states[0], self.cls_head)
        dist_logits = None
        if self.has_distillation:
            dist_logits = ad.matmul(states[1], self.dist_head)
        return cls_logits, dist_logits, record

    def classify_avg(self, combined, record=None):
        """Average-pooled logits: (logits, record)."""
        out, record = self.encode_plain(combined, record)
        return ad.matmul(ad.row_mean(out), self.cls_head), record
