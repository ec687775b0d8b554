"""Training loops for the three pooling modes, plus checkpoint
assembly and restoration.

A run is a pure function of (config, corpus contents): every stochastic
choice (init, shuffling, token sampling, erasing) comes from streams
spawned off the master seed, so rerunning a config reproduces the
checkpoint byte for byte. Any non-finite loss aborts the run
immediately with the offending epoch and step in the message.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distill
from . import tokens as tok
from .data import combine_features, normalize_features
from .distill import Adam, ModelPair, TrapezoidLr
from .model import TokenPoolingModel


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class LogRow:
    epoch: int
    alpha: int
    lr: float
    loss: float          # teacher loss in CLS-DIST mode
    loss_student: float | None = None

    def header(self):
        if self.loss_student is None:
            return "epoch\talpha\tlr\tloss"
        return "epoch\talpha\tlr\tloss_t\tloss_s"

    def line(self):
        cells = [str(self.epoch), str(self.alpha), f"{self.lr:.6g}", f"{self.loss:.6f}"]
        if self.loss_student is not None:
            cells.append(f"{self.loss_student:.6f}")
        return "\t".join(cells)


@dataclass
class TrainResult:
    config: object
    mode: str
    n_classes: int
    models: dict          # {"model": ...} or {"teacher": ..., "student": ...}
    optimizers: dict      # same keys
    log: list
    rng_states: dict


def class_labels(seqs):
    """Stable (speaker, phrase) -> index map over a split."""
    classes = sorted({(s.speaker_id, s.phrase_id) for s in seqs})
    return {c: i for i, c in enumerate(classes)}


def eval_model(result_models, mode):
    """The network embeddings are extracted from at evaluation time."""
    return result_models["student"] if mode == "CLS-DIST" else result_models["model"]


def _combine(config):
    if config.pooling == "AVG":
        def combine(frames, positions):
            return frames.astype(np.float64)
    else:
        def combine(frames, positions):
            return combine_features(frames, positions, config.position_mode)
    return combine


def _check_finite(value, mode, epoch, step):
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss in {mode} training at epoch {epoch}, step {step}"
        )


def build_models(config, n_classes, rng):
    """Fresh models for the configured pooling mode."""
    if config.pooling == "CLS-DIST":
        pair = ModelPair.init(config.encoder, config.input_dim, n_classes,
                              config.n_tokens, rng)
        return {"teacher": pair.teacher, "student": pair.student}
    n_tokens = 1 if config.pooling == "AVG" else config.n_tokens
    model = TokenPoolingModel(config.encoder, config.input_dim, n_classes,
                              n_tokens, distillation=False, rng=rng)
    return {"model": model}


def run_training(config, train_seqs):
    """Train per the config on an in-memory corpus split."""
    if not train_seqs:
        raise ValueError("empty training set")
    if config.normalize:
        train_seqs = [normalize_features(s) for s in train_seqs]

    labels_of = class_labels(train_seqs)
    n_classes = len(labels_of)
    labels = np.asarray([labels_of[(s.speaker_id, s.phrase_id)] for s in train_seqs])

    seed_seq = np.random.SeedSequence(config.seed)
    (rng_init, rng_shuffle, rng_erase_t, rng_erase_s,
     rng_tok_t, rng_tok_s) = (np.random.default_rng(s) for s in seed_seq.spawn(6))

    models = build_models(config, n_classes, rng_init)
    optimizers = {
        name: Adam(model.parameters(), config.optimizer.beta1,
                   config.optimizer.beta2, config.optimizer.eps)
        for name, model in models.items()
    }

    schedule = tok.build_schedule(config.n_tokens, config.epochs)
    n = len(train_seqs)
    steps_per_epoch = -(-n // config.batch_size)
    lr_curve = TrapezoidLr(
        total_steps=steps_per_epoch * config.epochs,
        lr_start=config.optimizer.lr_start,
        lr_peak=config.optimizer.lr_peak,
        lr_end=config.optimizer.lr_end,
        ramp_fraction=config.optimizer.ramp_fraction,
    )
    combine = _combine(config)

    log = []
    global_step = 0
    for epoch in range(config.epochs):
        alpha_n = int(schedule.alpha[epoch])
        order = rng_shuffle.permutation(n)
        epoch_losses = []
        epoch_losses_s = []
        lr = config.optimizer.lr_start
        for start in range(0, n, config.batch_size):
            chosen = order[start:start + config.batch_size]
            batch = [train_seqs[i] for i in chosen]
            batch_labels = labels[chosen]
            lr = lr_curve(global_step)
            step_in_epoch = start // config.batch_size

            if config.pooling == "CLS-DIST":
                loss_t, loss_s = distill.train_step(
                    ModelPair(models["teacher"], models["student"]),
                    batch, batch_labels, alpha_n,
                    opt_teacher=optimizers["teacher"],
                    opt_student=optimizers["student"],
                    lr=lr, erase=config.erase,
                    rng_erase_teacher=rng_erase_t, rng_erase_student=rng_erase_s,
                    rng_tokens_teacher=rng_tok_t, rng_tokens_student=rng_tok_s,
                    combine=combine,
                )
                _check_finite(loss_t, "teacher", epoch, step_in_epoch)
                _check_finite(loss_s, "student", epoch, step_in_epoch)
                epoch_losses.append(loss_t)
                epoch_losses_s.append(loss_s)
            else:
                loss = _single_step(models["model"], optimizers["model"], batch,
                                    batch_labels, alpha_n, lr, config, combine,
                                    rng_tok_t)
                _check_finite(loss, config.pooling, epoch, step_in_epoch)
                epoch_losses.append(loss)
            global_step += 1

        log.append(LogRow(
            epoch=epoch, alpha=alpha_n, lr=lr,
            loss=float(np.mean(epoch_losses)),
            loss_student=float(np.mean(epoch_losses_s)) if epoch_losses_s else None,
        ))

    rng_states = {
        "shuffle": rng_shuffle.bit_generator.state,
        "erase_teacher": rng_erase_t.bit_generator.state,
        "erase_student": rng_erase_s.bit_generator.state,
        "tokens_teacher": rng_tok_t.bit_generator.state,
        "tokens_student": rng_tok_s.bit_generator.state,
    }
    return TrainResult(config=config, mode=config.pooling, n_classes=n_classes,
                       models=models, optimizers=optimizers, log=log,
                       rng_states=rng_states)


def _single_step(model, opt, batch, batch_labels, alpha_n, lr, config, combine,
                 rng_tokens):
    """One update of a lone network (average or token pooling)."""
    rows = []
    if config.pooling == "CLS":
        idx = tok.sample_tokens(model.tokens, alpha_n, len(batch), rng_tokens)
        for b, seq in enumerate(batch):
            logits, _, _ = model.classify(combine(seq.frames, seq.positions), int(idx[b]))
            rows.append(logits)
    else:
        for seq in batch:
            logits, _ = model.classify_avg(combine(seq.frames, seq.positions))
            rows.append(logits)
    loss = ad.cross_entropy(ad.concat_rows(rows), batch_labels)
    opt.zero_grad()
    ad.backward(loss)
    opt.step(lr)
    return float(loss.values)


def write_log(path, log):
    with open(path, "w") as fh:
        if log:
            fh.write(log[0].header() + "\n")
        for row in log:
            fh.write(row.line() + "\n")


def checkpoint_arrays(result):
    """Named parameter and optimizer arrays in checkpoint order."""
    arrays = []
    for model_name in sorted(result.models):
        model = result.models[model_name]
        opt = result.optimizers[model_name]
        named = list(model.parameters())
        for name, p in named:
            arrays.append((f"{model_name}.{name}", p.values))
        for (name, _), m in zip(named, opt.m):
            arrays.append((f"adam.{model_name}.m.{name}", m))
        for (name, _), v in zip(named, opt.v):
            arrays.append((f"adam.{model_name}.v.{name}", v))
    return arrays


def checkpoint_meta(result):
    return {
        "mode": result.mode,
        "n_classes": result.n_classes,
        "adam_steps": {name: opt.t for name, opt in sorted(result.optimizers.items())},
        "rng": result.rng_states,
    }


def restore_models(config, meta):
    """Rebuild model skeletons for a checkpoint's config and class count."""
    rng = np.random.default_rng(0)  # placeholder values, overwritten by the load
    return build_models(config, meta["n_classes"], rng)


def load_models_from_checkpoint(config, meta, arrays):
    models = restore_models(config, meta)
    for model_name, model in models.items():
        for name, p in model.parameters():
            key = f"{model_name}.{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint missing array {key}")
            if arrays[key].shape != p.values.shape:
                raise ValueError(
                    f"checkpoint array {key} has shape {arrays[key].shape}, "
                    f"expected {p.values.shape}"
                )
            p.values[...] = arrays[key]
    return models
