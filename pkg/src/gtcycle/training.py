"""Supervised fine-tuning and semi-supervised cycle training.

Every parallel example yields two directed pairs, one per task, so a
single model learns both graph-to-text and text-to-graph. Cycle training
consumes non-parallel pools instead: each unlabeled text is translated to
a synthetic graph (no gradient through generation) and the model is then
trained to reconstruct the text from it; unlabeled graphs run the same
loop in the opposite direction. Both cycle losses are trained jointly,
one-to-one with the supervised loss on the small parallel subset.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import ParallelCorpus, UnlabeledCorpus, draw_iteration
from .decoding import DecodeConfig, generate
from .graph_codec import (
    G2T_TOKEN,
    T2G_TOKEN,
    TASK_TOKENS,
    KnowledgeGraph,
    linearize_graph,
    prefix_task,
)
from .model import Seq2SeqModel, nll_loss
from .tokenizer import BOS_ID, PAD_ID, Vocabulary, decode, encode


class TrainingError(ValueError):
    """Invalid training configuration or unusable training inputs."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    accumulation_steps: int = 4
    lr_finetune: float = 2.0e-4
    lr_cycle: float = 1.0e-5
    max_epochs_finetune: int = 50
    max_epochs_cycle: int = 30
    patience: int = 5
    cycle_steps: int = 3
    synthetic_per_iteration: int = 30000
    max_len: int = 64
    optimizer: str = "adam"
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "batch_size",
            "accumulation_steps",
            "max_epochs_finetune",
            "max_epochs_cycle",
            "patience",
            "cycle_steps",
            "synthetic_per_iteration",
            "max_len",
        ):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr_finetune <= 0 or self.lr_cycle <= 0:
            raise TrainingError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainingError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}"
            )


@dataclass
class EarlyStopper:
    """Stops after `patience` epochs without strict improvement."""

    patience: int
    best_value: float = math.inf
    best_epoch: int = 0
    bad_epochs: int = 0
    epoch: int = 0

    def update(self, value: float) -> bool:
        """Record one epoch's validation value; True means stop now."""
        self.epoch += 1
        if value < self.best_value:
            self.best_value = value
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass(frozen=True)
class FitHistory:
    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


@dataclass(frozen=True)
class CycleState:
    histories: tuple[FitHistory, ...]
    # Per-iteration, per-epoch mean of the cycle component alone (the
    # histories track the combined cycle + supervised objective).
    cycle_losses: tuple[tuple[float, ...], ...] = field(default_factory=tuple)
    n_texts: tuple[int, ...] = field(default_factory=tuple)
    n_graphs: tuple[int, ...] = field(default_factory=tuple)


# ----------------------------------------------------------------------
# pair construction and batching


def make_supervised_pairs(corpus: ParallelCorpus) -> list[tuple[str, str]]:
    """Both directed (input, target) pairs for every parallel example.

    Task prefixes go on inputs only; targets stay bare so the model
    cannot satisfy either task by echoing its input.
    """
    pairs = []
    for example in corpus:
        lin = linearize_graph(example.graph)
        pairs.append((prefix_task(G2T_TOKEN, lin), example.text))
        pairs.append((prefix_task(T2G_TOKEN, example.text), lin))
    return pairs


def collate(
    vocab: Vocabulary, pairs: list[tuple[str, str]], max_len: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Tensorize (input, target) string pairs.

    Returns (src, tgt_in, tgt_out): tgt_in is the BOS-shifted target, and
    all three are PAD-padded to the longest row in the batch.
    """
    if not pairs:
        raise TrainingError("empty batch")
    src_rows = [encode(vocab, s, max_len).ids for s, _ in pairs]
    tgt_rows = [encode(vocab, t, max_len).ids for _, t in pairs]
    s_width = max(len(r) for r in src_rows)
    t_width = max(len(r) for r in tgt_rows)
    src = torch.full((len(pairs), s_width), PAD_ID, dtype=torch.long)
    tgt_in = torch.full((len(pairs), t_width), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((len(pairs), t_width), PAD_ID, dtype=torch.long)
    for i, (s_row, t_row) in enumerate(zip(src_rows, tgt_rows)):
        src[i, : len(s_row)] = torch.tensor(s_row, dtype=torch.long)
        shifted = (BOS_ID,) + t_row[:-1]
        tgt_in[i, : len(shifted)] = torch.tensor(shifted, dtype=torch.long)
        tgt_out[i, : len(t_row)] = torch.tensor(t_row, dtype=torch.long)
    return src, tgt_in, tgt_out


def _batches(items: list, batch_size: int) -> list[list]:
    return [items[i : i + batch_size] for i in range(0, len(items), batch_size)]


def _build_optimizer(
    model: Seq2SeqModel, lr: float, name: str
) -> torch.optim.Optimizer:
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=lr)
    if name == "sgd":
        return torch.optim.SGD(model.parameters(), lr=lr)
    raise TrainingError(f"unknown optimizer {name!r}")


def validation_loss(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    pairs: list[tuple[str, str]],
    config: TrainConfig,
) -> float:
    """Mean over batches of the batch-mean NLL, computed in eval mode."""
    if not pairs:
        raise TrainingError("no validation pairs")
    was_training = model.training
    model.eval()
    losses = []
    with torch.no_grad():
        for batch in _batches(pairs, config.batch_size):
            src, tgt_in, tgt_out = collate(vocab, batch, config.max_len)
            losses.append(float(nll_loss(model(src, tgt_in), tgt_out)))
    if was_training:
        model.train()
    return sum(losses) / len(losses)


def teacher_forced_token_accuracy(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    pairs: list[tuple[str, str]],
    config: TrainConfig,
) -> float:
    """Fraction of non-PAD target tokens the model ranks first under forcing."""
    if not pairs:
        raise TrainingError("no pairs to score")
    was_training = model.training
    model.eval()
    correct = 0
    total = 0
    with torch.no_grad():
        for batch in _batches(pairs, config.batch_size):
            src, tgt_in, tgt_out = collate(vocab, batch, config.max_len)
            predicted = model(src, tgt_in).argmax(dim=-1)
            mask = tgt_out != PAD_ID
            correct += int(((predicted == tgt_out) & mask).sum())
            total += int(mask.sum())
    if was_training:
        model.train()
    return correct / total


def _split_validation(
    pairs: list[tuple[str, str]],
    dev_corpus: ParallelCorpus | None,
    config: TrainConfig,
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """(train_pairs, val_pairs); with no dev split a fraction is carved off,
    and a zero fraction validates on the training pairs themselves."""
    if dev_corpus is not None:
        return pairs, make_supervised_pairs(dev_corpus)
    if config.val_fraction == 0.0:
        return pairs, pairs
    indices = list(range(len(pairs)))
    random.Random(config.seed).shuffle(indices)
    k = max(1, round(len(pairs) * config.val_fraction))
    held = set(indices[:k])
    train_pairs = [pairs[i] for i in range(len(pairs)) if i not in held]
    val_pairs = [pairs[i] for i in sorted(held)]
    if not train_pairs:
        raise TrainingError("validation fraction leaves no training pairs")
    return train_pairs, val_pairs


def _clone_state(model: Seq2SeqModel) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _write_log(path: str | Path | None, lines: list[str]) -> None:
    if path is not None:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------
# supervised fine-tuning


def finetune(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    train_corpus: ParallelCorpus,
    config: TrainConfig,
    dev_corpus: ParallelCorpus | None = None,
    log_path: str | Path | None = None,
) -> tuple[Seq2SeqModel, FitHistory]:
    """Train both directions on parallel data until early stopping.

    Gradient accumulation averages the batch means inside each group, so
    an optimizer step sees the mean-of-means loss regardless of group
    size. The best-validation weights are restored before returning.
    """
    if len(train_corpus) == 0:
        raise TrainingError("empty training corpus")
    torch.manual_seed(config.seed)
    pairs = make_supervised_pairs(train_corpus)
    train_pairs, val_pairs = _split_validation(pairs, dev_corpus, config)
    optimizer = _build_optimizer(model, config.lr_finetune, config.optimizer)
    stopper = EarlyStopper(config.patience)
    best_state = None
    train_losses: list[float] = []
    val_losses: list[float] = []
    log_lines = ["epoch\ttrain_loss\tval_loss"]
    stopped_early = False
    for epoch in range(1, config.max_epochs_finetune + 1):
        model.train()
        order = list(train_pairs)
        random.Random(config.seed * 7919 + epoch).shuffle(order)
        epoch_losses = []
        batch_list = _batches(order, config.batch_size)
        for group in _batches(batch_list, config.accumulation_steps):
            optimizer.zero_grad(set_to_none=True)
            for batch in group:
                src, tgt_in, tgt_out = collate(vocab, batch, config.max_len)
                loss = nll_loss(model(src, tgt_in), tgt_out)
                (loss / len(group)).backward()
                epoch_losses.append(float(loss.detach()))
            optimizer.step()
        train_loss = sum(epoch_losses) / len(epoch_losses)
        val_loss = validation_loss(model, vocab, val_pairs, config)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        log_lines.append(f"{epoch}\t{train_loss:.6f}\t{val_loss:.6f}")
        improved = val_loss < stopper.best_value
        should_stop = stopper.update(val_loss)
        if improved:
            best_state = _clone_state(model)
        if should_stop:
            stopped_early = True
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    _write_log(log_path, log_lines)
    return model, FitHistory(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best_value,
        stopped_early=stopped_early,
    )


# ----------------------------------------------------------------------
# cycle training


def strip_task_surfaces(text: str) -> str:
    """Remove any leading task surfaces from generated text.

    The model sees task prefixes on every input, so synthetic output can
    start with one; stacking it into the next input is refused upstream,
    and it carries no content anyway.
    """
    text = text.strip()
    progressed = True
    while progressed:
        progressed = False
        for token in TASK_TOKENS:
            if text.startswith(token.surface):
                text = text[len(token.surface) :].lstrip()
                progressed = True
    return text


def greedy_generate_text(
    model: Seq2SeqModel, vocab: Vocabulary, source: str, config: TrainConfig
) -> str:
    """Default synthesis path for cycle training: greedy decode to a string."""
    src = encode(vocab, source, config.max_len)
    out = generate(
        model,
        src,
        DecodeConfig(
            beam_width=1,
            max_new_tokens=config.max_len,
            repetition_penalty=1.0,
            length_penalty=1.0,
        ),
    )
    return decode(vocab, out)


def cycle_step_losses(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    texts: list[str],
    graphs: list[KnowledgeGraph],
    config: TrainConfig,
    generate_fn=None,
) -> dict[str, torch.Tensor]:
    """Cycle losses for one batch of unlabeled material.

    cycle_g2t: each text is translated to a synthetic graph (no gradient
    flows through generation), then scored as NLL of reconstructing the
    text from that graph. cycle_t2g mirrors it for unlabeled graphs. The
    total is their sum; an empty pool contributes a zero constant.
    """
    if generate_fn is None:
        generate_fn = greedy_generate_text
    pairs_g2t: list[tuple[str, str]] = []
    for text in texts:
        with torch.no_grad():
            synthetic = generate_fn(
                model, vocab, prefix_task(T2G_TOKEN, text), config
            )
        synthetic = strip_task_surfaces(synthetic)
        if synthetic:
            pairs_g2t.append((prefix_task(G2T_TOKEN, synthetic), text))
    pairs_t2g: list[tuple[str, str]] = []
    for graph in graphs:
        lin = linearize_graph(graph)
        with torch.no_grad():
            synthetic = generate_fn(
                model, vocab, prefix_task(G2T_TOKEN, lin), config
            )
        synthetic = strip_task_surfaces(synthetic)
        if synthetic:
            pairs_t2g.append((prefix_task(T2G_TOKEN, synthetic), lin))
    dtype = next(model.parameters()).dtype
    zero = torch.zeros((), dtype=dtype)
    losses = {}
    for name, batch in (("cycle_g2t", pairs_g2t), ("cycle_t2g", pairs_t2g)):
        if batch:
            src, tgt_in, tgt_out = collate(vocab, batch, config.max_len)
            losses[name] = nll_loss(model(src, tgt_in), tgt_out)
        else:
            losses[name] = zero
    losses["total"] = losses["cycle_g2t"] + losses["cycle_t2g"]
    return losses


def _cycling_batch(stream: list, step: int, batch_size: int) -> list:
    if not stream:
        return []
    return [stream[(step * batch_size + j) % len(stream)] for j in range(batch_size)]


def cycle_train(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    unlabeled: UnlabeledCorpus,
    supervised: ParallelCorpus,
    config: TrainConfig,
    dev_corpus: ParallelCorpus | None = None,
    log_path: str | Path | None = None,
    generate_fn=None,
) -> tuple[Seq2SeqModel, CycleState]:
    """Iterative back-translation over non-parallel pools.

    Each iteration draws a fresh synthetic sample from the pools and
    trains (cycle losses plus supervised loss, one batch of each per
    step) until early stopping; synthetic graphs and texts are re-decoded
    from the current model at every step.
    """
    if len(supervised) == 0:
        raise TrainingError("cycle training needs a supervised subset")
    if not unlabeled.texts and not unlabeled.graphs:
        raise TrainingError("cycle training needs at least one unlabeled pool")
    torch.manual_seed(config.seed + 1)
    sup_pairs = make_supervised_pairs(supervised)
    sup_train, val_pairs = _split_validation(sup_pairs, dev_corpus, config)
    histories: list[FitHistory] = []
    cycle_losses_all: list[tuple[float, ...]] = []
    n_texts: list[int] = []
    n_graphs: list[int] = []
    log_lines = ["iteration\tepoch\ttrain_loss\tcycle_loss\tval_loss"]
    for iteration in range(config.cycle_steps):
        texts_k: list[str] = []
        graphs_k: list[KnowledgeGraph] = []
        if unlabeled.texts:
            texts_k = draw_iteration(
                list(unlabeled.texts),
                min(config.synthetic_per_iteration, len(unlabeled.texts)),
                iteration,
                config.seed,
            )
        if unlabeled.graphs:
            graphs_k = draw_iteration(
                list(unlabeled.graphs),
                min(config.synthetic_per_iteration, len(unlabeled.graphs)),
                iteration,
                config.seed + 1,
            )
        n_texts.append(len(texts_k))
        n_graphs.append(len(graphs_k))
        optimizer = _build_optimizer(model, config.lr_cycle, config.optimizer)
        stopper = EarlyStopper(config.patience)
        best_state = None
        train_losses: list[float] = []
        val_losses: list[float] = []
        epoch_cycle_means: list[float] = []
        stopped_early = False
        n_steps = max(
            math.ceil(len(stream) / config.batch_size)
            for stream in (texts_k, graphs_k, sup_train)
            if stream
        )
        for epoch in range(1, config.max_epochs_cycle + 1):
            model.train()
            rng = random.Random(config.seed * 104729 + iteration * 31 + epoch)
            text_stream = list(texts_k)
            graph_stream = list(graphs_k)
            sup_stream = list(sup_train)
            for stream in (text_stream, graph_stream, sup_stream):
                rng.shuffle(stream)
            step_losses = []
            step_cycle_losses = []
            for group in _batches(list(range(n_steps)), config.accumulation_steps):
                optimizer.zero_grad(set_to_none=True)
                for step in group:
                    loss = cycle_step_losses(
                        model,
                        vocab,
                        _cycling_batch(text_stream, step, config.batch_size),
                        _cycling_batch(graph_stream, step, config.batch_size),
                        config,
                        generate_fn=generate_fn,
                    )["total"]
                    step_cycle_losses.append(float(loss.detach()))
                    sup_batch = _cycling_batch(sup_stream, step, config.batch_size)
                    if sup_batch:
                        src, tgt_in, tgt_out = collate(vocab, sup_batch, config.max_len)
                        loss = loss + nll_loss(model(src, tgt_in), tgt_out)
                    (loss / len(group)).backward()
                    step_losses.append(float(loss.detach()))
                optimizer.step()
            train_loss = sum(step_losses) / len(step_losses)
            cycle_loss = sum(step_cycle_losses) / len(step_cycle_losses)
            val_loss = validation_loss(model, vocab, val_pairs, config)
            train_losses.append(train_loss)
            epoch_cycle_means.append(cycle_loss)
            val_losses.append(val_loss)
            log_lines.append(
                f"{iteration}\t{epoch}\t{train_loss:.6f}\t{cycle_loss:.6f}\t{val_loss:.6f}"
            )
            improved = val_loss < stopper.best_value
            should_stop = stopper.update(val_loss)
            if improved:
                best_state = _clone_state(model)
            if should_stop:
                stopped_early = True
                break
        if best_state is not None:
            model.load_state_dict(best_state)
        histories.append(
            FitHistory(
                train_losses=tuple(train_losses),
                val_losses=tuple(val_losses),
                best_epoch=stopper.best_epoch,
                best_val_loss=stopper.best_value,
                stopped_early=stopped_early,
            )
        )
        cycle_losses_all.append(tuple(epoch_cycle_means))
    _write_log(log_path, log_lines)
    return model, CycleState(
        histories=tuple(histories),
        cycle_losses=tuple(cycle_losses_all),
        n_texts=tuple(n_texts),
        n_graphs=tuple(n_graphs),
    )
