"""Beam-search decoding with repetition and length penalties.

Scores are summed token log-probabilities. Before the softmax, any token
already present in a hypothesis has its raw logit divided by the repetition
penalty when positive and multiplied when negative, so repeats always get
less likely. Finished hypotheses are ranked by logprob_sum / len**length_penalty
(len counts generated tokens including EOS), which at the default penalty of
1.0 is the mean log-probability. Ties everywhere break toward the earliest
expanded candidate, making decoding fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .model import Seq2SeqModel
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, TokenSequence


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 4
    max_new_tokens: int = 64
    repetition_penalty: float = 2.5
    length_penalty: float = 1.0
    early_stopping: bool = True

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.repetition_penalty <= 0 or self.length_penalty <= 0:
            raise ValueError("penalties must be > 0")


@dataclass(frozen=True)
class _Beam:
    ids: tuple[int, ...]  # starts with BOS
    logprob_sum: float


def apply_repetition_penalty_(
    logits: torch.Tensor, ids: tuple[int, ...], penalty: float
) -> None:
    """Discount (in place) the logits of tokens already in the hypothesis."""
    if penalty == 1.0:
        return
    for t in set(ids):
        value = logits[t].item()
        logits[t] = value / penalty if value > 0 else value * penalty


def _normalized(logprob_sum: float, n_generated: int, length_penalty: float) -> float:
    return logprob_sum / (n_generated**length_penalty)


@torch.no_grad()
def generate(model: Seq2SeqModel, src: TokenSequence, cfg: DecodeConfig) -> TokenSequence:
    """Beam-search a completion for one source sequence.

    PAD and BOS are never valid continuations and are suppressed outright.
    With early stopping, the search ends once beam_width hypotheses have
    finished in EOS; the best finished hypothesis wins, or the best live one
    if nothing finished within max_new_tokens.
    """
    was_training = model.training
    model.eval()
    try:
        device = next(model.parameters()).device
        src_ids = torch.tensor([list(src)], dtype=torch.long, device=device)
        memory = model.encode(src_ids)
        vocab_size = model.config.vocab_size
        live = [_Beam((BOS_ID,), 0.0)]
        finished: list[tuple[float, int, tuple[int, ...]]] = []
        for _ in range(cfg.max_new_tokens):
            if not live:
                break
            tgt = torch.tensor([b.ids for b in live], dtype=torch.long, device=device)
            logits = model.decode(
                memory.expand(len(live), -1, -1), src_ids.expand(len(live), -1), tgt
            )[:, -1, :].clone()
            for row, beam in zip(logits, live):
                apply_repetition_penalty_(row, beam.ids, cfg.repetition_penalty)
            logits[:, PAD_ID] = float("-inf")
            logits[:, BOS_ID] = float("-inf")
            logp = torch.log_softmax(logits, dim=-1)
            sums = torch.tensor(
                [[b.logprob_sum] for b in live], dtype=logp.dtype, device=device
            )
            flat = (logp + sums).reshape(-1)
            order = torch.argsort(flat, descending=True, stable=True)
            next_live: list[_Beam] = []
            for idx in order.tolist():
                beam_i, tok = divmod(idx, vocab_size)
                cand_ids = live[beam_i].ids + (tok,)
                cand_sum = float(flat[idx])
                if tok == EOS_ID:
                    score = _normalized(cand_sum, len(cand_ids) - 1, cfg.length_penalty)
                    finished.append((score, len(finished), cand_ids))
                else:
                    next_live.append(_Beam(cand_ids, cand_sum))
                if len(next_live) == cfg.beam_width:
                    break
            live = next_live
            if cfg.early_stopping and len(finished) >= cfg.beam_width:
                break
        if finished:
            _, _, ids = max(finished, key=lambda t: (t[0], -t[1]))
        else:
            best = max(
                range(len(live)),
                key=lambda i: (
                    _normalized(
                        live[i].logprob_sum, len(live[i].ids) - 1, cfg.length_penalty
                    ),
                    -i,
                ),
            )
            ids = live[best].ids
        return TokenSequence(ids[1:])
    finally:
        model.train(was_training)
