"""Discrete prompt optimizer: scored one-token edits plus beam search.

One step edits a single token position per beam (round-robin over current
positions, then an append slot). Candidate tokens are ranked by the primary
model's next-token log-probabilities plus the negative inner product of the
candidate's embedding delta with the assembled objective gradient; the top
candidates are then re-ranked by their true objective value, and the best
successors across all beams survive. The best beam is always retained when
every candidate would make it worse, so the best loss never increases.

The objective is a weighted sum of loss heads living in different models;
secondary-model terms reach the primary embedding space through the exact
text round-trip forward and the adapter backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import backward, backward_shared, embed_sequence, segmentation_of
from .models import SyntheticModel, head_grad, head_loss
from .tokenization import TokenSeq, detokenize, is_lossless, tokenize
from .vocab import AdapterMap

CONVERGENCE_PATIENCE = 3


@dataclass(frozen=True)
class ObjectiveTerm:
    """One weighted loss head, optionally in a secondary model.

    ``model=None`` evaluates the head in the primary model's own space.
    ``adapter`` routes the backward pass: "shared" for an identical tokenizer
    (single-matrix path), an :class:`AdapterMap` for different tokenizers.
    """

    head: str
    weight: float
    model: SyntheticModel | None = None
    adapter: AdapterMap | str | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.weight):
            raise ValueError("term weight must be finite")
        if self.model is None and self.adapter is not None:
            raise ValueError("primary-space terms take no adapter")
        if self.model is not None and self.adapter is None:
            raise ValueError("secondary-model terms need an adapter ('shared' or a map)")
        if isinstance(self.adapter, str) and self.adapter != "shared":
            raise ValueError(f"unknown adapter designator {self.adapter!r}")


@dataclass(frozen=True)
class Objective:
    """Multi-model objective optimized in the primary model's token space."""

    primary: SyntheticModel
    terms: tuple[ObjectiveTerm, ...]
    prefix: str = ""

    def __post_init__(self) -> None:
        for term in self.terms:
            if term.adapter == "shared" and term.model.tokenizer != self.primary.tokenizer:
                raise ValueError("'shared' terms must reuse the primary tokenizer")
            if isinstance(term.adapter, AdapterMap):
                if term.adapter.d_i != self.primary.d or term.adapter.d_j != term.model.d:
                    raise ValueError("adapter dims do not match the models")


@dataclass(frozen=True)
class SearchConfig:
    top_k: int = 64
    beam_width: int = 5
    max_steps: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.top_k >= self.beam_width >= 1):
            raise ValueError("need top_k >= beam_width >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class SearchState:
    """Beams sorted by loss ascending, plus the per-step loss history."""

    beams: list[tuple[tuple[int, ...], float]]
    step: int = 0
    trace: list[tuple[int, float, str]] = field(default_factory=list)

    @property
    def best(self) -> tuple[tuple[int, ...], float]:
        return self.beams[0]


def _as_seq(model: SyntheticModel, ids) -> TokenSeq:
    ids = tuple(int(i) for i in ids)
    return TokenSeq(ids=ids, source=detokenize(model.tokenizer, ids))


def total_loss(obj: Objective, ids) -> float:
    """Weighted objective value for a primary-model token sequence.

    Primary and shared-tokenizer terms evaluate on the given ids directly;
    different-tokenizer terms go through the exact text round-trip first.
    """
    ts = _as_seq(obj.primary, ids)
    e_i = embed_sequence(obj.primary, ts).e
    text = ts.source
    value = 0.0
    for term in obj.terms:
        if term.model is None:
            value += term.weight * head_loss(obj.primary.heads[term.head], e_i)
        elif term.adapter == "shared":
            e_j = embed_sequence(term.model, ts).e
            value += term.weight * head_loss(term.model.heads[term.head], e_j)
        else:
            ts_j = tokenize(term.model.tokenizer, text)
            e_j = embed_sequence(term.model, ts_j).e
            value += term.weight * head_loss(term.model.heads[term.head], e_j)
    return value


def objective_gradient(obj: Objective, ids) -> np.ndarray:
    """Assembled gradient of the objective in the primary embedding space.

    A cross-tokenizer term whose tokenization of the current text is lossy
    (hits the unknown token) still counts toward the loss, but contributes no
    gradient: word segmentation is only defined for lossless sequences.
    """
    ts = _as_seq(obj.primary, ids)
    e_i = embed_sequence(obj.primary, ts).e
    grad = np.zeros_like(e_i)
    seg_i = None
    for term in obj.terms:
        if term.model is None:
            grad += term.weight * head_grad(obj.primary.heads[term.head], e_i)
        elif term.adapter == "shared":
            e_j = embed_sequence(term.model, ts).e
            g_j = head_grad(term.model.heads[term.head], e_j)
            grad += term.weight * backward_shared(g_j, obj.primary.vocab, term.model.vocab)
        else:
            ts_j = tokenize(term.model.tokenizer, ts.source)
            if not is_lossless(term.model.tokenizer, ts_j):
                continue
            if seg_i is None:
                seg_i = segmentation_of(obj.primary, ts)
            e_j = embed_sequence(term.model, ts_j).e
            g_j = head_grad(term.model.heads[term.head], e_j)
            seg_j = segmentation_of(term.model, ts_j)
            grad += term.weight * backward(g_j, seg_j, seg_i, term.adapter)
    return grad


def score_candidates(obj: Objective, ids, position: int) -> np.ndarray:
    """Per-token scores estimating the improvement of editing one position.

    Next-token log-probabilities from the primary model's lm head (zeros when
    absent or at position 0) plus the negative inner product of each
    candidate's embedding delta with the objective gradient at that position.
    Scoring an append slot (position == len(ids)) uses the language prior
    alone. All scores are finite.
    """
    ids = tuple(int(i) for i in ids)
    if not 0 <= position <= len(ids):
        raise ValueError(f"position {position} out of range for {len(ids)} tokens")
    v = obj.primary.vocab.v
    logits = np.zeros(obj.primary.vocab.size)
    lm = obj.primary.lm_logit_map()
    if lm is not None and position > 0:
        logits = v[ids[position - 1]] @ lm
        if logits.shape[0] != obj.primary.vocab.size:
            raise ValueError("lm head logit width does not match the vocabulary")
    logp = logits - np.log(np.sum(np.exp(logits - logits.max()))) - logits.max()
    if position == len(ids):
        return logp
    g = objective_gradient(obj, ids)[position]
    e_cur = v[ids[position]]
    return logp - (v @ g - float(e_cur @ g))


def _candidate_ids(obj: Objective, scores: np.ndarray, top_k: int) -> list[int]:
    banned = {obj.primary.tokenizer.unknown_id}
    order = sorted(range(scores.shape[0]), key=lambda t: (-scores[t], t))
    return [t for t in order if t not in banned][:top_k]


def step(obj: Objective, state: SearchState, cfg: SearchConfig) -> SearchState:
    """One search step: per-beam scored edits, true-loss re-ranking, pruning."""
    successors: dict[tuple[int, ...], float] = {}
    for ids, _ in state.beams:
        position = state.step % (len(ids) + 1)
        scores = score_candidates(obj, ids, position)
        for tok in _candidate_ids(obj, scores, cfg.top_k):
            if position == len(ids):
                new_ids = ids + (tok,)
            else:
                new_ids = ids[:position] + (tok,) + ids[position + 1:]
            if new_ids not in successors:
                successors[new_ids] = total_loss(obj, new_ids)
    best_ids, best_loss = state.best
    pool = dict(successors)
    if best_ids not in pool or pool[best_ids] > best_loss:
        pool[best_ids] = best_loss  # retain the best beam when nothing improves
    ranked = sorted(pool.items(), key=lambda kv: (kv[1], kv[0]))[: cfg.beam_width]
    beams = [(ids, loss) for ids, loss in ranked]
    new_state = SearchState(beams=beams, step=state.step + 1, trace=list(state.trace))
    top_ids, top_loss = new_state.best
    new_state.trace.append(
        (new_state.step, top_loss, detokenize(obj.primary.tokenizer, top_ids))
    )
    return new_state


def optimize(obj: Objective, cfg: SearchConfig) -> tuple[tuple[int, ...], list]:
    """Run steps until the step budget or until the best loss stalls.

    Deterministic given the objective and config; returns the best token ids
    and the per-step trace of (step, best loss, best string).
    """
    ids0 = tokenize(obj.primary.tokenizer, obj.prefix).ids
    state = SearchState(beams=[(ids0, total_loss(obj, ids0))])
    state.trace.append((0, state.best[1], detokenize(obj.primary.tokenizer, ids0)))
    stagnant = 0
    best_loss = state.best[1]
    while state.step < cfg.max_steps and stagnant < CONVERGENCE_PATIENCE:
        state = step(obj, state, cfg)
        if state.best[1] < best_loss - 1e-15:
            best_loss = state.best[1]
            stagnant = 0
        else:
            stagnant += 1
    return state.best[0], state.trace
