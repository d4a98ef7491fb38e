"""The cross-model adapter: exact forward, approximate backward.

The forward direction between models is exact and non-differentiable: decode
the tokens to text, retokenize under the destination model, look up its
embedding table. The backward direction pulls a destination-model gradient
back into the source model's embedding space, either with the single matrix
pinv(V_i) V_j when the tokenizers coincide, or word by word through the
per-token-length tensor maps of an :class:`~fuse.vocab.AdapterMap`.

Gradient layout: embeddings are row vectors (E = X V), so a linear map
E_j = E_i M pulls gradients back as grad_i = grad_j M^T. The tensor path uses
the same transpose rule tube-wise via the tensor transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenization import TokenSeq, WordSegmentation, detokenize, segment_words, tokenize
from .tproduct import DEFAULT_RANK_TOL, Tensor3, tprod_general, ttranspose
from .vocab import AdapterMap, VocabMatrix


@dataclass(frozen=True)
class EmbeddingSeq:
    """A token sequence together with its embedding rows in one model."""

    e: np.ndarray
    token_ids: TokenSeq
    model_id: str

    def __post_init__(self) -> None:
        arr = np.array(self.e, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("embedding sequence must be a 2-d array")
        if arr.shape[0] != len(self.token_ids):
            raise ValueError(
                f"{arr.shape[0]} embedding rows for {len(self.token_ids)} tokens"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "e", arr)


def embed_sequence(model, ts: TokenSeq) -> EmbeddingSeq:
    """Look up embedding rows for a token sequence in a model's table."""
    ids = list(ts.ids)
    e = model.vocab.v[ids] if ids else np.zeros((0, model.vocab.d))
    return EmbeddingSeq(e=e, token_ids=ts, model_id=model.vocab.model_id)


@dataclass(frozen=True)
class WordTensorList:
    """Per-word tensors split out of a token-major matrix.

    ``items[m]`` has shape 1 x d x (span length). Rows outside every word span
    (standalone separator tokens) are kept in ``residual`` so that merge is an
    exact inverse.
    """

    items: tuple[Tensor3, ...]
    spans: tuple[tuple[int, int], ...]
    residual: tuple[tuple[int, np.ndarray], ...]
    total_rows: int
    width: int


def split(e, seg: WordSegmentation) -> WordTensorList:
    """Regroup embedding (or gradient) rows into one tensor per word."""
    mat = e.e if isinstance(e, EmbeddingSeq) else np.asarray(e, dtype=np.float64)
    if mat.shape[0] != seg.token_count:
        raise ValueError(
            f"{mat.shape[0]} rows but segmentation covers {seg.token_count} tokens"
        )
    items = []
    covered = np.zeros(mat.shape[0], dtype=bool)
    for start, length in seg.spans:
        items.append(Tensor3(mat[start : start + length].T[None, :, :]))
        covered[start : start + length] = True
    residual = tuple((int(k), mat[k].copy()) for k in np.flatnonzero(~covered))
    return WordTensorList(
        items=tuple(items),
        spans=seg.spans,
        residual=residual,
        total_rows=mat.shape[0],
        width=mat.shape[1],
    )


def merge(w: WordTensorList) -> np.ndarray:
    """Stack word tensors back into the original token-major matrix."""
    out = np.zeros((w.total_rows, w.width))
    for item, (start, length) in zip(w.items, w.spans):
        out[start : start + length] = item.data[0].T
    for k, row in w.residual:
        out[k] = row
    return out


def forward(e: EmbeddingSeq, src_model, dst_model) -> EmbeddingSeq:
    """Exact forward map: text round-trip into the destination model.

    Only the token ids matter; the caller keeps embeddings on-vocabulary.
    """
    text = detokenize(src_model.tokenizer, e.token_ids.ids)
    ts = tokenize(dst_model.tokenizer, text)
    return embed_sequence(dst_model, ts)


def backward_shared(
    grad_j: np.ndarray,
    v_i: VocabMatrix,
    v_j: VocabMatrix,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> np.ndarray:
    """Shared-tokenizer backward: grad_i = grad_j (pinv(V_i) V_j)^T."""
    grad_j = np.asarray(grad_j, dtype=np.float64)
    if grad_j.ndim != 2 or grad_j.shape[1] != v_j.d:
        raise ValueError(f"gradient width {grad_j.shape} does not match d_j={v_j.d}")
    m = np.linalg.pinv(v_i.v, rcond=rank_tol) @ v_j.v
    return grad_j @ m.T


def _word_backward(grad_item: Tensor3, tmap: Tensor3, l_i: int, order: str) -> np.ndarray:
    if order == "grad_map":
        prod = tprod_general(grad_item, ttranspose(tmap))
    elif order == "map_grad":
        prod = ttranspose(tprod_general(tmap, ttranspose(grad_item)))
    else:
        raise ValueError(f"unknown product order {order!r}")
    rows = prod.data[0].T  # (tubes, d_i)
    out = np.zeros((l_i, rows.shape[1]))
    n = min(l_i, rows.shape[0])
    out[:n] = rows[:n]
    return out


def backward(
    grad_j: np.ndarray,
    seg_j: WordSegmentation,
    seg_i: WordSegmentation,
    amap: AdapterMap,
    order: str = "grad_map",
) -> np.ndarray:
    """Cross-tokenizer backward pass through the per-length tensor maps.

    Splits the model-j gradient by its word segmentation, multiplies each
    word's tensor by the transposed map selected by that word's model-j token
    count (seeded random fallback beyond the fitted cutoff), resizes the tube
    axis to the word's model-i token count, and merges the pieces into an
    s_i x d_i matrix. Rows for separator tokens come back as zeros.

    ``order`` picks which operand carries the transpose through the
    generalized product; both reduce to the shared-tokenizer formula at tube
    count 1 and only differ when tube counts mismatch. The default is the one
    matching the adjoint of the word-tensor forward map (see
    :func:`forward_approx`), as arbitrated by finite differences.
    """
    if len(seg_i.spans) != len(seg_j.spans):
        raise ValueError(
            f"segmentations disagree: {len(seg_i.spans)} vs {len(seg_j.spans)} words"
        )
    grad_j = np.asarray(grad_j, dtype=np.float64)
    if grad_j.shape != (seg_j.token_count, amap.d_j):
        raise ValueError(
            f"gradient shape {grad_j.shape} != ({seg_j.token_count}, {amap.d_j})"
        )
    pieces = split(grad_j, seg_j)
    out = np.zeros((seg_i.token_count, amap.d_i))
    for item, (_, l_j), (start_i, l_i) in zip(pieces.items, seg_j.spans, seg_i.spans):
        tmap = amap.map_for(l_j)
        out[start_i : start_i + l_i] = _word_backward(item, tmap, l_i, order)
    return out


def forward_approx(
    e_i: np.ndarray,
    seg_i: WordSegmentation,
    seg_j: WordSegmentation,
    amap: AdapterMap,
    e_j_base: np.ndarray,
) -> np.ndarray:
    """Differentiable word-tensor surrogate of the exact forward map.

    Maps each model-i word tensor through its per-length map and resizes to
    the model-j token count; rows outside word spans keep their values from
    ``e_j_base``. This is the continuous composition whose finite-difference
    gradients arbitrate the backward pass.
    """
    if len(seg_i.spans) != len(seg_j.spans):
        raise ValueError("segmentations disagree on word count")
    out = np.array(e_j_base, dtype=np.float64)
    if out.shape != (seg_j.token_count, amap.d_j):
        raise ValueError("e_j_base shape does not match the target segmentation")
    pieces = split(e_i, seg_i)
    for item, (start_j, l_j) in zip(pieces.items, seg_j.spans):
        tmap = amap.map_for(l_j)
        prod = tprod_general(item, tmap)
        rows = prod.data[0].T
        block = np.zeros((l_j, amap.d_j))
        n = min(l_j, rows.shape[0])
        block[:n] = rows[:n]
        out[start_j : start_j + l_j] = block
    return out


def nearest_token_project(x: np.ndarray, model) -> EmbeddingSeq:
    """Snap each row to the cosine-nearest vocabulary row of a model.

    A guard for off-vocabulary inputs before the forward text round-trip; ties
    (and all-zero rows) resolve to the lowest token id.
    """
    x = np.asarray(x, dtype=np.float64)
    v = model.vocab.v
    norms_v = np.linalg.norm(v, axis=1)
    norms_x = np.linalg.norm(x, axis=1)
    sims = (x @ v.T) / np.maximum(np.outer(norms_x, norms_v), 1e-300)
    ids = tuple(int(i) for i in np.argmax(sims, axis=1)) if x.size else ()
    ts = TokenSeq(ids=ids, source=detokenize(model.tokenizer, ids))
    return embed_sequence(model, ts)


def segmentation_of(model, ts: TokenSeq) -> WordSegmentation:
    """Convenience: word segmentation of a sequence under a model's tokenizer."""
    return segment_words(model.tokenizer, ts)
