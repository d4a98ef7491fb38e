"""Vocabulary matrices, bucketed word tensors, and adapter fitting.

An adapter from model i to model j is a family of precomputed tensors, one
per model-j token count l: take every corpus word that costs exactly l tokens
in model j, stack both models' token embeddings for those words into order-3
tensors (tube axis = token slot, zero-padded), and multiply the pseudoinverse
of the model-i tensor against the model-j tensor. Word lengths beyond the
cutoff fall back to a seeded random tensor.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from io import BytesIO

import numpy as np

from .tokenization import TokenizerSpec, normalize, tokenize
from .tproduct import (
    DEFAULT_RANK_TOL,
    FORMAT_VERSION as TENSOR_VERSION,
    MAGIC as TENSOR_MAGIC,
    Tensor3,
    tpinv,
    tprod_general,
)

logger = logging.getLogger(__name__)

ADAPTER_MAGIC = b"FUSEADPT"
ADAPTER_VERSION = 1


@dataclass(frozen=True)
class VocabMatrix:
    """Per-model embedding table: row k is the embedding of token k."""

    v: np.ndarray
    model_id: str

    def __post_init__(self) -> None:
        arr = np.array(self.v, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("vocabulary matrix must be 2-d")
        if not np.isfinite(arr).all():
            raise ValueError("vocabulary matrix entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "v", arr)

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def d(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True)
class EmbeddingModel:
    """Minimal tokenizer + embedding-table pair, enough to fit adapters."""

    tokenizer: TokenizerSpec
    vocab: VocabMatrix

    def __post_init__(self) -> None:
        if self.vocab.size != self.tokenizer.size:
            raise ValueError(
                f"vocab matrix rows {self.vocab.size} != tokenizer size {self.tokenizer.size}"
            )


@dataclass(frozen=True)
class VocabTensorBucket:
    """Word tensors for one token-length bucket.

    Every word costs exactly ``l_j`` tokens in model j; ``k_i`` is the largest
    token count any of them needs in model i. Tube slice n of row m holds the
    embedding of token n of word m, zero vectors beyond the word's length.
    """

    l_j: int
    k_i: int
    words: tuple[str, ...]
    v_i: Tensor3
    v_j: Tensor3


def build_vocab_matrix(
    spec: TokenizerSpec, d: int, seed, model_id: str = "model"
) -> VocabMatrix:
    """Draw a |V| x d Gaussian embedding table (std 1/sqrt(d)), seeded."""
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    return VocabMatrix(v=rng.normal(0.0, 1.0 / np.sqrt(d), (spec.size, d)), model_id=model_id)


def word_token_count(spec: TokenizerSpec, word: str) -> int:
    """Token count of a word in isolation (no boundary marker)."""
    return len(tokenize(spec, word).ids)


def corpus_words(corpus: str) -> list[str]:
    """Unique whitespace-delimited words in first-appearance order."""
    seen = {}
    for w in normalize(corpus).split(" ") if corpus.strip() else []:
        seen.setdefault(w, None)
    return list(seen)


def collect_bucket_words(
    corpus: str,
    tok_i: TokenizerSpec,
    tok_j: TokenizerSpec,
    l: int,
    sample_cap: int,
    seed,
) -> tuple[list[str], int]:
    """Corpus words costing exactly `l` model-j tokens, capped by subsampling.

    Returns the kept words and k, the max model-i token count among them
    (0 when the bucket is empty). Subsampling keeps corpus order.
    """
    if l < 1:
        raise ValueError("token count l must be >= 1")
    kept = [w for w in corpus_words(corpus) if word_token_count(tok_j, w) == l]
    if len(kept) > sample_cap:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(kept), size=sample_cap, replace=False)
        kept = [kept[i] for i in sorted(idx)]
    k = max((word_token_count(tok_i, w) for w in kept), default=0)
    return kept, k


def build_vocab_tensors(words, model_i, model_j, l_j: int) -> VocabTensorBucket:
    """Stack both models' token embeddings for a bucket's words."""
    words = tuple(words)
    if not words:
        raise ValueError("cannot build tensors for an empty bucket")
    toks_i = [tokenize(model_i.tokenizer, w).ids for w in words]
    toks_j = [tokenize(model_j.tokenizer, w).ids for w in words]
    for w, t in zip(words, toks_j):
        if len(t) != l_j:
            raise ValueError(f"word {w!r} costs {len(t)} model-j tokens, expected {l_j}")
    k_i = max(len(t) for t in toks_i)
    d_i, d_j = model_i.vocab.d, model_j.vocab.d
    v_i = np.zeros((len(words), d_i, k_i))
    v_j = np.zeros((len(words), d_j, l_j))
    for m, (ti, tj) in enumerate(zip(toks_i, toks_j)):
        for n, tid in enumerate(ti):
            v_i[m, :, n] = model_i.vocab.v[tid]
        for n, tid in enumerate(tj):
            v_j[m, :, n] = model_j.vocab.v[tid]
    return VocabTensorBucket(
        l_j=l_j, k_i=k_i, words=words, v_i=Tensor3(v_i), v_j=Tensor3(v_j)
    )


@dataclass(frozen=True)
class AdapterMap:
    """Precomputed per-token-length gradient maps from model i to model j.

    ``maps[l-1]`` is a d_i x d_j x tubes tensor for words of model-j length l;
    ``bucket_sizes[l-1]`` records how many words fit it (0 means the seeded
    random fallback was stored instead). Lengths beyond ``l_max`` use
    :meth:`fallback` generated on demand.
    """

    source_id: str
    target_id: str
    d_i: int
    d_j: int
    l_max: int
    maps: tuple[Tensor3, ...]
    bucket_sizes: tuple[int, ...]
    fallback_seed: int
    fallback_scale: float

    def __post_init__(self) -> None:
        if len(self.maps) != self.l_max or len(self.bucket_sizes) != self.l_max:
            raise ValueError("need exactly l_max maps and bucket sizes")
        for t in self.maps:
            if (t.rows, t.cols) != (self.d_i, self.d_j):
                raise ValueError(
                    f"map leading dims {(t.rows, t.cols)} != ({self.d_i}, {self.d_j})"
                )

    def fallback(self, tubes: int) -> Tensor3:
        """Seeded Gaussian stand-in used when no fitted map applies."""
        rng = np.random.default_rng([self.fallback_seed, tubes])
        return Tensor3(rng.normal(0.0, self.fallback_scale, (self.d_i, self.d_j, tubes)))

    def map_for(self, l: int) -> Tensor3:
        """Select the gradient map for a word of model-j token count l."""
        if l < 1:
            raise ValueError("token count must be >= 1")
        if l <= self.l_max:
            return self.maps[l - 1]
        return self.fallback(l)


def _fit_bucket(corpus, model_i, model_j, l, sample_cap, seed, rank_tol, scale):
    words, _ = collect_bucket_words(
        corpus, model_i.tokenizer, model_j.tokenizer, l, sample_cap, [seed, l]
    )
    if not words:
        logger.warning("no corpus words need exactly %d tokens; using random fallback", l)
        rng = np.random.default_rng([seed, l])
        d_i, d_j = model_i.vocab.d, model_j.vocab.d
        return Tensor3(rng.normal(0.0, scale, (d_i, d_j, l))), 0
    bucket = build_vocab_tensors(words, model_i, model_j, l)
    return tprod_general(tpinv(bucket.v_i, rank_tol), bucket.v_j), len(words)


def fit_adapter(
    corpus: str,
    model_i,
    model_j,
    l_max: int = 4,
    sample_cap: int = 16384,
    seed: int = 0,
    rank_tol: float = DEFAULT_RANK_TOL,
    workers: int = 1,
) -> AdapterMap:
    """Fit the per-length gradient maps pinv(V_i) * V_j on a shared corpus.

    Pure function of (corpus bytes, model specs, l_max, sample_cap, seed): the
    per-bucket seeds derive from the master seed, so results are identical no
    matter how many workers compute buckets concurrently.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    d_i, d_j = model_i.vocab.d, model_j.vocab.d
    scale = 1.0 / np.sqrt(d_i * d_j)
    lengths = range(1, l_max + 1)
    args = [(corpus, model_i, model_j, l, sample_cap, seed, rank_tol, scale) for l in lengths]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _fit_bucket(*a), args))
    else:
        results = [_fit_bucket(*a) for a in args]
    return AdapterMap(
        source_id=model_i.vocab.model_id,
        target_id=model_j.vocab.model_id,
        d_i=d_i,
        d_j=d_j,
        l_max=l_max,
        maps=tuple(t for t, _ in results),
        bucket_sizes=tuple(n for _, n in results),
        fallback_seed=seed,
        fallback_scale=scale,
    )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_adapter(amap: AdapterMap, path) -> None:
    buf = BytesIO()
    buf.write(ADAPTER_MAGIC)
    buf.write(struct.pack("<I", ADAPTER_VERSION))
    buf.write(_pack_str(amap.source_id))
    buf.write(_pack_str(amap.target_id))
    buf.write(struct.pack("<QQQ", amap.d_i, amap.d_j, amap.l_max))
    buf.write(struct.pack("<qd", amap.fallback_seed, amap.fallback_scale))
    buf.write(struct.pack(f"<{amap.l_max}Q", *amap.bucket_sizes))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())
        for t in amap.maps:
            _write_tensor_stream(t, fh)


def _write_tensor_stream(t: Tensor3, fh) -> None:
    # Tensor blocks reuse the standalone tensor file layout.
    fh.write(TENSOR_MAGIC + struct.pack("<IQQQ", TENSOR_VERSION, t.rows, t.cols, t.tubes))
    fh.write(t.data.transpose(2, 0, 1).astype("<f8").tobytes())


def _read_tensor_stream(fh) -> Tensor3:
    head = fh.read(32)
    if head[:4] != TENSOR_MAGIC:
        raise ValueError("corrupt adapter file: bad tensor block magic")
    version, rows, cols, tubes = struct.unpack_from("<IQQQ", head, 4)
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor block version {version}")
    count = rows * cols * tubes
    values = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
    return Tensor3(values.reshape(tubes, rows, cols).transpose(1, 2, 0))


def read_adapter(path) -> AdapterMap:
    with open(path, "rb") as fh:
        if fh.read(8) != ADAPTER_MAGIC:
            raise ValueError(f"{path}: not an adapter file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != ADAPTER_VERSION:
            raise ValueError(f"{path}: unsupported adapter version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        source_id = fh.read(n).decode("utf-8")
        (n,) = struct.unpack("<I", fh.read(4))
        target_id = fh.read(n).decode("utf-8")
        d_i, d_j, l_max = struct.unpack("<QQQ", fh.read(24))
        fallback_seed, fallback_scale = struct.unpack("<qd", fh.read(16))
        bucket_sizes = struct.unpack(f"<{l_max}Q", fh.read(8 * l_max))
        maps = tuple(_read_tensor_stream(fh) for _ in range(l_max))
    return AdapterMap(
        source_id=source_id,
        target_id=target_id,
        d_i=d_i,
        d_j=d_j,
        l_max=l_max,
        maps=maps,
        bucket_sizes=bucket_sizes,
        fallback_seed=fallback_seed,
        fallback_scale=fallback_scale,
    )
