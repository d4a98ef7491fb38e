"""Synthetic embedding models with differentiable loss heads.

These stand in for pretrained networks at desk scale: a tokenizer, a random
embedding table, and a handful of loss heads that map an embedding matrix to
a scalar. Every head has an exact analytic gradient, checked against the
central finite-difference oracle in the test suite.

Head kinds:

* ``target_quadratic``: 0.5 * squared Frobenius distance to a target row
  block; rows missing on either side count against zero rows.
* ``bilinear_similarity``: negative mean cosine between projected rows and an
  anchor vector (a contrastive-similarity stand-in).
* ``lm_xent``: next-row cross-entropy; row n produces logits, row n+1
  produces a soft target distribution, so the loss is smooth in the
  embeddings themselves.
* ``class_xent``: cross-entropy of a mean-pooled linear classifier against a
  fixed class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .adapter import EmbeddingSeq, embed_sequence
from .tokenization import TokenSeq, TokenizerSpec, read_tokenizer, tokenize, write_tokenizer
from .tproduct import Tensor3, read_tensor3, write_tensor3
from .vocab import VocabMatrix

MODEL_MAGIC = "FUSEMODEL"
MODEL_VERSION = "v1"

HEAD_KINDS = ("target_quadratic", "bilinear_similarity", "lm_xent", "class_xent")


@dataclass(frozen=True)
class LossHead:
    """One differentiable objective over an embedding matrix."""

    kind: str
    params: Mapping[str, object]

    def __post_init__(self) -> None:
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        frozen = {}
        for key, val in dict(self.params).items():
            if isinstance(val, np.ndarray):
                val = np.array(val, dtype=np.float64)
                if not np.isfinite(val).all():
                    raise ValueError(f"head parameter {key!r} has non-finite entries")
                val.setflags(write=False)
            frozen[key] = val
        object.__setattr__(self, "params", MappingProxyType(frozen))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _quadratic(head, e, want_grad):
    target = head.params["target"]
    s, d = e.shape
    m = max(s, target.shape[0])
    pe = np.zeros((m, d))
    pe[:s] = e
    pt = np.zeros((m, d))
    pt[: target.shape[0]] = target
    diff = pe - pt
    if not want_grad:
        return 0.5 * float(np.sum(diff * diff))
    return diff[:s].copy()


def _bilinear(head, e, want_grad):
    w = head.params["matrix"]
    a = head.params["anchor"]
    s = e.shape[0]
    if s == 0:
        return 0.0 if not want_grad else np.zeros_like(e)
    u = e @ w
    nu = np.linalg.norm(u, axis=1)
    na = np.linalg.norm(a)
    cos = (u @ a) / (nu * na)
    if not want_grad:
        return -float(np.mean(cos))
    dcos_du = a[None, :] / (nu[:, None] * na) - (u @ a)[:, None] * u / (nu**3 * na)[:, None]
    return -(dcos_du @ w.T) / s


def _lm_xent(head, e, want_grad):
    p_map = head.params["logits"]
    c_map = head.params["target_map"]
    s = e.shape[0]
    if s < 2:
        return 0.0 if not want_grad else np.zeros_like(e)
    logits = e[:-1] @ p_map
    tlogits = e[1:] @ c_map
    logp = _log_softmax(logits)
    q = _softmax(tlogits)
    if not want_grad:
        return -float(np.sum(q * logp)) / (s - 1)
    p = np.exp(logp)
    dlogits = (p - q) / (s - 1)
    inner = np.sum(q * logp, axis=1, keepdims=True)
    dtlogits = -q * (logp - inner) / (s - 1)
    grad = np.zeros_like(e)
    grad[:-1] += dlogits @ p_map.T
    grad[1:] += dtlogits @ c_map.T
    return grad


def _class_xent(head, e, want_grad):
    w = head.params["weights"]
    c = int(head.params["target_class"])
    s = e.shape[0]
    pooled = e.mean(axis=0) if s else np.zeros(w.shape[0])
    logits = pooled @ w
    logp = _log_softmax(logits)
    if not want_grad:
        return -float(logp[c])
    p = np.exp(logp)
    p[c] -= 1.0
    if s == 0:
        return np.zeros_like(e)
    return np.tile((p @ w.T) / s, (s, 1))


_HEAD_FNS = {
    "target_quadratic": _quadratic,
    "bilinear_similarity": _bilinear,
    "lm_xent": _lm_xent,
    "class_xent": _class_xent,
}


def head_loss(head: LossHead, e: np.ndarray) -> float:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("loss heads expect a 2-d embedding matrix")
    return _HEAD_FNS[head.kind](head, e, want_grad=False)


def head_grad(head: LossHead, e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("loss heads expect a 2-d embedding matrix")
    return _HEAD_FNS[head.kind](head, e, want_grad=True)


def finite_diff_grad(fn: Callable[[np.ndarray], float], e: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    if h <= 0:
        raise ValueError("step size must be positive")
    e = np.asarray(e, dtype=np.float64)
    out = np.zeros_like(e)
    for idx in np.ndindex(*e.shape):
        bumped = e.copy()
        bumped[idx] += h
        up = fn(bumped)
        bumped[idx] -= 2 * h
        down = fn(bumped)
        out[idx] = (up - down) / (2 * h)
    return out


@dataclass(frozen=True)
class SyntheticModel:
    """Tokenizer + embedding table + named loss heads."""

    model_id: str
    tokenizer: TokenizerSpec
    vocab: VocabMatrix
    heads: Mapping[str, LossHead]

    def __post_init__(self) -> None:
        if self.vocab.size != self.tokenizer.size:
            raise ValueError(
                f"vocab matrix rows {self.vocab.size} != tokenizer size {self.tokenizer.size}"
            )
        object.__setattr__(self, "heads", MappingProxyType(dict(self.heads)))

    @property
    def d(self) -> int:
        return self.vocab.d

    def embed(self, ts: TokenSeq) -> EmbeddingSeq:
        return embed_sequence(self, ts)

    def embed_text(self, text: str) -> EmbeddingSeq:
        return self.embed(tokenize(self.tokenizer, text))

    def loss(self, head_name: str, e: np.ndarray) -> float:
        return head_loss(self._head(head_name), self._check(e))

    def grad(self, head_name: str, e: np.ndarray) -> np.ndarray:
        return head_grad(self._head(head_name), self._check(e))

    def lm_logit_map(self) -> np.ndarray | None:
        """Logit matrix of the first lm head, if any (used for scoring)."""
        for head in self.heads.values():
            if head.kind == "lm_xent":
                return head.params["logits"]
        return None

    def _head(self, name: str) -> LossHead:
        try:
            return self.heads[name]
        except KeyError:
            raise KeyError(f"model {self.model_id!r} has no head {name!r}") from None

    def _check(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != self.d:
            raise ValueError(f"embedding width {e.shape} does not match d={self.d}")
        return e


def _as_tensor(arr: np.ndarray) -> Tensor3:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return Tensor3(arr[:, :, None])


def _from_tensor(t: Tensor3, vector: bool = False) -> np.ndarray:
    m = t.data[:, :, 0]
    return m[0] if vector else m


_HEAD_ARRAYS = {
    "target_quadratic": {"target": False},
    "bilinear_similarity": {"matrix": False, "anchor": True},
    "lm_xent": {"logits": False, "target_map": False},
    "class_xent": {"weights": False},
}
_HEAD_SCALARS = {"class_xent": ("target_class",)}


def save_model(model: SyntheticModel, directory, name: str | None = None) -> Path:
    """Write a model bundle: plain-text manifest plus tokenizer/tensor files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or model.model_id
    tok_file = f"{name}.tok"
    vocab_file = f"{name}.vocab.t3"
    write_tokenizer(model.tokenizer, directory / tok_file)
    write_tensor3(_as_tensor(model.vocab.v), directory / vocab_file)
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"id = {model.model_id}",
        f"tokenizer = {tok_file}",
        f"vocab = {vocab_file}",
    ]
    for hname, head in model.heads.items():
        fields = []
        for key, is_vec in _HEAD_ARRAYS[head.kind].items():
            fname = f"{name}.{hname}.{key}.t3"
            write_tensor3(_as_tensor(head.params[key]), directory / fname)
            fields.append(f"{key}={fname}")
        for key in _HEAD_SCALARS.get(head.kind, ()):
            fields.append(f"{key}={head.params[key]}")
        lines.append(f"head {hname} = {head.kind} " + " ".join(fields))
    manifest = directory / f"{name}.manifest"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_model(manifest_path) -> SyntheticModel:
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"{MODEL_MAGIC} {MODEL_VERSION}"):
        raise ValueError(f"{manifest_path}: not a model manifest")
    base = manifest_path.parent
    fields: dict[str, str] = {}
    heads: dict[str, LossHead] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        key, value = key.strip(), value.strip()
        if key.startswith("head "):
            hname = key[len("head "):]
            kind, *pairs = value.split(" ")
            params: dict[str, object] = {}
            for pair in pairs:
                pkey, _, pval = pair.partition("=")
                if pkey in _HEAD_ARRAYS.get(kind, {}):
                    is_vec = _HEAD_ARRAYS[kind][pkey]
                    params[pkey] = _from_tensor(read_tensor3(base / pval), vector=is_vec)
                else:
                    params[pkey] = int(pval)
            heads[hname] = LossHead(kind=kind, params=params)
        else:
            fields[key] = value
    tokenizer = read_tokenizer(base / fields["tokenizer"])
    vocab_t = read_tensor3(base / fields["vocab"])
    vocab = VocabMatrix(v=_from_tensor(vocab_t), model_id=fields["id"])
    return SyntheticModel(
        model_id=fields["id"], tokenizer=tokenizer, vocab=vocab, heads=heads
    )
