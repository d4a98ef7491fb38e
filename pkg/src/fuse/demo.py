"""Shipped desk-scale fixtures: toy tokenizers, models, corpus, and workspace.

``tokenizer_i``/``tokenizer_j`` are a hand-built pair over the pangram
"the quick brown fox jumps over the lazy dog" that split its words in two
different ways (per-word token counts [1,2,2,1,2,1,1,2,1] versus
[1,2,1,1,2,2,1,1,2]). They double as general lowercase tokenizers: every
letter is in both vocabularies, so arbitrary words fall back to characters.

``build_demo_models`` returns three synthetic models with deliberately
different embedding widths (32/48/24) and different tokenizers, so every
cross-model path exercises rectangular maps. ``write_demo_workspace`` lays
all artifacts out on disk together with a ready-to-run optimizer config:

    python -m fuse.demo <directory>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .models import LossHead, SyntheticModel, save_model
from .tokenization import MARKER, UNKNOWN_TOKEN, TokenizerSpec, tokenize, train_bpe
from .vocab import VocabMatrix, build_vocab_matrix, fit_adapter, write_adapter

PANGRAM = "the quick brown fox jumps over the lazy dog"

DEMO_CORPUS = """\
the quick brown fox jumps over the lazy dog
a small bird sits on the old stone wall and sings
rain falls on the quiet field while the river runs past
children play near the tall trees and watch the clouds drift
the old man walks his dog along the narrow path every morning
bright stars fill the night sky above the sleeping town
she reads a long book by the warm fire in winter
fresh bread and sweet honey wait on the wooden table
the young cat chases a red ball across the floor
wind moves through the green grass under a pale moon
boats drift slowly down the wide river toward the sea
the baker makes warm bread before the sun rises
a grey wolf watches the quiet valley from the high ridge
the farmer feeds his horses and counts the white sheep
soft snow covers the silent hills through the cold night
"""

_ALPHABET = tuple("abcdefghijklmnopqrstuvwxyz")

_MERGES_I = (
    ("t", "h"), ("th", "e"),
    ("q", "u"), ("qu", "i"), ("c", "k"),
    ("b", "r"), ("o", "w"), ("ow", "n"),
    ("f", "o"), ("fo", "x"),
    ("u", "m"), ("um", "p"), ("ump", "s"),
    ("o", "v"), ("ov", "e"), ("ove", "r"),
    ("a", "z"), ("az", "y"),
    ("d", "o"), ("do", "g"),
    (MARKER, "the"), (MARKER, "qui"), (MARKER, "br"), (MARKER, "fox"),
    (MARKER, "j"), (MARKER, "over"), (MARKER, "l"), (MARKER, "dog"),
)

_MERGES_J = (
    ("t", "h"), ("th", "e"),
    ("u", "i"), ("ui", "c"), ("uic", "k"),
    ("b", "r"), ("br", "o"), ("bro", "w"), ("brow", "n"),
    ("f", "o"), ("fo", "x"),
    ("j", "u"), ("ju", "m"), ("jum", "p"),
    ("o", "v"), ("e", "r"),
    ("l", "a"), ("la", "z"), ("laz", "y"),
    ("o", "g"),
    (MARKER, "the"), (MARKER, "q"), (MARKER, "brown"), (MARKER, "fox"),
    (MARKER, "jump"), (MARKER, "ov"), (MARKER, "lazy"), (MARKER, "d"),
)


def _toy_spec(merges) -> TokenizerSpec:
    vocab = [UNKNOWN_TOKEN, MARKER, *_ALPHABET]
    vocab.extend(a + b for a, b in merges)
    return TokenizerSpec(
        kind="bpe", vocab=tuple(vocab), merges=tuple(merges), space_marker=True
    )


def tokenizer_i() -> TokenizerSpec:
    """Pangram tokenizer splitting the/qui+ck/br+own/fox/j+umps/over/l+azy/dog."""
    return _toy_spec(_MERGES_I)


def tokenizer_j() -> TokenizerSpec:
    """Pangram tokenizer splitting the/q+uick/brown/fox/jump+s/ov+er/lazy/d+og."""
    return _toy_spec(_MERGES_J)


def _correlate_markers(spec: TokenizerSpec, vm: VocabMatrix, strength: float = 0.3) -> VocabMatrix:
    # Pull each marked variant ("Ġword") toward its bare counterpart, the way
    # trained embedding tables place leading-space variants near their words.
    v = np.array(vm.v)
    ids = {t: k for k, t in enumerate(spec.vocab)}
    for k, t in enumerate(spec.vocab):
        if t.startswith(MARKER) and len(t) > 1 and t[1:] in ids:
            base = ids[t[1:]]
            v[k] = v[base] + strength * (v[k] - v[base])
    return VocabMatrix(v=v, model_id=vm.model_id)


def build_demo_models(seed: int = 0) -> tuple[SyntheticModel, SyntheticModel, SyntheticModel]:
    """Three models: primary (d=32), similarity scorer (d=48), classifier (d=24).

    The first two use differently trained byte-pair tokenizers; the third
    shares the primary tokenizer so the single-matrix backward path is
    exercised too.
    """
    rng = np.random.default_rng([seed, 99])
    tok_a = train_bpe(DEMO_CORPUS, target_vocab_size=70, space_marker=True)
    tok_b = train_bpe(DEMO_CORPUS, target_vocab_size=45, space_marker=True)

    vocab_a = _correlate_markers(tok_a, build_vocab_matrix(tok_a, d=32, seed=[seed, 1], model_id="alpha"))
    vocab_b = _correlate_markers(tok_b, build_vocab_matrix(tok_b, d=48, seed=[seed, 2], model_id="beta"))
    vocab_c = _correlate_markers(tok_a, build_vocab_matrix(tok_a, d=24, seed=[seed, 3], model_id="gamma"))

    lm_head = LossHead(
        kind="lm_xent",
        params={
            "logits": rng.normal(0.0, 0.15, (32, len(tok_a.vocab))),
            "target_map": vocab_a.v.T.copy(),
        },
    )
    target_ids = tokenize(tok_a, "the brown fox rises").ids
    alpha = SyntheticModel(
        model_id="alpha",
        tokenizer=tok_a,
        vocab=vocab_a,
        heads={
            "lm": lm_head,
            "quad": LossHead(
                kind="target_quadratic", params={"target": vocab_a.v[list(target_ids)]}
            ),
        },
    )
    beta = SyntheticModel(
        model_id="beta",
        tokenizer=tok_b,
        vocab=vocab_b,
        heads={
            "sim": LossHead(
                kind="bilinear_similarity",
                params={
                    "matrix": rng.normal(0.0, 1.0 / np.sqrt(48), (48, 16)),
                    "anchor": rng.normal(0.0, 1.0, 16),
                },
            )
        },
    )
    gamma = SyntheticModel(
        model_id="gamma",
        tokenizer=tok_a,
        vocab=vocab_c,
        heads={
            "cls": LossHead(
                kind="class_xent",
                params={
                    "weights": rng.normal(0.0, 1.0 / np.sqrt(24), (24, 3)),
                    "target_class": 2,
                },
            )
        },
    )
    return alpha, beta, gamma


OPTIMIZE_CONFIG = """\
[run]
seed = 0
trace = demo.trace

[search]
top_k = 24
beam_width = 3
max_steps = 8

[objective]
primary = alpha.manifest
prefix = the quick dog

[term:fluency]
head = lm
weight = 0.2

[term:match]
head = quad
weight = 1.0

[term:sim]
model = beta.manifest
adapter = alpha_beta.adpt
head = sim
weight = 0.5

[term:cls]
model = gamma.manifest
adapter = shared
head = cls
weight = 0.3
"""


def write_demo_workspace(directory, seed: int = 0) -> dict[str, Path]:
    """Materialize corpus, model bundles, adapter, and optimizer config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    alpha, beta, gamma = build_demo_models(seed=seed)
    corpus_path = directory / "corpus.txt"
    corpus_path.write_text(DEMO_CORPUS, encoding="utf-8")
    paths = {
        "corpus": corpus_path,
        "alpha": save_model(alpha, directory),
        "beta": save_model(beta, directory),
        "gamma": save_model(gamma, directory),
    }
    amap = fit_adapter(DEMO_CORPUS, alpha, beta, l_max=4, sample_cap=16384, seed=seed)
    adapter_path = directory / "alpha_beta.adpt"
    write_adapter(amap, adapter_path)
    paths["adapter"] = adapter_path
    config_path = directory / "optimize.cfg"
    config_path.write_text(OPTIMIZE_CONFIG, encoding="utf-8")
    paths["config"] = config_path
    return paths


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="write the demo workspace")
    parser.add_argument("directory", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_demo_workspace(args.directory, seed=args.seed)
    for key, path in paths.items():
        print(f"{key}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
