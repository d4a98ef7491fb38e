"""Command-line surface: tokenizer training, adapter fitting, gradient
checking, optimization runs, algebra self-tests, and artifact inspection.

Exit codes: 0 success, 1 check failure, 2 usage or IO error. The environment
variable FUSE_SEED overrides any configured seed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .adapter import (
    backward,
    backward_shared,
    embed_sequence,
    forward_approx,
    segmentation_of,
)
from .models import MODEL_MAGIC, finite_diff_grad, head_grad, head_loss, load_model
from .optimizer import Objective, ObjectiveTerm, SearchConfig, optimize
from .tokenization import (
    MARKER,
    TOKENIZER_MAGIC,
    TokenSeq,
    char_tokenizer,
    detokenize,
    read_tokenizer,
    tokenize,
    train_bpe,
    write_tokenizer,
)
from .tproduct import read_tensor3, ttranspose
from .vocab import (
    ADAPTER_MAGIC,
    AdapterMap,
    EmbeddingModel,
    VocabMatrix,
    fit_adapter,
    read_adapter,
    write_adapter,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _seed_from_env(seed: int) -> int:
    env = os.environ.get("FUSE_SEED")
    return int(env) if env is not None else seed


def _print_config(title: str, pairs) -> None:
    print(f"# {title}")
    for key, value in pairs:
        print(f"# {key} = {value}")


def cmd_tok_train(args) -> int:
    corpus = Path(args.corpus).read_text(encoding="utf-8")
    if args.kind == "char":
        spec = char_tokenizer(corpus)
    else:
        spec = train_bpe(corpus, args.size, space_marker=args.space_marker)
    write_tokenizer(spec, args.out)
    _print_config(
        "fuse tok train",
        [
            ("corpus", args.corpus),
            ("kind", args.kind),
            ("size", args.size),
            ("space_marker", args.space_marker),
            ("out", args.out),
        ],
    )
    print(f"vocab={spec.size} merges={len(spec.merges)}")
    return EXIT_OK


def _load_embedding_model(tok_path, emb_path, model_id) -> EmbeddingModel:
    spec = read_tokenizer(tok_path)
    t = read_tensor3(emb_path)
    if t.tubes != 1:
        raise ValueError(f"{emb_path}: embedding table must have a single tube")
    vm = VocabMatrix(v=t.data[:, :, 0], model_id=model_id)
    return EmbeddingModel(tokenizer=spec, vocab=vm)


def cmd_fit(args) -> int:
    seed = _seed_from_env(args.seed)
    corpus = Path(args.corpus).read_text(encoding="utf-8")
    model_i = _load_embedding_model(args.tok_i, args.emb_i, args.id_i or Path(args.emb_i).stem)
    model_j = _load_embedding_model(args.tok_j, args.emb_j, args.id_j or Path(args.emb_j).stem)
    amap = fit_adapter(
        corpus,
        model_i,
        model_j,
        l_max=args.lmax,
        sample_cap=args.sample,
        seed=seed,
        workers=args.workers,
    )
    write_adapter(amap, args.out)
    _print_config(
        "fuse fit",
        [
            ("corpus", args.corpus),
            ("lmax", args.lmax),
            ("sample", args.sample),
            ("seed", seed),
            ("out", args.out),
        ],
    )
    print(f"buckets={list(amap.bucket_sizes)}")
    return EXIT_OK


def _random_prompt(model, rng, n_words: int) -> TokenSeq:
    # Sample canonical prompts: random letter words, re-tokenized.
    letters = [
        t
        for t in model.tokenizer.vocab
        if len(t) == 1 and t.isalpha() and t != MARKER
    ]
    words = [
        "".join(rng.choice(letters, size=rng.integers(2, 5)))
        for _ in range(n_words)
    ]
    return tokenize(model.tokenizer, " ".join(words))


def cmd_gradcheck(args) -> int:
    seed = _seed_from_env(args.seed)
    model_i = load_model(args.model_i)
    model_j = load_model(args.model_j)
    amap = read_adapter(args.adapter)
    if args.debug_transpose:
        if amap.d_i != amap.d_j:
            print("error: --debug-transpose needs square maps (d_i == d_j)", file=sys.stderr)
            return EXIT_USAGE
        amap = AdapterMap(
            source_id=amap.source_id,
            target_id=amap.target_id,
            d_i=amap.d_i,
            d_j=amap.d_j,
            l_max=amap.l_max,
            maps=tuple(ttranspose(t) for t in amap.maps),
            bucket_sizes=amap.bucket_sizes,
            fallback_seed=amap.fallback_seed + 1,
            fallback_scale=amap.fallback_scale,
        )
    head_name = args.head or next(iter(model_j.heads))
    head = model_j.heads[head_name]
    _print_config(
        "fuse gradcheck",
        [
            ("model_i", args.model_i),
            ("model_j", args.model_j),
            ("adapter", args.adapter),
            ("head", head_name),
            ("prompts", args.prompts),
            ("seed", seed),
            ("debug_transpose", args.debug_transpose),
        ],
    )
    rng = np.random.default_rng(seed)

    ts_i0 = _random_prompt(model_i, rng, 3)
    seg_i0 = segmentation_of(model_i, ts_i0)
    ts_j0 = tokenize(model_j.tokenizer, ts_i0.source)
    seg_j0 = segmentation_of(model_j, ts_j0)
    zeros_out = backward(
        np.zeros((seg_j0.token_count, model_j.d)), seg_j0, seg_i0, amap
    )
    ok_zero = not zeros_out.any()
    print(f"zero-gradient propagation: exact zeros: {'PASS' if ok_zero else 'FAIL'}")

    # The matrix regime: with a shared tokenizer the map is pinv(V_i) V_j,
    # otherwise the adapter's fitted single-token map plays that role.
    if model_i.tokenizer == model_j.tokenizer:
        m = np.linalg.pinv(model_i.vocab.v, rcond=1e-10) @ model_j.vocab.v
        if args.debug_transpose:
            m = m.T
    else:
        m = np.array(amap.maps[0].slice(0))
    worst_rel = 0.0
    for _ in range(args.prompts):
        ids = rng.integers(0, model_i.vocab.size, size=4)
        e = model_i.vocab.v[ids]
        fd = finite_diff_grad(lambda x: head_loss(head, x @ m), e)
        got = head_grad(head, e @ m) @ m.T
        denom = max(float(np.linalg.norm(fd)), 1e-300)
        worst_rel = max(worst_rel, float(np.linalg.norm(got - fd)) / denom)
    ok_matrix = worst_rel <= 1e-4
    print(
        f"matrix-path relative error: {worst_rel:.3e} (threshold 1e-04): "
        f"{'PASS' if ok_matrix else 'FAIL'}"
    )

    agree_total = 0
    coord_total = 0
    for _ in range(args.prompts):
        ts_i = _random_prompt(model_i, rng, int(rng.integers(2, 5)))
        seg_i = segmentation_of(model_i, ts_i)
        ts_j = tokenize(model_j.tokenizer, ts_i.source)
        seg_j = segmentation_of(model_j, ts_j)
        e_i = embed_sequence(model_i, ts_i).e
        e_j = embed_sequence(model_j, ts_j).e
        got = backward(head_grad(head, e_j), seg_j, seg_i, amap)
        fd = finite_diff_grad(
            lambda x: head_loss(head, forward_approx(x, seg_i, seg_j, amap, e_j)), e_i
        )
        both_tiny = (np.abs(got) < 1e-12) & (np.abs(fd) < 1e-12)
        agree_total += int(np.sum((got * fd > 0) | both_tiny))
        coord_total += got.size
    agreement = agree_total / max(coord_total, 1)
    ok_tensor = agreement >= 0.90
    print(
        f"tensor-path sign agreement: {agreement:.3f} (threshold 0.900): "
        f"{'PASS' if ok_tensor else 'FAIL'}"
    )
    return EXIT_OK if (ok_zero and ok_matrix and ok_tensor) else EXIT_CHECK_FAILED


_CONFIG_KEYS = {
    "run": {"seed", "trace"},
    "search": {"top_k", "beam_width", "max_steps"},
    "objective": {"primary", "prefix"},
    "term": {"head", "weight", "model", "adapter"},
}


def _parse_optimize_config(path: Path):
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    for section in parser.sections():
        family = "term" if section.startswith("term:") else section
        if family not in _CONFIG_KEYS:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _CONFIG_KEYS[family]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
    return parser


def cmd_optimize(args) -> int:
    config_path = Path(args.config)
    parser = _parse_optimize_config(config_path)
    base = config_path.parent

    seed = _seed_from_env(parser.getint("run", "seed", fallback=0))
    cfg = SearchConfig(
        top_k=parser.getint("search", "top_k", fallback=64),
        beam_width=parser.getint("search", "beam_width", fallback=5),
        max_steps=parser.getint("search", "max_steps", fallback=32),
        seed=seed,
    )
    primary = load_model(base / parser.get("objective", "primary"))
    prefix = parser.get("objective", "prefix", fallback="")
    models = {primary.model_id: primary}
    terms = []
    for section in parser.sections():
        if not section.startswith("term:"):
            continue
        sec = parser[section]
        weight = float(sec.get("weight", "1.0"))
        if "model" not in sec:
            terms.append(ObjectiveTerm(head=sec["head"], weight=weight))
            continue
        model = load_model(base / sec["model"])
        models[model.model_id] = model
        adapter = sec.get("adapter", "shared")
        if adapter != "shared":
            adapter = read_adapter(base / adapter)
        terms.append(
            ObjectiveTerm(head=sec["head"], weight=weight, model=model, adapter=adapter)
        )
    obj = Objective(primary=primary, terms=tuple(terms), prefix=prefix)

    best_ids, trace = optimize(obj, cfg)
    best_text = detokenize(primary.tokenizer, best_ids)

    header = [
        "# fuse optimize trace",
        f"# config = {config_path.name}",
        f"# seed = {seed}",
        f"# top_k = {cfg.top_k}",
        f"# beam_width = {cfg.beam_width}",
        f"# max_steps = {cfg.max_steps}",
        f"# prefix = {prefix}",
    ]
    rows = [f"{step}\t{loss:.12g}\t{text}" for step, loss, text in trace]
    trace_path = base / parser.get("run", "trace", fallback="optimize.trace")
    trace_path.write_text("\n".join(header + rows) + "\n", encoding="utf-8")
    print(best_text)
    return EXIT_OK


def cmd_algebra(args) -> int:
    seeds = range(args.seeds)
    results = checks.tproduct_suite(seeds) + checks.pinv_suite(seeds)
    _print_config("fuse algebra", [("seeds", args.seeds)])
    failed = False
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: max error {r.max_error:.3e} (tol {r.tolerance:.1e})")
        failed = failed or not r.ok
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _inspect_tokenizer(path: Path) -> None:
    spec = read_tokenizer(path)
    print(f"tokenizer: kind={spec.kind} vocab={spec.size} merges={len(spec.merges)} "
          f"space_marker={spec.space_marker}")


def _inspect_adapter(path: Path) -> None:
    amap = read_adapter(path)
    print(
        f"adapter: {amap.source_id} -> {amap.target_id} d_i={amap.d_i} d_j={amap.d_j} "
        f"l_max={amap.l_max}"
    )
    for l, (t, n) in enumerate(zip(amap.maps, amap.bucket_sizes), start=1):
        src = f"{n} words" if n else "random fallback"
        print(f"  l={l}: tubes={t.tubes} ({src})")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head[:8] == ADAPTER_MAGIC:
        _inspect_adapter(path)
    elif head[:4] == b"FUS3":
        t = read_tensor3(path)
        print(f"tensor: rows={t.rows} cols={t.cols} tubes={t.tubes}")
    elif head.startswith(TOKENIZER_MAGIC.encode()):
        _inspect_tokenizer(path)
    elif head.startswith(MODEL_MAGIC.encode()):
        model = load_model(path)
        heads = ", ".join(f"{n}({h.kind})" for n, h in model.heads.items())
        print(f"model: id={model.model_id} d={model.d} vocab={model.vocab.size} heads: {heads}")
    else:
        raise ValueError(f"{path}: unrecognized artifact")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuse")
    sub = parser.add_subparsers(dest="command", required=True)

    tok = sub.add_parser("tok", help="tokenizer utilities")
    tok_sub = tok.add_subparsers(dest="tok_command", required=True)
    tr = tok_sub.add_parser("train", help="train a tokenizer on a corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--size", type=int, default=256)
    tr.add_argument("--kind", choices=("bpe", "char"), default="bpe")
    tr.add_argument("--space-marker", action="store_true")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_tok_train)

    fit = sub.add_parser("fit", help="fit an adapter between two models")
    fit.add_argument("--corpus", required=True)
    fit.add_argument("--tok-i", required=True)
    fit.add_argument("--tok-j", required=True)
    fit.add_argument("--emb-i", required=True)
    fit.add_argument("--emb-j", required=True)
    fit.add_argument("--lmax", type=int, default=4)
    fit.add_argument("--sample", type=int, default=16384)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--workers", type=int, default=1)
    fit.add_argument("--id-i", default=None)
    fit.add_argument("--id-j", default=None)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    gc = sub.add_parser("gradcheck", help="validate backward passes against finite differences")
    gc.add_argument("--model-i", required=True)
    gc.add_argument("--model-j", required=True)
    gc.add_argument("--adapter", required=True)
    gc.add_argument("--head", default=None)
    gc.add_argument("--prompts", type=int, default=10)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--debug-transpose", action="store_true")
    gc.set_defaults(func=cmd_gradcheck)

    opt = sub.add_parser("optimize", help="run the discrete prompt optimizer")
    opt.add_argument("--config", required=True)
    opt.set_defaults(func=cmd_optimize)

    alg = sub.add_parser("algebra", help="run the tensor algebra self-checks")
    alg.add_argument("--seeds", type=int, default=10)
    alg.set_defaults(func=cmd_algebra)

    ins = sub.add_parser("inspect", help="describe a serialized artifact")
    ins.add_argument("path")
    ins.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
