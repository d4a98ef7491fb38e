"""Loss-head tests: every analytic gradient against the finite-difference oracle."""

import numpy as np
import pytest

from fuse import demo
from fuse.models import (
    LossHead,
    SyntheticModel,
    finite_diff_grad,
    head_grad,
    head_loss,
    load_model,
    save_model,
)
from fuse.vocab import build_vocab_matrix


def make_heads(rng, d):
    return {
        "quad": LossHead(
            kind="target_quadratic", params={"target": rng.normal(size=(4, d))}
        ),
        "sim": LossHead(
            kind="bilinear_similarity",
            params={"matrix": rng.normal(size=(d, 6)), "anchor": rng.normal(size=6)},
        ),
        "lm": LossHead(
            kind="lm_xent",
            params={
                "logits": rng.normal(size=(d, 11)),
                "target_map": rng.normal(size=(d, 11)),
            },
        ),
        "cls": LossHead(
            kind="class_xent",
            params={"weights": rng.normal(size=(d, 3)), "target_class": 1},
        ),
    }


class TestGradientOracle:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("name", ["quad", "sim", "lm", "cls"])
    def test_analytic_matches_finite_differences(self, name, seed):
        rng = np.random.default_rng(seed)
        head = make_heads(rng, d=7)[name]
        e = rng.normal(size=(5, 7))
        analytic = head_grad(head, e)
        fd = finite_diff_grad(lambda x: head_loss(head, x), e, h=1e-5)
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-300)
        assert rel <= 1e-6

    def test_losses_are_deterministic(self):
        rng = np.random.default_rng(0)
        heads = make_heads(rng, d=7)
        e = rng.normal(size=(5, 7))
        for head in heads.values():
            assert head_loss(head, e) == head_loss(head, e)


class TestQuadraticHead:
    def test_zero_at_target(self):
        rng = np.random.default_rng(1)
        target = rng.normal(size=(3, 5))
        head = LossHead(kind="target_quadratic", params={"target": target})
        assert head_loss(head, target) == 0.0
        np.testing.assert_array_equal(head_grad(head, target), np.zeros((3, 5)))

    def test_length_mismatch_penalized(self):
        target = np.ones((3, 4))
        head = LossHead(kind="target_quadratic", params={"target": target})
        short = head_loss(head, np.ones((2, 4)))
        assert short == pytest.approx(0.5 * 4)  # one missing row of ones
        longer = head_loss(head, np.vstack([target, 2 * np.ones((1, 4))]))
        assert longer == pytest.approx(0.5 * 4 * 4)

    def test_positive_away_from_target(self):
        rng = np.random.default_rng(2)
        target = rng.normal(size=(3, 5))
        head = LossHead(kind="target_quadratic", params={"target": target})
        assert head_loss(head, target + 0.1) > 0


class TestBilinearHead:
    def test_anchor_scale_invariance(self):
        # Cosine similarity ignores positive rescaling of the anchor.
        rng = np.random.default_rng(3)
        w = rng.normal(size=(5, 4))
        a = rng.normal(size=4)
        e = rng.normal(size=(3, 5))
        g1 = head_grad(
            LossHead(kind="bilinear_similarity", params={"matrix": w, "anchor": a}), e
        )
        g2 = head_grad(
            LossHead(kind="bilinear_similarity", params={"matrix": w, "anchor": 3.0 * a}), e
        )
        np.testing.assert_allclose(g1, g2, atol=1e-12)

    def test_loss_bounded_by_one(self):
        rng = np.random.default_rng(4)
        head = LossHead(
            kind="bilinear_similarity",
            params={"matrix": rng.normal(size=(5, 4)), "anchor": rng.normal(size=4)},
        )
        assert -1.0 <= head_loss(head, rng.normal(size=(6, 5))) <= 1.0

    def test_empty_input(self):
        rng = np.random.default_rng(5)
        head = LossHead(
            kind="bilinear_similarity",
            params={"matrix": rng.normal(size=(5, 4)), "anchor": rng.normal(size=4)},
        )
        assert head_loss(head, np.zeros((0, 5))) == 0.0


class TestLmHead:
    def test_single_row_has_no_transitions(self):
        rng = np.random.default_rng(6)
        head = make_heads(rng, d=7)["lm"]
        e = rng.normal(size=(1, 7))
        assert head_loss(head, e) == 0.0
        np.testing.assert_array_equal(head_grad(head, e), np.zeros((1, 7)))

    def test_loss_is_nonnegative(self):
        # Cross-entropy against a soft target is at least the target entropy.
        rng = np.random.default_rng(7)
        head = make_heads(rng, d=7)["lm"]
        assert head_loss(head, rng.normal(size=(6, 7))) >= 0.0


class TestClassHead:
    def test_empty_input(self):
        rng = np.random.default_rng(8)
        head = make_heads(rng, d=7)["cls"]
        assert head_loss(head, np.zeros((0, 7))) == pytest.approx(np.log(3))
        assert head_grad(head, np.zeros((0, 7))).shape == (0, 7)

    def test_gradient_constant_across_rows(self):
        rng = np.random.default_rng(9)
        head = make_heads(rng, d=7)["cls"]
        g = head_grad(head, rng.normal(size=(4, 7)))
        for row in g[1:]:
            np.testing.assert_array_equal(row, g[0])


class TestFiniteDiffOracle:
    def test_linear_function_exact(self):
        rng = np.random.default_rng(10)
        c = rng.normal(size=(3, 4))
        fd = finite_diff_grad(lambda x: float(np.sum(c * x)), np.zeros((3, 4)), h=1e-4)
        np.testing.assert_allclose(fd, c, rtol=1e-10)

    def test_quadratic_function_high_accuracy(self):
        rng = np.random.default_rng(11)
        e = rng.normal(size=(2, 3))
        fd = finite_diff_grad(lambda x: 0.5 * float(np.sum(x * x)), e, h=1e-4)
        rel = np.linalg.norm(fd - e) / np.linalg.norm(e)
        assert rel < 1e-8

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.zeros((1, 1)), h=0.0)


class TestSyntheticModel:
    def test_validates_vocab_size(self):
        spec = demo.tokenizer_i()
        bad = build_vocab_matrix(demo.tokenizer_j(), 4, seed=0)
        if bad.size != spec.size:
            with pytest.raises(ValueError):
                SyntheticModel(model_id="m", tokenizer=spec, vocab=bad, heads={})

    def test_loss_checks_width(self):
        alpha, _, _ = demo.build_demo_models(seed=0)
        with pytest.raises(ValueError, match="width"):
            alpha.loss("quad", np.zeros((2, alpha.d + 1)))

    def test_missing_head_keyerror(self):
        alpha, _, _ = demo.build_demo_models(seed=0)
        with pytest.raises(KeyError, match="no head"):
            alpha.loss("nope", np.zeros((1, alpha.d)))

    def test_embed_matches_table(self):
        alpha, _, _ = demo.build_demo_models(seed=0)
        seq = alpha.embed_text("the quick dog")
        np.testing.assert_array_equal(seq.e, alpha.vocab.v[list(seq.token_ids.ids)])


class TestModelBundles:
    def test_round_trip_behavior(self, tmp_path):
        alpha, beta, gamma = demo.build_demo_models(seed=0)
        rng = np.random.default_rng(12)
        for model in (alpha, beta, gamma):
            manifest = save_model(model, tmp_path)
            back = load_model(manifest)
            assert back.model_id == model.model_id
            assert back.tokenizer == model.tokenizer
            np.testing.assert_array_equal(back.vocab.v, model.vocab.v)
            e = rng.normal(size=(4, model.d))
            for name in model.heads:
                assert back.loss(name, e) == pytest.approx(model.loss(name, e), abs=1e-15)
                np.testing.assert_allclose(back.grad(name, e), model.grad(name, e))

    def test_rejects_foreign_manifest(self, tmp_path):
        p = tmp_path / "bad.manifest"
        p.write_text("whatever\n", encoding="utf-8")
        with pytest.raises(ValueError, match="manifest"):
            load_model(p)
