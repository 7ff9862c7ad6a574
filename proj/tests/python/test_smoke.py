import numpy as np
import pytest

import otat


def test_build_cost_and_sinkhorn_roundtrip():
    rng = np.random.default_rng(0)
    image = rng.normal(size=(6, 8))
    text = rng.normal(size=(4, 8))
    cost = otat.build_cost(image, text, kind="cosine")
    assert cost.shape == (6, 4)
    assert cost.min() >= 0.0 and cost.max() <= 2.0

    sol = otat.sinkhorn(cost, lam=10.0, max_iters=5000, tol=1e-8)
    assert sol["converged"]
    plan = sol["plan"]
    assert np.all(plan >= 0.0)
    np.testing.assert_allclose(plan.sum(axis=1), np.full(6, 1 / 6), atol=1e-6)
    np.testing.assert_allclose(plan.sum(axis=0), np.full(4, 1 / 4), atol=1e-6)
    np.testing.assert_allclose(sol["distance"], (plan * cost).sum(), atol=1e-12)


def test_exact_ot_lower_bounds_entropic():
    rng = np.random.default_rng(1)
    cost = rng.uniform(0.0, 2.0, size=(5, 4))
    exact = otat.exact_ot(cost)
    sol = otat.sinkhorn(cost, lam=50.0, max_iters=20000, tol=1e-9)
    assert exact["value"] <= sol["distance"] + 1e-9
    np.testing.assert_allclose(exact["plan"].sum(), 1.0, atol=1e-9)


def test_match_probs_and_heatmap_identity():
    probs = otat.ot_match_probs([0.1, 0.4, 0.9], tau=0.07)
    np.testing.assert_allclose(probs.sum(), 1.0, atol=1e-12)
    assert probs[0] > probs[1] > probs[2]  # smaller distance, larger probability

    rng = np.random.default_rng(2)
    cost = rng.uniform(0.0, 2.0, size=(4, 3))
    sol = otat.sinkhorn(cost)
    h = otat.heatmap_values(sol["plan"], cost)
    np.testing.assert_allclose((1.0 - h).sum(), sol["distance"], atol=1e-12)


def test_mnn_alignment_bounds():
    eye = np.eye(4)
    assert otat.mnn_alignment(eye, eye) == 1.0
    shifted = np.roll(eye, 1, axis=0)
    assert otat.mnn_alignment(eye, shifted) == 0.0


def test_generate_episode_shapes_and_determinism():
    ep = otat.generate_episode(classes=3, shots=2, queries=4, latent_dim=4, embed_dim=8,
                               visual_tokens=5, text_tokens=2, seed=7)
    assert ep["support_tokens"].shape == (6, 5, 8)
    assert ep["query_tokens"].shape == (12, 5, 8)
    assert len(ep["text_tokens"]) == 3
    assert ep["text_tokens"][0].shape == (4, 8)  # text tokens plus two sentinels
    assert sorted(set(ep["support_labels"])) == [0, 1, 2]

    again = otat.generate_episode(classes=3, shots=2, queries=4, latent_dim=4, embed_dim=8,
                                  visual_tokens=5, text_tokens=2, seed=7)
    np.testing.assert_array_equal(ep["support_tokens"], again["support_tokens"])
    np.testing.assert_array_equal(ep["latents"], again["latents"])


def test_error_translation():
    with pytest.raises(otat.OtatError):
        otat.build_cost(np.zeros((2, 3)), np.ones((2, 3)), kind="cosine")  # zero rows
    with pytest.raises(otat.OtatError):
        otat.ot_match_probs([0.1, 0.2], tau=0.0)
    with pytest.raises(otat.OtatError):
        otat.exact_ot(np.ones((9, 8)))  # above the oracle's 64-cell limit


def test_train_tiny_run():
    report = otat.train({
        "episode.classes": 3, "episode.shots": 2, "episode.queries": 4,
        "episode.latent_dim": 4, "episode.visual_tokens": 5, "episode.text_tokens": 2,
        "model.dim": 8, "model.depth_vision": 1, "model.depth_text": 2,
        "model.adapter_rank": 2, "model.ffn_hidden": 12,
        "train.steps": 6, "train.batch": 6, "train.eval_every": 3,
        "run.arm": "ota_oto_eaw", "run.seeds": "1",
    })
    assert 0.0 <= report["accuracy_mean"] <= 1.0
    assert 0.0 <= report["mnn_mean"] <= 1.0
    assert len(report["seeds"]) == 1
    rerun = otat.train({
        "episode.classes": 3, "episode.shots": 2, "episode.queries": 4,
        "episode.latent_dim": 4, "episode.visual_tokens": 5, "episode.text_tokens": 2,
        "model.dim": 8, "model.depth_vision": 1, "model.depth_text": 2,
        "model.adapter_rank": 2, "model.ffn_hidden": 12,
        "train.steps": 6, "train.batch": 6, "train.eval_every": 3,
        "run.arm": "ota_oto_eaw", "run.seeds": "1",
    })
    assert rerun["accuracy_mean"] == report["accuracy_mean"]
    assert rerun["seeds"][0]["mnn"] == report["seeds"][0]["mnn"]
