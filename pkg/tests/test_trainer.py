import numpy as np
import pytest

from oracles import grad_rel_errors
from rsim import toyenv
from rsim.errors import ProbeError, TrainingError
from rsim.toyenv import WorldObject, open_room
from rsim.trainer import (
    ENCODER_PARAMS, HEAD_PARAMS, PARAM_NAMES, Batch, ProbeNet, ProbeSet, TrainConfig, build_probeset,
    discounted_returns, evaluate, extract_activations, init_net, loss_and_grads, run_study, train,
)


def small_room():
    return open_room(5, 5, [WorldObject("t", "chair", ((2, 2),))], episode_cap=50)


def random_net_and_batch(seed: int):
    """Small net with every parameter drawn at O(1) scale so all gradient groups carry signal."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(encoder_widths=(7, 5), target_dim=3, head_width=6)
    net = init_net(11, ["a", "b", "c"], cfg, rng)
    for k in PARAM_NAMES:
        net.params[k] = rng.normal(0.0, 0.6, size=net.params[k].shape)
    n = 9
    batch = Batch(
        obs=rng.normal(size=(n, 11)),
        targets=rng.integers(3, size=n),
        actions=rng.integers(4, size=n),
        advantages=rng.normal(size=n),
        returns=rng.normal(size=n),
    )
    return net, batch


# -- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    net, batch = random_net_and_batch(seed)
    _, g = loss_and_grads(net, batch, 0.5, 0.01)
    errs = grad_rel_errors(lambda: loss_and_grads(net, batch, 0.5, 0.01)[0], net.params, g, PARAM_NAMES)
    assert max(errs.values()) <= 1e-4, errs


def test_gradient_of_each_loss_term():
    net, batch = random_net_and_batch(7)
    for vc, ec in ((0.0, 0.0), (1.0, 0.0), (0.0, 0.5)):
        _, g = loss_and_grads(net, batch, vc, ec)
        errs = grad_rel_errors(lambda: loss_and_grads(net, batch, vc, ec)[0], net.params, g, PARAM_NAMES)
        assert max(errs.values()) <= 1e-4, (vc, ec, errs)


def test_discounted_returns():
    np.testing.assert_allclose(discounted_returns(np.array([0.0, 0.0, 1.0]), 0.5), [0.25, 0.5, 1.0])
    assert discounted_returns(np.array([]), 0.9).size == 0


# -- training -------------------------------------------------------------------

def test_zero_episodes_returns_seeded_init():
    w = small_room()
    cfg = TrainConfig(episodes=0)
    net = train(w, ["t"], cfg, 5)
    ref = init_net(toyenv.observation_size(w), w.object_ids, cfg, np.random.default_rng(5))
    for k in PARAM_NAMES:
        assert net.params[k].tobytes() == ref.params[k].tobytes()


def test_training_is_reproducible():
    w = small_room()
    cfg = TrainConfig(episodes=60)
    a, b = train(w, ["t"], cfg, [1, 2]), train(w, ["t"], cfg, [1, 2])
    for k in PARAM_NAMES:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.history == b.history


@pytest.mark.slow
def test_small_room_is_learned():
    w = small_room()
    cfg = TrainConfig()
    scores = [evaluate(train(w, ["t"], cfg, s), w, ["t"], 100, 1000 + s) for s in range(5)]
    assert sum(s >= 0.8 for s in scores) >= 4, scores


def test_frozen_encoder_is_untouched():
    w = small_room()
    src = train(w, ["t"], TrainConfig(episodes=20), 0)
    out = train(w, ["t"], TrainConfig(episodes=40), 1, init=src, freeze_encoder=True)
    for k in ENCODER_PARAMS:
        assert out.params[k].tobytes() == src.params[k].tobytes()
    assert any(out.params[k].tobytes() != src.params[k].tobytes() for k in HEAD_PARAMS)


def test_nonfinite_update_raises(monkeypatch):
    import rsim.trainer as tr

    def bad(net, batch, *a, **kw):
        return 0.0, {k: np.full_like(v, np.nan) for k, v in net.params.items()}

    monkeypatch.setattr(tr, "loss_and_grads", bad)
    with pytest.raises(TrainingError):
        train(small_room(), ["t"], TrainConfig(episodes=4), 0)


def test_unknown_target_rejected():
    from rsim.errors import TaskError
    with pytest.raises(TaskError):
        train(small_room(), ["zzz"], TrainConfig(episodes=1), 0)


def test_encoder_holds_most_parameters():
    w = toyenv.load_demo_world()
    net = init_net(toyenv.observation_size(w), w.object_ids, TrainConfig(), np.random.default_rng(0))
    assert net.encoder_fraction >= 0.6


def test_config_roundtrip(tmp_path):
    cfg = TrainConfig(episodes=10, encoder_widths=[8, 4])
    p = tmp_path / "c.json"
    import json
    p.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.load(p) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3})


def test_net_save_load(tmp_path):
    w = small_room()
    net = train(w, ["t"], TrainConfig(episodes=8), 3, name="n3")
    net.save(tmp_path / "n3")
    back = ProbeNet.load(tmp_path / "n3")
    assert back.name == "n3" and back.target_ids == net.target_ids
    for k in PARAM_NAMES:
        assert back.params[k].tobytes() == net.params[k].tobytes()


# -- probes and activations -------------------------------------------------------------

def test_probeset_distinct_and_seeded():
    w = toyenv.load_demo_world()
    p1, p2 = build_probeset(w, 50, 4), build_probeset(w, 50, 4)
    assert p1.observations.tobytes() == p2.observations.tobytes()
    assert len({o.tobytes() for o in p1.observations}) == 50
    assert build_probeset(w, 1, 0).count == 1


def test_probeset_overflow():
    w = open_room(3, 3, [WorldObject("t", "a", ((0, 0),))])
    distinct = {toyenv.observation(w, toyenv.AgentState(c, h)).tobytes() for c, h in toyenv.all_poses(w)}
    assert build_probeset(w, len(distinct), 0).count == len(distinct)
    with pytest.raises(ProbeError):
        build_probeset(w, len(distinct) + 1, 0)


def test_activation_shapes_default_net():
    w = toyenv.load_demo_world()
    rng = np.random.default_rng(0)
    obs = rng.integers(0, 2, size=(500, toyenv.observation_size(w))).astype(float)
    net = init_net(obs.shape[1], w.object_ids, TrainConfig(), rng)
    bundle = extract_activations(net, ProbeSet(obs, [((0, 0), "N")] * 500))
    assert [m.shape for m in bundle.layers] == [(64, 500), (32, 500)]
    assert bundle.layer_names == ["enc1", "enc2"]


def test_single_probe_gives_one_column():
    w = toyenv.load_demo_world()
    net = init_net(toyenv.observation_size(w), w.object_ids, TrainConfig(), np.random.default_rng(0))
    bundle = extract_activations(net, build_probeset(w, 1, 0))
    assert all(m.cols == 1 for m in bundle.layers)


def test_head_change_leaves_activations_identical():
    w = toyenv.load_demo_world()
    net = init_net(toyenv.observation_size(w), w.object_ids, TrainConfig(), np.random.default_rng(0))
    other = net.copy()
    other.params["Wp"] = other.params["Wp"] * 3.0
    other.params["T"] = -other.params["T"]
    probes = build_probeset(w, 40, 1)
    for a, b in zip(extract_activations(net, probes).layers, extract_activations(other, probes).layers):
        assert a.data.tobytes() == b.data.tobytes()


# -- studies ----------------------------------------------------------------------------

def tiny_world():
    return open_room(5, 5, [WorldObject(f"o{i}", f"c{i}", (c,)) for i, c in enumerate([(0, 0), (4, 0), (0, 4), (4, 4)])],
                     episode_cap=30)


def test_study_groups_and_sharing():
    w = tiny_world()
    split = toyenv.make_split(w.object_ids, 0)
    cfg = TrainConfig(episodes=10, probe_count=30, encoder_widths=(8, 4), head_width=8, target_dim=4)
    res = run_study(w, split, 3, cfg, seed=1, transfer=True)
    a, b = res
    assert len(a.bundles) == len(b.bundles) == 3
    assert {bd.cols for bd in a.bundles + b.bundles} == {30}
    assert len(res.transfer_nets) == 3
    with pytest.raises(ValueError):
        run_study(w, split, 1, cfg)


def test_study_is_reproducible_across_jobs():
    w = tiny_world()
    split = toyenv.make_split(w.object_ids, 0)
    cfg = TrainConfig(episodes=8, probe_count=20, encoder_widths=(6, 4), head_width=6, target_dim=3)
    r1 = run_study(w, split, 2, cfg, seed=3, jobs=1)
    r2 = run_study(w, split, 2, cfg, seed=3, jobs=2)
    for g1, g2 in zip(r1, r2):
        for b1, b2 in zip(g1.bundles, g2.bundles):
            assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(b1.layers, b2.layers))


def test_transfer_with_zero_episodes_keeps_source_activations():
    w = tiny_world()
    split = toyenv.make_split(w.object_ids, 0)
    cfg = TrainConfig(episodes=10, probe_count=20, encoder_widths=(6, 4), head_width=6, target_dim=3,
                      transfer_episodes=0)
    res = run_study(w, split, 2, cfg, seed=0, transfer=True)
    for src, dst in zip(res.nets_a, res.transfer_nets):
        for x, y in zip(extract_activations(src, res.probes).layers, extract_activations(dst, res.probes).layers):
            assert x.data.tobytes() == y.data.tobytes()


def test_demo_config_fits_demo_world():
    from rsim.trainer import demo_config_path
    w = toyenv.load_demo_world()
    cfg = TrainConfig.load(demo_config_path())
    net = init_net(toyenv.observation_size(w), w.object_ids, cfg, np.random.default_rng(0))
    assert net.encoder_fraction >= 0.6
    assert build_probeset(w, cfg.probe_count, 0).count == cfg.probe_count
