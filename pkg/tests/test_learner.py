import json

import numpy as np
import pytest

from pierlab.dataset import RolloutDataset
from pierlab.errors import CheckpointError, DatasetBuildError, TrainingDivergedError
from pierlab.learner import (
    CHECKPOINT_FORMAT,
    CURVE_COLUMNS,
    CURVES_FORMAT,
    Adam,
    Mlp,
    PolicyBundle,
    TrainConfig,
    bundle_digest,
    expectile_loss,
    load_checkpoint,
    load_curves,
    q_value_step,
    save_checkpoint,
    save_curves,
    softmax,
    train,
    train_bc,
    train_dqn,
    train_iql,
    value_step,
    weighted_ce_step,
)
from pierlab.simulator import N_ACTIONS, N_FEATURES


def toy_dataset(n=240, teacher_rows=60, action=None, seed=0):
    """Synthetic transition table exercising the trainers cheaply."""
    rng = np.random.default_rng(seed)
    states = rng.normal(0, 0.5, size=(n, N_FEATURES)).astype(np.float32)
    actions = (
        np.full(n, action, dtype=np.int64)
        if action is not None
        else rng.integers(0, N_ACTIONS, size=n)
    )
    rewards = rng.normal(-1.0, 0.5, size=n).astype(np.float32)
    next_states = states + rng.normal(0, 0.05, size=states.shape).astype(np.float32)
    dones = (rng.random(n) < 0.05).astype(np.float32)
    weights = np.where(np.arange(n) < teacher_rows, 5.0, 1.0).astype(np.float32)
    return RolloutDataset(
        states, actions, rewards.astype(np.float32), next_states, dones, weights,
        teacher_rows=teacher_rows, behavioral_rows=n - teacher_rows,
    )


FAST = TrainConfig(lr=1e-3, batch_size=64, epochs=3, hidden=(32, 32))


def numeric_gradcheck(loss_fn, grads, params, rng, n_probes=25, h=1e-6):
    """Compare analytic grads against central differences at sampled entries."""
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p, flat_g = p.ravel(), np.asarray(g).ravel()
        take = min(n_probes, flat_p.size)
        for idx in rng.choice(flat_p.size, size=take, replace=False):
            keep = flat_p[idx]
            flat_p[idx] = keep + h
            up = loss_fn()
            flat_p[idx] = keep - h
            down = loss_fn()
            flat_p[idx] = keep
            numeric = (up - down) / (2.0 * h)
            denom = max(1e-8, abs(numeric) + abs(flat_g[idx]))
            worst = max(worst, abs(numeric - flat_g[idx]) / denom)
    return worst


class TestMlp:
    def test_forward_shapes(self):
        net = Mlp((4, 8, 3), np.random.default_rng(0))
        out = net.forward(np.zeros((7, 4)))
        assert out.shape == (7, 3)
        single = net.forward(np.zeros(4))
        assert single.shape == (1, 3)

    def test_zero_init_without_rng(self):
        net = Mlp((4, 8, 3))
        assert all(np.all(w == 0.0) for w in net.weights)

    def test_parameters_order(self):
        net = Mlp((4, 8, 3), np.random.default_rng(0))
        params = net.parameters()
        assert len(params) == 4
        assert params[0] is net.weights[0] and params[1] is net.biases[0]
        assert params[2] is net.weights[1] and params[3] is net.biases[1]

    def test_copy_and_polyak(self):
        rng = np.random.default_rng(1)
        a, b = Mlp((4, 8, 3), rng), Mlp((4, 8, 3), rng)
        snapshot = [p.copy() for p in b.parameters()]
        b.copy_from(a)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
        b2 = Mlp((4, 8, 3))
        for p, s in zip(b2.parameters(), snapshot):
            p[...] = s
        rho = 0.005
        b2.polyak_from(a, rho)
        for pa, ps, pb in zip(a.parameters(), snapshot, b2.parameters()):
            assert np.allclose(pb, (1 - rho) * ps + rho * pa, rtol=0, atol=1e-15)

    def test_adam_moves_toward_minimum(self):
        # Minimize ||p||^2 for a single parameter tensor.
        p = np.array([3.0, -2.0])
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            opt.step([2.0 * p])
        assert np.all(np.abs(p) < 1e-2)


class TestExpectile:
    def test_pinned_asymmetry(self):
        assert expectile_loss(np.array([1.0]), 0.8) == pytest.approx(0.8, rel=1e-15)
        assert expectile_loss(np.array([-1.0]), 0.8) == pytest.approx(0.2, rel=1e-15)
        assert expectile_loss(np.array([1.0]), 0.2) == pytest.approx(0.2, rel=1e-15)
        assert expectile_loss(np.array([-1.0]), 0.2) == pytest.approx(0.8, rel=1e-15)

    def test_symmetric_case_is_half_mse(self):
        u = np.array([0.5, -1.5, 2.0])
        assert expectile_loss(u, 0.5) == pytest.approx(0.5 * np.mean(u**2), rel=1e-15)

    def test_softmax_rows_normalized(self):
        logits = np.random.default_rng(0).normal(size=(6, 5)) * 30
        p = softmax(logits)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0)
        assert np.array_equal(np.argmax(p, axis=1), np.argmax(logits, axis=1))


class TestGradients:
    def test_value_step_gradcheck(self):
        rng = np.random.default_rng(5)
        net = Mlp((6, 12, 1), rng)
        states = rng.normal(size=(16, 6))
        target = rng.normal(size=16) * 2.0
        _, grads, _ = value_step(net, states, target, tau=0.8)
        worst = numeric_gradcheck(
            lambda: value_step(net, states, target, tau=0.8)[0],
            grads, net.parameters(), rng,
        )
        assert worst < 1e-4

    def test_q_step_gradcheck(self):
        rng = np.random.default_rng(6)
        net = Mlp((6, 12, 5), rng)
        states = rng.normal(size=(16, 6))
        actions = rng.integers(0, 5, size=16)
        target = rng.normal(size=16)
        _, grads, _ = q_value_step(net, states, actions, target)
        worst = numeric_gradcheck(
            lambda: q_value_step(net, states, actions, target)[0],
            grads, net.parameters(), rng,
        )
        assert worst < 1e-4

    def test_weighted_ce_gradcheck(self):
        rng = np.random.default_rng(7)
        net = Mlp((6, 12, 5), rng)
        states = rng.normal(size=(16, 6))
        actions = rng.integers(0, 5, size=16)
        weights = rng.uniform(0.5, 3.0, size=16)
        _, grads, _ = weighted_ce_step(net, states, actions, weights)
        worst = numeric_gradcheck(
            lambda: weighted_ce_step(net, states, actions, weights)[0],
            grads, net.parameters(), rng,
        )
        assert worst < 1e-4


class TestTrainers:
    def test_iql_outputs(self):
        bundle, curves = train_iql(toy_dataset(), FAST, np.random.default_rng(0))
        assert bundle.algo == "iql"
        assert bundle.qnet is not None and bundle.vnet is not None
        assert len(curves) == FAST.epochs
        assert set(curves[0]) == set(CURVE_COLUMNS)
        assert 0 <= bundle.act(np.zeros(N_FEATURES, np.float32)) < N_ACTIONS

    def test_iql_deterministic_per_seed(self):
        a, _ = train_iql(toy_dataset(), FAST, np.random.default_rng(9))
        b, _ = train_iql(toy_dataset(), FAST, np.random.default_rng(9))
        c, _ = train_iql(toy_dataset(), FAST, np.random.default_rng(10))
        assert bundle_digest(a) == bundle_digest(b)
        assert bundle_digest(a) != bundle_digest(c)

    def test_bc_clones_constant_teacher(self):
        data = toy_dataset(action=7)
        cfg = TrainConfig(algo="bc", lr=3e-3, batch_size=64, epochs=40, hidden=(32,))
        bundle, curves = train_bc(data, cfg, np.random.default_rng(0))
        probes = np.random.default_rng(1).normal(0, 0.5, size=(20, N_FEATURES))
        assert all(bundle.act(p.astype(np.float32)) == 7 for p in probes)
        assert curves[-1]["policy_loss"] < curves[0]["policy_loss"]

    def test_bc_requires_teacher_rows(self):
        with pytest.raises(DatasetBuildError, match="teacher"):
            train_bc(toy_dataset(teacher_rows=0), TrainConfig(algo="bc"), np.random.default_rng(0))

    def test_dqn_guard_trips(self):
        cfg = TrainConfig(algo="dqn", epochs=2, batch_size=64, hidden=(32, 32), q_guard=1e-4)
        with pytest.raises(TrainingDivergedError) as info:
            train_dqn(toy_dataset(), cfg, np.random.default_rng(0))
        diag = info.value.diagnostics
        assert diag["network"] == "q"
        assert {"epoch", "step", "peak"} <= set(diag)

    def test_dispatch(self):
        bundle, _ = train(toy_dataset(), TrainConfig(algo="bc", epochs=1, hidden=(16,)), np.random.default_rng(0))
        assert bundle.algo == "bc"
        with pytest.raises(CheckpointError, match="algorithm"):
            train(toy_dataset(), TrainConfig(algo="sarsa"), np.random.default_rng(0))


@pytest.fixture(scope="module")
def trained():
    bundle, _ = train_iql(toy_dataset(), FAST, np.random.default_rng(3))
    bundle.seed = 3
    return bundle


class TestCheckpoints:
    def test_round_trip(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "policy.ckpt")
        loaded = load_checkpoint(path)
        assert loaded.algo == "iql"
        assert loaded.seed == 3
        assert loaded.config == trained.config
        assert bundle_digest(loaded) == bundle_digest(trained)
        probes = np.random.default_rng(4).normal(size=(10, N_FEATURES)).astype(np.float32)
        for p in probes:
            assert np.allclose(loaded.logits(p), trained.logits(p), atol=1e-5)

    def test_feature_mask_round_trip(self, tmp_path):
        bundle, _ = train_bc(toy_dataset(action=2), TrainConfig(algo="bc", epochs=1, hidden=(16,)), np.random.default_rng(0))
        mask = np.ones(N_FEATURES, dtype=np.float32)
        mask[4:8] = 0.0
        bundle.feature_mask = mask
        loaded = load_checkpoint(save_checkpoint(bundle, tmp_path / "bc.ckpt"))
        assert np.array_equal(loaded.feature_mask, mask)
        assert loaded.qnet is None and loaded.vnet is None

    def test_dqn_checkpoint_greedy_policy(self, tmp_path):
        cfg = TrainConfig(algo="dqn", epochs=1, batch_size=64, hidden=(16,))
        bundle, _ = train_dqn(toy_dataset(), cfg, np.random.default_rng(0))
        loaded = load_checkpoint(save_checkpoint(bundle, tmp_path / "dqn.ckpt"))
        assert loaded.algo == "dqn"
        assert loaded.qnet is loaded.policy

    def test_truncated_rejected(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "policy.ckpt")
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 40])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "policy.ckpt")
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_wrong_format_rejected(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "policy.ckpt")
        blob = path.read_bytes()
        head, _, rest = blob.partition(b"\n")
        header = json.loads(head)
        header["format"] = "pierlab-policy-v0"
        path.write_bytes(json.dumps(header).encode() + b"\n" + rest)
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "noise.ckpt"
        path.write_bytes(b"\x93NUMPY not a checkpoint")
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(path)

    def test_header_is_json_line(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "policy.ckpt")
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["format"] == CHECKPOINT_FORMAT
        assert header["features"][0] == "lat_norm"
        assert [a["name"] for a in header["arrays"]][:2] == ["pi_w0", "pi_b0"]


class TestCurves:
    def test_round_trip(self, tmp_path):
        _, curves = train_iql(toy_dataset(), FAST, np.random.default_rng(0))
        path = save_curves(curves, tmp_path / "curves.csv")
        assert path.read_text().splitlines()[0] == f"# {CURVES_FORMAT}"
        loaded = load_curves(path)
        assert len(loaded) == len(curves)
        for a, b in zip(curves, loaded):
            assert a["epoch"] == b["epoch"]
            for k in CURVE_COLUMNS[1:]:
                assert b[k] == pytest.approx(a[k], rel=1e-9)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "curves.csv"
        path.write_text("epoch,q_loss\n0,1.0\n")
        with pytest.raises(CheckpointError, match=CURVES_FORMAT):
            load_curves(path)
