"""Offline learners on the rollout corpus: expectile-regressed Q-learning
with advantage-weighted extraction (the main method), behavior cloning of
the teacher block, and a deliberately fragile fitted Q baseline.

Networks are small dense MLPs written directly in numpy with hand-derived
backprop, trained in float64 and checkpointed in float32. An absolute-Q
guard aborts training with diagnostics instead of silently saturating.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import RolloutDataset
from .errors import CheckpointError, DatasetBuildError, TrainingDivergedError
from .simulator import FEATURE_NAMES, N_ACTIONS, N_FEATURES

CHECKPOINT_FORMAT = "pierlab-policy-v1"


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class Mlp:
    """Dense ReLU network, linear output, explicit forward/backward."""

    def __init__(self, sizes: tuple, rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(w.astype(np.float64))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray, want_cache: bool = False):
        a = np.asarray(x, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        pre = []
        post = [a]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = post[-1] @ w + b
            pre.append(z)
            post.append(relu(z) if i < n - 1 else z)
        if want_cache:
            return post[-1], (pre, post)
        return post[-1]

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients in the same order as parameters()."""
        pre, post = cache
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (pre[i] > 0)
            grads[2 * i] = post[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grads

    def copy_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def polyak_from(self, other: "Mlp", rho: float) -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst *= 1.0 - rho
            dst += rho * src


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def expectile_loss(u: np.ndarray, tau: float) -> float:
    """Asymmetric squared loss |tau - 1(u<0)| * u^2, averaged."""
    w = np.where(u < 0, 1.0 - tau, tau)
    return float(np.mean(w * u * u))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def value_step(vnet: Mlp, states: np.ndarray, target: np.ndarray, tau: float):
    """Expectile regression of V(s) toward ``target``.

    Returns (loss, parameter gradients, predicted values). Shared by the
    trainer loops and the gradient checks so both exercise the same math.
    """
    v, cache = vnet.forward(states, want_cache=True)
    u = target - v[:, 0]
    w = np.where(u < 0, 1.0 - tau, tau)
    loss = float(np.mean(w * u * u))
    g = (-2.0 * w * u / len(u))[:, None]
    return loss, vnet.backward(cache, g), v[:, 0]


def q_value_step(qnet: Mlp, states: np.ndarray, actions: np.ndarray, target: np.ndarray):
    """Mean squared TD error on Q(s, a) for the taken actions.

    Returns (loss, parameter gradients, full Q matrix).
    """
    q, cache = qnet.forward(states, want_cache=True)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - target
    loss = float(np.mean(diff * diff))
    g = np.zeros_like(q)
    g[rows, actions] = 2.0 * diff / len(actions)
    return loss, qnet.backward(cache, g), q


def weighted_ce_step(pinet: Mlp, states: np.ndarray, actions: np.ndarray, weights: np.ndarray):
    """Weighted cross-entropy of the policy logits against taken actions.

    With unit weights this is plain behavior cloning; with advantage
    weights it is the extraction step. Returns (loss, gradients, logits).
    """
    logits, cache = pinet.forward(states, want_cache=True)
    probs = softmax(logits)
    rows = np.arange(len(actions))
    logp = np.log(probs[rows, actions] + 1e-12)
    loss = float(np.mean(-weights * logp))
    g = probs.copy()
    g[rows, actions] -= 1.0
    g *= (weights / len(actions))[:, None]
    return loss, pinet.backward(cache, g), logits


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "iql"
    lr: float = 3e-4
    batch_size: int = 256
    epochs: int = 300
    gamma: float = 0.99
    expectile: float = 0.8
    awr_beta: float = 5.0
    awr_clip: float = 100.0
    polyak: float = 0.005
    hidden: tuple = (256, 256)
    q_guard: float = 1e6
    steps_per_epoch: int | None = None

    def resolved_steps(self, n_rows: int) -> int:
        if self.steps_per_epoch is not None:
            return self.steps_per_epoch
        return max(1, int(math.ceil(n_rows / self.batch_size)))


@dataclass
class PolicyBundle:
    """Everything needed to act and to audit how the policy was trained."""

    algo: str
    policy: Mlp
    qnet: Mlp | None = None
    vnet: Mlp | None = None
    feature_mask: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.policy.forward(features)[0]

    def act(self, features: np.ndarray) -> int:
        return int(np.argmax(self.logits(features)))

    def as_policy(self):
        def policy(ctx):
            return self.act(ctx.features)

        return policy


def _net_sizes(hidden: tuple, out: int) -> tuple:
    return (N_FEATURES, *hidden, out)


def _check_guard(name: str, values: np.ndarray, cfg: TrainConfig, epoch: int, step: int) -> None:
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if not np.isfinite(peak) or peak > cfg.q_guard:
        raise TrainingDivergedError(
            f"{name} exploded during training (|value| peak {peak:.3g} "
            f"exceeds guard {cfg.q_guard:.3g} at epoch {epoch}, step {step})",
            diagnostics={"epoch": epoch, "step": step, "peak": peak, "network": name},
        )


def train_iql(dataset: RolloutDataset, cfg: TrainConfig, rng: np.random.Generator):
    """Expectile value regression + TD Q fitting + advantage-weighted
    cross-entropy extraction. Returns (PolicyBundle, per-epoch curves)."""
    qnet = Mlp(_net_sizes(cfg.hidden, N_ACTIONS), rng)
    q_target = Mlp(_net_sizes(cfg.hidden, N_ACTIONS))
    q_target.copy_from(qnet)
    vnet = Mlp(_net_sizes(cfg.hidden, 1), rng)
    pinet = Mlp(_net_sizes(cfg.hidden, N_ACTIONS), rng)
    opt_q = Adam(qnet.parameters(), cfg.lr)
    opt_v = Adam(vnet.parameters(), cfg.lr)
    opt_pi = Adam(pinet.parameters(), cfg.lr)

    curves = []
    steps = cfg.resolved_steps(len(dataset))
    for epoch in range(cfg.epochs):
        sums = {"q_loss": 0.0, "v_loss": 0.0, "policy_loss": 0.0, "mean_q": 0.0, "mean_advantage": 0.0}
        for it in range(steps):
            batch = dataset.sample_batch(rng, cfg.batch_size)
            s = batch["states"].astype(np.float64)
            a = batch["actions"]
            r = batch["rewards"].astype(np.float64)
            s2 = batch["next_states"].astype(np.float64)
            done = batch["dones"].astype(np.float64)
            rows = np.arange(len(s))

            q_tgt_sa = q_target.forward(s)[rows, a]

            # Value net toward the expectile of target-Q.
            v_loss, gv, v_pred = value_step(vnet, s, q_tgt_sa, cfg.expectile)
            opt_v.step(gv)

            # Q net toward the one-step bootstrap through V.
            v_next = vnet.forward(s2)[:, 0]
            y = r + cfg.gamma * (1.0 - done) * v_next
            q_loss, gq, q = q_value_step(qnet, s, a, y)
            opt_q.step(gq)
            _check_guard("q", q, cfg, epoch, it)

            # Advantage-weighted behavior extraction.
            adv = q_tgt_sa - v_pred
            w_awr = np.minimum(np.exp(cfg.awr_beta * adv), cfg.awr_clip)
            pi_loss, gpi, _ = weighted_ce_step(pinet, s, a, w_awr)
            opt_pi.step(gpi)

            q_target.polyak_from(qnet, cfg.polyak)
            sums["v_loss"] += v_loss
            sums["q_loss"] += q_loss
            sums["policy_loss"] += pi_loss
            sums["mean_q"] += float(np.mean(q[rows, a]))
            sums["mean_advantage"] += float(np.mean(adv))
        curves.append({"epoch": epoch, **{k: v / steps for k, v in sums.items()}})
    bundle = PolicyBundle("iql", pinet, qnet=qnet, vnet=vnet, config=_cfg_dict(cfg))
    return bundle, curves


def train_bc(dataset: RolloutDataset, cfg: TrainConfig, rng: np.random.Generator):
    """Cross-entropy cloning of the teacher block only."""
    if dataset.teacher_rows == 0:
        raise DatasetBuildError("behavior cloning needs teacher rows in the dataset")
    sl = dataset.teacher_slice()
    states = dataset.states[sl].astype(np.float64)
    actions = dataset.actions[sl]
    pinet = Mlp(_net_sizes(cfg.hidden, N_ACTIONS), rng)
    opt = Adam(pinet.parameters(), cfg.lr)
    n = len(states)
    steps = cfg.resolved_steps(n)
    curves = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for it in range(steps):
            idx = rng.integers(0, n, size=min(cfg.batch_size, n))
            s, a = states[idx], actions[idx]
            loss, g, _ = weighted_ce_step(pinet, s, a, np.ones(len(s)))
            opt.step(g)
            total += loss
        curves.append(
            {
                "epoch": epoch,
                "q_loss": 0.0,
                "v_loss": 0.0,
                "policy_loss": total / steps,
                "mean_q": 0.0,
                "mean_advantage": 0.0,
            }
        )
    return PolicyBundle("bc", pinet, config=_cfg_dict(cfg)), curves


def train_dqn(dataset: RolloutDataset, cfg: TrainConfig, rng: np.random.Generator):
    """Fitted Q iteration with a max bootstrap. Included as the cautionary
    baseline: on pure offline data the max operator extrapolates, so the
    guard is expected to matter here."""
    qnet = Mlp(_net_sizes(cfg.hidden, N_ACTIONS), rng)
    q_target = Mlp(_net_sizes(cfg.hidden, N_ACTIONS))
    q_target.copy_from(qnet)
    opt = Adam(qnet.parameters(), cfg.lr)
    steps = cfg.resolved_steps(len(dataset))
    curves = []
    for epoch in range(cfg.epochs):
        total = 0.0
        mean_q = 0.0
        for it in range(steps):
            batch = dataset.sample_batch(rng, cfg.batch_size)
            s = batch["states"].astype(np.float64)
            a = batch["actions"]
            r = batch["rewards"].astype(np.float64)
            s2 = batch["next_states"].astype(np.float64)
            done = batch["dones"].astype(np.float64)
            rows = np.arange(len(s))
            q_next = q_target.forward(s2).max(axis=1)
            y = r + cfg.gamma * (1.0 - done) * q_next
            loss, g, q = q_value_step(qnet, s, a, y)
            opt.step(g)
            q_target.polyak_from(qnet, cfg.polyak)
            _check_guard("q", q, cfg, epoch, it)
            total += loss
            mean_q += float(np.mean(q[rows, a]))
        curves.append(
            {
                "epoch": epoch,
                "q_loss": total / steps,
                "v_loss": 0.0,
                "policy_loss": 0.0,
                "mean_q": mean_q / steps,
                "mean_advantage": 0.0,
            }
        )
    return PolicyBundle("dqn", qnet, qnet=qnet, config=_cfg_dict(cfg)), curves


TRAINERS = {"iql": train_iql, "bc": train_bc, "dqn": train_dqn}


def train(dataset: RolloutDataset, cfg: TrainConfig, rng: np.random.Generator):
    try:
        trainer = TRAINERS[cfg.algo]
    except KeyError:
        raise CheckpointError(f"unknown algorithm {cfg.algo!r}; expected one of {sorted(TRAINERS)}") from None
    return trainer(dataset, cfg, rng)


def _cfg_dict(cfg: TrainConfig) -> dict:
    d = cfg.__dict__.copy() if not hasattr(cfg, "__dataclass_fields__") else {
        k: getattr(cfg, k) for k in cfg.__dataclass_fields__
    }
    d["hidden"] = list(d["hidden"])
    return d


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line (format, algo, config, seed, feature
# names and mask, array names + shapes) followed by the parameters as a
# flat little-endian float32 block in header order.


def _bundle_arrays(bundle: PolicyBundle) -> dict:
    """Named float32 parameter arrays in a stable order (policy, q, v)."""
    nets = [("pi", bundle.policy)]
    if bundle.qnet is not None and bundle.qnet is not bundle.policy:
        nets.append(("q", bundle.qnet))
    if bundle.vnet is not None:
        nets.append(("v", bundle.vnet))
    out = {}
    for prefix, net in nets:
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            out[f"{prefix}_w{i}"] = np.ascontiguousarray(w, dtype="<f4")
            out[f"{prefix}_b{i}"] = np.ascontiguousarray(b, dtype="<f4")
    return out


def _net_from_arrays(prefix: str, arrays: dict) -> Mlp:
    ws = []
    i = 0
    while f"{prefix}_w{i}" in arrays:
        ws.append((arrays[f"{prefix}_w{i}"], arrays[f"{prefix}_b{i}"]))
        i += 1
    if not ws:
        raise CheckpointError(f"checkpoint is missing network {prefix!r}")
    sizes = (ws[0][0].shape[0], *(w.shape[1] for w, _ in ws))
    net = Mlp(sizes)
    for (w, b), dst_w, dst_b in zip(ws, net.weights, net.biases):
        dst_w[...] = w.astype(np.float64)
        dst_b[...] = b.astype(np.float64)
    return net


def _param_block(arrays: dict) -> bytes:
    return b"".join(a.tobytes(order="C") for a in arrays.values())


def save_checkpoint(bundle: PolicyBundle, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _bundle_arrays(bundle)
    header = {
        "format": CHECKPOINT_FORMAT,
        "algo": bundle.algo,
        "config": bundle.config,
        "seed": bundle.seed,
        "features": list(FEATURE_NAMES),
        "feature_mask": None
        if bundle.feature_mask is None
        else [float(m) for m in bundle.feature_mask],
        "dtype": "<f4",
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(_param_block(arrays))
    return path


def load_checkpoint(path: str | Path) -> PolicyBundle:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            header_line = fh.readline()
            blob = fh.read()
        header = json.loads(header_line.decode("utf-8"))
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    flat = np.frombuffer(blob, dtype=header.get("dtype", "<f4"))
    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        if offset + size > flat.size:
            raise CheckpointError(f"checkpoint {path} is truncated at array {spec['name']!r}")
        arrays[spec["name"]] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise CheckpointError(f"checkpoint {path} has {flat.size - offset} trailing values")
    policy = _net_from_arrays("pi", arrays)
    qnet = _net_from_arrays("q", arrays) if any(k.startswith("q_") for k in arrays) else None
    vnet = _net_from_arrays("v", arrays) if any(k.startswith("v_") for k in arrays) else None
    mask = header.get("feature_mask")
    if header["algo"] == "dqn" and qnet is None:
        qnet = policy
    return PolicyBundle(
        algo=header["algo"],
        policy=policy,
        qnet=qnet,
        vnet=vnet,
        feature_mask=None if mask is None else np.asarray(mask, dtype=np.float32),
        config=header.get("config", {}),
        seed=header.get("seed"),
    )


def bundle_digest(bundle: PolicyBundle) -> str:
    """sha256 of the float32 parameter block exactly as checkpointed."""
    return hashlib.sha256(_param_block(_bundle_arrays(bundle))).hexdigest()


CURVES_FORMAT = "pierlab-curves-v1"
CURVE_COLUMNS = ("epoch", "q_loss", "v_loss", "policy_loss", "mean_q", "mean_advantage")


def save_curves(curves: list[dict], path: str | Path) -> Path:
    path = Path(path)
    lines = [f"# {CURVES_FORMAT}", ",".join(CURVE_COLUMNS)]
    for row in curves:
        cells = [str(int(row["epoch"]))]
        cells += ["%.10g" % float(row[name]) for name in CURVE_COLUMNS[1:]]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_curves(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {CURVES_FORMAT}":
        raise CheckpointError(f"{path} is not a {CURVES_FORMAT} file")
    columns = lines[1].split(",")
    rows = []
    for line in lines[2:]:
        if not line:
            continue
        cells = line.split(",")
        rows.append(
            {name: (int(v) if name == "epoch" else float(v)) for name, v in zip(columns, cells)}
        )
    return rows
