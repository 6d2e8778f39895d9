"""Probe policies for the gridworld task and activation harvesting.

The network is a two-layer tanh encoder over the one-hot view window, a
learned embedding per target object, and a tanh head layer over the
concatenation of encoder output and target embedding that feeds linear
policy and value outputs. Training is episodic
policy gradient with a learned value baseline, optimized with Adam.
"""

from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import toyenv
from .errors import ProbeError, TrainingError
from .harness import ModelGroup
from .matrix_io import ActivationMatrix, MatrixBundle, load_arrays, save_arrays

log = logging.getLogger(__name__)

ENCODER_PARAMS = ("W1", "b1", "W2", "b2")
HEAD_PARAMS = ("T", "Wh", "bh", "Wp", "bp", "wv", "bv")
PARAM_NAMES = ENCODER_PARAMS + HEAD_PARAMS
LAYER_NAMES = ("enc1", "enc2")


@dataclass
class TrainConfig:
    episodes: int = 2000
    learning_rate: float = 3e-3
    gamma: float = 0.99
    encoder_widths: tuple[int, int] = (64, 32)
    target_dim: int = 16
    head_width: int = 32
    probe_count: int = 500
    episode_cap: int | None = None
    seeds: int = 3
    episodes_per_update: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 1.0
    eval_episodes: int = 100
    transfer_episodes: int | None = None

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if len(self.encoder_widths) != 2:
            raise ValueError("encoder_widths needs exactly two entries")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d


@dataclass
class ProbeNet:
    params: dict[str, np.ndarray]
    target_ids: tuple[str, ...]
    name: str = "net"
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def widths(self) -> tuple[int, int]:
        return self.params["W1"].shape[0], self.params["W2"].shape[0]

    def target_index(self, target: str) -> int:
        return self.target_ids.index(target)

    def n_params(self, names: Sequence[str]) -> int:
        return sum(self.params[k].size for k in names)

    @property
    def encoder_fraction(self) -> float:
        return self.n_params(ENCODER_PARAMS) / self.n_params(PARAM_NAMES)

    def copy(self) -> "ProbeNet":
        return ProbeNet({k: v.copy() for k, v in self.params.items()}, self.target_ids, self.name, list(self.history))

    def encode(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        h1 = np.tanh(obs @ p["W1"].T + p["b1"])
        h2 = np.tanh(h1 @ p["W2"].T + p["b2"])
        return h1, h2

    def heads(self, h2: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (concatenated features, head hidden layer, logits, value)."""
        p = self.params
        feat = np.concatenate([h2, p["T"][tgt]], axis=1)
        hid = np.tanh(feat @ p["Wh"].T + p["bh"])
        return feat, hid, hid @ p["Wp"].T + p["bp"], hid @ p["wv"] + p["bv"][0]

    def action_probs(self, obs: np.ndarray, target: str) -> np.ndarray:
        _, h2 = self.encode(obs[None, :])
        _, _, logits, _ = self.heads(h2, np.array([self.target_index(target)]))
        return _softmax(logits)[0]

    def save(self, directory) -> None:
        directory = Path(directory)
        save_arrays([(k, self.params[k]) for k in PARAM_NAMES], directory)
        (directory / "net.json").write_text(json.dumps({"name": self.name, "target_ids": list(self.target_ids)}) + "\n")

    @classmethod
    def load(cls, directory) -> "ProbeNet":
        directory = Path(directory)
        meta = json.loads((directory / "net.json").read_text())
        arrays = load_arrays(directory)
        params = {k: (arrays[k][0] if k in ("b1", "b2", "bh", "bp", "wv", "bv") else arrays[k]) for k in PARAM_NAMES}
        return cls(params, tuple(meta["target_ids"]), meta["name"])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_net(obs_dim: int, target_ids: Sequence[str], config: TrainConfig, rng: np.random.Generator,
             name: str = "net") -> ProbeNet:
    h1, h2 = config.encoder_widths
    feat = h2 + config.target_dim

    def glorot(n_out, n_in):
        return rng.uniform(-1.0, 1.0, size=(n_out, n_in)) * np.sqrt(6.0 / (n_in + n_out))

    params = {
        "W1": glorot(h1, obs_dim), "b1": np.zeros(h1),
        "W2": glorot(h2, h1), "b2": np.zeros(h2),
    }
    params.update(_init_heads(len(target_ids), feat, config, rng))
    return ProbeNet(params, tuple(target_ids), name)


def _init_heads(n_targets: int, feat: int, config: TrainConfig, rng: np.random.Generator) -> dict:
    hw = config.head_width
    return {
        "T": rng.normal(0.0, 1.0, size=(n_targets, config.target_dim)),
        "Wh": rng.uniform(-1.0, 1.0, size=(hw, feat)) * np.sqrt(6.0 / (feat + hw)),
        "bh": np.zeros(hw),
        "Wp": rng.normal(0.0, 0.01, size=(len(toyenv.ACTIONS), hw)),
        "bp": np.zeros(len(toyenv.ACTIONS)),
        "wv": np.zeros(hw),
        "bv": np.zeros(1),
    }


def demo_config_path() -> Path:
    """Training config tuned for the bundled demo world."""
    return Path(__file__).with_name("data") / "demo_config.json"


# -- loss and gradients -------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray  # B x obs_dim
    targets: np.ndarray  # B, row indices into the target table
    actions: np.ndarray  # B
    advantages: np.ndarray  # B, held constant
    returns: np.ndarray  # B


def loss_and_grads(net: ProbeNet, batch: Batch, value_coef: float = 0.5,
                   entropy_coef: float = 0.01) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over the batch of

        -log pi(a|s) * A + value_coef/2 * (G - V(s))^2 - entropy_coef * H(pi(.|s))

    with A treated as a constant, plus the exact gradient of that loss.
    """
    p = net.params
    n = len(batch.actions)
    h1, h2 = net.encode(batch.obs)
    feat, hid, logits, value = net.heads(h2, batch.targets)
    probs = _softmax(logits)
    logp = np.log(probs + 1e-300)
    rows = np.arange(n)
    entropy = -(probs * logp).sum(axis=1)
    err = batch.returns - value
    loss = float(np.mean(-logp[rows, batch.actions] * batch.advantages
                         + 0.5 * value_coef * err**2 - entropy_coef * entropy))

    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    d_logits = (probs - onehot) * batch.advantages[:, None] + entropy_coef * probs * (logp + entropy[:, None])
    d_logits /= n
    d_value = -value_coef * err / n

    g = {
        "Wp": d_logits.T @ hid,
        "bp": d_logits.sum(axis=0),
        "wv": d_value @ hid,
        "bv": np.array([d_value.sum()]),
    }
    d_zh = (d_logits @ p["Wp"] + d_value[:, None] * p["wv"]) * (1.0 - hid**2)
    g["Wh"] = d_zh.T @ feat
    g["bh"] = d_zh.sum(axis=0)
    d_feat = d_zh @ p["Wh"]
    h2_dim = h2.shape[1]
    g["T"] = np.zeros_like(p["T"])
    np.add.at(g["T"], batch.targets, d_feat[:, h2_dim:])
    d_z2 = d_feat[:, :h2_dim] * (1.0 - h2**2)
    g["W2"] = d_z2.T @ h1
    g["b2"] = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ p["W2"]) * (1.0 - h1**2)
    g["W1"] = d_z1.T @ batch.obs
    g["b1"] = d_z1.sum(axis=0)
    return loss, g


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], names: Sequence[str]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in names:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -- rollouts -----------------------------------------------------------------

def _cached_obs(world: toyenv.GridWorld, s: toyenv.AgentState) -> np.ndarray:
    key = ("obs", s.cell, s.heading)
    obs = world._cache.get(key)
    if obs is None:
        obs = world._cache[key] = toyenv.observation(world, s)
    return obs


def rollout(net: ProbeNet, world: toyenv.GridWorld, target: str, rng: np.random.Generator,
            greedy: bool = False, cap: int | None = None):
    """One episode. Returns (observations, actions, rewards)."""
    s = toyenv.reset(world, rng)
    tgt = net.target_index(target)
    obs_list, actions, rewards = [], [], []
    cap = cap or world.episode_cap
    while not s.done:
        obs = _cached_obs(world, s)
        _, h2 = net.encode(obs[None, :])
        _, _, logits, _ = net.heads(h2, np.array([tgt]))
        probs = _softmax(logits)[0]
        a = int(np.argmax(probs)) if greedy else int(rng.choice(len(probs), p=probs))
        s, r, done = toyenv.step(world, s, target, toyenv.ACTIONS[a])
        if not done and s.steps >= cap:
            done = True
            s = toyenv.AgentState(s.cell, s.heading, s.steps, True)
        obs_list.append(obs)
        actions.append(a)
        rewards.append(r)
    return np.array(obs_list), np.array(actions), np.array(rewards)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def train(world: toyenv.GridWorld, split_side: Sequence[str], config: TrainConfig, seed,
          init: ProbeNet | None = None, freeze_encoder: bool = False, name: str | None = None) -> ProbeNet:
    """Train a probe policy on targets drawn uniformly from ``split_side``.

    With ``init`` the encoder is copied from that net and the target table and
    heads are freshly initialized; ``freeze_encoder`` then keeps the encoder
    fixed for the whole run.
    """
    side = list(split_side)
    if not side:
        raise ValueError("split_side is empty")
    for t in side:
        world.object(t)
    rng = np.random.default_rng(seed)
    name = name or f"net_{seed}"
    if init is None:
        net = init_net(toyenv.observation_size(world), world.object_ids, config, rng, name)
    else:
        net = init.copy()
        net.name = name
        net.history = []
        feat = net.widths[1] + config.target_dim
        net.params.update(_init_heads(len(net.target_ids), feat, config, rng))
    names = HEAD_PARAMS if freeze_encoder else PARAM_NAMES
    opt = Adam(net.params, config.learning_rate)
    cap = config.episode_cap or world.episode_cap

    pending: list[tuple] = []
    updates = 0
    for ep in range(config.episodes):
        target = side[int(rng.integers(len(side)))]
        obs, actions, rewards = rollout(net, world, target, rng, cap=cap)
        net.history.append(float(rewards.sum()))
        pending.append((obs, np.full(len(actions), net.target_index(target)), actions,
                        discounted_returns(rewards, config.gamma)))
        if len(pending) < config.episodes_per_update and ep != config.episodes - 1:
            continue
        obs_b = np.concatenate([p[0] for p in pending])
        tgt_b = np.concatenate([p[1] for p in pending])
        act_b = np.concatenate([p[2] for p in pending])
        ret_b = np.concatenate([p[3] for p in pending])
        pending = []
        _, h2 = net.encode(obs_b)
        _, _, _, value = net.heads(h2, tgt_b)
        batch = Batch(obs_b, tgt_b, act_b, ret_b - value, ret_b)
        _, grads = loss_and_grads(net, batch, config.value_coef, config.entropy_coef)
        norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in names))
        if np.isfinite(norm) and config.max_grad_norm and norm > config.max_grad_norm:
            for k in names:
                grads[k] = grads[k] * (config.max_grad_norm / norm)
        opt.step(net.params, grads, names)
        updates += 1
        for k in names:
            if not np.all(np.isfinite(net.params[k])):
                raise TrainingError(f"parameter {k} became non-finite at update {updates} (episode {ep})")
    return net


def evaluate(net: ProbeNet, world: toyenv.GridWorld, targets: Sequence[str], episodes: int, seed,
             greedy: bool = False, cap: int | None = None) -> float:
    """Mean undiscounted return over ``episodes`` episodes with uniformly drawn targets."""
    rng = np.random.default_rng(seed)
    total = 0.0
    targets = list(targets)
    for _ in range(episodes):
        target = targets[int(rng.integers(len(targets)))]
        _, _, rewards = rollout(net, world, target, rng, greedy=greedy, cap=cap)
        total += float(rewards.sum())
    return total / episodes


# -- probe sets and activations ------------------------------------------------

@dataclass
class ProbeSet:
    observations: np.ndarray  # count x obs_dim
    poses: list[tuple[tuple[int, int], str]]

    @property
    def count(self) -> int:
        return len(self.observations)

    def to_matrix(self) -> ActivationMatrix:
        return ActivationMatrix(self.observations, layer_name="probes")


def build_probeset(world: toyenv.GridWorld, count: int, seed) -> ProbeSet:
    """``count`` distinct views taken at random (cell, heading) poses."""
    if count < 1:
        raise ValueError("count must be >= 1")
    poses = toyenv.all_poses(world)
    order = np.random.default_rng(seed).permutation(len(poses))
    seen, obs, kept = set(), [], []
    for i in order:
        cell, heading = poses[i]
        o = _cached_obs(world, toyenv.AgentState(cell, heading))
        key = o.tobytes()
        if key in seen:
            continue
        seen.add(key)
        obs.append(o)
        kept.append(poses[i])
        if len(obs) == count:
            return ProbeSet(np.array(obs), kept)
    raise ProbeError(f"world offers only {len(obs)} distinct views, {count} requested")


def extract_activations(net: ProbeNet, probes: ProbeSet) -> MatrixBundle:
    """Post-tanh encoder activations, neurons x probes, one matrix per layer."""
    if probes.count < 1:
        raise ProbeError("empty probe set")
    h1, h2 = net.encode(probes.observations)
    return MatrixBundle(net.name, [
        ActivationMatrix(h.T, layer_name=layer, model_id=net.name) for layer, h in zip(LAYER_NAMES, (h1, h2))
    ])


# -- studies --------------------------------------------------------------------

@dataclass
class StudyResult:
    """Iterates as ``(group_a, group_b)``."""

    group_a: ModelGroup
    group_b: ModelGroup
    nets_a: list[ProbeNet]
    nets_b: list[ProbeNet]
    probes: ProbeSet
    transfer_nets: list[ProbeNet] = field(default_factory=list)

    def __iter__(self):
        return iter((self.group_a, self.group_b))


def _train_job(args):
    world, side, config, seed, init, freeze, name = args
    return train(world, side, config, seed, init=init, freeze_encoder=freeze, name=name)


def _map(jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_train_job, jobs))


def model_seed(seed: int, side: str, index: int) -> list[int]:
    return [int(seed), "AB".index(side), int(index)]


def run_study(world: toyenv.GridWorld, split: toyenv.TargetSplit, n_seeds: int, config: TrainConfig,
              seed: int = 0, transfer: bool = False, jobs: int = 1) -> StudyResult:
    """Train ``n_seeds`` nets per split side and probe them on one shared probe set.

    With ``transfer`` each A-trained encoder is also frozen and reused to
    retrain fresh heads on side B.
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    probes = build_probeset(world, config.probe_count, [int(seed), 99])
    jobs_a = [(world, split.a, config, model_seed(seed, "A", i), None, False, f"A_seed{i}") for i in range(n_seeds)]
    jobs_b = [(world, split.b, config, model_seed(seed, "B", i), None, False, f"B_seed{i}") for i in range(n_seeds)]
    nets = _map(jobs_a + jobs_b, jobs)
    nets_a, nets_b = nets[:n_seeds], nets[n_seeds:]
    for net in nets:
        log.info("trained %s: mean return of last 100 episodes %.3f", net.name,
                 float(np.mean(net.history[-100:])) if net.history else float("nan"))
    transfer_nets = []
    if transfer:
        tcfg = copy.copy(config)
        if config.transfer_episodes is not None:
            tcfg.episodes = config.transfer_episodes
        jobs_t = [(world, split.b, tcfg, [int(seed), 2, i], src, True, f"AtoB_seed{i}") for i, src in enumerate(nets_a)]
        transfer_nets = _map(jobs_t, jobs)
    group_a = ModelGroup("A", [extract_activations(n, probes) for n in nets_a])
    group_b = ModelGroup("B", [extract_activations(n, probes) for n in nets_b])
    return StudyResult(group_a, group_b, nets_a, nets_b, probes, transfer_nets)
