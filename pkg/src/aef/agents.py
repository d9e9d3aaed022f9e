"""The four learners (tabular Q-learning, SARSA, DQN, and the enhanced
Q-value agent) plus the shared exploration, replay, and TD machinery.

The enhanced agent ships in two modes: ``eqrl`` encodes observations through
the VAE and trains a critic on the latent (optionally jointly with the VAE),
while ``eqrl-tabular`` applies the moment-corrected update directly to
discretized table entries. All trainers are deterministic per seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .env import AefEnv, EnvConfig, EnvState, observation_vector
from .neural import (
    AdamState,
    Mlp,
    NoiseSource,
    VaeModel,
    adam_from_dict,
    adam_step,
    adam_to_dict,
    kl_standard_normal,
    mlp_backward,
    mlp_forward,
    mlp_from_dict,
    mlp_to_dict,
    vae_encode_backward,
    vae_encode_with_cache,
    vae_from_dict,
    vae_to_dict,
    vae_train_step,
)

SNAPSHOT_VERSION = 1

AGENT_KINDS = ("qlearning", "qlearning-deep", "sarsa", "dqn", "eqrl", "eqrl-tabular")


class TrainingDivergenceError(RuntimeError):
    """Loss went non-finite; partial logs are attached."""

    def __init__(self, message: str, log: "TrainLog"):
        super().__init__(message)
        self.log = log


class DimensionMismatchError(ValueError):
    """Snapshot and environment observation shapes are incompatible."""


# --- exploration -----------------------------------------------------------

@dataclass
class EpsilonSchedule:
    """Exploration rate with a multiplicative decay and a hard floor.

    Table-style triples like "0.99/0.001/0.5" are preserved in the config
    defaults as comments; only the initial value and the 0.95/0.1 decay rule
    have executable semantics. A linear mode (rate 0.005) is available as the
    alternative reading of the printed decay constant.
    """

    initial: float = 0.99
    minimum: float = 0.1
    factor: float = 0.95
    decay_mode: str = "multiplicative"
    linear_rate: float = 0.005
    value: float = field(default=math.nan)

    def __post_init__(self) -> None:
        if not 0.0 <= self.minimum <= self.initial <= 1.0:
            raise ValueError("need 0 <= minimum <= initial <= 1")
        if self.decay_mode not in ("multiplicative", "linear"):
            raise ValueError("decay_mode must be 'multiplicative' or 'linear'")
        if math.isnan(self.value):
            self.value = self.initial

    def decay(self) -> float:
        if self.decay_mode == "multiplicative":
            self.value = max(self.value * self.factor, self.minimum)
        else:
            self.value = max(self.value - self.linear_rate, self.minimum)
        return self.value


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability epsilon, else first-index argmax."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("q_values must be non-empty")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def noisy_argmax(q_values: np.ndarray, eta_scale: float, noise: NoiseSource) -> int:
    """argmax of q perturbed by N(0, eta_scale^2) per coordinate."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("q_values must be non-empty")
    if eta_scale == 0.0:
        return int(np.argmax(q))
    return int(np.argmax(q + eta_scale * noise.standard_normal(q.shape)))


# --- replay and TD ----------------------------------------------------------

@dataclass
class ReplayBuffer:
    """FIFO ring of transitions with uniform without-replacement sampling."""

    capacity: int = 100000
    entries: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.entries = deque(self.entries, maxlen=self.capacity)

    def push(self, transition) -> None:
        self.entries.append(transition)

    def __len__(self) -> int:
        return len(self.entries)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if batch_size > len(self.entries):
            raise ValueError("not enough transitions to sample")
        idx = rng.choice(len(self.entries), size=batch_size, replace=False)
        return [self.entries[int(i)] for i in idx]


def td_target(r: float, gamma: float, q_next: float, terminal: bool) -> float:
    """Bootstrapped target: r on terminal transitions, else r + gamma*q_next."""
    return r if terminal else r + gamma * q_next


# --- tabular machinery -------------------------------------------------------

@dataclass
class QTable:
    """Sparse table with per-entry moment accumulators for the enhanced update.

    Unseen (state, action) pairs read as zero for values and moments.
    """

    q: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def value(self, key, action: int) -> float:
        return self.q.get((key, action), 0.0)

    def values(self, key, n_actions: int) -> np.ndarray:
        return np.array([self.value(key, a) for a in range(n_actions)])

    def dump(self, path) -> None:
        """Text dump: state_key,action,q,m,v sorted for reproducibility."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("state_key,action,q,m,v\n")
            for (key, action) in sorted(self.q):
                k = (key, action)
                fh.write(
                    f"{':'.join(str(p) for p in key)},{action},"
                    f"{self.q[k]!r},{self.m.get(k, 0.0)!r},{self.v.get(k, 0.0)!r}\n"
                )


def q_update_tabular(table: QTable, key, action: int, target: float, alpha: float) -> QTable:
    """Convex move of a single entry toward the target."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    k = (key, action)
    current = table.q.get(k, 0.0)
    table.q[k] = current + alpha * (target - current)
    return table


def sarsa_update(table: QTable, key, action: int, r: float, next_key, next_action: int,
                 terminal: bool, alpha: float, gamma: float) -> QTable:
    """On-policy update using the actually-selected next action."""
    target = td_target(r, gamma, table.value(next_key, next_action), terminal)
    return q_update_tabular(table, key, action, target, alpha)


def eqrl_moment_update(
    table: QTable,
    key,
    action: int,
    delta: float,
    alpha: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_stability: float = 1e-8,
    eta: float = 0.0,
    noise: NoiseSource | None = None,
    step: int | None = None,
) -> QTable:
    """Moment-corrected table update: Q += alpha*m_hat/(sqrt(v_hat)+eps) + eta draw.

    First and second moments of the TD error are tracked per entry with the
    same bias correction as the network optimizer; ``step`` defaults to the
    entry's own update count.
    """
    if not math.isfinite(delta):
        raise ValueError("TD error must be finite")
    k = (key, action)
    t = table.t.get(k, 0) if step is None else step
    m = beta1 * table.m.get(k, 0.0) + (1.0 - beta1) * delta
    v = beta2 * table.v.get(k, 0.0) + (1.0 - beta2) * delta * delta
    m_hat = m / (1.0 - beta1 ** (t + 1))
    v_hat = v / (1.0 - beta2 ** (t + 1))
    increment = alpha * m_hat / (math.sqrt(v_hat) + eps_stability)
    if eta > 0.0:
        if noise is None:
            raise ValueError("eta > 0 requires a noise source")
        increment += eta * float(noise.standard_normal(()))
    table.m[k] = m
    table.v[k] = v
    table.t[k] = t + 1
    table.q[k] = table.q.get(k, 0.0) + increment
    return table


def discretize_state(state: EnvState, c_step: float = 5e-9,
                     emi_clip: tuple[float, float] = (-20.0, 60.0)) -> tuple[int, int]:
    """Map a state to (capacitance index, 1-dB EMI bin) for tabular learners."""
    ci = int(round((state.c_t - state.c_min) / c_step))
    emi = float(np.max(state.emi_out))
    emi_bin = int(round(min(max(emi, emi_clip[0]), emi_clip[1])))
    return (ci, emi_bin)


# --- hyper block -------------------------------------------------------------

# Table exploration triples as printed: qlearning/sarsa "1/0.001/0.5",
# dqn "0.95/0.001/0.5", eqrl "0.99/0.001/0.5". Only the first number has
# executable decay semantics (initial epsilon; decay 0.95x with floor 0.1).
_EPSILON_INITIAL = {
    "qlearning": 1.0,
    "qlearning-deep": 1.0,
    "sarsa": 1.0,
    "dqn": 0.95,
    "eqrl": 0.99,
    "eqrl-tabular": 0.99,
}


@dataclass(frozen=True)
class AgentHyper:
    """Training hyperparameters; defaults follow the shipped configuration."""

    learning_rate: float = 0.001
    gamma: float = 0.99
    max_episode: int = 50
    batch_size: int = 32
    buffer_capacity: int = 100000
    epsilon_initial: float = 0.99
    epsilon_floor: float = 0.1
    epsilon_factor: float = 0.95
    epsilon_decay_mode: str = "multiplicative"
    epsilon_linear_rate: float = 0.005
    eta: float = 0.025
    target_update: int = 4
    latent_dim: int = 2
    encoder_hidden: tuple[int, ...] = (128, 64)
    decoder_hidden: tuple[int, ...] = (64, 128)
    q_hidden: tuple[int, ...] = (80,)
    dqn_hidden: tuple[int, ...] = (400, 300)
    obs_scale: float = 0.02
    beta_kl: float = 1.0
    vae_mode: str = "joint"
    pretrain_steps: int = 500
    c_step: float = 5e-9
    emi_clip: tuple[float, float] = (-20.0, 60.0)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.max_episode < 0:
            raise ValueError("max_episode must be >= 0")
        if self.vae_mode not in ("joint", "pretrain"):
            raise ValueError("vae_mode must be 'joint' or 'pretrain'")

    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(
            initial=self.epsilon_initial,
            minimum=self.epsilon_floor,
            factor=self.epsilon_factor,
            decay_mode=self.epsilon_decay_mode,
            linear_rate=self.epsilon_linear_rate,
        )


def default_hyper(agent_kind: str, **overrides) -> AgentHyper:
    if agent_kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {agent_kind!r}; choose from {AGENT_KINDS}")
    overrides.setdefault("epsilon_initial", _EPSILON_INITIAL[agent_kind])
    return AgentHyper(**overrides)


# --- logging -----------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    episode: int
    step: int
    action: int
    reward: float
    epsilon: float
    loss: float  # NaN when the step performed no gradient update
    c_farads: float


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    cum_reward: float
    steps: int
    wall_ms: float


@dataclass
class TrainLog:
    agent_kind: str
    seed: int
    episodes: list[EpisodeRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)

    def episode_rewards(self) -> np.ndarray:
        return np.array([e.cum_reward for e in self.episodes])

    def write_episode_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("episode,cum_reward,steps,wall_ms\n")
            for e in self.episodes:
                fh.write(f"{e.episode},{e.cum_reward!r},{e.steps},{e.wall_ms:.3f}\n")

    def write_step_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("episode,step,action,reward,epsilon,loss,c_farads\n")
            for s in self.steps:
                loss = "" if math.isnan(s.loss) else repr(s.loss)
                fh.write(
                    f"{s.episode},{s.step},{s.action},{s.reward!r},{s.epsilon!r},"
                    f"{loss},{s.c_farads!r}\n"
                )

    def canonical_hash(self) -> str:
        """Deterministic digest of everything except wall-clock fields."""
        h = hashlib.sha256()
        for e in self.episodes:
            h.update(f"{e.episode},{e.cum_reward!r},{e.steps};".encode())
        for s in self.steps:
            h.update(
                f"{s.episode},{s.step},{s.action},{s.reward!r},{s.epsilon!r},"
                f"{s.loss!r},{s.c_farads!r};".encode()
            )
        return h.hexdigest()


# --- agents ------------------------------------------------------------------

class TabularAgent:
    """Q-learning / SARSA / enhanced-tabular over a discretized state space."""

    def __init__(self, kind: str, n_actions: int, hyper: AgentHyper, noise_seed: int = 0):
        self.kind = kind
        self.n_actions = n_actions
        self.hyper = hyper
        self.table = QTable()
        self.schedule = hyper.schedule()
        self.buffer = ReplayBuffer(hyper.buffer_capacity)
        self.noise = NoiseSource.from_seed(noise_seed)
        self._sample_rng = np.random.default_rng(noise_seed + 1)

    def encode_state(self, state: EnvState):
        return discretize_state(state, self.hyper.c_step, self.hyper.emi_clip)

    def q_values(self, key) -> np.ndarray:
        return self.table.values(key, self.n_actions)

    def select(self, key, epsilon: float, rng: np.random.Generator) -> int:
        if self.kind == "eqrl-tabular":
            if rng.random() < epsilon:
                return int(rng.integers(self.n_actions))
            return noisy_argmax(self.q_values(key), self.hyper.eta, self.noise)
        return epsilon_greedy(self.q_values(key), epsilon, rng)

    def greedy(self, key) -> int:
        return int(np.argmax(self.q_values(key)))

    def learn(self, key, action, r, next_key, next_action, terminal) -> float:
        h = self.hyper
        if self.kind == "sarsa":
            sarsa_update(self.table, key, action, r, next_key, next_action, terminal,
                         h.learning_rate, h.gamma)
            return math.nan
        if self.kind == "qlearning":
            q_next = float(np.max(self.q_values(next_key)))
            target = td_target(r, h.gamma, q_next, terminal)
            q_update_tabular(self.table, key, action, target, h.learning_rate)
            return math.nan
        # enhanced tabular: replay minibatch of moment-corrected updates
        self.buffer.push((key, action, r, next_key, terminal))
        if len(self.buffer) < h.batch_size:
            return math.nan
        batch = self.buffer.sample(h.batch_size, self._sample_rng)
        sq_sum = 0.0
        for (k, a, rr, nk, term) in batch:
            q_next = float(np.max(self.q_values(nk)))
            target = td_target(rr, h.gamma, q_next, term)
            delta = target - self.table.value(k, a)
            sq_sum += delta * delta
            eqrl_moment_update(
                self.table, k, a, delta, h.learning_rate,
                eta=h.eta, noise=self.noise,
            )
        return sq_sum / len(batch)

    def to_dict(self) -> dict:
        entries = [
            [list(key), action, self.table.q[(key, action)],
             self.table.m.get((key, action), 0.0), self.table.v.get((key, action), 0.0),
             self.table.t.get((key, action), 0)]
            for (key, action) in sorted(self.table.q)
        ]
        return {
            "kind": self.kind,
            "n_actions": self.n_actions,
            "c_step": self.hyper.c_step,
            "entries": entries,
        }

    @classmethod
    def from_dict(cls, data: dict, hyper: AgentHyper) -> "TabularAgent":
        agent = cls(data["kind"], data["n_actions"], hyper)
        for key_list, action, q, m, v, t in data["entries"]:
            k = (tuple(key_list), action)
            agent.table.q[k] = q
            agent.table.m[k] = m
            agent.table.v[k] = v
            agent.table.t[k] = t
        return agent


class DqnAgent:
    """DQN over the raw observation vector with a periodically synced target net."""

    def __init__(self, obs_dim: int, n_actions: int, hyper: AgentHyper,
                 init_seed: int = 0, kind: str = "dqn"):
        self.kind = kind
        self.hyper = hyper
        rng = np.random.default_rng(init_seed)
        self.online = Mlp.init((obs_dim, *hyper.dqn_hidden, n_actions), rng)
        self.target = self.online.copy()
        self.adam = AdamState(learning_rate=hyper.learning_rate)
        self.schedule = hyper.schedule()
        self.buffer = ReplayBuffer(hyper.buffer_capacity)
        self.learn_calls = 0
        self.sync_count = 0
        self._sample_rng = np.random.default_rng(init_seed + 1)

    @property
    def n_actions(self) -> int:
        return self.online.output_dim

    def encode_state(self, state: EnvState) -> np.ndarray:
        obs = observation_vector(state, (self.online.input_dim - 1) // 2)
        return obs * self.hyper.obs_scale

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        q, _ = mlp_forward(self.online, obs)
        return q

    def select(self, obs, epsilon: float, rng: np.random.Generator) -> int:
        return epsilon_greedy(self.q_values(obs), epsilon, rng)

    def greedy(self, obs) -> int:
        return int(np.argmax(self.q_values(obs)))

    def learn(self, obs, action, r, next_obs, next_action, terminal) -> float:
        self.buffer.push((obs, action, r, next_obs, terminal))
        if len(self.buffer) < self.hyper.batch_size:
            return math.nan
        batch = self.buffer.sample(self.hyper.batch_size, self._sample_rng)
        return dqn_update(self, batch)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "online": mlp_to_dict(self.online),
            "target": mlp_to_dict(self.target),
            "adam": adam_to_dict(self.adam),
            "learn_calls": self.learn_calls,
            "obs_scale": self.hyper.obs_scale,
        }

    @classmethod
    def from_dict(cls, data: dict, hyper: AgentHyper) -> "DqnAgent":
        online = mlp_from_dict(data["online"])
        agent = cls(online.input_dim, online.output_dim, hyper, kind=data["kind"])
        agent.online = online
        agent.target = mlp_from_dict(data["target"])
        agent.adam = adam_from_dict(data["adam"])
        agent.learn_calls = data["learn_calls"]
        return agent


def dqn_update(agent: DqnAgent, minibatch: list) -> float:
    """TD step against the frozen target; syncs the target every N learn calls.

    ``qlearning-deep`` syncs every call, collapsing the target to the online
    network.
    """
    h = agent.hyper
    s = np.stack([tr[0] for tr in minibatch])
    a = np.array([tr[1] for tr in minibatch], dtype=np.intp)
    r = np.array([tr[2] for tr in minibatch])
    s2 = np.stack([tr[3] for tr in minibatch])
    term = np.array([tr[4] for tr in minibatch], dtype=bool)

    q2, _ = mlp_forward(agent.target, s2)
    targets = np.where(term, r, r + h.gamma * q2.max(axis=1))

    q, cache = mlp_forward(agent.online, s)
    b = len(minibatch)
    selected = q[np.arange(b), a]
    loss = float(np.mean((targets - selected) ** 2))

    d_q = np.zeros_like(q)
    d_q[np.arange(b), a] = 2.0 * (selected - targets) / b
    grads, _ = mlp_backward(agent.online, cache, d_q)
    adam_step(agent.adam, agent.online.parameters(), grads)
    agent.learn_calls += 1
    sync_every = 1 if agent.kind == "qlearning-deep" else h.target_update
    if agent.learn_calls % sync_every == 0:
        agent.target = agent.online.copy()
        agent.sync_count += 1
    return loss


class EqrlAgent:
    """VAE-compressed critic with noise-perturbed greedy action selection."""

    def __init__(self, obs_dim: int, n_actions: int, hyper: AgentHyper,
                 init_seed: int = 0, noise_seed: int = 1, reparam_seed: int = 2):
        self.kind = "eqrl"
        self.hyper = hyper
        rng = np.random.default_rng(init_seed)
        self.vae = VaeModel.init(
            obs_dim, rng,
            encoder_hidden=hyper.encoder_hidden,
            latent_dim=hyper.latent_dim,
            decoder_hidden=hyper.decoder_hidden,
        )
        self.critic = Mlp.init((hyper.latent_dim, *hyper.q_hidden, n_actions), rng)
        self.adam = AdamState(learning_rate=hyper.learning_rate)
        self.vae_adam = AdamState(learning_rate=hyper.learning_rate)
        self.schedule = hyper.schedule()
        self.buffer = ReplayBuffer(hyper.buffer_capacity)
        self.eta = hyper.eta
        self.gamma = hyper.gamma
        self.batch_size = hyper.batch_size
        self.noise = NoiseSource.from_seed(noise_seed)
        self.reparam_noise = NoiseSource.from_seed(reparam_seed)
        self.learn_calls = 0
        self._sample_rng = np.random.default_rng(init_seed + 1)

    @property
    def n_actions(self) -> int:
        return self.critic.output_dim

    @property
    def obs_dim(self) -> int:
        return self.vae.input_dim

    def encode_state(self, state: EnvState) -> np.ndarray:
        obs = observation_vector(state, (self.vae.input_dim - 1) // 2)
        return obs * self.hyper.obs_scale

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        (mu, _), _ = vae_encode_with_cache(self.vae, obs)
        q, _ = mlp_forward(self.critic, mu)
        return q

    def select(self, obs, epsilon: float, rng: np.random.Generator) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return noisy_argmax(self.q_values(obs), self.eta, self.noise)

    def greedy(self, obs) -> int:
        return int(np.argmax(self.q_values(obs)))

    def learn(self, obs, action, r, next_obs, next_action, terminal) -> float:
        self.buffer.push((obs, action, r, next_obs, terminal))
        if len(self.buffer) < self.batch_size:
            return math.nan
        batch = self.buffer.sample(self.batch_size, self._sample_rng)
        if self.hyper.vae_mode == "pretrain" and self.learn_calls < self.hyper.pretrain_steps:
            self.learn_calls += 1
            states = np.stack([tr[0] for tr in batch])
            return vae_train_step(self.vae, states, self.vae_adam, self.reparam_noise,
                                  self.hyper.beta_kl)
        self.learn_calls += 1
        return critic_td_step(self, batch)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vae": vae_to_dict(self.vae),
            "critic": mlp_to_dict(self.critic),
            "adam": adam_to_dict(self.adam),
            "obs_scale": self.hyper.obs_scale,
            "eta": self.eta,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict, hyper: AgentHyper) -> "EqrlAgent":
        vae = vae_from_dict(data["vae"])
        critic = mlp_from_dict(data["critic"])
        agent = cls(vae.input_dim, critic.output_dim, hyper)
        agent.vae = vae
        agent.critic = critic
        agent.adam = adam_from_dict(data["adam"])
        return agent


def critic_td_step(agent: EqrlAgent, minibatch: list) -> float:
    """One TD step minimizing the squared target error on the latent critic.

    Targets bootstrap through the current critic on the encoded next states
    and are treated as constants. In joint mode the VAE reconstruction loss
    is added to the objective so encoder gradients flow from both paths; the
    returned value is always the pre-step TD loss.
    """
    if not minibatch:
        raise ValueError("minibatch must be non-empty")
    h = agent.hyper
    s = np.stack([tr[0] for tr in minibatch])
    a = np.array([tr[1] for tr in minibatch], dtype=np.intp)
    r = np.array([tr[2] for tr in minibatch])
    s2 = np.stack([tr[3] for tr in minibatch])
    term = np.array([tr[4] for tr in minibatch], dtype=bool)
    b = len(minibatch)

    (mu2, _), _ = vae_encode_with_cache(agent.vae, s2)
    q2, _ = mlp_forward(agent.critic, mu2)
    targets = np.where(term, r, r + agent.gamma * q2.max(axis=1))

    (mu, sigma), enc_cache = vae_encode_with_cache(agent.vae, s)
    q, critic_cache = mlp_forward(agent.critic, mu)
    selected = q[np.arange(b), a]
    td_loss = float(np.mean((targets - selected) ** 2))

    d_q = np.zeros_like(q)
    d_q[np.arange(b), a] = 2.0 * (selected - targets) / b
    critic_grads, d_mu = mlp_backward(agent.critic, critic_cache, d_q)

    if h.vae_mode == "joint":
        eps = agent.reparam_noise.standard_normal((b, agent.vae.latent_dim))
        z = mu + sigma * eps
        recon, dec_cache = mlp_forward(agent.vae.decoder, z)
        d_recon = 2.0 * (recon - s) / recon.size
        dec_grads, dz = mlp_backward(agent.vae.decoder, dec_cache, d_recon)
        d_mu_total = d_mu + dz + h.beta_kl * mu / b
        d_sigma = dz * eps + h.beta_kl * (sigma - 1.0 / sigma) / b
        enc_grads = vae_encode_backward(agent.vae, enc_cache, d_mu_total, d_sigma)
        params = agent.vae.parameters() + agent.critic.parameters()
        grads = enc_grads + dec_grads + critic_grads
    else:
        # frozen VAE: only the critic moves
        params = agent.critic.parameters()
        grads = critic_grads
    adam_step(agent.adam, params, grads)
    return td_loss


# --- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    log: TrainLog
    agent: object


def build_agent(agent_kind: str, env: AefEnv, hyper: AgentHyper,
                init_seed: int, noise_seed: int, reparam_seed: int):
    obs_dim = 2 * env.config.obs_bins + 1
    if agent_kind in ("qlearning", "sarsa", "eqrl-tabular"):
        return TabularAgent(agent_kind, env.n_actions, hyper, noise_seed)
    if agent_kind in ("dqn", "qlearning-deep"):
        return DqnAgent(obs_dim, env.n_actions, hyper, init_seed, kind=agent_kind)
    if agent_kind == "eqrl":
        return EqrlAgent(obs_dim, env.n_actions, hyper, init_seed, noise_seed, reparam_seed)
    raise ValueError(f"unknown agent kind {agent_kind!r}")


def train(agent_kind: str, env_config: EnvConfig, hyper: AgentHyper | None = None,
          seed: int = 0) -> TrainResult:
    """Run the full episode loop; deterministic given (config, hyper, seed).

    Raises TrainingDivergenceError (with the partial log attached) if a loss
    goes non-finite.
    """
    if hyper is None:
        hyper = default_hyper(agent_kind)
    env = AefEnv(env_config)
    master = np.random.default_rng(seed)
    init_seed, noise_seed, reparam_seed = (int(x) for x in master.integers(2**31, size=3))
    explore_rng = np.random.default_rng(int(master.integers(2**31)))
    episode_seeds = [int(x) for x in master.integers(2**31, size=hyper.max_episode)]

    agent = build_agent(agent_kind, env, hyper, init_seed, noise_seed, reparam_seed)
    log = TrainLog(agent_kind, seed)

    for episode in range(1, hyper.max_episode + 1):
        t0 = time.perf_counter()
        state = env.reset(episode_seeds[episode - 1])
        view = agent.encode_state(state)
        action = int(explore_rng.integers(env.n_actions))
        cum_reward = 0.0
        step_idx = 0
        while True:
            result = env.step(action)
            step_idx += 1
            next_view = agent.encode_state(result.next_state)
            next_action = agent.select(next_view, agent.schedule.value, explore_rng)

            loss = agent.learn(view, action, result.reward, next_view, next_action,
                               result.terminal)
            if not math.isnan(loss) and not math.isfinite(loss):
                log.steps.append(StepRecord(episode, step_idx, action, result.reward,
                                            agent.schedule.value, loss,
                                            result.next_state.c_t))
                raise TrainingDivergenceError(
                    f"non-finite loss at episode {episode} step {step_idx}", log)

            cum_reward += result.reward
            log.steps.append(StepRecord(episode, step_idx, action, result.reward,
                                        agent.schedule.value, loss,
                                        result.next_state.c_t))
            agent.schedule.decay()
            view, action = next_view, next_action
            if result.terminal:
                break
        wall_ms = (time.perf_counter() - t0) * 1e3
        log.episodes.append(EpisodeRecord(episode, cum_reward, step_idx, wall_ms))
    return TrainResult(log, agent)


def run_policy(agent, env_config: EnvConfig, episodes: int, seed: int = 0) -> TrainLog:
    """Greedy rollouts (epsilon = 0, action noise off) without weight updates."""
    env = AefEnv(env_config)
    if hasattr(agent, "obs_dim") and agent.obs_dim != 2 * env.config.obs_bins + 1:
        raise DimensionMismatchError(
            f"snapshot expects obs dim {agent.obs_dim}, env provides "
            f"{2 * env.config.obs_bins + 1}"
        )
    master = np.random.default_rng(seed)
    episode_seeds = [int(x) for x in master.integers(2**31, size=episodes)]
    log = TrainLog(getattr(agent, "kind", "policy"), seed)
    for episode in range(1, episodes + 1):
        t0 = time.perf_counter()
        state = env.reset(episode_seeds[episode - 1])
        cum_reward = 0.0
        step_idx = 0
        while True:
            view = agent.encode_state(state)
            action = agent.greedy(view)
            result = env.step(action)
            step_idx += 1
            cum_reward += result.reward
            log.steps.append(StepRecord(episode, step_idx, action, result.reward, 0.0,
                                        math.nan, result.next_state.c_t))
            state = result.next_state
            if result.terminal:
                break
        wall_ms = (time.perf_counter() - t0) * 1e3
        log.episodes.append(EpisodeRecord(episode, cum_reward, step_idx, wall_ms))
    return log


# --- snapshots -----------------------------------------------------------------

def snapshot_dict(agent, hyper: AgentHyper, extras: dict | None = None) -> dict:
    data = {
        "version": SNAPSHOT_VERSION,
        "agent": agent.to_dict(),
        "hyper": {
            "learning_rate": hyper.learning_rate,
            "gamma": hyper.gamma,
            "max_episode": hyper.max_episode,
            "batch_size": hyper.batch_size,
            "buffer_capacity": hyper.buffer_capacity,
            "epsilon_initial": hyper.epsilon_initial,
            "epsilon_floor": hyper.epsilon_floor,
            "epsilon_factor": hyper.epsilon_factor,
            "epsilon_decay_mode": hyper.epsilon_decay_mode,
            "epsilon_linear_rate": hyper.epsilon_linear_rate,
            "eta": hyper.eta,
            "target_update": hyper.target_update,
            "latent_dim": hyper.latent_dim,
            "encoder_hidden": list(hyper.encoder_hidden),
            "decoder_hidden": list(hyper.decoder_hidden),
            "q_hidden": list(hyper.q_hidden),
            "dqn_hidden": list(hyper.dqn_hidden),
            "obs_scale": hyper.obs_scale,
            "beta_kl": hyper.beta_kl,
            "vae_mode": hyper.vae_mode,
            "pretrain_steps": hyper.pretrain_steps,
            "c_step": hyper.c_step,
            "emi_clip": list(hyper.emi_clip),
        },
    }
    if extras:
        data["extras"] = extras
    return data


def save_snapshot(agent, hyper: AgentHyper, path, extras: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(snapshot_dict(agent, hyper, extras), fh, sort_keys=True)
        fh.write("\n")


def hyper_from_dict(data: dict) -> AgentHyper:
    d = dict(data)
    for key in ("encoder_hidden", "decoder_hidden", "q_hidden", "dqn_hidden", "emi_clip"):
        if key in d:
            d[key] = tuple(d[key])
    return AgentHyper(**d)


def load_snapshot(path):
    """Returns (agent, hyper, extras) from a snapshot file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {data.get('version')!r}")
    hyper = hyper_from_dict(data["hyper"])
    agent_data = data["agent"]
    kind = agent_data["kind"]
    if kind in ("qlearning", "sarsa", "eqrl-tabular"):
        agent = TabularAgent.from_dict(agent_data, hyper)
    elif kind in ("dqn", "qlearning-deep"):
        agent = DqnAgent.from_dict(agent_data, hyper)
    elif kind == "eqrl":
        agent = EqrlAgent.from_dict(agent_data, hyper)
    else:
        raise ValueError(f"unknown snapshot agent kind {kind!r}")
    return agent, hyper, data.get("extras", {})


def snapshot_hash(agent, hyper: AgentHyper) -> str:
    payload = json.dumps(snapshot_dict(agent, hyper), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
