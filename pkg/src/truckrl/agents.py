"""Value-based and policy-gradient learners over the discrete driving task.

Three algorithms share the same interaction protocol: act(obs) picks an
action, observe(...) feeds the transition back and triggers whatever
updates are due. All gradient math is explicit (see `nets`); the loss
functions are pure and separated per network so they can be checked
against finite differences.

Step caps and truncations bootstrap the value of the cut-off state;
genuine terminal events do not.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import AgentSection
from .nets import Adam, Mlp, clip_grads


def linear_schedule(start: float, end: float, horizon: float, step: float) -> float:
    """Linear ramp from start to end over horizon steps, clamped at the end."""
    if horizon <= 0:
        return end
    frac = min(1.0, max(0.0, step / horizon))
    return start + (end - start) * frac


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector using a single uniform."""
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


# ------------------------------------------------------------ loss kernels

def dqn_targets(target_net: Mlp, rewards: np.ndarray, next_obs: np.ndarray,
                terminated: np.ndarray, gamma: float) -> np.ndarray:
    """Bellman targets r + gamma * max_a' Q_target(s', a'), zeroed past terminals."""
    q_next = target_net(next_obs).max(axis=1)
    return rewards + gamma * (1.0 - terminated.astype(float)) * q_next


def dqn_loss_and_grads(q_net: Mlp, obs: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Mean squared error on the taken actions' Q values."""
    out, cache = q_net.forward(obs)
    n = len(actions)
    qa = out[np.arange(n), actions]
    err = qa - targets
    loss = float(np.mean(err ** 2))
    dout = np.zeros_like(out)
    dout[np.arange(n), actions] = 2.0 * err / n
    return loss, q_net.backward(cache, dout)


def value_loss_and_grads(critic: Mlp, obs: np.ndarray,
                         targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    out, cache = critic.forward(obs)
    v = out[:, 0]
    err = v - targets
    loss = float(np.mean(err ** 2))
    dout = (2.0 * err / len(err))[:, None]
    return loss, critic.backward(cache, dout)


def _policy_forward(actor: Mlp, obs: np.ndarray):
    logits, cache = actor.forward(obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    entropy = -(probs * logp_all).sum(axis=1)
    return logits, cache, logp_all, probs, entropy


def _entropy_dlogits(probs: np.ndarray, logp_all: np.ndarray,
                     entropy: np.ndarray) -> np.ndarray:
    # d(entropy)/d(logits) for each sample
    return -probs * (logp_all + entropy[:, None])


def a2c_actor_loss_and_grads(actor: Mlp, obs: np.ndarray, actions: np.ndarray,
                             advantages: np.ndarray, ent_coef: float
                             ) -> Tuple[float, List[np.ndarray]]:
    """Policy-gradient loss -mean(A * log pi(a|s)) - ent_coef * mean(entropy)."""
    _, cache, logp_all, probs, entropy = _policy_forward(actor, obs)
    n = len(actions)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    loss = float(-np.mean(advantages * logp) - ent_coef * np.mean(entropy))
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    dlogits = (-advantages / n)[:, None] * (onehot - probs)
    dlogits -= (ent_coef / n) * _entropy_dlogits(probs, logp_all, entropy)
    return loss, actor.backward(cache, dlogits)


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray,
                      clip_eps: float) -> np.ndarray:
    """Per-sample min(ratio * A, clip(ratio) * A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def ppo_actor_loss_and_grads(actor: Mlp, obs: np.ndarray, actions: np.ndarray,
                             logp_old: np.ndarray, advantages: np.ndarray,
                             clip_eps: float, ent_coef: float
                             ) -> Tuple[float, List[np.ndarray]]:
    """Clipped-ratio surrogate with an entropy bonus.

    Gradient flows only through samples whose unclipped branch attains the
    min; at the interior tie the branches agree, so the choice is moot.
    """
    _, cache, logp_all, probs, entropy = _policy_forward(actor, obs)
    n = len(actions)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    terms = np.minimum(unclipped, clipped)
    loss = float(-np.mean(terms) - ent_coef * np.mean(entropy))
    dlogp = np.where(unclipped <= clipped, -ratio * advantages, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    dlogits = dlogp[:, None] * (onehot - probs)
    dlogits -= (ent_coef / n) * _entropy_dlogits(probs, logp_all, entropy)
    return loss, actor.backward(cache, dlogits)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   last_value: float, gamma: float, lam: float
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates over a rollout.

    dones[t] marks transitions that ended their episode (either way);
    truncation bootstraps are expected to be folded into rewards already.
    Returns (advantages, value targets).
    """
    n = len(rewards)
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        next_value = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
    return adv, adv + values


# ------------------------------------------------------------------ agents

class _AgentBase:
    algorithm = "?"

    def __init__(self, obs_dim: int, n_actions: int, cfg: AgentSection,
                 seed: int, total_steps: int):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.cfg = cfg
        self.total_steps = int(total_steps)
        self.rng = np.random.default_rng(seed)
        self.env_steps = 0
        self.updates = 0

    # subclasses fill these in
    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        raise NotImplementedError

    def observe(self, obs, action, reward, next_obs, terminated, truncated) -> None:
        raise NotImplementedError

    def _meta(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "total_steps": self.total_steps,
            "env_steps": self.env_steps,
            "updates": self.updates,
            "rng_state": self.rng.bit_generator.state,
        }

    def _restore_meta(self, meta: dict) -> None:
        self.env_steps = int(meta["env_steps"])
        self.updates = int(meta["updates"])
        self.total_steps = int(meta["total_steps"])
        self.rng.bit_generator.state = meta["rng_state"]


class ReplayBuffer:
    """Uniform-sampling circular transition store."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.full = False

    def __len__(self) -> int:
        return self.capacity if self.full else self.pos

    def push(self, obs, action, reward, next_obs, terminated) -> None:
        i = self.pos
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminated[i] = terminated
        self.pos += 1
        if self.pos == self.capacity:
            self.pos = 0
            self.full = True

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, len(self), size=batch)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.terminated[idx])

    def get_arrays(self) -> Dict[str, np.ndarray]:
        n = len(self)
        order = np.arange(n) if not self.full else \
            np.concatenate([np.arange(self.pos, self.capacity), np.arange(self.pos)])
        return {"obs": self.obs[order], "next_obs": self.next_obs[order],
                "actions": self.actions[order], "rewards": self.rewards[order],
                "terminated": self.terminated[order]}

    def set_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        n = len(arrays["actions"])
        if n > self.capacity:
            raise ValueError("saved buffer larger than capacity")
        self.obs[:n] = arrays["obs"]
        self.next_obs[:n] = arrays["next_obs"]
        self.actions[:n] = arrays["actions"]
        self.rewards[:n] = arrays["rewards"]
        self.terminated[:n] = arrays["terminated"]
        self.pos = 0 if n == self.capacity else n
        self.full = n == self.capacity


class DqnAgent(_AgentBase):
    algorithm = "dqn"

    def __init__(self, obs_dim, n_actions, cfg: AgentSection, seed, total_steps):
        super().__init__(obs_dim, n_actions, cfg, seed, total_steps)
        sizes = (obs_dim, *cfg.hidden_sizes, n_actions)
        self.q = Mlp(sizes, self.rng)
        self.target = self.q.clone()
        self.opt = Adam(self.q, cfg.resolved_lr())
        self.buffer = ReplayBuffer(cfg.dqn_buffer, obs_dim)
        self.last_loss = math.nan

    def epsilon(self) -> float:
        horizon = self.cfg.dqn_eps_fraction * self.total_steps
        return linear_schedule(self.cfg.dqn_eps_start, self.cfg.dqn_eps_end,
                               horizon, self.env_steps)

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        if not greedy and self.rng.random() < self.epsilon():
            return int(self.rng.integers(self.n_actions))
        q = self.q(obs[None, :])[0]
        return int(np.argmax(q))

    def observe(self, obs, action, reward, next_obs, terminated, truncated) -> None:
        self.buffer.push(obs, action, reward, next_obs, terminated)
        self.env_steps += 1
        c = self.cfg
        if self.env_steps >= c.dqn_learning_starts and len(self.buffer) >= c.dqn_batch \
                and self.env_steps % c.dqn_train_freq == 0:
            b_obs, b_act, b_rew, b_next, b_term = self.buffer.sample(self.rng, c.dqn_batch)
            targets = dqn_targets(self.target, b_rew, b_next, b_term, c.gamma)
            loss, grads = dqn_loss_and_grads(self.q, b_obs, b_act, targets)
            clip_grads(grads, c.resolved_grad_norm())
            self.opt.step(self.q, grads)
            self.updates += 1
            self.last_loss = loss
        if self.env_steps % c.dqn_target_sync == 0:
            self.target.copy_from(self.q)

    # state -------------------------------------------------------------

    def get_state(self, include_buffer: bool = True) -> dict:
        arrays = {}
        for i, p in enumerate(self.q.params()):
            arrays[f"q.{i}"] = p.copy()
        for i, p in enumerate(self.target.params()):
            arrays[f"target.{i}"] = p.copy()
        for i, a in enumerate(self.opt.m):
            arrays[f"opt.m{i}"] = a.copy()
        for i, a in enumerate(self.opt.v):
            arrays[f"opt.v{i}"] = a.copy()
        if include_buffer:
            for k, a in self.buffer.get_arrays().items():
                arrays[f"buffer.{k}"] = a
        meta = self._meta()
        meta["opt_t"] = self.opt.t
        meta["has_buffer"] = include_buffer
        return {"meta": meta, "arrays": arrays}

    def set_state(self, state: dict) -> None:
        meta, arrays = state["meta"], state["arrays"]
        self._restore_meta(meta)
        for i, p in enumerate(self.q.params()):
            p[...] = arrays[f"q.{i}"]
        for i, p in enumerate(self.target.params()):
            p[...] = arrays[f"target.{i}"]
        for i, a in enumerate(self.opt.m):
            a[...] = arrays[f"opt.m{i}"]
        for i, a in enumerate(self.opt.v):
            a[...] = arrays[f"opt.v{i}"]
        self.opt.t = int(meta["opt_t"])
        if meta.get("has_buffer"):
            self.buffer.set_arrays({k.split(".", 1)[1]: v for k, v in arrays.items()
                                    if k.startswith("buffer.")})


class _RolloutStore:
    """Fixed-capacity on-policy rollout with a fill pointer."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.values = np.zeros(capacity)
        self.logp = np.zeros(capacity)
        self.n = 0

    @property
    def is_full(self) -> bool:
        return self.n >= self.capacity

    def push(self, obs, action, reward, done, value, logp) -> None:
        i = self.n
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.values[i] = value
        self.logp[i] = logp
        self.n += 1

    def clear(self) -> None:
        self.n = 0

    def get_arrays(self) -> Dict[str, np.ndarray]:
        n = self.n
        return {"obs": self.obs[:n].copy(), "actions": self.actions[:n].copy(),
                "rewards": self.rewards[:n].copy(), "dones": self.dones[:n].copy(),
                "values": self.values[:n].copy(), "logp": self.logp[:n].copy()}

    def set_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        n = len(arrays["actions"])
        self.obs[:n] = arrays["obs"]
        self.actions[:n] = arrays["actions"]
        self.rewards[:n] = arrays["rewards"]
        self.dones[:n] = arrays["dones"]
        self.values[:n] = arrays["values"]
        self.logp[:n] = arrays["logp"]
        self.n = n


class _ActorCriticBase(_AgentBase):
    """Shared plumbing: sampling, value stash, checkpoint arrays."""

    def __init__(self, obs_dim, n_actions, cfg: AgentSection, seed, total_steps,
                 rollout_len: int, head_gain: float = 0.01):
        super().__init__(obs_dim, n_actions, cfg, seed, total_steps)
        self.actor = Mlp((obs_dim, *cfg.hidden_sizes, n_actions), self.rng,
                         head_gain=head_gain)
        self.critic = Mlp((obs_dim, *cfg.hidden_sizes, 1), self.rng)
        lr = cfg.resolved_lr()
        self.opt_actor = Adam(self.actor, lr)
        self.opt_critic = Adam(self.critic, lr)
        self.rollout = _RolloutStore(rollout_len, obs_dim)
        self._stash: Optional[Tuple[float, float]] = None   # (logp, value) at act()

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        logits = self.actor(obs[None, :])[0]
        if greedy:
            return int(np.argmax(logits))
        logp_all = log_softmax(logits)
        probs = np.exp(logp_all)
        a = sample_categorical(self.rng, probs)
        value = float(self.critic(obs[None, :])[0, 0])
        self._stash = (float(logp_all[a]), value)
        return a

    def _value_of(self, obs: np.ndarray) -> float:
        return float(self.critic(obs[None, :])[0, 0])

    def observe(self, obs, action, reward, next_obs, terminated, truncated) -> None:
        self.env_steps += 1
        if self._stash is None:
            # greedy or external action: compute what act() would have stashed
            logp_all = log_softmax(self.actor(obs[None, :])[0])
            logp = float(logp_all[action])
            value = self._value_of(obs)
        else:
            logp, value = self._stash
            self._stash = None
        r = float(reward)
        if truncated and not terminated:
            # the episode was cut, not ended: keep the tail's value
            r += self.cfg.gamma * self._value_of(next_obs)
        self.rollout.push(obs, action, r, terminated or truncated, value, logp)
        if self.rollout.is_full:
            self._update(next_obs, terminated or truncated)
            self.rollout.clear()

    def _update(self, tail_obs, tail_done: bool) -> None:
        raise NotImplementedError

    def _net_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name, net, opt in (("actor", self.actor, self.opt_actor),
                               ("critic", self.critic, self.opt_critic)):
            for i, p in enumerate(net.params()):
                arrays[f"{name}.{i}"] = p.copy()
            for i, a in enumerate(opt.m):
                arrays[f"{name}.m{i}"] = a.copy()
            for i, a in enumerate(opt.v):
                arrays[f"{name}.v{i}"] = a.copy()
        for k, a in self.rollout.get_arrays().items():
            arrays[f"rollout.{k}"] = a
        return arrays

    def get_state(self, include_buffer: bool = True) -> dict:
        meta = self._meta()
        meta["opt_t"] = [self.opt_actor.t, self.opt_critic.t]
        return {"meta": meta, "arrays": self._net_arrays()}

    def set_state(self, state: dict) -> None:
        meta, arrays = state["meta"], state["arrays"]
        self._restore_meta(meta)
        for name, net, opt in (("actor", self.actor, self.opt_actor),
                               ("critic", self.critic, self.opt_critic)):
            for i, p in enumerate(net.params()):
                p[...] = arrays[f"{name}.{i}"]
            for i, a in enumerate(opt.m):
                a[...] = arrays[f"{name}.m{i}"]
            for i, a in enumerate(opt.v):
                a[...] = arrays[f"{name}.v{i}"]
        self.opt_actor.t, self.opt_critic.t = (int(t) for t in meta["opt_t"])
        self.rollout.set_arrays({k.split(".", 1)[1]: v for k, v in arrays.items()
                                 if k.startswith("rollout.")})


class A2cAgent(_ActorCriticBase):
    algorithm = "a2c"

    def __init__(self, obs_dim, n_actions, cfg: AgentSection, seed, total_steps):
        super().__init__(obs_dim, n_actions, cfg, seed, total_steps,
                         rollout_len=cfg.a2c_rollout)

    def ent_coef(self) -> float:
        return linear_schedule(self.cfg.ent_coef_start, self.cfg.ent_coef_end,
                               self.total_steps, self.env_steps)

    def _update(self, tail_obs, tail_done: bool) -> None:
        ro = self.rollout
        n = ro.n
        obs = ro.obs[:n]
        # one-step TD advantages from the current critic
        v = self.critic(obs)[:, 0]
        next_values = np.empty(n)
        next_values[:n - 1] = v[1:]
        next_values[n - 1] = 0.0 if tail_done else self._value_of(tail_obs)
        # inside the rollout, a done step's successor belongs to a new episode
        for t in range(n - 1):
            if ro.dones[t]:
                next_values[t] = 0.0
        nonterminal = 1.0 - ro.dones[:n].astype(float)
        targets = ro.rewards[:n] + self.cfg.gamma * next_values * nonterminal
        adv = targets - v
        if self.cfg.resolved_adv_norm() and n > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        a_loss, a_grads = a2c_actor_loss_and_grads(self.actor, obs, ro.actions[:n],
                                                   adv, self.ent_coef())
        v_loss, v_grads = value_loss_and_grads(self.critic, obs, targets)
        cap = self.cfg.resolved_grad_norm()
        clip_grads(a_grads, cap)
        clip_grads(v_grads, cap)
        self.opt_actor.step(self.actor, a_grads)
        self.opt_critic.step(self.critic, v_grads)
        self.updates += 1


class PpoAgent(_ActorCriticBase):
    algorithm = "ppo"

    def __init__(self, obs_dim, n_actions, cfg: AgentSection, seed, total_steps):
        super().__init__(obs_dim, n_actions, cfg, seed, total_steps,
                         rollout_len=cfg.ppo_rollout)

    def ent_coef(self) -> float:
        return linear_schedule(self.cfg.ent_coef_start, self.cfg.ent_coef_end,
                               self.total_steps, self.env_steps)

    def _update(self, tail_obs, tail_done: bool) -> None:
        ro = self.rollout
        n = ro.n
        last_value = 0.0 if tail_done else self._value_of(tail_obs)
        adv, returns = gae_advantages(ro.rewards[:n], ro.values[:n], ro.dones[:n],
                                      last_value, self.cfg.gamma, self.cfg.gae_lambda)
        if self.cfg.resolved_adv_norm():
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        ent = self.ent_coef()
        cap = self.cfg.resolved_grad_norm()
        mb = self.cfg.ppo_minibatch
        for _ in range(self.cfg.ppo_epochs):
            order = self.rng.permutation(n)
            for lo in range(0, n, mb):
                idx = order[lo:lo + mb]
                _, a_grads = ppo_actor_loss_and_grads(
                    self.actor, ro.obs[idx], ro.actions[idx], ro.logp[idx],
                    adv[idx], self.cfg.ppo_clip, ent)
                _, v_grads = value_loss_and_grads(self.critic, ro.obs[idx], returns[idx])
                clip_grads(a_grads, cap)
                clip_grads(v_grads, cap)
                self.opt_actor.step(self.actor, a_grads)
                self.opt_critic.step(self.critic, v_grads)
        self.updates += 1


AGENT_CLASSES = {"dqn": DqnAgent, "a2c": A2cAgent, "ppo": PpoAgent}


def make_agent(algorithm: str, obs_dim: int, n_actions: int, cfg: AgentSection,
               seed: int, total_steps: int) -> _AgentBase:
    try:
        cls = AGENT_CLASSES[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}") from None
    return cls(obs_dim, n_actions, cfg, seed, total_steps)
