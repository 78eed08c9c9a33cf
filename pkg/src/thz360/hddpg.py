"""Hierarchical multi-agent DDPG.

Each user owns a macro actor/critic pair (individual actor, centralized critic
over the joint macro observation and action). A joint agent owns one
primitive actor/critic pair for the beams; its critic also sees the joint
macro-action as an input feature.

All networks are recurrent. During rollouts the actors carry their hidden
state across observations; during training a sampled window of consecutive
records is replayed from a zero state to rebuild the history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import StreamingEnv, apply_prim_action
from .nn import AdamState, Network, OUNoise, adam_step, soft_update
from .replay import Batch, MacCerts, MacroRecord, PrimBuffer, PrimRecord


@dataclass(frozen=True)
class NetSizes:
    hidden: int = 32
    fc: int = 32
    out: int = 32


AGENT_FULL = NetSizes(512, 256, 256)
JOINT_FULL = NetSizes(1024, 512, 512)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    warmup_slots: int = 5200
    batch_macro: int = 512
    batch_prim: int = 512
    eps: float = 1e-2
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    gamma: float = 0.99
    ou_theta: float = 0.1
    ou_sigma: float = 0.15
    agent_net: NetSizes = AGENT_FULL
    joint_net: NetSizes = JOINT_FULL
    intr_scale: Optional[float] = None  # learner-side factor on R^intr, 1/(U*B) if None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("soft update constant must lie in (0, 1)")
        if min(self.batch_macro, self.batch_prim) < 1:
            raise ValueError("batch sizes must be positive")


def actor_layers(sz: NetSizes, n_act: int) -> list:
    return [("gru", sz.hidden), ("lrelu",), ("fc", sz.fc), ("lrelu",), ("fc", sz.out),
            ("lrelu",), ("fc", n_act), ("tanh",)]


def critic_layers(sz: NetSizes) -> list:
    return [("gru", sz.hidden), ("lrelu",), ("fc", sz.fc), ("lrelu",), ("fc", sz.out),
            ("lrelu",), ("fc", 1)]


class ActorCritic:
    """Online and target actor/critic with their optimizers and rollout state."""

    def __init__(self, actor: Network, critic: Network, lr_actor: float, lr_critic: float):
        self.actor = actor
        self.critic = critic
        self.actor_t = actor.copy()
        self.critic_t = critic.copy()
        self.opt_a = AdamState(actor.size, lr=lr_actor)
        self.opt_c = AdamState(critic.size, lr=lr_critic)
        self.h = None

    @classmethod
    def build(cls, obs_dim: int, act_dim: int, critic_in: int, sz: NetSizes,
              lr_actor: float, lr_critic: float, rng) -> "ActorCritic":
        return cls(Network(obs_dim, actor_layers(sz, act_dim), rng=rng),
                   Network(critic_in, critic_layers(sz), rng=rng), lr_actor, lr_critic)

    def reset_history(self):
        self.h = None

    def act(self, obs) -> np.ndarray:
        """Advance the actor's history by one observation and return its action."""
        y, cache = self.actor.forward(np.asarray(obs, float)[None, None], h0=self.h)
        self.h = cache.h_final
        return y[0, 0]

    def soft_update(self, eps: float):
        self.actor_t.params = soft_update(self.actor.params, self.actor_t.params, eps)
        self.critic_t.params = soft_update(self.critic.params, self.critic_t.params, eps)


# ------------------------------------------------------------ losses


def td_loss_and_grad(critic: Network, x, target, params=None):
    """Mean squared TD error of ``critic`` on sequence ``x`` (T, 1, d) and its gradient."""
    q, cache = critic.forward(x, params=params)
    resid = q[:, 0, 0] - target
    T = len(target)
    loss = float(np.mean(resid ** 2))
    dq = (2.0 / T) * resid[:, None, None]
    grad, _, _ = critic.backward(cache, dq, params=params)
    return loss, grad


def _seq(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(a.shape[0], 1, -1)


def _macro_critic_input(obs, act) -> np.ndarray:
    """(T, U, d) joint observations and (T, U, N) joint actions -> (T, 1, U*(d+N))."""
    T = obs.shape[0]
    return np.concatenate([obs.reshape(T, -1), act.reshape(T, -1)], axis=1)[:, None]


def macro_td_target(batch: Batch, u: int, agents: list, gamma: float) -> np.ndarray:
    """R^c + gamma^dtau * Q^-(h', a') with a' from every agent's target actor."""
    nxt = batch.stack("next_obs")  # (T, U, d)
    a_next = np.stack([agents[v].actor_t.forward(_seq(nxt[:, v]))[0][:, 0]
                       for v in range(len(agents))], axis=1)
    q_next = agents[u].critic_t.forward(_macro_critic_input(nxt, a_next))[0][:, 0, 0]
    rc = batch.stack("cum_reward")[:, u]
    dur = batch.stack("duration")[:, u]
    done = batch.stack("done").astype(float)
    return rc + gamma ** dur * (1.0 - done) * q_next


def update_macro_critic(u: int, batch: Batch, agents: list, gamma: float) -> float:
    ag = agents[u]
    y = macro_td_target(batch, u, agents, gamma)
    x = _macro_critic_input(batch.stack("obs"), batch.stack("act"))
    loss, grad = td_loss_and_grad(ag.critic, x, y)
    ag.critic.params = adam_step(ag.critic.params, grad, ag.opt_c)
    return loss


def actor_gradient(actor: Network, critic, obs_seq, critic_prefix, critic_suffix,
                   act_slice: slice):
    """Deterministic policy gradient of -mean Q through the critic.

    The critic input at each step is ``[prefix, actor output, suffix]``.
    Returns (flat actor gradient, mean Q).
    """
    a, a_cache = actor.forward(obs_seq)
    x = np.concatenate([critic_prefix, a, critic_suffix], axis=2)
    q, c_cache = critic.forward(x)
    T = q.shape[0]
    _, dx, _ = critic.backward(c_cache, np.full_like(q, -1.0 / T))
    g, _, _ = actor.backward(a_cache, dx[:, :, act_slice])
    return g, float(q.mean())


def update_macro_actor(u: int, batch: Batch, agents: list) -> float:
    """One ascent step for agent u; other agents' actions come from the stored tuples."""
    ag = agents[u]
    obs = batch.stack("obs")  # (T, U, d)
    act = batch.stack("act")  # (T, U, N)
    T, U, N = act.shape
    joint_obs = obs.reshape(T, 1, -1)
    before = act[:, :u].reshape(T, 1, -1)
    after = act[:, u + 1:].reshape(T, 1, -1)
    prefix = np.concatenate([joint_obs, before], axis=2)
    start = prefix.shape[2]
    g, q = actor_gradient(ag.actor, ag.critic, _seq(obs[:, u]), prefix, after,
                          slice(start, start + N))
    ag.actor.params = adam_step(ag.actor.params, g, ag.opt_a)
    return q


def prim_td_target(batch: Batch, joint: ActorCritic, gamma: float, intr_scale: float):
    nxt = _seq(batch.stack("next_obs"))
    a_next = joint.actor_t.forward(nxt)[0]
    am_next = _seq(batch.stack("next_macro_act"))
    q_next = joint.critic_t.forward(np.concatenate([nxt, a_next, am_next], axis=2))[0][:, 0, 0]
    done = batch.stack("done").astype(float)
    return intr_scale * batch.stack("reward") + gamma * (1.0 - done) * q_next


def update_prim(batch: Batch, joint: ActorCritic, gamma: float, intr_scale: float):
    """Critic step on the primitive TD error, then an actor step through the critic."""
    y = prim_td_target(batch, joint, gamma, intr_scale)
    obs = _seq(batch.stack("obs"))
    am = _seq(batch.stack("macro_act"))
    x = np.concatenate([obs, _seq(batch.stack("act")), am], axis=2)
    loss, grad = td_loss_and_grad(joint.critic, x, y)
    joint.critic.params = adam_step(joint.critic.params, grad, joint.opt_c)
    d_o = obs.shape[2]
    n_act = joint.actor.out_dim
    g, q = actor_gradient(joint.actor, joint.critic, obs, obs, am, slice(d_o, d_o + n_act))
    joint.actor.params = adam_step(joint.actor.params, g, joint.opt_a)
    return loss, q


# ------------------------------------------------------------ rollouts


@dataclass
class EpisodeStats:
    episode: int
    r_extr: float
    r_intr: float
    critic_loss: float = float("nan")
    prim_loss: float = float("nan")


@dataclass
class TrainResult:
    agents: list
    joint: ActorCritic
    curve: list = field(default_factory=list)


def build_nets(env: StreamingEnv, cfg: TrainConfig, rng):
    sc = env.sc
    U, N = sc.n_users, sc.video.n_tiles
    d_m = sc.macro_obs_dim
    agents = [ActorCritic.build(d_m, N, U * (d_m + N), cfg.agent_net, cfg.lr_actor,
                                cfg.lr_critic, rng) for _ in range(U)]
    d_p = U * sc.prim_obs_dim
    joint = ActorCritic.build(d_p, sc.prim_act_dim, d_p + sc.prim_act_dim + U * N,
                              cfg.joint_net, cfg.lr_actor, cfg.lr_critic, rng)
    return agents, joint


class RandomPolicy:
    def __init__(self, rng):
        self.rng = rng

    def macro(self, u, obs, n):
        return self.rng.uniform(-1, 1, n)

    def prim(self, obs, n):
        return self.rng.uniform(-1, 1, n)

    def reset(self):
        pass


class LearnedPolicy:
    """Actors plus optional OU exploration noise, clipped to [-1, 1]."""

    def __init__(self, agents, joint, rng=None, noise: Optional[TrainConfig] = None):
        self.agents, self.joint, self.rng = agents, joint, rng
        self.noise_m = self.noise_p = None
        if noise is not None:
            n = agents[0].actor.out_dim
            self.noise_m = [OUNoise(n, noise.ou_theta, noise.ou_sigma) for _ in agents]
            self.noise_p = OUNoise(joint.actor.out_dim, noise.ou_theta, noise.ou_sigma)

    def reset(self):
        for ag in self.agents:
            ag.reset_history()
        self.joint.reset_history()
        for nz in (self.noise_m or []):
            nz.reset()
        if self.noise_p is not None:
            self.noise_p.reset()

    def macro(self, u, obs, n):
        a = self.agents[u].act(obs)
        if self.noise_m is not None:
            a = a + self.noise_m[u].step(self.rng)
        return np.clip(a, -1.0, 1.0)

    def prim(self, obs, n):
        a = self.joint.act(obs)
        if self.noise_p is not None:
            a = a + self.noise_p.step(self.rng)
        return np.clip(a, -1.0, 1.0)


def run_episode(env: StreamingEnv, policy, macro_buf: Optional[MacCerts] = None,
                prim_buf: Optional[PrimBuffer] = None, on_slot=None, log: Optional[list] = None):
    """Play one episode; store transitions and call ``on_slot()`` after each slot."""
    sc = env.sc
    N = sc.video.n_tiles
    policy.reset()
    for u in env.reset():
        env.set_macro_action(u, policy.macro(u, env.macro_obs(u), N))
    total_e = total_i = 0.0
    op = env.prim_obs()
    while True:
        am = np.concatenate([env.users[u].macro_act for u in range(sc.n_users)])
        ap = policy.prim(op, sc.prim_act_dim)
        res = env.step(apply_prim_action(ap, sc.n_users, sc.n_aps, sc.phy))
        for u in res.requests:
            env.set_macro_action(u, policy.macro(u, env.macro_obs(u), N))
        total_e += res.r_extr
        total_i += res.r_intr
        if log is not None:
            log.append(res)
        op_next = env.prim_obs()
        am_next = np.concatenate([env.users[u].macro_act for u in range(sc.n_users)])
        if macro_buf is not None:
            macro_buf.push(MacroRecord(res.macro_obs, res.macro_act, res.next_macro_obs,
                                       res.cum_reward, res.duration, res.completed,
                                       res.done, env.episode))
        if prim_buf is not None:
            prim_buf.push(PrimRecord(op, ap, op_next, res.r_intr, am, am_next, res.done,
                                     env.episode))
        if on_slot is not None:
            on_slot()
        op = op_next
        if res.done:
            return total_e, total_i


def _try_sample(sample, *args):
    try:
        return sample(*args)
    except ValueError:
        return None


def train(env: StreamingEnv, cfg: TrainConfig, log_curve=None) -> TrainResult:
    """Warm-up with random actions, then learn every slot for ``cfg.episodes`` episodes."""
    rng = np.random.default_rng(cfg.seed)
    agents, joint = build_nets(env, cfg, rng)
    sc = env.sc
    intr_scale = cfg.intr_scale
    if intr_scale is None:
        intr_scale = 1.0 / (sc.n_users * sc.phy.bandwidth)
    macro_buf, prim_buf = MacCerts(), PrimBuffer()

    rand = RandomPolicy(rng)
    while len(prim_buf) < cfg.warmup_slots:
        run_episode(env, rand, macro_buf, prim_buf)

    losses = {"critic": [], "prim": []}

    def learn():
        idx_any = macro_buf.filter_any()
        for u in range(sc.n_users):
            b = _try_sample(macro_buf.sample, idx_any, cfg.batch_macro, rng)
            if b is not None:
                losses["critic"].append(update_macro_critic(u, b, agents, cfg.gamma))
            b = _try_sample(macro_buf.sample, macro_buf.filter_agent(u), cfg.batch_macro, rng)
            if b is not None:
                update_macro_actor(u, b, agents)
        b = _try_sample(prim_buf.sample, cfg.batch_prim, rng)
        if b is not None:
            loss, _ = update_prim(b, joint, cfg.gamma, intr_scale)
            losses["prim"].append(loss)
        for ag in agents:
            ag.soft_update(cfg.eps)
        joint.soft_update(cfg.eps)

    result = TrainResult(agents, joint)
    policy = LearnedPolicy(agents, joint, rng, noise=cfg)
    for ep in range(cfg.episodes):
        losses["critic"].clear()
        losses["prim"].clear()
        r_e, r_i = run_episode(env, policy, macro_buf, prim_buf, on_slot=learn)
        st = EpisodeStats(ep, r_e, r_i,
                          float(np.mean(losses["critic"])) if losses["critic"] else math.nan,
                          float(np.mean(losses["prim"])) if losses["prim"] else math.nan)
        result.curve.append(st)
        if log_curve is not None:
            log_curve(st)
    return result
