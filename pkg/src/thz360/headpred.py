"""GRU encoder/decoder head-movement predictor with personalized federated training.

Angles enter the network as (theta, sin phi, cos phi). The network emits an
offset (d_theta, d_phi) from the last observed pose, and the loss compares
longitudes by shortest arc, so the 0/2*pi seam never produces a jump.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import great_circle
from .nn import Network
from .phy import wrap_pi


@dataclass(frozen=True)
class HeadModelConfig:
    q_hist: int = 90
    q_pred: int = 30
    hidden: int = 64
    n_layers: int = 4

    @staticmethod
    def pred_length(frames_per_chunk: int, max_buffer_threshold: int, chunk_slots: int) -> int:
        return frames_per_chunk + (frames_per_chunk * max_buffer_threshold) // chunk_slots


@dataclass(frozen=True)
class PflConfig:
    rounds: int = 50
    local_iters: int = 3
    lr: float = 0.01
    finetune_steps: int = 10
    finetune_lr: float | None = None


def encode_angles(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    return np.stack([seq[..., 0], np.sin(seq[..., 1]), np.cos(seq[..., 1])], axis=-1)


class HeadModel:
    """Encoder GRU stack, decoder GRU stack and a per-user FC head.

    ``gru_params`` (encoder + decoder) is the shared part, ``fc_params`` the
    personal head.
    """

    def __init__(self, cfg: HeadModelConfig, rng=None, gru_params=None, fc_params=None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng()
        stack = [("gru", cfg.hidden)] * cfg.n_layers
        self.enc = Network(3, stack, rng=rng)
        self.dec = Network(3, stack, rng=rng)
        self.head = Network(cfg.hidden, [("fc", 2)], rng=rng)
        if gru_params is not None:
            self.gru_params = gru_params
        if fc_params is not None:
            self.fc_params = fc_params

    @property
    def gru_params(self) -> np.ndarray:
        return np.concatenate([self.enc.params, self.dec.params])

    @gru_params.setter
    def gru_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        self.enc.params = flat[:self.enc.size].copy()
        self.dec.params = flat[self.enc.size:].copy()

    @property
    def fc_params(self) -> np.ndarray:
        return self.head.params.copy()

    @fc_params.setter
    def fc_params(self, flat):
        self.head.params = np.asarray(flat, dtype=float).copy()

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.gru_params, self.fc_params])

    @params.setter
    def params(self, flat):
        n = self.enc.size + self.dec.size
        self.gru_params = flat[:n]
        self.fc_params = flat[n:]

    def copy(self) -> "HeadModel":
        return HeadModel(self.cfg, np.random.default_rng(0), self.gru_params, self.fc_params)

    def _run(self, hist):
        x = encode_angles(hist).transpose(1, 0, 2)  # (Qh, S, 3)
        _, c_enc = self.enc.forward(x)
        dec_in = np.repeat(x[-1:], self.cfg.q_pred, axis=0)
        hd, c_dec = self.dec.forward(dec_in, h0=c_enc.h_final)
        out, c_head = self.head.forward(hd)
        return out, (c_enc, c_dec, c_head, x.shape)

    @staticmethod
    def _decode(out, hist):
        last = np.asarray(hist, dtype=float)[:, -1, :]  # (S, 2)
        return out + last[None]  # (Qp, S, 2)

    def raw_predict(self, hist) -> np.ndarray:
        """Unclamped (S, Qp, 2) angles for a batch of histories (S, Qh, 2)."""
        out, _ = self._run(hist)
        return self._decode(out, hist).transpose(1, 0, 2)

    def loss_and_grads(self, hist, target):
        """Head loss on a batch and its gradient w.r.t. (gru_params, fc_params)."""
        out, (c_enc, c_dec, c_head, xshape) = self._run(hist)
        tgt = np.asarray(target, dtype=float).transpose(1, 0, 2)
        S = tgt.shape[1]
        pred = self._decode(out, hist)
        e_th = pred[..., 0] - tgt[..., 0]
        e_ph = wrap_pi(pred[..., 1] - tgt[..., 1])
        loss = float(np.sum(e_th ** 2 + e_ph ** 2) / S)
        dout = np.stack([2 * e_th / S, 2 * e_ph / S], axis=-1)
        g_fc, d_hd, _ = self.head.backward(c_head, dout)
        g_dec, _, dh0 = self.dec.backward(c_dec, d_hd)
        zeros = np.zeros(xshape[:2] + (self.cfg.hidden,))
        g_enc, _, _ = self.enc.backward(c_enc, zeros, dh_final=dh0)
        return loss, np.concatenate([g_enc, g_dec]), g_fc


def predict(model: HeadModel, hist) -> np.ndarray:
    hist = np.asarray(hist, dtype=float)
    if hist.shape != (model.cfg.q_hist, 2):
        raise ValueError(f"history must have shape ({model.cfg.q_hist}, 2)")
    pred = model.raw_predict(hist[None])[0]
    pred[:, 0] = np.clip(pred[:, 0], 0.0, np.pi)
    pred[:, 1] = np.mod(pred[:, 1], 2 * np.pi)
    return pred


def head_loss(preds, actuals) -> float:
    """Mean over sequences of the squared (shortest-arc) sequence distance."""
    p = np.asarray(preds, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if p.shape != a.shape:
        raise ValueError("prediction and target shapes differ")
    if p.ndim == 2:
        p, a = p[None], a[None]
    err = (p[..., 0] - a[..., 0]) ** 2 + wrap_pi(p[..., 1] - a[..., 1]) ** 2
    return float(err.sum(axis=1).mean())


# --------------------------------------------------------------------- data


@dataclass
class UserData:
    hist: np.ndarray  # (S, Qh, 2)
    target: np.ndarray  # (S, Qp, 2)
    n_chunks: int = 1


@dataclass
class TraceDataset:
    users: list = field(default_factory=list)  # list[UserData]

    def weights(self) -> np.ndarray:
        counts = np.array([u.n_chunks for u in self.users], dtype=float)
        return counts / counts.sum()


@dataclass(frozen=True)
class Persona:
    attractor: tuple = (np.pi / 2, 0.0)
    drift: float = 0.05
    noise: float = 0.02
    spin: float = 0.0


def generate_traces(personas, n_videos: int, n_frames: int, rng) -> dict:
    """Head trajectories: a noisy walk pulled towards each persona's attractor.

    Returns ``{(user, video): (n_frames, 2)}``. Video ``v`` shifts every
    attractor's longitude by a shared content offset so that videos differ.
    """
    out = {}
    video_shift = rng.uniform(-0.5, 0.5, size=n_videos)
    for u, p in enumerate(personas):
        for v in range(n_videos):
            a_th = float(np.clip(p.attractor[0], 0.1, np.pi - 0.1))
            a_ph = p.attractor[1] + video_shift[v]
            th = float(np.clip(a_th + rng.normal(0, 0.3), 0.1, np.pi - 0.1))
            ph = float(a_ph + rng.normal(0, 0.6))
            traj = np.empty((n_frames, 2))
            for k in range(n_frames):
                traj[k] = th, np.mod(ph, 2 * np.pi)
                th = th + p.drift * (a_th - th) + p.noise * rng.standard_normal()
                ph = ph + p.drift * wrap_pi(a_ph - ph) + p.spin + p.noise * rng.standard_normal()
                th = float(np.clip(th, 0.0, np.pi))
            out[(u, v)] = traj
    return out


def windows(traj, q_hist: int, q_pred: int, stride: int):
    traj = np.asarray(traj, dtype=float)
    starts = range(0, len(traj) - q_hist - q_pred + 1, stride)
    hist = np.array([traj[s:s + q_hist] for s in starts])
    tgt = np.array([traj[s + q_hist:s + q_hist + q_pred] for s in starts])
    return hist, tgt


def build_dataset(traces: dict, users, videos, cfg: HeadModelConfig, stride: int,
                  frames_per_chunk: int = 30) -> TraceDataset:
    ds = TraceDataset()
    for u in users:
        hs, ts, chunks = [], [], 0
        for v in videos:
            traj = traces[(u, v)]
            h, t = windows(traj, cfg.q_hist, cfg.q_pred, stride)
            if len(h):
                hs.append(h)
                ts.append(t)
            chunks += max(len(traj) // frames_per_chunk, 1)
        ds.users.append(UserData(np.concatenate(hs), np.concatenate(ts), chunks))
    return ds


def mean_angular_separation(traj_a, traj_b) -> float:
    a, b = np.asarray(traj_a), np.asarray(traj_b)
    return float(np.mean(great_circle(a[:, 0], a[:, 1], b[:, 0], b[:, 1])))


# ----------------------------------------------------------------- training


def local_update(model: HeadModel, gru_params, data: UserData, iters: int, lr: float):
    """``iters`` full-batch gradient steps on the shared part; the head stays fixed."""
    if iters < 1:
        raise ValueError("need at least one local iteration")
    model.gru_params = gru_params
    w = model.gru_params
    for _ in range(iters):
        _, g, _ = model.loss_and_grads(data.hist, data.target)
        w = w - lr * g
        model.gru_params = w
    return w


def aggregate(params_list, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if len(params_list) != len(alpha):
        raise ValueError("one aggregation weight per user required")
    if not np.isclose(alpha.sum(), 1.0):
        raise ValueError("aggregation weights must sum to one")
    out = np.zeros_like(np.asarray(params_list[0], dtype=float))
    for a, p in zip(alpha, params_list):
        out = out + a * np.asarray(p, dtype=float)
    return out


def finetune(model: HeadModel, data: UserData, steps: int, lr: float) -> HeadModel:
    for _ in range(steps):
        _, g_gru, g_fc = model.loss_and_grads(data.hist, data.target)
        model.gru_params = model.gru_params - lr * g_gru
        model.fc_params = model.fc_params - lr * g_fc
    return model


def train_pfl(cfg: PflConfig, data: TraceDataset, init: HeadModel, history: list | None = None):
    """Federated rounds on the shared GRU part, then per-user full fine-tuning.

    ``init`` supplies w^GRU_0 and w^FC_0. If ``history`` is a list, the
    aggregated shared parameters after each round are appended to it, and
    the users' heads before fine-tuning are appended as a final entry.
    """
    alpha = data.weights()
    w_gru = init.gru_params
    w_fc0 = init.fc_params
    users = [init.copy() for _ in data.users]
    for m in users:
        m.fc_params = w_fc0
    for _ in range(cfg.rounds):
        updated = [local_update(m, w_gru, d, cfg.local_iters, cfg.lr)
                   for m, d in zip(users, data.users)]
        w_gru = aggregate(updated, alpha)
        if history is not None:
            history.append(w_gru.copy())
    if history is not None:
        history.append([m.fc_params for m in users])
    lr = cfg.finetune_lr if cfg.finetune_lr is not None else cfg.lr
    out = []
    for m, d in zip(users, data.users):
        m.gru_params = w_gru
        out.append(finetune(m, d, cfg.finetune_steps, lr))
    return out


def train_fedavg(cfg: PflConfig, data: TraceDataset, init: HeadModel) -> HeadModel:
    """Same rounds, but the full model is averaged and nobody fine-tunes."""
    alpha = data.weights()
    w = init.params
    work = init.copy()
    for _ in range(cfg.rounds):
        updated = []
        for d in data.users:
            work.params = w
            for _ in range(cfg.local_iters):
                _, g_gru, g_fc = work.loss_and_grads(d.hist, d.target)
                work.params = work.params - cfg.lr * np.concatenate([g_gru, g_fc])
            updated.append(work.params)
        w = aggregate(updated, alpha)
    work.params = w
    return work


def eval_loss(model: HeadModel, data: UserData) -> float:
    return head_loss(model.raw_predict(data.hist), data.target)
