"""Autoregressive policy controller and its PPO trainer.

A one-layer LSTM emits 3n softmax decisions per policy (op, magnitude,
weight for each of the n slots), feeding the embedding of each sampled
decision back in as the next input.  Training is clipped-ratio policy
gradient against an exponential-moving-average reward baseline, with
gradients accumulated by hand in reverse mode so they can be audited
against finite differences.

All parameters and activations are float64.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .policy import N_SLOTS, Policy, PolicySlot
from .transforms import TransformOp

HIDDEN_DEFAULT = 256
EMBED_DEFAULT = 32
N_MAGNITUDES = 10
N_WEIGHTS = 10

CHECKPOINT_VERSION = 1


class ControllerError(Exception):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    hidden: int = HIDDEN_DEFAULT
    embed: int = EMBED_DEFAULT
    n_ops: int = 17
    n_slots: int = N_SLOTS

    @property
    def n_steps(self) -> int:
        return 3 * self.n_slots

    def head_size(self, step: int) -> int:
        return (self.n_ops, N_MAGNITUDES, N_WEIGHTS)[step % 3]

    def embed_offset(self, step: int) -> int:
        # Row 0 is the start token; then op, magnitude, weight blocks.
        return (1, 1 + self.n_ops, 1 + self.n_ops + N_MAGNITUDES)[step % 3]

    @property
    def n_embeddings(self) -> int:
        return 1 + self.n_ops + N_MAGNITUDES + N_WEIGHTS


@dataclass
class PpoConfig:
    learning_rate: float = 1e-4
    clip_epsilon: float = 0.2
    baseline_decay: float = 0.95
    epochs_per_batch: int = 4
    batch_size: int = 8
    entropy_coefficient: float = 0.01

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ControllerError("learning_rate must be positive")
        if not 0 < self.clip_epsilon < 1:
            raise ControllerError("clip_epsilon must be in (0, 1)")
        if not 0 <= self.baseline_decay < 1:
            raise ControllerError("baseline_decay must be in [0, 1)")


@dataclass
class SampleTrace:
    decisions: np.ndarray  # 3n ints; step 3j op, 3j+1 magnitude, 3j+2 weight
    log_probs: np.ndarray  # 3n log-probabilities of the taken decisions
    reward: float | None = None


PARAM_KEYS = (
    "embed",
    "lstm_w",
    "lstm_b",
    "op_w",
    "op_b",
    "mag_w",
    "mag_b",
    "wt_w",
    "wt_b",
)


def init_params(
    rng: np.random.Generator, config: ControllerConfig = ControllerConfig()
) -> dict[str, np.ndarray]:
    """Gate weights uniform +-1/sqrt(hidden), forget bias +1, heads zeroed
    so the first samples are uniform over the search space."""
    h, e = config.hidden, config.embed
    bound = 1.0 / np.sqrt(h)
    params = {
        "embed": rng.uniform(-0.1, 0.1, size=(config.n_embeddings, e)),
        "lstm_w": rng.uniform(-bound, bound, size=(e + h, 4 * h)),
        "lstm_b": np.zeros(4 * h),
        "op_w": np.zeros((h, config.n_ops)),
        "op_b": np.zeros(config.n_ops),
        "mag_w": np.zeros((h, N_MAGNITUDES)),
        "mag_b": np.zeros(N_MAGNITUDES),
        "wt_w": np.zeros((h, N_WEIGHTS)),
        "wt_b": np.zeros(N_WEIGHTS),
    }
    params["lstm_b"][h : 2 * h] = 1.0  # forget gate
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


_HEAD_KEYS = (("op_w", "op_b"), ("mag_w", "mag_b"), ("wt_w", "wt_b"))


def _forward(
    params: dict[str, np.ndarray],
    config: ControllerConfig,
    decisions: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    keep_caches: bool = False,
):
    """Run the 3n autoregressive steps.

    With `decisions` given, teacher-forces that sequence; otherwise samples
    from each softmax using `rng`.  Returns (decisions, log_probs, caches).
    """
    h_size = config.hidden
    hidden = np.zeros(h_size)
    cell = np.zeros(h_size)
    taken = np.empty(config.n_steps, dtype=np.int64)
    log_probs = np.empty(config.n_steps)
    caches = [] if keep_caches else None
    embed_row = 0  # start token
    for step in range(config.n_steps):
        x = params["embed"][embed_row]
        a_in = np.concatenate([x, hidden])
        pre = a_in @ params["lstm_w"] + params["lstm_b"]
        i = _sigmoid(pre[:h_size])
        f = _sigmoid(pre[h_size : 2 * h_size])
        g = np.tanh(pre[2 * h_size : 3 * h_size])
        o = _sigmoid(pre[3 * h_size :])
        cell_new = f * cell + i * g
        tanh_c = np.tanh(cell_new)
        hidden_new = o * tanh_c

        wk, bk = _HEAD_KEYS[step % 3]
        logits = hidden_new @ params[wk] + params[bk]
        logp = _log_softmax(logits)
        if decisions is None:
            probs = np.exp(logp)
            u = rng.random()
            d = int(np.searchsorted(np.cumsum(probs), u))
            d = min(d, len(probs) - 1)
        else:
            d = int(decisions[step])
            if not 0 <= d < len(logp):
                raise ControllerError(
                    f"decision {d} out of range for step {step} "
                    f"(head size {len(logp)})"
                )
        taken[step] = d
        log_probs[step] = logp[d]
        if keep_caches:
            caches.append(
                {
                    "embed_row": embed_row,
                    "a_in": a_in,
                    "i": i,
                    "f": f,
                    "g": g,
                    "o": o,
                    "cell_prev": cell,
                    "tanh_c": tanh_c,
                    "hidden": hidden_new,
                    "logp": logp,
                }
            )
        embed_row = config.embed_offset(step) + d
        hidden, cell = hidden_new, cell_new
    return taken, log_probs, caches


def sample_trace(
    params: dict[str, np.ndarray],
    rng: np.random.Generator,
    config: ControllerConfig = ControllerConfig(),
) -> SampleTrace:
    """Sample a raw decision trace (any slot count; used by small test
    controllers that do not form full policies)."""
    decisions, log_probs, _ = _forward(params, config, rng=rng)
    return SampleTrace(decisions, log_probs)


def sample_policy(
    params: dict[str, np.ndarray],
    rng: np.random.Generator,
    config: ControllerConfig = ControllerConfig(),
) -> tuple[Policy, SampleTrace]:
    trace = sample_trace(params, rng, config)
    return decisions_to_policy(trace.decisions, config), trace


def decisions_to_policy(
    decisions: np.ndarray, config: ControllerConfig = ControllerConfig()
) -> Policy:
    slots = []
    for j in range(config.n_slots):
        op = TransformOp(int(decisions[3 * j]) + 1)
        magnitude = int(decisions[3 * j + 1]) + 1
        weight = int(decisions[3 * j + 2]) + 1
        slots.append(PolicySlot(op, magnitude, weight))
    return Policy(tuple(slots))


def log_prob(
    params: dict[str, np.ndarray],
    decisions: np.ndarray,
    config: ControllerConfig = ControllerConfig(),
) -> np.ndarray:
    """Per-step log-probabilities of a decision sequence under params."""
    _, log_probs, _ = _forward(params, config, decisions=np.asarray(decisions))
    return log_probs


def _zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def ppo_objective_and_grad(
    params: dict[str, np.ndarray],
    batch: list[SampleTrace],
    baseline: float,
    config: PpoConfig,
    ctl: ControllerConfig = ControllerConfig(),
    compute_grad: bool = True,
):
    """Clipped surrogate objective plus entropy bonus, averaged over the
    batch, and its analytic gradient (reverse-mode through heads, LSTM
    steps, and embeddings).  The batch runs as one vectorized sequence so
    the matmuls amortize over all traces."""
    h_size = ctl.hidden
    e_size = ctl.embed
    eps = config.clip_epsilon
    c_ent = config.entropy_coefficient
    grads = _zero_grads(params) if compute_grad else None
    n_batch = len(batch)
    inv_b = 1.0 / n_batch

    for trace in batch:
        if trace.reward is None:
            raise ControllerError("trace has no reward")
    advantages = np.array([t.reward - baseline for t in batch])
    decisions = np.stack([np.asarray(t.decisions) for t in batch])
    old_logps = np.stack([t.log_probs for t in batch])

    hidden = np.zeros((n_batch, h_size))
    cell = np.zeros((n_batch, h_size))
    rows = np.zeros(n_batch, dtype=np.int64)  # start-token embeddings
    batch_idx = np.arange(n_batch)
    caches = []
    dlogits_steps = []
    objective = 0.0
    for step in range(ctl.n_steps):
        a_in = np.concatenate([params["embed"][rows], hidden], axis=1)
        pre = a_in @ params["lstm_w"] + params["lstm_b"]
        i = _sigmoid(pre[:, :h_size])
        f = _sigmoid(pre[:, h_size : 2 * h_size])
        g = np.tanh(pre[:, 2 * h_size : 3 * h_size])
        o = _sigmoid(pre[:, 3 * h_size :])
        cell_new = f * cell + i * g
        tanh_c = np.tanh(cell_new)
        hidden_new = o * tanh_c

        wk, bk = _HEAD_KEYS[step % 3]
        logits = hidden_new @ params[wk] + params[bk]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        d = decisions[:, step]
        if np.any((d < 0) | (d >= logp.shape[1])):
            raise ControllerError(f"decision out of range for step {step}")
        ratio = np.exp(logp[batch_idx, d] - old_logps[:, step])
        surr1 = ratio * advantages
        surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
        entropy = -(p * logp).sum(axis=1)
        objective += (np.minimum(surr1, surr2).sum() + c_ent * entropy.sum()) * inv_b
        if compute_grad:
            coef = np.where(surr1 <= surr2, ratio * advantages, 0.0)
            dlogits = -coef[:, None] * p
            dlogits[batch_idx, d] += coef
            dlogits += c_ent * (-p * (logp + entropy[:, None]))
            dlogits_steps.append(dlogits * inv_b)
            caches.append(
                {
                    "rows": rows,
                    "a_in": a_in,
                    "i": i,
                    "f": f,
                    "g": g,
                    "o": o,
                    "cell_prev": cell,
                    "tanh_c": tanh_c,
                    "hidden": hidden_new,
                }
            )
        rows = ctl.embed_offset(step) + d
        hidden, cell = hidden_new, cell_new

    if not compute_grad:
        return objective, None

    dh_next = np.zeros((n_batch, h_size))
    dc_next = np.zeros((n_batch, h_size))
    for step in reversed(range(ctl.n_steps)):
        c = caches[step]
        wk, bk = _HEAD_KEYS[step % 3]
        dlogits = dlogits_steps[step]
        grads[wk] += c["hidden"].T @ dlogits
        grads[bk] += dlogits.sum(axis=0)
        dh = dlogits @ params[wk].T + dh_next
        do = dh * c["tanh_c"]
        dc = dc_next + dh * c["o"] * (1.0 - c["tanh_c"] ** 2)
        di = dc * c["g"]
        df = dc * c["cell_prev"]
        dg = dc * c["i"]
        dc_next = dc * c["f"]
        da = np.concatenate(
            [
                di * c["i"] * (1.0 - c["i"]),
                df * c["f"] * (1.0 - c["f"]),
                dg * (1.0 - c["g"] ** 2),
                do * c["o"] * (1.0 - c["o"]),
            ],
            axis=1,
        )
        grads["lstm_w"] += c["a_in"].T @ da
        grads["lstm_b"] += da.sum(axis=0)
        d_a_in = da @ params["lstm_w"].T
        np.add.at(grads["embed"], c["rows"], d_a_in[:, :e_size])
        dh_next = d_a_in[:, e_size:]

    return objective, grads


@dataclass
class AdamState:
    """First/second-moment accumulators for the ascent step."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m=_zero_grads(params), v=_zero_grads(params))

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        lr: float,
    ) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            out[k] = p + lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def ppo_update(
    params: dict[str, np.ndarray],
    batch: list[SampleTrace],
    baseline: float,
    config: PpoConfig,
    ctl: ControllerConfig = ControllerConfig(),
    opt_state: AdamState | None = None,
) -> tuple[dict[str, np.ndarray], float, AdamState]:
    """One PPO round: epochs_per_batch ascent steps on the clipped
    surrogate, then the EMA baseline update.  A non-finite gradient aborts
    the round and leaves params unchanged."""
    if not batch:
        raise ControllerError("empty PPO batch")
    if opt_state is None:
        opt_state = AdamState.fresh(params)
    new_params = params
    for _ in range(config.epochs_per_batch):
        _, grads = ppo_objective_and_grad(new_params, batch, baseline, config, ctl)
        if any(not np.all(np.isfinite(g)) for g in grads.values()):
            logging.getLogger(__name__).warning(
                "non-finite PPO gradient; update aborted, params unchanged"
            )
            return params, baseline, opt_state
        new_params = opt_state.step(new_params, grads, config.learning_rate)
    rewards = np.array([t.reward for t in batch])
    new_baseline = (
        config.baseline_decay * baseline
        + (1 - config.baseline_decay) * float(rewards.mean())
    )
    return new_params, new_baseline, opt_state


def gradient_check(
    params: dict[str, np.ndarray],
    batch: list[SampleTrace],
    baseline: float,
    config: PpoConfig,
    ctl: ControllerConfig,
    rng: np.random.Generator,
    n_samples: int = 200,
    step: float = 1e-5,
) -> float:
    """Max relative error between the analytic PPO gradient and central
    finite differences over a random parameter subset."""
    _, grads = ppo_objective_and_grad(params, batch, baseline, config, ctl)
    keys = sorted(params)
    sizes = [params[k].size for k in keys]
    total = sum(sizes)
    idx = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in np.sort(idx):
        ki = int(np.searchsorted(offsets, flat, side="right")) - 1
        key = keys[ki]
        local = int(flat - offsets[ki])
        perturbed = {k: v.copy() for k, v in params.items()}
        flat_view = perturbed[key].reshape(-1)
        orig = flat_view[local]
        flat_view[local] = orig + step
        plus, _ = ppo_objective_and_grad(
            perturbed, batch, baseline, config, ctl, compute_grad=False
        )
        flat_view[local] = orig - step
        minus, _ = ppo_objective_and_grad(
            perturbed, batch, baseline, config, ctl, compute_grad=False
        )
        numeric = (plus - minus) / (2 * step)
        analytic = grads[key].reshape(-1)[local]
        denom = max(abs(numeric) + abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def save_checkpoint(
    path,
    params: dict[str, np.ndarray],
    ctl: ControllerConfig,
    opt_state: AdamState,
    baseline: float,
    iteration: int,
    rng: np.random.Generator,
) -> None:
    arrays = {f"param_{k}": v for k, v in params.items()}
    arrays.update({f"adam_m_{k}": v for k, v in opt_state.m.items()})
    arrays.update({f"adam_v_{k}": v for k, v in opt_state.v.items()})
    meta = {
        "version": CHECKPOINT_VERSION,
        "controller": {
            "hidden": ctl.hidden,
            "embed": ctl.embed,
            "n_ops": ctl.n_ops,
            "n_slots": ctl.n_slots,
        },
        "adam_t": opt_state.t,
        "baseline": baseline,
        "iteration": iteration,
        "rng_state": rng.bit_generator.state,
    }
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (params, controller config, opt state, baseline, iteration,
    rng) with the rng restored to its saved stream position."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ControllerError(f"unsupported checkpoint version {meta['version']}")
        params = {k: data[f"param_{k}"] for k in PARAM_KEYS}
        opt_state = AdamState(
            m={k: data[f"adam_m_{k}"] for k in PARAM_KEYS},
            v={k: data[f"adam_v_{k}"] for k in PARAM_KEYS},
            t=int(meta["adam_t"]),
        )
    ctl = ControllerConfig(**meta["controller"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return params, ctl, opt_state, float(meta["baseline"]), int(meta["iteration"]), rng
