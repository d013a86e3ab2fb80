"""The policy-search loop.

Samples policies from the controller, scores each with the triplet
reward over the feature cache, and updates the controller with PPO once
per batch.  Everything is deterministic under a fixed seed; the run log
carries enough state to reproduce a run exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .controller import (
    AdamState,
    ControllerConfig,
    PpoConfig,
    init_params,
    ppo_update,
    sample_policy,
    save_checkpoint,
)
from .policy import Policy, format_policy
from .reward import RewardConfig, Triplet, triplet_reward

SMOOTHING_DECAY = 0.95
MAX_CONSECUTIVE_FAILURES = 25


class SearchError(Exception):
    pass


@dataclass
class SearchConfig:
    iterations: int = 10_000
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    checkpoint_every: int = 500


@dataclass
class SearchResult:
    best_policy: Policy
    best_reward: float
    final_sample: Policy
    iterations_run: int
    params: dict[str, np.ndarray]
    baseline: float


def run_search(
    cache,
    triplets: list[Triplet],
    config: SearchConfig,
    out_dir,
    log_path=None,
    reward_fn=None,
    progress=None,
) -> SearchResult:
    """Run the search budget and write best/final policy text files, a
    line-delimited run log, and periodic checkpoints under out_dir.

    `reward_fn(policy) -> float` overrides the triplet reward when given
    (used by synthetic benchmarks).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out_dir / "run_log.jsonl"

    rng = np.random.default_rng(config.seed)
    params = init_params(rng, config.controller)
    opt_state = AdamState.fresh(params)
    baseline = 0.0
    smoothed = None
    best_policy = None
    best_reward = -np.inf
    batch = []
    failures = 0

    if reward_fn is None:

        def reward_fn(policy: Policy) -> float:
            return triplet_reward(policy, triplets, cache, config.reward, rng)

    with open(log_path, "w", encoding="utf-8") as log:
        log.write(
            json.dumps(
                {
                    "type": "run_header",
                    "version": __version__,
                    "seed": config.seed,
                    "iterations": config.iterations,
                    "ppo": vars(config.ppo),
                    "margin": config.reward.margin,
                    "controller": vars(config.controller),
                },
                sort_keys=True,
            )
            + "\n"
        )
        policy, trace = sample_policy(params, rng, config.controller)
        final_sample = policy
        for iteration in range(1, config.iterations + 1):
            if iteration > 1:
                policy, trace = sample_policy(params, rng, config.controller)
                final_sample = policy
            try:
                reward = float(reward_fn(policy))
            except Exception as exc:  # missing key, zero norm: diagnostic abort
                raise SearchError(f"iteration {iteration}: reward failed: {exc}") from exc
            if not np.isfinite(reward):
                failures += 1
                log.write(
                    json.dumps(
                        {"type": "skip", "iteration": iteration, "reason": "non-finite reward"}
                    )
                    + "\n"
                )
                if failures >= MAX_CONSECUTIVE_FAILURES:
                    raise SearchError(
                        f"{failures} consecutive non-finite rewards; aborting"
                    )
                continue
            failures = 0
            trace.reward = reward
            batch.append(trace)
            smoothed = (
                reward
                if smoothed is None
                else SMOOTHING_DECAY * smoothed + (1 - SMOOTHING_DECAY) * reward
            )
            if reward > best_reward:
                best_reward = reward
                best_policy = policy
            log.write(
                json.dumps(
                    {
                        "type": "iteration",
                        "iteration": iteration,
                        "reward": reward,
                        "smoothed": smoothed,
                        "policy": format_policy(policy),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            if len(batch) >= config.ppo.batch_size:
                params, baseline, opt_state = ppo_update(
                    params, batch, baseline, config.ppo, config.controller, opt_state
                )
                batch = []
            if config.checkpoint_every and iteration % config.checkpoint_every == 0:
                save_checkpoint(
                    out_dir / "checkpoint.npz",
                    params,
                    config.controller,
                    opt_state,
                    baseline,
                    iteration,
                    rng,
                )
            if progress is not None:
                progress(iteration, reward, smoothed, params)

    if best_policy is None:
        # Zero-iteration budget: report the initial uniform sample.
        best_policy = final_sample
        best_reward = float("nan")

    (out_dir / "best_policy.txt").write_text(format_policy(best_policy) + "\n")
    (out_dir / "final_sample.txt").write_text(format_policy(final_sample) + "\n")
    meta = {
        "seed": config.seed,
        "iterations": config.iterations,
        "best_reward": best_reward,
        "margin": config.reward.margin,
    }
    (out_dir / "search_meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return SearchResult(
        best_policy=best_policy,
        best_reward=best_reward,
        final_sample=final_sample,
        iterations_run=config.iterations,
        params=params,
        baseline=baseline,
    )
