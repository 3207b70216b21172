"""Streaming SGD on the absolute loss, with squared and Huber variants.

The estimator never solves a system or stores the data: each observation
updates the iterate once and is discarded. For the absolute loss the update
is theta += gamma_n sgn(y - <x, theta>) x, so its size is gamma_n ||x||
regardless of how wild the response is; that single fact is the robustness
mechanism. Iterates are averaged online and errors are checkpointed against
the model known to the harness (the estimator itself never reads theta* or H).
"""

from __future__ import annotations

import math
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .core import (
    CONSTANT,
    Huber,
    L1,
    L2,
    Loss,
    RegressionModel,
    RunRecord,
    Sample,
    SgdState,
    StepSchedule,
    loss_label,
    schedule_gamma,
    short_digest,
)
from .datagen import stream_samples


def default_gamma0(model: RegressionModel) -> float:
    """Practical step scale 1 / trace(H)."""
    return 1.0 / model.design.r2


def default_checkpoints(n_steps: int, ratio: float = 1.25) -> np.ndarray:
    """Geometric checkpoint grid within [1, n_steps], always ending at n_steps."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if ratio <= 1.0:
        raise ValueError(f"checkpoint ratio must be > 1, got {ratio}")
    marks = set()
    v = 1.0
    while v <= n_steps:
        marks.add(int(math.ceil(v)))
        v *= ratio
    marks.add(n_steps)
    return np.array(sorted(marks), dtype=np.int64)


def _apply_update(state: SgdState, x: np.ndarray, r: float, gamma: float) -> None:
    """One update at step index state.n + 1, given the residual r.

    The running average is refreshed from the pre-update iterate, matching
    the convention that theta_bar after n steps is the mean of
    theta_0 .. theta_{n-1}. sgn(0) is taken to be 0 so a zero residual
    leaves the iterate unchanged under the absolute loss.
    """
    k = state.n + 1
    theta = state.theta
    state.theta_bar += (theta - state.theta_bar) / k
    loss = state.loss
    if isinstance(loss, L1):
        if r > 0.0:
            theta += gamma * x
        elif r < 0.0:
            theta -= gamma * x
    elif isinstance(loss, L2):
        theta += (gamma * r) * x
    elif isinstance(loss, Huber):
        if abs(r) <= loss.tau:
            theta += (gamma * r) * x
        elif r > 0.0:
            theta += (gamma * loss.tau) * x
        else:
            theta -= (gamma * loss.tau) * x
    else:
        raise TypeError(f"not a loss: {loss!r}")
    state.n = k


def sgd_step(state: SgdState, sample: Sample, schedule: StepSchedule) -> SgdState:
    """Advance the state by one observation; mutates and returns `state`."""
    r = sample.y - float(sample.x @ state.theta)
    _apply_update(state, sample.x, r, schedule_gamma(schedule, state.n + 1))
    return state


def _validated_checkpoints(checkpoint_plan, n_steps: int) -> np.ndarray:
    if checkpoint_plan is None:
        return default_checkpoints(n_steps)
    plan = np.asarray(checkpoint_plan, dtype=np.int64)
    if plan.size == 0:
        raise ValueError("checkpoint plan is empty")
    if np.any(np.diff(plan) <= 0):
        raise ValueError("checkpoint plan must be strictly increasing")
    if plan[0] < 1 or plan[-1] > n_steps:
        raise ValueError(f"checkpoints must lie in [1, {n_steps}], got [{plan[0]}, {plan[-1]}]")
    return plan


def run(
    source: Union[RegressionModel, Iterable[Sample]],
    loss: Loss,
    schedule: StepSchedule,
    n_steps: int,
    checkpoint_plan=None,
    seed: int = 0,
    *,
    model: Optional[RegressionModel] = None,
    theta0=None,
    record_iterates: bool = False,
) -> RunRecord:
    """Consume a stream one observation at a time and checkpoint the errors.

    `source` is either a model (a fresh seeded stream is generated from it)
    or an existing iterable of samples, in which case `model` must be given
    so errors can be measured. Deterministic: identical arguments produce a
    bit-identical record.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if isinstance(source, RegressionModel):
        if model is None:
            model = source
        stream = stream_samples(source, seed)
    else:
        if model is None:
            raise ValueError("a reference model is required when running from a raw stream")
        stream = iter(source)

    plan = _validated_checkpoints(checkpoint_plan, n_steps)
    theta_star = model.theta_star
    h = model.design.h
    theta0 = np.zeros(model.d) if theta0 is None else np.asarray(theta0, dtype=float).reshape(-1)
    if theta0.size != model.d:
        raise ValueError(f"theta0 has dimension {theta0.size}, model has {model.d}")

    state = SgdState.start(theta0, loss)
    iterates = np.empty((n_steps, model.d)) if record_iterates else None
    err_h = np.empty(plan.size)
    err_2 = np.empty(plan.size)
    err_last_h = np.empty(plan.size)
    next_cp = 0
    min_abs_r = math.inf

    for k in range(1, n_steps + 1):
        try:
            sample = next(stream)
        except StopIteration:
            raise ValueError(f"stream ended after {k - 1} samples, {n_steps} steps requested")
        if record_iterates:
            iterates[k - 1] = state.theta
        r = sample.y - float(sample.x @ state.theta)
        if abs(r) < min_abs_r:
            min_abs_r = abs(r)
        _apply_update(state, sample.x, r, schedule_gamma(schedule, k))
        if next_cp < plan.size and k == plan[next_cp]:
            delta = state.theta_bar - theta_star
            err_h[next_cp] = float(delta @ h @ delta)
            err_2[next_cp] = float(delta @ delta)
            delta_last = state.theta - theta_star
            err_last_h[next_cp] = float(delta_last @ h @ delta_last)
            next_cp += 1

    digest = short_digest(
        [
            "run",
            loss_label(loss),
            schedule.kind,
            schedule.gamma0.hex(),
            n_steps,
            seed,
            model.fingerprint(),
            theta0,
            plan,
        ]
    )
    return RunRecord(
        steps=plan,
        err_h=err_h,
        err_2=err_2,
        err_last_h=err_last_h,
        config_digest=digest,
        seed=int(seed),
        theta_bar=state.theta_bar.copy(),
        theta_last=state.theta.copy(),
        min_abs_residual=float(min_abs_r),
        iterates=iterates,
    )


def oracle_ls_run(
    samples: Sequence[Sample],
    gamma0: float,
    n_steps: Optional[int] = None,
    *,
    model: RegressionModel,
    checkpoint_plan=None,
    theta0=None,
) -> RunRecord:
    """Clean-data baseline: constant-step averaged squared-loss SGD.

    Every sample flagged as corrupted is discarded before it reaches the
    estimator; this is the one consumer allowed to read the flags. With
    n_steps omitted, all clean samples are consumed.
    """
    samples = list(samples)
    clean = [s for s in samples if not s.corrupted]
    if not clean:
        raise ValueError(f"all {len(samples)} samples are corrupted, nothing to run on")
    if n_steps is None:
        n_steps = len(clean)
    elif len(clean) < n_steps:
        raise ValueError(
            f"only {len(clean)} clean samples among {len(samples)}, {n_steps} steps requested"
        )
    schedule = StepSchedule(gamma0, CONSTANT)
    record = run(
        clean,
        L2(),
        schedule,
        n_steps,
        checkpoint_plan,
        seed=0,
        model=model,
        theta0=theta0,
    )
    digest = short_digest(
        ["oracle_ls", gamma0, n_steps, len(samples), len(clean), model.fingerprint()]
    )
    return RunRecord(
        steps=record.steps,
        err_h=record.err_h,
        err_2=record.err_2,
        err_last_h=record.err_last_h,
        config_digest=digest,
        seed=record.seed,
        theta_bar=record.theta_bar,
        theta_last=record.theta_last,
        min_abs_residual=record.min_abs_residual,
        iterates=record.iterates,
    )
