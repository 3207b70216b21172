"""Seeded generation of observation streams.

Streams are produced in fixed-size chunks from three separate generator
substreams (features, dense noise, corruption), so the corruption process is
oblivious by construction: regenerating with the same seed but a different
theta* changes y only through <x, theta*>. Because chunk boundaries never
move, the lazy one-sample-at-a-time path and the materialized batch path
yield bit-identical sequences for identical seeds.
"""

from __future__ import annotations

import math
from itertools import islice
from typing import Iterable, Iterator, List, Sequence

import numpy as np

from .core import RegressionModel, Sample, substream

CHUNK = 1024


def _chunk_arrays(model: RegressionModel, seed: int) -> Iterator[tuple]:
    """Infinite stream of (X, y, b) chunk arrays drawn from the model law.

    The corruption substream always burns three uniforms per sample (flag,
    component pick, position), whether or not the flag fires, keeping stream
    alignment independent of the realized flags.
    """
    design = model.design
    chol_t = design.chol.T
    rng_x = substream(seed, "x")
    rng_noise = substream(seed, "noise")
    rng_outlier = substream(seed, "outlier")
    eta = model.outliers.eta
    while True:
        x = rng_x.standard_normal((CHUNK, model.d)) @ chol_t
        eps = rng_noise.standard_normal(CHUNK) * model.sigma
        u_flag = rng_outlier.random(CHUNK)
        u_comp = rng_outlier.random(CHUNK)
        u_pos = rng_outlier.random(CHUNK)
        b = np.where(u_flag < eta, model.outliers.values_from_uniforms(u_comp, u_pos), 0.0)
        y = x @ model.theta_star + eps + b
        yield x, y, b


def stream_samples(model: RegressionModel, seed: int) -> Iterator[Sample]:
    """Lazy, unbounded sample stream; one Sample per draw."""
    for x, y, b in _chunk_arrays(model, seed):
        for i in range(CHUNK):
            yield Sample(x[i], float(y[i]), bool(b[i] != 0.0))


def sample_stream(model: RegressionModel, n: int, seed: int) -> List[Sample]:
    """First n samples of the seeded stream as a list."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    return list(islice(stream_samples(model, seed), n))


def sample_arrays(model: RegressionModel, n: int, seed: int) -> tuple:
    """First n samples as arrays (X, y, b); same values as sample_stream."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    xs, ys, bs = [], [], []
    got = 0
    for x, y, b in _chunk_arrays(model, seed):
        xs.append(x)
        ys.append(y)
        bs.append(b)
        got += CHUNK
        if got >= n:
            break
    return np.vstack(xs)[:n], np.concatenate(ys)[:n], np.concatenate(bs)[:n]


def tiered_contamination(n: int, eta: float, seed: int) -> np.ndarray:
    """Three-population outlier assignment for benchmark streams.

    Returns a length-n array of corruption values b. Scattered uniformly at
    random, floor(eta * n) entries are nonzero and split into three tiers:
    a block at 1000, an equal block at sqrt(1000), and the remainder drawn
    i.i.d. from U[1, 10]. For eta > 1/2 the two fixed tiers take floor(n/4)
    entries each; for smaller eta the corrupted budget is split in thirds,
    min(floor(n/4), floor(eta n / 3)) per fixed tier, so all three
    populations stay represented across a breakdown sweep.
    """
    if n < 4:
        raise ValueError(f"need n >= 4, got {n}")
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    total = int(math.floor(eta * n))
    if eta > 0.5:
        fixed = n // 4
    else:
        fixed = min(n // 4, int(math.floor(eta * n / 3.0)))
    rest = total - 2 * fixed

    where = substream(seed, "where").permutation(n)[:total]
    values = np.zeros(n)
    values[where[:fixed]] = 1000.0
    values[where[fixed : 2 * fixed]] = math.sqrt(1000.0)
    if rest > 0:
        values[where[2 * fixed :]] = substream(seed, "value").uniform(1.0, 10.0, rest)
    return values


def inject_outliers(samples: Sequence[Sample], b_values: np.ndarray) -> List[Sample]:
    """Add corruption values to an existing stream, updating y and the flags."""
    if len(samples) != len(b_values):
        raise ValueError(f"{len(samples)} samples but {len(b_values)} corruption values")
    out = []
    for s, b in zip(samples, b_values):
        b = float(b)
        if b == 0.0:
            out.append(s)
        else:
            out.append(Sample(s.x, s.y + b, True))
    return out


def multi_pass_stream(samples: Sequence[Sample], passes: int, seed: int) -> List[Sample]:
    """Concatenation of `passes` independent seeded permutations of the input.

    Each pass visits every sample exactly once (sampling without
    replacement), so the result has length passes * len(samples) and every
    input element appears exactly `passes` times.
    """
    if passes < 1:
        raise ValueError(f"pass count must be >= 1, got {passes}")
    samples = list(samples)
    out: List[Sample] = []
    for p in range(passes):
        perm = substream(seed, "pass", p).permutation(len(samples))
        out.extend(samples[i] for i in perm)
    return out


def dump_samples(samples: Sequence[Sample], path) -> None:
    """Write a stream to delimited text with header x_1,...,x_d,y,corrupted."""
    samples = list(samples)
    if not samples:
        raise ValueError("nothing to write")
    d = samples[0].x.size
    header = ",".join(f"x_{j + 1}" for j in range(d)) + ",y,corrupted"
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for s in samples:
            coords = ",".join(repr(float(v)) for v in s.x)
            fh.write(f"{coords},{s.y!r},{int(s.corrupted)}\n")
