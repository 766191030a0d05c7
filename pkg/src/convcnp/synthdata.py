"""Synthetic processes and the context/target task-sampling protocol.

Every generator is a pure function of (config, seed).  Randomness comes
from numpy's Philox counter-based bit generator, so datasets reproduce
bit-for-bit across platforms and runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import DATA_KERNELS, cholesky_with_jitter, gram


def make_rng(*key) -> np.random.Generator:
    """Deterministic Philox generator keyed by a tuple of integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass
class Task:
    """One regression episode: a context set to condition on, targets to predict.

    ``context_x``/``target_x`` have shape (n,); the y arrays have shape
    (n, dim_y).  Context and target points come from one realization of the
    underlying process and are disjoint by construction.
    """

    context_x: np.ndarray
    context_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    process: str = ""
    seed: int = 0

    @property
    def dim_y(self) -> int:
        return self.context_y.shape[1]

    def translated(self, tau: float) -> "Task":
        """The same task with all inputs shifted by ``tau``."""
        return Task(
            context_x=self.context_x + tau,
            context_y=self.context_y,
            target_x=self.target_x + tau,
            target_y=self.target_y,
            process=self.process,
            seed=self.seed,
        )

    def to_json(self) -> dict:
        return {
            "process": self.process,
            "seed": int(self.seed),
            "context_x": self.context_x.tolist(),
            "context_y": self.context_y.tolist(),
            "target_x": self.target_x.tolist(),
            "target_y": self.target_y.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Task":
        return cls(
            context_x=np.asarray(doc["context_x"], float),
            context_y=np.asarray(doc["context_y"], float),
            target_x=np.asarray(doc["target_x"], float),
            target_y=np.asarray(doc["target_y"], float),
            process=doc.get("process", ""),
            seed=int(doc.get("seed", 0)),
        )


def gp_sample(spec, xs, seed=None, rng=None) -> np.ndarray:
    """Draw one zero-mean GP realization at locations ``xs``."""
    xs = np.asarray(xs, float)
    if rng is None:
        rng = make_rng(seed)
    if xs.size == 0:
        return np.zeros(0)
    chol = cholesky_with_jitter(gram(spec, xs))
    return chol @ rng.standard_normal(len(xs))


def sawtooth_sample(xs, seed=None, rng=None) -> np.ndarray:
    """Random truncated sawtooth wave evaluated at ``xs``.

    y(t) = A/2 - (A/pi) sum_{k=1}^{K} (-1)^k sin(2 pi k f (t - s)) / k
    with amplitude A = 1, frequency f ~ U[3, 5], truncation K ~ U{10..20},
    and shift s ~ U[-5, 5], all drawn once per realization.
    """
    xs = np.asarray(xs, float)
    if rng is None:
        rng = make_rng(seed)
    freq = rng.uniform(3.0, 5.0)
    trunc = int(rng.integers(10, 21))
    shift = rng.uniform(-5.0, 5.0)
    amp = 1.0
    ks = np.arange(1, trunc + 1)
    terms = (-1.0) ** ks / ks * np.sin(
        2.0 * np.pi * np.outer(xs - shift, ks) * freq
    )
    return amp / 2.0 - amp / np.pi * terms.sum(axis=1)


@dataclass
class LVTrajectory:
    """Gillespie predator-prey sample path, including the initial state."""

    times: np.ndarray
    predators: np.ndarray
    prey: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.times) - 1

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


LV_RATES = (0.01, 0.5, 1.0, 0.01)


def lv_total_rate(theta, x: int, y: int) -> float:
    """Total event rate theta1*X*Y + theta2*X + theta3*Y + theta4*X*Y."""
    t1, t2, t3, t4 = theta
    return t1 * x * y + t2 * x + t3 * y + t4 * x * y


def gillespie_lv(
    theta=LV_RATES,
    x0: int = 50,
    y0: int = 100,
    seed=None,
    rng=None,
    max_time: float = 100.0,
    max_events: int = 10050,
) -> LVTrajectory:
    """Exact stochastic simulation of the predator-prey birth-death process.

    Events: predator birth (rate theta1*X*Y, X+1), predator death
    (theta2*X, X-1), prey birth (theta3*Y, Y+1), prey death (theta4*X*Y,
    Y-1).  Stops at max_time, max_events, or total rate zero.
    """
    theta = np.asarray(theta, float)
    if np.any(theta < 0) or np.all(theta == 0):
        raise ValueError(f"invalid rates {theta}")
    if x0 < 0 or y0 < 0:
        raise ValueError("initial populations must be non-negative")
    if rng is None:
        rng = make_rng(seed)
    t, x, y = 0.0, int(x0), int(y0)
    times, xs, ys = [t], [x], [y]
    t1, t2, t3, t4 = theta
    while len(times) - 1 < max_events:
        xy = x * y
        r1, r2, r3 = t1 * xy, t2 * x, t3 * y
        total = r1 + r2 + r3 + t4 * xy
        if total <= 0.0:
            break
        dt = -np.log(rng.random()) / total
        if t + dt > max_time:
            break
        t += dt
        u = rng.random() * total
        if u < r1:
            x += 1
        elif u < r1 + r2:
            x -= 1
        elif u < r1 + r2 + r3:
            y += 1
        else:
            y -= 1
        times.append(t)
        xs.append(x)
        ys.append(y)
    return LVTrajectory(
        times=np.asarray(times), predators=np.asarray(xs), prey=np.asarray(ys)
    )


LV_POPULATION_SCALE = 2.0 / 7.0
LV_MAX_DURATION = 100.0
LV_MAX_EVENTS = 10000
LV_TASK_POINTS = 150


class RejectedTrajectory(Exception):
    """The trajectory fails a data-quality filter; retry with a new seed."""


def lv_to_task(trajectory: LVTrajectory, seed=None, rng=None) -> Task:
    """Subsample a predator-prey trajectory into a two-channel task.

    Filters: duration > 100 time units, > 10000 events, either population
    identically zero, or fewer points than one task needs.  Populations are
    scaled by 2/7.  Context size n ~ U{3..80}; target size is 150 - n.
    Observation points are drawn uniformly without replacement from the
    event grid.
    """
    if trajectory.duration > LV_MAX_DURATION:
        raise RejectedTrajectory("duration > 100 time units")
    if trajectory.n_events > LV_MAX_EVENTS:
        raise RejectedTrajectory("> 10000 events")
    if not trajectory.predators.any() or not trajectory.prey.any():
        raise RejectedTrajectory("a population channel is entirely zero")
    n_points = len(trajectory.times)
    if n_points < LV_TASK_POINTS:
        raise RejectedTrajectory(f"fewer than {LV_TASK_POINTS} observation points")
    if rng is None:
        rng = make_rng(seed)
    n_context = int(rng.integers(3, 81))
    n_target = LV_TASK_POINTS - n_context
    idx = rng.choice(n_points, size=LV_TASK_POINTS, replace=False)
    ys = LV_POPULATION_SCALE * np.stack(
        [trajectory.predators, trajectory.prey], axis=1
    ).astype(float)
    ctx, tgt = idx[:n_context], idx[n_context:]
    return Task(
        context_x=trajectory.times[ctx],
        context_y=ys[ctx],
        target_x=trajectory.times[tgt],
        target_y=ys[tgt],
        process="lotka-volterra",
    )


GP_KINDS = tuple(DATA_KERNELS)
PROCESS_KINDS = GP_KINDS + ("sawtooth", "lotka-volterra")


@dataclass(frozen=True)
class ProcessSpec:
    """Which stochastic process to sample tasks from, and how."""

    kind: str = "eq"
    x_range: tuple = (-2.0, 2.0)
    n_context: tuple = (3, 50)  # inclusive bounds
    n_target: tuple = (3, 50)

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ValueError(f"unknown process kind '{self.kind}'")

    @classmethod
    def default_for(cls, kind: str, x_range=(-2.0, 2.0)) -> "ProcessSpec":
        if kind == "sawtooth":
            return cls(kind, x_range, (3, 100), (3, 100))
        return cls(kind, x_range)


def sample_task(process: ProcessSpec, seed: int, stats: dict | None = None) -> Task:
    """Draw one task: locations, a shared realization, and a disjoint split.

    ``stats``, if given, accumulates counters ("lv_accepted",
    "lv_rejected") so callers can report rejection rates.
    """
    if process.kind == "lotka-volterra":
        # LV has its own protocol with rejection; retry with derived seeds.
        for attempt in range(1000):
            rng = make_rng(seed, attempt)
            trajectory = gillespie_lv(rng=rng)
            try:
                task = lv_to_task(trajectory, rng=rng)
            except RejectedTrajectory:
                if stats is not None:
                    stats["lv_rejected"] = stats.get("lv_rejected", 0) + 1
                continue
            if stats is not None:
                stats["lv_accepted"] = stats.get("lv_accepted", 0) + 1
            task.seed = seed
            return task
        raise RuntimeError("Lotka-Volterra sampler: 1000 consecutive rejections")

    rng = make_rng(seed)
    n_ctx = int(rng.integers(process.n_context[0], process.n_context[1] + 1))
    n_tgt = int(rng.integers(process.n_target[0], process.n_target[1] + 1))
    lo, hi = process.x_range
    xs = rng.uniform(lo, hi, size=n_ctx + n_tgt)
    if process.kind == "sawtooth":
        ys = sawtooth_sample(xs, rng=rng)
    else:
        ys = gp_sample(DATA_KERNELS[process.kind], xs, rng=rng)
    ys = ys[:, None]
    return Task(
        context_x=xs[:n_ctx],
        context_y=ys[:n_ctx],
        target_x=xs[n_ctx:],
        target_y=ys[n_ctx:],
        process=process.kind,
        seed=seed,
    )


def sample_tasks(process: ProcessSpec, seeds) -> list[Task]:
    return [sample_task(process, int(s)) for s in seeds]
