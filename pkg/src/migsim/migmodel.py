"""Pre-copy live migration model for a single VM/VNF.

Quantities are in bits, bits/s and seconds throughout.  Round ``i`` of the
memory copy transfers ``V_i`` bits; round 0 is the full (compressed) memory
image and every later round re-sends what was dirtied while the previous
round was on the wire.  The last round is the stop-and-copy round, during
which the instance is paused.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

DEFAULT_PRE_TIME = 0.8
DEFAULT_POST_TIME = 1.2
DEFAULT_RESUME_FRACTION = 0.25


@dataclass(frozen=True)
class MigrationSpec:
    memory: float
    dirty_rate: float
    compression: float = 1.0
    downtime_threshold: float = 0.5
    max_rounds: int = 30
    pre_time: float = DEFAULT_PRE_TIME
    post_time: float = DEFAULT_POST_TIME
    resume_time: float | None = None

    def __post_init__(self) -> None:
        if not self.memory > 0:
            raise ValueError(f"memory must be positive, got {self.memory}")
        if self.dirty_rate < 0:
            raise ValueError(f"dirty_rate must be >= 0, got {self.dirty_rate}")
        if not 0 < self.compression <= 1:
            raise ValueError(f"compression must be in (0, 1], got {self.compression}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        for name in ("downtime_threshold", "pre_time", "post_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.resume_time is None:
            object.__setattr__(self, "resume_time", DEFAULT_RESUME_FRACTION * self.post_time)
        elif not 0 <= self.resume_time <= self.post_time:
            raise ValueError("resume_time must lie in [0, post_time]")

    @classmethod
    def from_dirty_factor(cls, memory: float, factor: float, **kwargs) -> "MigrationSpec":
        """Build a spec whose dirty rate is ``factor * memory`` bits/s."""
        return cls(memory=memory, dirty_rate=factor * memory, **kwargs)

    @property
    def image(self) -> float:
        """Compressed memory image, i.e. the round-0 volume."""
        return self.compression * self.memory

    @property
    def effective_dirty_rate(self) -> float:
        return self.compression * self.dirty_rate

    def sigma(self, bandwidth: float) -> float:
        return self.effective_dirty_rate / bandwidth


@dataclass(frozen=True)
class MigrationEstimate:
    rounds: int
    mem_time: float
    downtime: float
    transferred: float
    total_time: float
    converged: bool
    stop_copy_volume: float
    stop_copy_time: float
    capped: bool
    round_volumes: tuple[float, ...] = field(default=(), repr=False)


class StepProfile:
    """Piecewise-constant bandwidth over time.

    ``rates[i]`` applies on ``[breaks[i], breaks[i+1])`` and the last rate
    holds forever.  Time is measured from the start of the memory copy.
    """

    def __init__(self, breaks: Sequence[float], rates: Sequence[float]):
        if len(breaks) != len(rates) or not breaks:
            raise ValueError("breaks and rates must be non-empty and of equal length")
        if breaks[0] != 0:
            raise ValueError("first break must be 0")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise ValueError("breaks must be strictly increasing")
        if any(r < 0 for r in rates):
            raise ValueError("rates must be non-negative")
        self.breaks = list(breaks)
        self.rates = list(rates)

    @classmethod
    def constant(cls, rate: float) -> "StepProfile":
        return cls([0.0], [rate])

    def rate_at(self, t: float) -> float:
        return self.rates[bisect.bisect_right(self.breaks, t) - 1]

    def __call__(self, t: float) -> float:
        return self.rate_at(t)

    def finish_time(self, start: float, volume: float) -> float:
        """Time at which ``volume`` bits started at ``start`` are delivered."""
        if volume <= 0:
            return start
        i = bisect.bisect_right(self.breaks, start) - 1
        t = start
        left = volume
        while True:
            rate = self.rates[i]
            end = self.breaks[i + 1] if i + 1 < len(self.breaks) else math.inf
            if rate > 0:
                if end == math.inf or left <= rate * (end - t):
                    return t + left / rate
                left -= rate * (end - t)
            elif end == math.inf:
                return math.inf
            t = end
            i += 1


Profile = Union[float, StepProfile, Callable[[float], float]]


def _as_profile(profile: Profile) -> StepProfile:
    if isinstance(profile, StepProfile):
        return profile
    if isinstance(profile, (int, float)):
        return StepProfile.constant(float(profile))
    raise TypeError("bandwidth profile must be a number or a StepProfile")


def round_volume(spec: MigrationSpec, round_index: int, prev_round_duration: float = 0.0) -> float:
    """Bits sent in ``round_index`` given how long the previous round took."""
    if round_index < 0:
        raise ValueError("round_index must be >= 0")
    if round_index == 0:
        return spec.image
    return spec.compression * prev_round_duration * spec.dirty_rate


def is_convergent(spec: MigrationSpec, bandwidth: float) -> bool:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return spec.effective_dirty_rate < bandwidth


def _finish(spec, rounds, volumes, durations, converged, capped) -> MigrationEstimate:
    mem_time = sum(durations)
    stop_time = durations[-1] if volumes[-1] > 0 else 0.0
    return MigrationEstimate(
        rounds=rounds,
        mem_time=mem_time,
        downtime=stop_time + spec.resume_time,
        transferred=sum(volumes),
        total_time=spec.pre_time + mem_time + spec.post_time,
        converged=converged,
        stop_copy_volume=volumes[-1],
        stop_copy_time=stop_time,
        capped=capped,
        round_volumes=tuple(volumes),
    )


def simulate_rounds(spec: MigrationSpec, profile: Profile) -> MigrationEstimate:
    """Iterate the copy rounds against a (possibly time-varying) bandwidth.

    The stop-and-copy decision for a round uses the bandwidth available when
    that round starts.  ``converged`` is False as soon as any round's mean
    rate fails to exceed the compressed dirty rate.
    """
    prof = _as_profile(profile)
    volumes: list[float] = []
    durations: list[float] = []
    converged = True
    t = 0.0
    i = 0
    volume = spec.image
    while True:
        rate = prof.rate_at(t)
        if spec.dirty_rate == 0:
            stop = i > 0
        else:
            stop = volume <= spec.downtime_threshold * rate or i == spec.max_rounds
        end = prof.finish_time(t, volume)
        if end == math.inf:
            raise ValueError(f"bandwidth profile never delivers round {i}")
        duration = end - t
        if volume > 0 and volume <= spec.effective_dirty_rate * duration:
            converged = False
        volumes.append(volume)
        durations.append(duration)
        if stop:
            break
        volume = round_volume(spec, i + 1, duration)
        t = end
        i += 1
    if spec.dirty_rate == 0:
        # only the full copy is counted; the empty stop-and-copy is round 0's tail
        return _finish(spec, 0, volumes, durations, converged, False)
    capped = i == spec.max_rounds and volume > spec.downtime_threshold * prof.rate_at(t)
    return _finish(spec, i, volumes, durations, converged, capped)


def round_count(spec: MigrationSpec, bandwidth: float) -> int:
    """Index of the stop-and-copy round under constant bandwidth (sigma < 1)."""
    sigma = spec.sigma(bandwidth)
    thd = spec.downtime_threshold * bandwidth
    image = spec.image
    if image <= thd:
        return 0
    if sigma == 0:
        # dirty rate underflowed: round 1 is empty
        return 1
    n = max(0, math.ceil(math.log(thd / image) / math.log(sigma)))
    # guard the ceil against log rounding at exact boundaries
    while n > 0 and image * sigma ** (n - 1) <= thd:
        n -= 1
    while n < spec.max_rounds and image * sigma**n > thd:
        n += 1
    return min(n, spec.max_rounds)


def estimate_constant_rate(spec: MigrationSpec, bandwidth: float) -> MigrationEstimate:
    """Closed-form estimate under a constant bandwidth.

    Falls back to round iteration when sigma >= 1, where the geometric sum
    is singular or diverging.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    L = float(bandwidth)
    image = spec.image
    if spec.dirty_rate == 0:
        return _finish(spec, 0, [image, 0.0], [image / L, 0.0], True, False)
    sigma = spec.sigma(L)
    if sigma >= 1:
        return simulate_rounds(spec, L)
    n = round_count(spec, L)
    geom = (1 - sigma ** (n + 1)) / (1 - sigma)
    mem_time = image / L * geom
    last = image * sigma**n
    capped = n == spec.max_rounds and last > spec.downtime_threshold * L
    volumes = tuple(image * sigma**i for i in range(n + 1))
    return MigrationEstimate(
        rounds=n,
        mem_time=mem_time,
        downtime=last / L + spec.resume_time,
        transferred=image * geom,
        total_time=spec.pre_time + mem_time + spec.post_time,
        converged=True,
        stop_copy_volume=last,
        stop_copy_time=last / L,
        capped=capped,
        round_volumes=volumes,
    )
