"""Application requests riding the virtual links.

Requests do not compete with migrations for bandwidth in the model: each hop
is served at the rate the virtual link gets at that moment, so delivery can
be computed after the fact from the recorded rate timeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .migmodel import StepProfile

MBIT = 1e6


@dataclass(frozen=True)
class Stream:
    """Requests sent along a chain of instances."""

    name: str
    chain: tuple[str, ...]
    hops: tuple[str, ...]  # virtual link ids, one per consecutive pair
    rate: float  # requests per second
    packet: float  # mean size, bits
    sender_load: float  # mean MI per request at the first instance
    receiver_load: float  # mean MI at the last instance
    start: float = 0.0
    stop: float | None = None


@dataclass(frozen=True)
class Request:
    id: int
    stream: str
    arrival: float
    size: float
    sender_load: float
    receiver_load: float


def _positive_normal(rng: np.random.Generator, mean: float, std: float, n: int) -> np.ndarray:
    """Normal draws with non-positive samples drawn again."""
    out = rng.normal(mean, std, n)
    bad = out <= 0
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = out <= 0
    return out


def poisson_arrivals(rng: np.random.Generator, rate: float, start: float, stop: float) -> np.ndarray:
    if rate <= 0 or stop <= start:
        return np.empty(0)
    times = []
    t = start
    chunk = max(16, int(rate * (stop - start) * 1.1) + 16)
    while True:
        gaps = rng.exponential(1.0 / rate, chunk)
        ts = t + np.cumsum(gaps)
        times.append(ts[ts < stop])
        if ts[-1] >= stop:
            break
        t = ts[-1]
    return np.concatenate(times)


def generate_requests(streams: Sequence[Stream], horizon: float, seed: int) -> list[Request]:
    """Poisson arrivals per stream; sizes ~ N(p, 0.1p), loads ~ N(l, 0.2l)."""
    rng = np.random.default_rng(seed)
    out: list[Request] = []
    for s in streams:
        stop = horizon if s.stop is None else min(s.stop, horizon)
        ts = poisson_arrivals(rng, s.rate, s.start, stop)
        n = len(ts)
        sizes = _positive_normal(rng, s.packet, 0.1 * s.packet, n)
        send = _positive_normal(rng, s.sender_load, 0.2 * s.sender_load, n)
        recv = _positive_normal(rng, s.receiver_load, 0.2 * s.receiver_load, n)
        for i in range(n):
            out.append(Request(len(out), s.name, float(ts[i]), float(sizes[i]), float(send[i]), float(recv[i])))
    out.sort(key=lambda r: (r.arrival, r.id))
    return out


def transfer_time(profile: StepProfile, start: float, size: float) -> float:
    return profile.finish_time(start, size) - start


def _after_pause(t: float, windows: Sequence[Sequence[float]]) -> float:
    """Earliest time >= t at which the instance is running."""
    for a, b in windows:
        if a <= t < b:
            t = b
    return t


def deliver(
    requests: Sequence[Request],
    streams: Mapping[str, Stream],
    profiles: Mapping[str, StepProfile],
    mips: Mapping[str, float],
    vnf_time: Mapping[str, float],
    pauses: Mapping[str, Sequence[Sequence[float]]],
) -> list[dict]:
    """Timing of every request: sender compute, each hop (with VNF service
    at intermediate instances), receiver compute.  ``network`` is the time
    spent on the wire only."""
    out = []
    for r in requests:
        s = streams[r.stream]
        chain = s.chain
        t = _after_pause(r.arrival, pauses.get(chain[0], ()))
        t += r.sender_load / mips[chain[0]]
        wire = 0.0
        for i, vid in enumerate(s.hops):
            prof = profiles.get(vid)
            dt = 0.0 if prof is None else transfer_time(prof, t, r.size)
            wire += dt
            t += dt
            nxt = chain[i + 1]
            t = _after_pause(t, pauses.get(nxt, ()))
            if i + 1 < len(s.hops):
                t += vnf_time.get(nxt, 0.0)
        t += r.receiver_load / mips[chain[-1]]
        out.append({"t": r.arrival, "kind": "REQUEST", "request": r.id, "stream": r.stream,
                    "network": wire, "total": t - r.arrival, "done": t})
    return out


def measure_transmission(records: Sequence[dict]) -> float | None:
    """Mean time on the wire over delivered requests."""
    vals = [x["network"] for x in records if x.get("kind") == "REQUEST" and math.isfinite(x["network"])]
    return sum(vals) / len(vals) if vals else None
