"""Seeded sensor simulation.

Every (sensor kind, vehicle, target) triple draws from its own counter-based
Philox substream keyed by the run seed, so enabling or disabling one sensor
never shifts the noise seen by another.
"""
from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from enum import IntEnum
from itertools import combinations

import numpy as np

from .core_types import IVX, IVY, wrap_angle
from .models import RANGE_EPSILON
from .scenarios import ScenarioConfig, Truth

INIT_STREAM = 100
TRUTH_STREAM = 101


class EventKind(IntEnum):
    IMU = 0
    GPS = 1
    ODOM = 2
    # Within a tick events replay in kind order: every private update
    # (absolute measurements) precedes the relative updates.
    UWB_LANDMARK = 3
    UWB_V2V = 4

    @property
    def label(self) -> str:
        return self.name.lower()


class RngStream:
    """Deterministic, splittable normal-variate stream.

    The underlying bit generator is Philox keyed from ``SeedSequence(seed,
    spawn_key=key)``; children extend the key and are independent of the
    parent's draw position.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def sample_gaussian(stream: RngStream, sigma: float, size=None):
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return sigma * stream.standard_normal(size)


@dataclass(frozen=True)
class MeasurementEvent:
    t: float
    kind: EventKind
    source: int
    target: int          # -1 when not applicable
    value: tuple
    truth: tuple
    tick: int = 0


_WIDTH = {EventKind.IMU: 2, EventKind.GPS: 2, EventKind.ODOM: 1,
          EventKind.UWB_LANDMARK: 1, EventKind.UWB_V2V: 1}


class EventLog(Sequence):
    """Columnar, totally ordered event list for one run.

    Columns: ``tick``, ``kind``, ``source``, ``target`` (ints) and ``value``,
    ``truth`` as ``(n, 2)`` floats (unused second column is NaN).
    """

    def __init__(self, tick, kind, source, target, value, truth, dt):
        order = np.lexsort((target, source, kind, tick))
        self.tick = np.ascontiguousarray(tick[order], dtype=np.int64)
        self.kind = np.ascontiguousarray(kind[order], dtype=np.int32)
        self.source = np.ascontiguousarray(source[order], dtype=np.int32)
        self.target = np.ascontiguousarray(target[order], dtype=np.int32)
        self.value = np.ascontiguousarray(value[order], dtype=float)
        self.truth = np.ascontiguousarray(truth[order], dtype=float)
        self.dt = dt

    def __len__(self):
        return self.tick.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        kind = EventKind(int(self.kind[i]))
        w = _WIDTH[kind]
        return MeasurementEvent(
            t=float(self.tick[i] * self.dt), kind=kind,
            source=int(self.source[i]), target=int(self.target[i]),
            value=tuple(float(v) for v in self.value[i, :w]),
            truth=tuple(float(v) for v in self.truth[i, :w]),
            tick=int(self.tick[i]),
        )

    def count(self, kind: EventKind) -> int:
        return int(np.count_nonzero(self.kind == int(kind)))

    def without(self, *kinds: EventKind) -> "EventLog":
        keep = ~np.isin(self.kind, [int(k) for k in kinds])
        return EventLog(self.tick[keep], self.kind[keep], self.source[keep],
                        self.target[keep], self.value[keep], self.truth[keep], self.dt)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "kind", "source", "target", "value0", "value1", "truth0", "truth1"])
            for i in range(len(self)):
                w.writerow([
                    repr(float(self.tick[i] * self.dt)), EventKind(int(self.kind[i])).label,
                    int(self.source[i]), int(self.target[i]),
                    *(repr(float(v)) for v in self.value[i]),
                    *(repr(float(v)) for v in self.truth[i]),
                ])


def disturb_truth(nominal: Truth, cfg: ScenarioConfig, stream: RngStream) -> Truth:
    """Realise the velocity part of the process noise on a nominal trajectory.

    Each tick every vehicle's velocity receives an independent perturbation
    drawn from the vehicle-frame velocity block of ``noise.process_r``
    (forward, lateral), rotated by the true heading; positions integrate the
    perturbed velocity. With that block zero the nominal truth is returned.
    """
    block = cfg.noise.process_r[IVX:IVY + 1, IVX:IVY + 1]
    if not np.any(block):
        return nominal
    lam, vec = np.linalg.eigh(block)
    root = vec * np.sqrt(np.clip(lam, 0.0, None))
    states = nominal.states.copy()
    K1, N = states.shape[:2]
    for v in range(N):
        w = stream.child(TRUTH_STREAM, v).standard_normal((K1, 2)) @ root.T
        c, s = np.cos(states[:, v, 2]), np.sin(states[:, v, 2])
        dvx = c * w[:, 0] - s * w[:, 1]
        dvy = s * w[:, 0] + c * w[:, 1]
        states[:, v, IVX] += dvx
        states[:, v, IVY] += dvy
        states[1:, v, 0] += cfg.dt * np.cumsum(dvx[:-1])
        states[1:, v, 1] += cfg.dt * np.cumsum(dvy[:-1])
    return Truth(nominal.t, states, nominal.controls, nominal.landmarks)


def generate_events(truth: Truth, cfg: ScenarioConfig, stream: RngStream) -> EventLog:
    K = truth.n_ticks
    N = truth.n_vehicles
    noise = cfg.noise
    ticks = np.arange(1, K + 1)
    pos = truth.states[:, :, :2]
    cols = {name: [] for name in ("tick", "kind", "source", "target", "value", "truth")}

    def emit(kind, tk, src, tgt, val, tru):
        n = tk.size
        if n == 0:
            return
        cols["tick"].append(tk)
        cols["kind"].append(np.full(n, int(kind)))
        cols["source"].append(np.full(n, src))
        cols["target"].append(np.full(n, tgt))
        v = np.full((n, 2), np.nan)
        tr = np.full((n, 2), np.nan)
        val = np.asarray(val).reshape(n, -1)
        tru = np.asarray(tru).reshape(n, -1)
        v[:, :val.shape[1]] = val
        tr[:, :tru.shape[1]] = tru
        cols["value"].append(v)
        cols["truth"].append(tr)

    sig_u = np.array([noise.imu_accel_sigma, noise.imu_gyro_sigma])
    for v in range(N):
        u_true = truth.controls[:, v, :]
        u_noise = sig_u * stream.child(EventKind.IMU, v).standard_normal((K, 2))
        emit(EventKind.IMU, ticks, v, -1, u_true + u_noise, u_true)

        speed = np.hypot(truth.states[1:, v, 3], truth.states[1:, v, 4])
        emit(EventKind.ODOM, ticks, v, -1,
             speed + sample_gaussian(stream.child(EventKind.ODOM, v), noise.odom_sigma, K), speed)

    if cfg.gps_enabled:
        gt = ticks[ticks % cfg.gps_every == 0]
        for v in range(N):
            xy = pos[gt, v, :]
            nz = sample_gaussian(stream.child(EventKind.GPS, v), noise.gps_sigma, (gt.size, 2))
            emit(EventKind.GPS, gt, v, -1, xy + nz, xy)

    ut = ticks[ticks % cfg.uwb_every == 0]
    # lower id detects: one measurement per unordered pair per UWB tick
    for i, j in combinations(range(N), 2):
        r = np.hypot(*(pos[ut, i, :] - pos[ut, j, :]).T)
        nz = sample_gaussian(stream.child(EventKind.UWB_V2V, i, j), noise.uwb_sigma, ut.size)
        ok = (r <= cfg.uwb_max_range) & (r >= RANGE_EPSILON)
        emit(EventKind.UWB_V2V, ut[ok], i, j, (r + nz)[ok], r[ok])
    for v in range(N):
        for lm in truth.landmarks:
            r = np.hypot(pos[ut, v, 0] - lm.x, pos[ut, v, 1] - lm.y)
            nz = sample_gaussian(stream.child(EventKind.UWB_LANDMARK, v, lm.id), noise.uwb_sigma, ut.size)
            ok = (r <= cfg.uwb_max_range) & (r >= RANGE_EPSILON)
            emit(EventKind.UWB_LANDMARK, ut[ok], v, lm.id, (r + nz)[ok], r[ok])

    cat = {k: np.concatenate(v) if v else np.empty(0) for k, v in cols.items()}
    return EventLog(cat["tick"], cat["kind"], cat["source"], cat["target"],
                    cat["value"], cat["truth"], cfg.dt)


def initial_estimates(truth: Truth, cfg: ScenarioConfig, stream: RngStream) -> np.ndarray:
    """Truth at t0 plus an error drawn from the configured initial covariance."""
    L = np.linalg.cholesky(cfg.initial_cov)
    x0 = truth.states[0].copy()
    for v in range(truth.n_vehicles):
        x0[v] += L @ stream.child(INIT_STREAM, v).standard_normal(6)
        x0[v, 2] = wrap_angle(x0[v, 2])
    return x0
