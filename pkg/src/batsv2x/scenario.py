"""
Vehicle-group kinematics past a roadside unit.

Coordinates: the road runs along x, the RSU stands at x = 0, and vehicles
drive toward +x.  V_1 is the front (rightmost) vehicle and enters coverage
at t = 0.  Speeds are piecewise constant over fixed epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KMH = 1000.0 / 3600.0


@dataclass(frozen=True)
class Geometry:
    rsu_offset: float = 50.0  # RSU to centre of the near lane
    lane_width: float = 3.0
    rsu_height: float = 8.0
    veh_height: float = 1.0
    comm_range: float = 200.0

    def lateral(self, lane) -> np.ndarray:
        return self.rsu_offset + self.lane_width * np.asarray(lane, dtype=float)

    def half_chord(self, lane) -> np.ndarray:
        """Half the road length inside RSU range for a lane."""
        dh = self.rsu_height - self.veh_height
        sq = self.comm_range**2 - self.lateral(lane) ** 2 - dh**2
        if np.any(sq <= 0):
            raise ValueError("lane lies outside RSU range")
        return np.sqrt(sq)

    def chord(self, lane=0) -> float:
        return float(2.0 * self.half_chord(lane))


@dataclass(frozen=True)
class GroupConfig:
    k: int = 8
    v_mean: float = 55.0  # km/h
    v_jitter: float = 5.0  # km/h, uniform +/- bound
    gap_low: float = 15.0  # m
    gap_high: float = 35.0
    lanes: str | tuple = "alternate"  # "alternate", "near", "far", "random" or explicit tuple
    epoch: float = 1.0  # s between speed redraws
    min_gap: float = 10.0  # m; V2V path loss is undefined below d0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.v_mean > self.v_jitter >= 0:
            raise ValueError("need v_mean > v_jitter >= 0")
        if not 0 < self.gap_low <= self.gap_high:
            raise ValueError("gaps must be positive with gap_low <= gap_high")


def lane_assignment(cfg: GroupConfig, rng: np.random.Generator) -> np.ndarray:
    if isinstance(cfg.lanes, (tuple, list)):
        lanes = np.asarray(cfg.lanes, dtype=int)
        if lanes.size != cfg.k:
            raise ValueError("explicit lanes must list one lane per vehicle")
        return lanes
    if cfg.lanes == "alternate":
        return np.arange(cfg.k) % 2
    if cfg.lanes == "near":
        return np.zeros(cfg.k, dtype=int)
    if cfg.lanes == "far":
        return np.ones(cfg.k, dtype=int)
    if cfg.lanes == "random":
        return rng.integers(0, 2, size=cfg.k)
    raise ValueError(f"unknown lane rule {cfg.lanes!r}")


@dataclass
class Trajectory:
    """Piecewise-linear positions of k vehicles.

    ``knots[i, e]`` is the x position of vehicle i at time ``e * epoch`` and
    ``speeds[i, e]`` its speed (m/s) during epoch e.
    """

    knots: np.ndarray
    speeds: np.ndarray
    lanes: np.ndarray
    epoch: float
    geometry: Geometry = field(default_factory=Geometry)

    @property
    def k(self) -> int:
        return self.knots.shape[0]

    @property
    def horizon(self) -> float:
        return self.speeds.shape[1] * self.epoch

    def position(self, i: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        e = np.clip((t // self.epoch).astype(int), 0, self.speeds.shape[1] - 1)
        return self.knots[i, e] + self.speeds[i, e] * (t - e * self.epoch)

    def positions(self, t) -> np.ndarray:
        """(k, len(t)) positions."""
        return np.stack([self.position(i, t) for i in range(self.k)])

    def time_at(self, i: int, x: float) -> float:
        """First time vehicle i reaches position x (positions are increasing)."""
        e = int(np.searchsorted(self.knots[i], x, side="right")) - 1
        if e < 0:
            return 0.0
        if e >= self.speeds.shape[1]:
            raise ValueError("position beyond simulated horizon")
        return e * self.epoch + (x - self.knots[i, e]) / self.speeds[i, e]

    def entry_exit(self, i: int) -> tuple[float, float]:
        half = float(self.geometry.half_chord(self.lanes[i]))
        return self.time_at(i, -half), self.time_at(i, half)

    def phase1_window(self) -> tuple[float, float]:
        """(first entry, last exit) over the group."""
        ee = np.array([self.entry_exit(i) for i in range(self.k)])
        return float(ee[:, 0].min()), float(ee[:, 1].max())


def build_group(cfg: GroupConfig, geo: Geometry, rng: np.random.Generator) -> Trajectory:
    """Sample initial gaps, lanes and per-epoch speeds for the group."""
    lanes = lane_assignment(cfg, rng)
    gaps = rng.uniform(cfg.gap_low, cfg.gap_high, size=cfg.k - 1)
    x0 = np.empty(cfg.k)
    x0[0] = -float(geo.half_chord(lanes[0]))
    x0[1:] = x0[0] - np.cumsum(gaps)
    v_lo = (cfg.v_mean - cfg.v_jitter) * KMH
    span = x0[0] - x0[-1]
    n_epochs = int(np.ceil((2.0 * geo.comm_range + span) / v_lo / cfg.epoch)) + 2
    knots = np.empty((cfg.k, n_epochs + 1))
    speeds = np.empty((cfg.k, n_epochs))
    knots[:, 0] = x0
    for e in range(n_epochs):
        v = _draw_speeds(cfg, rng)
        for _ in range(100):
            nxt = knots[:, e] + v * cfg.epoch
            bad = np.flatnonzero(nxt[:-1] - nxt[1:] < cfg.min_gap)
            if bad.size == 0:
                break
            # redraw both ends of each violating gap
            idx = np.unique(np.concatenate([bad, bad + 1]))
            v[idx] = _draw_speeds(cfg, rng)[idx]
        else:
            v[:] = v.min()
            nxt = knots[:, e] + v * cfg.epoch
        speeds[:, e] = v
        knots[:, e + 1] = nxt
    return Trajectory(knots, speeds, lanes, cfg.epoch, geo)


def _draw_speeds(cfg: GroupConfig, rng: np.random.Generator) -> np.ndarray:
    return (cfg.v_mean + rng.uniform(-cfg.v_jitter, cfg.v_jitter, size=cfg.k)) * KMH


def steady_group(cfg: GroupConfig, geo: Geometry, gap: float | None = None) -> Trajectory:
    """Jitter-free group with equal gaps (default: mean of the spacing law)."""
    if gap is None:
        gap = 0.5 * (cfg.gap_low + cfg.gap_high)
    lanes = lane_assignment(cfg, np.random.default_rng(0))
    x0 = -float(geo.half_chord(lanes[0])) - gap * np.arange(cfg.k)
    v = cfg.v_mean * KMH
    span = gap * (cfg.k - 1)
    n_epochs = int(np.ceil((2.0 * geo.comm_range + span) / v / cfg.epoch)) + 2
    t = np.arange(n_epochs + 1) * cfg.epoch
    knots = x0[:, None] + v * t[None, :]
    speeds = np.full((cfg.k, n_epochs), v)
    return Trajectory(knots, speeds, lanes, cfg.epoch, geo)


def distance_to_rsu(traj: Trajectory, i: int, t) -> np.ndarray:
    """3-D distance from the RSU antenna to vehicle i at time(s) t."""
    geo = traj.geometry
    x = traj.position(i, t)
    lat = geo.lateral(traj.lanes[i])
    dh = geo.rsu_height - geo.veh_height
    return np.sqrt(x**2 + lat**2 + dh**2)


def packet_time(n, T_p: float, t0: float = 0.0):
    return t0 + np.asarray(n) * T_p


def packet_distance_table(traj: Trajectory, T_p: float, N: int, t0: float = 0.0) -> np.ndarray:
    """(k, N) RSU distance at the start of each packet; inf when out of range."""
    t = packet_time(np.arange(N), T_p, t0)
    out = np.stack([distance_to_rsu(traj, i, t) for i in range(traj.k)])
    out[out > traj.geometry.comm_range] = np.inf
    return out


def broadcast_budget(traj: Trajectory, T_p: float, M: int) -> tuple[int, int]:
    """Packets N (a multiple of M) and batches J the RSU sends in the window."""
    start, end = traj.phase1_window()
    n = int(np.floor((end - start) / T_p + 1e-9))
    J = n // M
    return J * M, J


def _horizontal(traj: Trajectory, i: int, q: int) -> float:
    return abs(float(traj.lanes[i] - traj.lanes[q])) * traj.geometry.lane_width


def pair_distance(traj: Trajectory, i: int, q: int, t) -> np.ndarray:
    dx = traj.position(i, t) - traj.position(q, t)
    return np.hypot(dx, _horizontal(traj, i, q))


def _int_hypot(u0: float, u1: float, b: float, c: float, dt: float) -> float:
    """Integral over dt of sqrt(u(t)^2 + c^2) with u linear from u0 to u1."""
    if abs(b) < 1e-12:
        return dt * np.hypot(u0, c)

    def prim(u):
        if c == 0:
            return 0.5 * u * abs(u)
        return 0.5 * (u * np.hypot(u, c) + c * c * np.arcsinh(u / c))

    return (prim(u1) - prim(u0)) / b


def avg_pair_distance(traj: Trajectory, i: int, q: int, t0: float | None = None, t1: float | None = None) -> float:
    """Average separation of vehicles i and q.

    Without a window this is the separation when the last vehicle leaves RSU
    coverage, which is held fixed for the sharing phase.  With ``[t0, t1]``
    it is the exact time average over that window.
    """
    if i == q:
        raise ValueError("need two distinct vehicles")
    if t0 is None and t1 is None:
        _, end = traj.phase1_window()
        return float(pair_distance(traj, i, q, end))
    if t1 <= t0:
        raise ValueError("empty averaging window")
    c = _horizontal(traj, i, q)
    edges = np.arange(np.floor(t0 / traj.epoch), np.ceil(t1 / traj.epoch) + 1) * traj.epoch
    edges = np.clip(edges, t0, t1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        e = min(int((a + b) / 2 // traj.epoch), traj.speeds.shape[1] - 1)
        slope = traj.speeds[i, e] - traj.speeds[q, e]
        ua = float(traj.position(i, a) - traj.position(q, a))
        ub = ua + slope * (b - a)
        total += _int_hypot(ua, ub, slope, c, b - a)
    return total / (t1 - t0)


def pair_distance_matrix(traj: Trajectory) -> np.ndarray:
    k = traj.k
    out = np.zeros((k, k))
    for i in range(k):
        for q in range(i + 1, k):
            out[i, q] = out[q, i] = avg_pair_distance(traj, i, q)
    return out
