"""
Trial orchestration: one full two-phase run per (config, seed), the
block-RLNC comparison scheme, the leaver experiment and the sweeps that
write one CSV per experiment.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis, channel, codec, phase1, phase2, scenario
from .config import SimConfig
from .errors import AllVehiclesLeft, NoProgress

log = logging.getLogger(__name__)

# cutoff multiples of the rank estimate also imposed on the degree LP
GROWTH = (1.25, 1.5)

# substream purposes
SCENARIO, FILE, ENCODER, RECEPTION, UTILITY, SHARING, LEAVE, BASELINE = range(8)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, ...) via SeedSequence spawn keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


# -- building blocks --------------------------------------------------------

@dataclass
class World:
    """Geometry and loss statistics of one sampled group."""

    traj: scenario.Trajectory
    profile: channel.LossProfile
    N: int
    J: int
    t0: float
    t1: float

    @property
    def phase1_duration(self) -> float:
        return self.t1 - self.t0


def build_world(cfg: SimConfig, traj: scenario.Trajectory) -> World:
    p = cfg.channel()
    t0, t1 = traj.phase1_window()
    N, J = scenario.broadcast_budget(traj, cfg.T_p, cfg.M)
    dist = scenario.packet_distance_table(traj, cfg.T_p, N, t0)
    P_in = channel.i2v_loss_prob(dist, p)
    if traj.k > 1:
        Phat = channel.v2v_loss_matrix(scenario.pair_distance_matrix(traj), p)
    else:
        Phat = np.ones((1, 1))
    return World(traj, channel.LossProfile(P_in, Phat, cfg.M), N, J, t0, t1)


def sample_world(cfg: SimConfig, seed: int) -> World:
    traj = scenario.build_group(cfg.group(), cfg.geometry(), stream(seed, SCENARIO))
    return build_world(cfg, traj)


def steady_world(cfg: SimConfig) -> World:
    return build_world(cfg, scenario.steady_group(cfg.group(), cfg.geometry()))


def rank_estimate(cfg: SimConfig) -> analysis.RankEstimate:
    """Bottleneck rank estimate on the jitter-free, mean-spacing group."""
    return analysis.estimate_rank_distribution(steady_world(cfg).profile, cfg.F)


@functools.lru_cache(maxsize=64)
def degree_distribution(cfg: SimConfig) -> codec.DegreeDistribution:
    if cfg.degree.startswith("fixed:"):
        return codec.DegreeDistribution.point_mass(int(cfg.degree.split(":", 1)[1]))
    est = rank_estimate(cfg)
    h = codec.RankDistribution(est.f_e)
    extra = ()
    if cfg.lp_robust:
        # later points on the bottleneck's rank growth path, up to full rank
        full = np.zeros(cfg.M + 1)
        full[-1] = 1.0
        extra = tuple(est.at_cutoff(g * est.c) for g in GROWTH) + (full,)
    return codec.optimize_degree_distribution(
        h, cfg.M, cfg.F, d_max=cfg.d_max, eta=cfg.lp_eta, ripple=cfg.lp_ripple, extra=extra
    )


# -- trial result -----------------------------------------------------------

@dataclass
class TrialResult:
    seed: int
    scheme: str
    k: int
    N: int
    J: int
    phase1_duration: float
    K_emp: list  # per-vehicle RSU receptions
    Kg_emp: int
    K_exp: list
    Kg_exp: float
    transmissions: int
    phase2_delay: float
    decode_slot: list
    overhead: list  # per vehicle, nan if never decoded
    lp_bound: float
    exhausted: bool
    incomplete: bool
    bytes_ok: bool
    bottleneck: int  # analytic bottleneck (fewest expected receptions)
    last_decoder: int
    clamped: int = 0
    vehicles: list = field(default_factory=list)  # original ids of participating vehicles
    bottleneck_ranks: list | None = None  # per-batch ranks of `bottleneck` when it decoded
    bottleneck_ranks_F: list | None = None  # ... when its total rank first reached F
    truncated: bool = False  # sharing stopped early (stop_at_rank_F)
    rate_trace: dict | None = None

    CSV_FIELDS = (
        "seed", "scheme", "k", "N", "J", "phase1_duration", "Kg_emp", "Kg_exp",
        "K_min_emp", "K_min_exp", "transmissions", "phase2_delay", "lp_bound",
        "lp_delay", "mean_overhead", "bottleneck_overhead", "exhausted",
        "incomplete", "bytes_ok", "bottleneck", "last_decoder",
    )

    def row(self, slot: float) -> dict:
        ov = np.asarray(self.overhead, dtype=float)
        b_ov = ov[self.vehicles.index(self.bottleneck)] if self.bottleneck in self.vehicles else float("nan")
        return {
            "seed": self.seed, "scheme": self.scheme, "k": self.k, "N": self.N, "J": self.J,
            "phase1_duration": f"{self.phase1_duration:.6f}",
            "Kg_emp": self.Kg_emp, "Kg_exp": f"{self.Kg_exp:.6f}",
            "K_min_emp": min(self.K_emp), "K_min_exp": f"{min(self.K_exp):.6f}",
            "transmissions": self.transmissions, "phase2_delay": f"{self.phase2_delay:.6f}",
            "lp_bound": f"{self.lp_bound:.6f}", "lp_delay": f"{self.lp_bound * slot:.6f}",
            "mean_overhead": f"{np.nanmean(ov):.6f}" if np.isfinite(ov).any() else "nan",
            "bottleneck_overhead": f"{b_ov:.6f}",
            "exhausted": int(self.exhausted), "incomplete": int(self.incomplete),
            "bytes_ok": int(self.bytes_ok), "bottleneck": self.bottleneck,
            "last_decoder": self.last_decoder,
        }


def _overheads(states, F: int) -> list:
    return [
        (st.rank_at_completion - F) / F if st.rank_at_completion is not None else float("nan")
        for st in states
    ]


def _pad(ranks, J: int) -> list | None:
    if ranks is None:
        return None
    out = np.zeros(J, dtype=int)
    n = min(J, len(ranks))
    out[:n] = ranks[:n]
    return out.tolist()


def _last_decoder(decode_slot: np.ndarray, vehicles: list) -> int:
    slots = np.where(decode_slot < 0, np.iinfo(np.int64).max, decode_slot)
    return vehicles[int(np.argmax(slots))]


def _rate_trace(cfg: SimConfig, world: World, ledger, sharing, vehicles, window: float = 1.0) -> dict:
    """Innovative packets accepted per second in 1 s windows, per vehicle."""
    t_acc = {}
    for idx, v in enumerate(vehicles):
        n = np.flatnonzero(ledger.accepted[v]) if ledger.accepted is not None else np.array([], int)
        times = list(world.t0 + n * cfg.T_p)
        for s, acc in enumerate(sharing.accepts if sharing else (), start=1):
            if idx in acc:
                times.append(world.t1 + s * sharing.slot_duration)
        t_acc[v] = np.asarray(times)
    end = max([t.max() for t in t_acc.values() if t.size] + [world.t1])
    edges = np.arange(world.t0, end + window, window)
    return {v: np.histogram(t, bins=edges)[0] / window for v, t in t_acc.items()} | {"edges": edges}


# -- proposed scheme ----------------------------------------------------------

def run_trial(
    cfg: SimConfig,
    seed: int,
    leavers: int = 0,
    keep_ranks: bool = False,
    keep_rates: bool = False,
    trace_dir: str | None = None,
    stop_at_rank_F: bool = False,
) -> TrialResult:
    """Scenario, RSU phase, schedules, V2V sharing and analytics for one seed.

    ``leavers`` vehicles, chosen uniformly at random, drop out after the RSU
    phase; the remaining ones re-derive their schedules among themselves.
    ``stop_at_rank_F`` ends sharing as soon as the analytic bottleneck holds
    total rank F (enough for the rank-distribution check, flagged as
    ``truncated``).
    """
    world = sample_world(cfg, seed)
    prof = world.profile
    psi = degree_distribution(cfg)
    file = codec.SourceFile.random(cfg.F, cfg.payload_bytes, stream(seed, FILE))
    enc = codec.BatsEncoder(file, psi, cfg.M, stream(seed, ENCODER))
    states = [codec.DecoderState(enc.codebook, cfg.payload_bytes) for _ in range(cfg.k)]
    ledger = phase1.run_broadcast(prof, stream(seed, RECEPTION), enc, states)
    Y = ledger.counts()
    if trace_dir:
        ledger.write_trace(os.path.join(trace_dir, f"phase1_seed{seed}.csv"))

    vehicles = list(range(cfg.k))
    if leavers:
        if leavers >= cfg.k:
            raise AllVehiclesLeft("every vehicle left the group")
        gone = stream(seed, LEAVE).choice(cfg.k, size=leavers, replace=False)
        vehicles = [v for v in vehicles if v not in set(gone.tolist())]
    sub = prof.subset(vehicles)
    Ysub = Y[vehicles]
    bl = sub.batch_loss()
    schedules = [
        phase2.build_schedule(
            n, Ysub[n], bl, sub.Phat, cfg.M, stream(seed, UTILITY, v), cfg.kappa,
            link_weighted=cfg.utility_link_weighted,
        )
        for n, v in enumerate(vehicles)
    ]
    sub_states = [states[v] for v in vehicles]
    b = analysis.pick_bottleneck(prof)
    stop = None
    max_slots = cfg.max_slots
    if stop_at_rank_F:
        if states[b].ranks_at_rank_F is not None:
            max_slots = 0
        stop = lambda _: states[b].ranks_at_rank_F is not None  # noqa: E731
    sharing = phase2.run_sharing(
        sub_states, schedules, sub.Phat, stream(seed, SHARING), cfg.timing(), max_slots, on_slot=stop
    )
    if trace_dir:
        sharing.write_trace(os.path.join(trace_dir, f"phase2_seed{seed}.csv"), len(vehicles))
    lp = analysis.lp_lower_bound(analysis.LpInstance(cfg.F, Ysub.sum(axis=1), sub.Phat))

    ranks_done = ranks_F = None
    if keep_ranks:
        ranks_done = _pad(states[b].ranks_at_completion, world.J)
        ranks_F = _pad(states[b].ranks_at_rank_F, world.J)
    try:
        clamped = analysis.estimate_rank_distribution(prof, cfg.F).clamped
    except NoProgress:
        clamped = -1
    bytes_ok = all(np.array_equal(st.sources, file.packets) for st in sub_states if st.complete)
    Kj = [phase1.expected_individual(prof, i)[1] for i in range(cfg.k)]
    return TrialResult(
        seed=seed, scheme="bats", k=len(vehicles), N=world.N, J=world.J,
        phase1_duration=world.phase1_duration,
        K_emp=Y.sum(axis=1).tolist(), Kg_emp=int(ledger.group_received().sum()),
        K_exp=Kj, Kg_exp=phase1.expected_group(prof)[1],
        transmissions=sharing.transmissions, phase2_delay=sharing.delay,
        decode_slot=sharing.decode_slot.tolist(), overhead=_overheads(sub_states, cfg.F),
        lp_bound=lp.objective, exhausted=sharing.exhausted, incomplete=sharing.incomplete,
        bytes_ok=bytes_ok, bottleneck=b,
        last_decoder=_last_decoder(sharing.decode_slot, vehicles), vehicles=vehicles,
        bottleneck_ranks=ranks_done, bottleneck_ranks_F=ranks_F, clamped=clamped,
        truncated=stop_at_rank_F,
        rate_trace=_rate_trace(cfg, world, ledger, sharing, vehicles) if keep_rates else None,
    )


def dynamics_experiment(cfg: SimConfig, leave_fraction: float, seed: int) -> TrialResult:
    if not 0 <= leave_fraction < 1:
        raise ValueError("leave_fraction must lie in [0, 1)")
    return run_trial(cfg, seed, leavers=math.ceil(leave_fraction * cfg.k))


# -- block RLNC comparison ------------------------------------------------------

def _block_codebook(F: int, M: int) -> codec.Codebook:
    book = codec.Codebook(F, M)
    eye = np.eye(M, dtype=np.uint8)
    for b in range(F // M):
        book.add(codec.Batch(b, np.arange(b * M, (b + 1) * M), eye))
    return book


def _rank_difference_choice(ranks: np.ndarray, tx: int, need: np.ndarray, M: int, rng) -> int:
    """Block maximising the summed rank advantage of ``tx`` over needy peers.

    When every difference is zero, falls back to a uniformly random block
    that some needy peer lacks, so equal-but-different subspaces cannot stall
    the exchange and a block no one can complete cannot monopolise it.
    """
    mine = ranks[tx]
    peers = ranks[need]
    diff = np.clip(mine[None, :] - peers, 0, None).sum(axis=0)
    lacking = ((peers < M) & (mine[None, :] > 0)).sum(axis=0)
    if diff.max() > 0:
        return int(np.argmax(diff * (ranks.shape[0] + 1) + lacking))
    open_ = np.flatnonzero(lacking)
    return int(rng.choice(open_)) if open_.size else -1


def baseline_block_rlnc(cfg: SimConfig, seed: int) -> TrialResult:
    """Block RLNC with one redundant packet per block and rank-difference scheduling.

    The RSU cycles through the F/M blocks sending M + 1 random combinations
    of each; every vehicle must reach full rank in every block.  In the V2V
    phase each vehicle knows all peers' block ranks (exchanged status) and
    sends a recoded packet of the block with the largest rank advantage.
    """
    if cfg.F % cfg.M:
        raise ValueError("block RLNC needs M to divide F")
    world = sample_world(cfg, seed)
    prof = world.profile
    M, F, k = cfg.M, cfg.F, cfg.k
    B = F // M
    file = codec.SourceFile.random(F, cfg.payload_bytes, stream(seed, FILE))
    book = _block_codebook(F, M)
    states = [codec.DecoderState(book, cfg.payload_bytes) for _ in range(k)]
    rng = stream(seed, BASELINE)
    received = phase1.sample_receptions(prof, stream(seed, RECEPTION))
    per_block = M + 1
    for n in range(world.N):
        if not received[:, n].any():
            rng.integers(0, 256, size=M)  # keep the coefficient stream aligned
            continue
        blk = (n // per_block) % B
        c = rng.integers(0, 256, size=M, dtype=np.uint8)
        pkt = codec.CodedPacket(blk, c, codec.gf256.matmul(c, file.packets[blk * M:(blk + 1) * M]))
        for i in np.flatnonzero(received[:, n]):
            states[i].absorb(pkt)
    for st in states:
        st.peel()

    timing = cfg.timing(cfg.baseline_dt_max)
    ranks = np.array([[st.rank(b) for b in range(B)] for st in states])
    decoded = np.array([st.complete for st in states])
    decode_slot = np.where(decoded, 0, -1)
    max_slots = cfg.max_slots or 20 * F + 1000
    share_rng = stream(seed, SHARING)
    tx_count = 0
    incomplete = False
    idle = 0
    while not decoded.all():
        if tx_count >= max_slots:
            incomplete = True
            break
        if idle >= phase2.STALL_CHECK:
            if phase2._group_saturated(states):
                incomplete = True
                break
            idle = 0
        need = ~decoded
        offers = {}
        for i in range(k):
            peers = need.copy()
            peers[i] = False
            if peers.any():
                blk = _rank_difference_choice(ranks, i, peers, M, share_rng)
                if blk >= 0:
                    offers[i] = blk
        if not offers:
            incomplete = True
            break
        cands = list(offers)
        tx = cands[phase2._contend(len(cands), timing.dt_max, share_rng)]
        blk = offers[tx]
        pkt = states[tx].recode(blk, share_rng)
        heard = share_rng.random(k) >= prof.Phat[tx]
        tx_count += 1
        idle += 1
        for rx in np.flatnonzero(heard):
            if rx == tx or decoded[rx]:
                continue
            if states[rx].absorb(pkt):
                idle = 0
                ranks[rx, blk] += 1
                states[rx].peel()
                if states[rx].complete:
                    decoded[rx] = True
                    decode_slot[rx] = tx_count
    Y = received[:, : world.N].sum(axis=1)
    lp = analysis.lp_lower_bound(analysis.LpInstance(F, Y, prof.Phat))
    vehicles = list(range(k))
    return TrialResult(
        seed=seed, scheme="block_rlnc", k=k, N=world.N, J=world.J,
        phase1_duration=world.phase1_duration,
        K_emp=Y.tolist(), Kg_emp=int(received.any(axis=0).sum()),
        K_exp=[phase1.expected_individual(prof, i)[1] for i in range(k)],
        Kg_exp=phase1.expected_group(prof)[1],
        transmissions=tx_count, phase2_delay=tx_count * timing.slot,
        decode_slot=decode_slot.tolist(), overhead=_overheads(states, F),
        lp_bound=lp.objective, exhausted=False, incomplete=incomplete,
        bytes_ok=all(np.array_equal(st.sources, file.packets) for st in states if st.complete),
        bottleneck=analysis.pick_bottleneck(prof),
        last_decoder=_last_decoder(decode_slot, vehicles), vehicles=vehicles,
    )


# -- experiments ---------------------------------------------------------------

EXPERIMENTS = ("speed", "groupsize", "rankcdf", "delay", "rate", "dynamics", "single")


def trial_seeds(cfg: SimConfig) -> list[int]:
    return [cfg.seed + t for t in range(cfg.trials)]


def _write_rows(path: str, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _reception_row(cfg: SimConfig, seed: int) -> dict:
    """RSU-phase counts only (no coding), for the channel-level sweeps."""
    world = sample_world(cfg, seed)
    prof = world.profile
    rec = phase1.sample_receptions(prof, stream(seed, RECEPTION))
    ledger = phase1.ReceptionLedger(rec, cfg.M)
    K = ledger.counts().sum(axis=1)
    K_exp = np.array([phase1.expected_individual(prof, i)[1] for i in range(cfg.k)])
    return {
        "seed": seed, "k": cfg.k, "v_mean": cfg.v_mean, "N": world.N, "J": world.J,
        "phase1_duration": f"{world.phase1_duration:.6f}",
        "K_min_emp": int(K.min()), "K_min_exp": f"{K_exp.min():.6f}",
        "K_mean_emp": f"{K.mean():.6f}", "K_mean_exp": f"{K_exp.mean():.6f}",
        "Kg_emp": int(ledger.group_received().sum()),
        "Kg_exp": f"{phase1.expected_group(prof)[1]:.6f}",
        "needs_v2v": int(K_exp.min() < cfg.F),
    }


_RECEPTION_FIELDS = (
    "seed", "k", "v_mean", "N", "J", "phase1_duration", "K_min_emp", "K_min_exp",
    "K_mean_emp", "K_mean_exp", "Kg_emp", "Kg_exp", "needs_v2v",
)


def speed_sweep(cfg: SimConfig, out_dir: str) -> str:
    rows = []
    for v in cfg.sweep_speeds:
        c = cfg.replace(v_mean=float(v))
        rows += [_reception_row(c, s) for s in trial_seeds(c)]
    path = os.path.join(out_dir, "speed.csv")
    _write_rows(path, _RECEPTION_FIELDS, rows)
    return path


def groupsize_gain(cfg: SimConfig, out_dir: str) -> str:
    rows = []
    for k in cfg.gain_k:
        c = cfg.replace(k=int(k))
        rows += [_reception_row(c, s) for s in trial_seeds(c)]
    path = os.path.join(out_dir, "groupsize.csv")
    _write_rows(path, _RECEPTION_FIELDS, rows)
    return path


def rank_cdf_experiment(cfg: SimConfig, out_dir: str) -> tuple[str, float, float]:
    """Estimated vs empirical bottleneck rank CDF.

    Writes ``rankcdf.csv`` (empirical ranks when the bottleneck's total rank
    first reaches F) and ``rankcdf_decoded.csv`` (ranks when it finished BP
    decoding, from the trials where it did).  Returns the two maximum CDF gaps.
    """
    est = rank_estimate(cfg)
    at_F, at_done = [], []
    for s in trial_seeds(cfg):
        r = run_trial(cfg, s, keep_ranks=True)
        if r.bottleneck_ranks_F is not None:
            at_F += r.bottleneck_ranks_F
        if r.bottleneck_ranks is not None:
            at_done += r.bottleneck_ranks
    gaps = []
    for name, ranks in (("rankcdf.csv", at_F), ("rankcdf_decoded.csv", at_done)):
        if ranks:
            emp = np.bincount(np.asarray(ranks), minlength=cfg.M + 1)[: cfg.M + 1] / len(ranks)
            gaps.append(float(np.abs(np.cumsum(emp) - est.F_e).max()))
        else:
            emp = None
            gaps.append(float("nan"))
        analysis.write_rank_csv(os.path.join(out_dir, name), est.f_e, est.F_e, emp)
    return os.path.join(out_dir, "rankcdf.csv"), gaps[0], gaps[1]


def delay_experiment(cfg: SimConfig, out_dir: str) -> str:
    rows = []
    for k in cfg.sweep_k:
        c = cfg.replace(k=int(k))
        slot = c.timing().slot
        for s in trial_seeds(c):
            rows.append(run_trial(c, s).row(slot))
            rows.append(baseline_block_rlnc(c, s).row(c.timing(c.baseline_dt_max).slot))
    path = os.path.join(out_dir, "delay.csv")
    _write_rows(path, TrialResult.CSV_FIELDS, rows)
    return path


def rate_experiment(cfg: SimConfig, out_dir: str) -> str:
    """Innovative packets accepted per second, 1 s windows, one trial per seed."""
    rows = []
    for s in trial_seeds(cfg):
        r = run_trial(cfg, s, keep_rates=True)
        edges = r.rate_trace["edges"]
        for v in r.vehicles:
            for w, rate in enumerate(r.rate_trace[v]):
                rows.append({
                    "seed": s, "vehicle": v, "window_start": f"{edges[w]:.6f}",
                    "rate_pps": f"{rate:.6f}", "bottleneck": int(v == r.bottleneck),
                })
    path = os.path.join(out_dir, "rate.csv")
    _write_rows(path, ("seed", "vehicle", "window_start", "rate_pps", "bottleneck"), rows)
    return path


def dynamics_sweep(cfg: SimConfig, out_dir: str) -> str:
    rows = []
    slot = cfg.timing().slot
    for s in trial_seeds(cfg):
        for frac in (0.0, cfg.leave_fraction):
            row = dynamics_experiment(cfg, frac, s).row(slot)
            row["leave_fraction"] = frac
            rows.append(row)
    path = os.path.join(out_dir, "dynamics.csv")
    _write_rows(path, ("leave_fraction",) + TrialResult.CSV_FIELDS, rows)
    return path


def single_experiment(cfg: SimConfig, out_dir: str, trace: bool = False) -> str:
    slot = cfg.timing().slot
    rows = [run_trial(cfg, s, trace_dir=out_dir if trace else None).row(slot) for s in trial_seeds(cfg)]
    path = os.path.join(out_dir, "single.csv")
    _write_rows(path, TrialResult.CSV_FIELDS, rows)
    return path


def run_experiment(cfg: SimConfig, experiment: str, out_dir: str, trace: bool = False) -> str:
    """Run one experiment over ``cfg.trials`` seeds starting at ``cfg.seed``; returns the CSV path."""
    os.makedirs(out_dir, exist_ok=True)
    log.info("experiment %s: %d trial(s) from seed %d", experiment, cfg.trials, cfg.seed)
    if experiment == "speed":
        return speed_sweep(cfg, out_dir)
    if experiment == "groupsize":
        return groupsize_gain(cfg, out_dir)
    if experiment == "rankcdf":
        return rank_cdf_experiment(cfg, out_dir)[0]
    if experiment == "delay":
        return delay_experiment(cfg, out_dir)
    if experiment == "rate":
        return rate_experiment(cfg, out_dir)
    if experiment == "dynamics":
        return dynamics_sweep(cfg, out_dir)
    if experiment == "single":
        return single_experiment(cfg, out_dir, trace)
    raise ValueError(f"unknown experiment {experiment!r}")
