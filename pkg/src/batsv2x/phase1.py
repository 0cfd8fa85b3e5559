"""RSU broadcast: sampled receptions and their analytic expectations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import LossProfile
from .codec import BatsEncoder, DecoderState


@dataclass
class ReceptionLedger:
    """Which RSU packets each vehicle received; ``received`` is (k, N) bool."""

    received: np.ndarray
    M: int
    decode_packet: np.ndarray = field(default=None)  # packet index at which each vehicle decoded, -1 if not
    accepted: np.ndarray = field(default=None)  # (k, N) bool, innovative on arrival

    @property
    def k(self) -> int:
        return self.received.shape[0]

    @property
    def J(self) -> int:
        return self.received.shape[1] // self.M

    def counts(self) -> np.ndarray:
        """Y[i, j] = number of batch-j packets vehicle i received."""
        return self.received[:, : self.J * self.M].reshape(self.k, self.J, self.M).sum(axis=2)

    def batch_set(self, i: int, j: int) -> np.ndarray:
        """Packet indices (0-based, global) of batch j that vehicle i holds."""
        block = self.received[i, j * self.M : (j + 1) * self.M]
        return j * self.M + np.flatnonzero(block)

    def group_received(self) -> np.ndarray:
        return self.received.any(axis=0)

    def write_trace(self, path) -> None:
        """CSV rows (n, j, i, received) with 0-based indices."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "j", "i", "received"])
            for n in range(self.received.shape[1]):
                for i in range(self.k):
                    w.writerow([n, n // self.M, i, int(self.received[i, n])])


def sample_receptions(profile: LossProfile, rng: np.random.Generator) -> np.ndarray:
    return rng.random(profile.P_in.shape) >= profile.P_in


def run_broadcast(
    profile: LossProfile,
    rng: np.random.Generator,
    encoder: BatsEncoder | None = None,
    states: list[DecoderState] | None = None,
) -> ReceptionLedger:
    """Simulate the RSU pass.

    Receptions are independent per packet and vehicle.  When an encoder and
    decoder states are supplied, every batch is generated and each vehicle
    absorbs the packets it received (and runs BP after each batch).
    """
    received = sample_receptions(profile, rng)
    ledger = ReceptionLedger(received, profile.M)
    if encoder is None:
        return ledger
    M = profile.M
    k = profile.k
    accepted = np.zeros_like(received)
    decode_packet = np.full(k, -1)
    for j in range(profile.J):
        packets = encoder.next_batch()
        for i in range(k):
            st = states[i]
            got = False
            for kk in np.flatnonzero(received[i, j * M : (j + 1) * M]):
                if st.absorb(packets[kk]):
                    accepted[i, j * M + kk] = True
                    got = True
            if got and decode_packet[i] < 0:
                st.peel()
                if st.complete:
                    last = np.flatnonzero(received[i, j * M : (j + 1) * M])[-1]
                    decode_packet[i] = j * M + last
    ledger.accepted = accepted
    ledger.decode_packet = decode_packet
    return ledger


def expected_individual(profile: LossProfile, i: int) -> tuple[np.ndarray, float]:
    """(K_i per batch, K_i): expected RSU receptions of vehicle i."""
    kj = profile.M * (1.0 - profile.batch_loss()[i])
    return kj, float(kj.sum())


def expected_group(profile: LossProfile, k: int | None = None) -> tuple[np.ndarray, float]:
    """(K_g per batch, K_g): expected packets reaching at least one of the first k vehicles."""
    if k is not None and k != profile.k:
        profile = profile.subset(np.arange(k))
    kj = profile.M * (1.0 - profile.group_loss())
    return kj, float(kj.sum())
