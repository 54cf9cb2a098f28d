"""Shared episodic memory with a fixed per-task budget.

Each task owns a reservoir of at most ``budget_per_task`` slots, filled by
one-pass reservoir sampling (the stream is seen exactly once). Entries carry
logit snapshots taken at observation time and are frozen afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, MemoryConsistencyError


@dataclass(frozen=True)
class MemoryEntry:
    """One stored sample: input, label, task ID, and logit snapshots.

    ``h`` holds the classifier logits and ``h_disc`` the discriminator logits
    (sliced to the arity valid at insertion time). Baselines that replay
    labels only may leave the snapshots as None.
    """

    x: np.ndarray
    y: int
    t: int
    h: Optional[np.ndarray] = None
    h_disc: Optional[np.ndarray] = None


def _frozen_copy(a):
    if a is None:
        return None
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


def make_entry(x, y, t, h=None, h_disc=None):
    """Build an immutable entry; array fields are copied and write-locked."""
    if h is not None and np.asarray(h).ndim != 1:
        raise MemoryConsistencyError("classifier snapshot must be a 1-D logit row")
    if h_disc is not None and np.asarray(h_disc).ndim != 1:
        raise MemoryConsistencyError("discriminator snapshot must be a 1-D logit row")
    return MemoryEntry(x=_frozen_copy(x), y=int(y), t=int(t),
                       h=_frozen_copy(h), h_disc=_frozen_copy(h_disc))


@dataclass
class Partition:
    """One side of a train/val split: the current batch plus a memory draw."""

    batch: object
    memory: list = field(default_factory=list)


class EpisodicMemory:
    """Single memory shared by all tasks; per-task reservoirs of fixed budget.

    The reservoir decision for the i-th observation of a task (i > budget)
    draws one integer j uniform on [0, i); the entry replaces slot j when
    j < budget, which keeps every prefix of the stream uniformly represented.
    """

    def __init__(self, budget_per_task=50, rng=None):
        if budget_per_task < 0:
            raise ContractError("budget_per_task must be non-negative")
        self.budget_per_task = budget_per_task
        self.rng = rng if rng is not None else np.random.default_rng()
        self.slots = {}
        self.seen_counts = {}

    def __len__(self):
        return sum(len(s) for s in self.slots.values())

    @property
    def tasks(self):
        return sorted(self.slots)

    def observe(self, entry, seen_count_for_task=None):
        """Offer one entry to its task's reservoir; returns True if stored."""
        t = entry.t
        count = self.seen_counts.get(t, 0) + 1
        if seen_count_for_task is not None and seen_count_for_task != count:
            raise MemoryConsistencyError(
                f"task {t}: caller claims observation {seen_count_for_task}, "
                f"memory has seen {count - 1}")
        self.seen_counts[t] = count
        slot = self.slots.setdefault(t, [])
        if len(slot) < self.budget_per_task:
            slot.append(entry)
            return True
        if self.budget_per_task == 0:
            return False
        j = int(self.rng.integers(0, count))
        if j < self.budget_per_task:
            slot[j] = entry
            return True
        return False

    def entries(self):
        """All stored entries in deterministic (task, slot) order."""
        out = []
        for t in sorted(self.slots):
            out.extend(self.slots[t])
        return out

    def sample(self, batch_size, rng):
        """Uniform sample with replacement over all entries; [] when empty."""
        pool = self.entries()
        if not pool or batch_size <= 0:
            return []
        idx = rng.integers(0, len(pool), size=batch_size)
        return [pool[i] for i in idx]

    def partition(self, current_batch, rng, replay_batch_size=64):
        """Split one optimization round into train and val sides.

        Both sides share the full current batch; each side gets its own
        memory draw, so the two draws are independent while the current data
        is consumed exactly once. All randomness comes from plain draws on
        ``rng``, so its bit-generator state fully captures partition progress
        (spawned substreams would not survive a checkpoint).
        """
        if len(current_batch.x) == 0:
            raise ContractError("partition requires a non-empty current batch")
        return (Partition(current_batch, self.sample(replay_batch_size, rng)),
                Partition(current_batch, self.sample(replay_batch_size, rng)))
