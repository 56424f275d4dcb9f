"""Observation/action trajectory datasets used for controller extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(eq=False)
class TrajectoryDataset:
    """Episodes as (T, 2) integer arrays of (observation, action) pairs."""

    sequences: list[np.ndarray]
    num_observations: int
    num_actions: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seqs = []
        for i, seq in enumerate(self.sequences):
            arr = np.asarray(seq, dtype=np.int64).reshape(-1, 2)
            if arr.shape[0] == 0:
                raise ValidationError(f"sequence {i} is empty")
            if arr[:, 0].min() < 0 or arr[:, 0].max() >= self.num_observations:
                raise ValidationError(f"sequence {i} has an observation outside 0..{self.num_observations - 1}")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_actions:
                raise ValidationError(f"sequence {i} has an action outside 0..{self.num_actions - 1}")
            seqs.append(arr)
        self.sequences = seqs

    def __len__(self):
        return len(self.sequences)

    @property
    def total_steps(self) -> int:
        return sum(len(s) for s in self.sequences)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.num_observations == other.num_observations
            and self.num_actions == other.num_actions
            and len(self.sequences) == len(other.sequences)
            and all(np.array_equal(a, b) for a, b in zip(self.sequences, other.sequences))
        )

    __hash__ = None
