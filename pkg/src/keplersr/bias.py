"""Bias configuration shared by featurization and search."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BiasConfig:
    """``observational``: feed (cos theta, sin theta) instead of theta.
    ``inductive``: drop exp and log from the operator grammar."""

    observational: bool = False
    inductive: bool = False

    @classmethod
    def for_experiment(cls, experiment: int) -> "BiasConfig":
        """Experiment 1: no bias; 2: observational; 3: inductive; 4: both."""
        try:
            obs, ind = {1: (False, False), 2: (True, False), 3: (False, True), 4: (True, True)}[experiment]
        except KeyError:
            raise ValueError(f"experiment must be 1, 2, 3 or 4, got {experiment!r}") from None
        return cls(observational=obs, inductive=ind)

    @property
    def experiment(self) -> int:
        return {(False, False): 1, (True, False): 2, (False, True): 3, (True, True): 4}[
            (self.observational, self.inductive)
        ]
