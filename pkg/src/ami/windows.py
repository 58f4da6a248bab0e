from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ModalityWindow:
    """One time window of one modality: ``data`` is ``[C, T]``."""

    modality: str
    data: np.ndarray
    rate_hz: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"{self.modality}: window must be [C, T], got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"{self.modality}: window contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def seconds(self) -> float:
        return self.samples / self.rate_hz
