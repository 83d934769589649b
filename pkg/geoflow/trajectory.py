from __future__ import annotations

from dataclasses import dataclass
from threading import RLock
from typing import Iterator


@dataclass(frozen=True, slots=True)
class TrajectoryRow:
    step: int
    time: float
    energy: float
    grad_norm: float
    aux: float


class FlowTrajectory:
    """Append-only record of a gradient flow, one row per step."""

    def __init__(self) -> None:
        self._rows: list[TrajectoryRow] = []
        self._lock = RLock()

    def append(self, row: TrajectoryRow) -> None:
        with self._lock:
            if self._rows and row.step <= self._rows[-1].step:
                raise ValueError("trajectory steps must increase")
            self._rows.append(row)

    def rows(self) -> list[TrajectoryRow]:
        with self._lock:
            return list(self._rows)

    @property
    def last(self) -> TrajectoryRow | None:
        with self._lock:
            return self._rows[-1] if self._rows else None

    def energies(self) -> list[float]:
        return [r.energy for r in self.rows()]

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def __iter__(self) -> Iterator[TrajectoryRow]:
        return iter(self.rows())
