"""Named parameter tensors with trainable flags and optimizer state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass
class ParamEntry:
    value: np.ndarray
    trainable: bool = True
    momentum: np.ndarray = field(default=None)  # lazily allocated, same shape

    def __post_init__(self):
        if self.momentum is None:
            self.momentum = np.zeros_like(self.value)
        elif self.momentum.shape != self.value.shape:
            raise ShapeMismatch(f"momentum shape {self.momentum.shape} != value shape {self.value.shape}")


class ParamSet:
    """Insertion-ordered map of unique parameter names to entries."""

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self._entries:
            raise ShapeMismatch(f"duplicate parameter name {name!r}")
        self._entries[name] = ParamEntry(value=value, trainable=trainable)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> ParamEntry:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def trainable_names(self) -> list[str]:
        return [n for n, e in self._entries.items() if e.trainable]
