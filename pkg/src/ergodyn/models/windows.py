from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CompactWindow:
    """Height cap ``Im z <= y_max`` on the modular surface; ``None`` means the whole space."""

    y_max: Optional[float] = 8.0

    def __post_init__(self):
        if self.y_max is not None and not self.y_max > 1.0:
            raise ValueError("y_max must exceed 1")

    def liouville_mass(self) -> float:
        """Normalized Liouville mass of the window: 1 - (3/pi) / y_max."""
        return 1.0 if self.y_max is None else 1.0 - 3.0 / (np.pi * self.y_max)
