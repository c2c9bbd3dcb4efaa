"""Architecture hyperparameters for the restoration denoiser."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class NetConfig:
    """Widths and depths of the pyramid denoiser.

    Stage i (1..4) operates at spatial scale H/2^i with width i * base_channels;
    inputs must be divisible by 16.
    """

    base_channels: int = 32
    stage_depths: tuple[int, int, int, int] = (2, 2, 2, 2)
    state_size: int = 16
    time_dim: int = 128
    input_channels: int = 3

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if self.base_channels < 1 or self.state_size < 1 or self.time_dim < 2:
            raise ValueError("base_channels, state_size >= 1 and time_dim >= 2 required")
        if len(self.stage_depths) != 4 or any(d < 1 for d in self.stage_depths):
            raise ValueError("stage_depths must be four counts >= 1")

    def stage_width(self, i: int) -> int:
        """Feature width at pyramid level i (level 0 uses base_channels)."""
        if not 0 <= i <= 4:
            raise ValueError(f"stage index out of range: {i}")
        return self.base_channels * max(i, 1)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "stage_depths": list(self.stage_depths),
            "state_size": self.state_size,
            "time_dim": self.time_dim,
            "input_channels": self.input_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)
