"""Channel schemas: the ordered, typed list of signals in a recording."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from ..errors import ConfigError

SENSOR_KINDS = ("linear_acceleration", "quaternion", "joint_angle")
CONTEXT_KINDS = ("time_elapsed", "paretic_flag")
KINDS = SENSOR_KINDS + CONTEXT_KINDS

IMUS = ("c7", "t12", "pelvis", "upper_arm_l", "upper_arm_r", "forearm_l", "forearm_r", "hand_l", "hand_r")
ACCEL_IMUS = ("upper_arm_l", "upper_arm_r", "forearm_l", "forearm_r", "hand_l", "hand_r")
_SIDE_ANGLES = (
    "shoulder_flex_ext", "shoulder_int_ext_rot", "shoulder_add_abd", "shoulder_total_flex",
    "elbow_flex_ext", "wrist_flex_ext", "forearm_pron_sup", "wrist_rad_uln_dev",
)
_TRUNK_ANGLES = (
    "thoracic_flex_ext", "thoracic_axial_rot", "thoracic_lat_flex",
    "lumbar_flex_ext", "lumbar_axial_rot", "lumbar_lat_flex",
)


@dataclass(frozen=True)
class Channel:
    name: str
    kind: str
    unit: str = ""

    @property
    def is_context(self) -> bool:
        return self.kind in CONTEXT_KINDS


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered channel descriptors; sensor channels first, then context channels."""

    channels: tuple

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate channel names: {dupes}")
        seen_context = False
        for c in self.channels:
            if c.kind not in KINDS:
                raise ConfigError(f"channel {c.name!r} has unknown kind {c.kind!r}")
            if c.is_context:
                seen_context = True
            elif seen_context:
                raise ConfigError(f"sensor channel {c.name!r} follows a context channel")
            if c.name == "label":
                raise ConfigError("'label' is reserved for the label column")
        for kind in CONTEXT_KINDS:
            if sum(c.kind == kind for c in self.channels) > 1:
                raise ConfigError(f"at most one {kind} channel allowed")

    @property
    def names(self) -> list:
        return [c.name for c in self.channels]

    @property
    def sensor_channels(self) -> tuple:
        return tuple(c for c in self.channels if not c.is_context)

    @property
    def context_channels(self) -> tuple:
        return tuple(c for c in self.channels if c.is_context)

    @property
    def sensor_names(self) -> list:
        return [c.name for c in self.sensor_channels]

    @property
    def sensor_dim(self) -> int:
        return len(self.sensor_channels)

    def __len__(self):
        return len(self.channels)

    def index_of_kind(self, kind):
        return [i for i, c in enumerate(self.channels) if c.kind == kind]

    def sensor_only(self) -> "ChannelSchema":
        return ChannelSchema(self.sensor_channels)

    def to_dict(self) -> dict:
        return {"channels": [asdict(c) for c in self.channels]}

    @classmethod
    def from_dict(cls, d) -> "ChannelSchema":
        try:
            return cls(tuple(Channel(**c) for c in d["channels"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed channel schema: {exc}") from None

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.names).encode()).hexdigest()[:16]


def default_schema(include_context: bool = True) -> ChannelSchema:
    """76 sensor channels (18 accel, 36 quaternion, 22 joint angle) + time + paretic flag."""
    chans = []
    for imu in ACCEL_IMUS:
        chans += [Channel(f"acc_{imu}_{ax}", "linear_acceleration", "m/s^2") for ax in "xyz"]
    for imu in IMUS:
        chans += [Channel(f"quat_{imu}_{q}", "quaternion", "") for q in "wxyz"]
    for side in ("l", "r"):
        chans += [Channel(f"angle_{a}_{side}", "joint_angle", "deg") for a in _SIDE_ANGLES]
    chans += [Channel(f"angle_{a}", "joint_angle", "deg") for a in _TRUNK_ANGLES]
    if include_context:
        chans += [Channel("time_elapsed", "time_elapsed", "s"), Channel("paretic_side", "paretic_flag", "")]
    return ChannelSchema(tuple(chans))


def compact_schema(n_sensor: int, include_context: bool = True) -> ChannelSchema:
    """Small generic schema, cycling through the three sensor kinds; handy for tests and desk runs."""
    chans = [Channel(f"s{i:02d}", SENSOR_KINDS[i % 3]) for i in range(n_sensor)]
    if include_context:
        chans += [Channel("time_elapsed", "time_elapsed", "s"), Channel("paretic_side", "paretic_flag", "")]
    return ChannelSchema(tuple(chans))
