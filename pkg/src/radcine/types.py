"""Domain containers shared by every stage of the pipeline.

All containers hold a single slice. Arrays are copied on construction and
marked read-only, so instances can be shared between workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

RSS_TOL = 1e-6


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RadialKSpace:
    """Multi-coil radial samples, shape [n_readout, n_spokes, n_coils]."""

    data: np.ndarray
    spoke_timestamps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, np.complex128))
        object.__setattr__(
            self, "spoke_timestamps", _frozen(self.spoke_timestamps, np.float64)
        )

    @property
    def n_readout(self) -> int:
        return self.data.shape[0]

    @property
    def n_spokes(self) -> int:
        return self.data.shape[1]

    @property
    def n_coils(self) -> int:
        return self.data.shape[2]

    def spoke_major(self) -> np.ndarray:
        """Data reordered to [n_spokes, n_readout, n_coils]."""
        return np.ascontiguousarray(self.data.transpose(1, 0, 2))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Radial k-space coordinates [n_spokes, n_readout, 2] in (k_y, k_x) order.

    Coordinates are in cycles per pixel, so each component lies in
    [-0.5, 0.5).
    """

    coords: np.ndarray
    angle_increment_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords, np.float64))

    @property
    def n_spokes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_readout(self) -> int:
        return self.coords.shape[1]

    def flat(self) -> np.ndarray:
        return self.coords.reshape(-1, 2)

    def subset(self, spokes) -> "Trajectory":
        return Trajectory(self.coords[np.asarray(spokes, dtype=np.int64)],
                          self.angle_increment_deg)


@dataclass(frozen=True, eq=False)
class PhysioTrace:
    cardiac_triggers: np.ndarray
    bellows_samples: np.ndarray
    bellows_rate: float
    duration: float

    def __post_init__(self):
        object.__setattr__(
            self, "cardiac_triggers", _frozen(self.cardiac_triggers, np.float64)
        )
        object.__setattr__(
            self, "bellows_samples", _frozen(self.bellows_samples, np.float64)
        )

    @property
    def bellows_times(self) -> np.ndarray:
        return np.arange(self.bellows_samples.size) / self.bellows_rate


@dataclass(frozen=True, eq=False)
class BinnedKSpace:
    """Per cardiac phase spoke indices, data [n_readout, n_t, n_coils] and trajectories."""

    phase_index_sets: tuple
    per_phase_data: tuple
    per_phase_traj: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "phase_index_sets",
            tuple(_frozen(i, np.int64) for i in self.phase_index_sets),
        )
        object.__setattr__(
            self, "per_phase_data",
            tuple(_frozen(d, np.complex128) for d in self.per_phase_data),
        )
        object.__setattr__(self, "per_phase_traj", tuple(self.per_phase_traj))

    @property
    def n_phases(self) -> int:
        return len(self.phase_index_sets)

    @property
    def n_coils(self) -> int:
        return self.per_phase_data[0].shape[2]

    @property
    def n_readout(self) -> int:
        return self.per_phase_data[0].shape[0]

    def counts(self) -> list[int]:
        return [len(i) for i in self.phase_index_sets]

    def with_data(self, per_phase_data: Sequence[np.ndarray]) -> "BinnedKSpace":
        return BinnedKSpace(self.phase_index_sets, tuple(per_phase_data),
                            self.per_phase_traj)


@dataclass(frozen=True, eq=False)
class SensitivityMaps:
    """Coil sensitivities [n_coils, N, N], unit root-sum-of-squares where nonzero."""

    maps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "maps", _frozen(self.maps, np.complex128))

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def matrix_size(self) -> int:
        return self.maps.shape[1]

    @classmethod
    def normalized(cls, raw: np.ndarray, rel_floor: float = 0.0) -> "SensitivityMaps":
        """RSS-normalize `raw`; pixels with RSS below rel_floor*max are zeroed."""
        raw = np.asarray(raw, dtype=np.complex128)
        rss = np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))
        keep = rss > rel_floor * rss.max() if rss.max() > 0 else rss > 0
        keep &= rss > 0
        out = np.zeros_like(raw)
        out[:, keep] = raw[:, keep] / rss[keep]
        return cls(out)


@dataclass(frozen=True, eq=False)
class CineImage:
    frames: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frames", _frozen(self.frames, np.complex128))

    @property
    def n_phases(self) -> int:
        return self.frames.shape[0]

    @property
    def matrix_size(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class DCFWeights:
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, np.float64))


@dataclass(frozen=True)
class Violation:
    path: str
    invariant: str
    detail: str = ""

    def __str__(self):
        s = f"{self.path}: {self.invariant}"
        return f"{s} ({self.detail})" if self.detail else s


class ValidationError(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


def _check_finite(path: str, a: np.ndarray) -> Optional[Violation]:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        return Violation(f"{path}[{','.join(map(str, bad))}]", "data finite")
    return None


def _validate_traj(t: Trajectory, path: str) -> Optional[Violation]:
    c = t.coords
    if c.ndim != 3 or c.shape[2] != 2:
        return Violation(path + ".coords", "shape [n_spokes, n_readout, 2]",
                         str(c.shape))
    if (v := _check_finite(path + ".coords", c)) is not None:
        return v
    out = (c >= 0.5) | (c < -0.5)
    if np.any(out):
        bad = np.argwhere(out)[0]
        return Violation(f"{path}.coords[{','.join(map(str, bad))}]",
                         "components in [-0.5, 0.5)", f"value {c[tuple(bad)]}")
    for s in range(c.shape[0]):
        pts = c[s]
        far = pts[np.argmax(np.hypot(pts[:, 0], pts[:, 1]))]
        nrm = np.hypot(*far)
        if nrm == 0:
            continue
        cross = pts[:, 0] * far[1] - pts[:, 1] * far[0]
        if np.max(np.abs(cross)) > 1e-9 * max(nrm, 1.0):
            return Violation(f"{path}.coords[{s}]",
                             "samples collinear through the origin")
    return None


def validate(obj) -> Optional[Violation]:
    """Return the first violated invariant of a domain object, or None if ok."""
    name = type(obj).__name__
    if isinstance(obj, RadialKSpace):
        if obj.data.ndim != 3 or min(obj.data.shape) < 1:
            return Violation(name + ".data", "all dims >= 1", str(obj.data.shape))
        if obj.spoke_timestamps.shape != (obj.n_spokes,):
            return Violation(name + ".spoke_timestamps", "one timestamp per spoke")
        if obj.n_spokes > 1 and np.any(np.diff(obj.spoke_timestamps) <= 0):
            return Violation(name + ".spoke_timestamps", "timestamps strictly increasing")
        return _check_finite(name + ".data", obj.data)
    if isinstance(obj, Trajectory):
        return _validate_traj(obj, name)
    if isinstance(obj, PhysioTrace):
        trig = obj.cardiac_triggers
        if np.any(np.diff(trig) < 0):
            return Violation(name + ".cardiac_triggers", "triggers sorted")
        if trig.size and (trig[0] < 0 or trig[-1] > obj.duration):
            return Violation(name + ".cardiac_triggers", "triggers within [0, duration]")
        if not obj.bellows_rate > 0:
            return Violation(name + ".bellows_rate", "bellows_rate > 0")
        return _check_finite(name + ".bellows_samples", obj.bellows_samples)
    if isinstance(obj, BinnedKSpace):
        seen = set()
        if not (len(obj.per_phase_data) == len(obj.per_phase_traj) == obj.n_phases):
            return Violation(name, "one data array and trajectory per phase")
        for t, idx in enumerate(obj.phase_index_sets):
            p = f"{name}.phase[{t}]"
            if np.any(idx < 0):
                return Violation(p + ".indices", "indices are spoke indices")
            dup = seen.intersection(idx.tolist())
            if dup or len(set(idx.tolist())) != idx.size:
                return Violation(p + ".indices", "index sets disjoint")
            seen.update(idx.tolist())
            d = obj.per_phase_data[t]
            if d.ndim != 3 or d.shape[1] != idx.size:
                return Violation(p + ".data", "N_sp(t) = |I_t|", str(d.shape))
            tr = obj.per_phase_traj[t]
            if tr.n_spokes != idx.size or tr.n_readout != d.shape[0]:
                return Violation(p + ".traj", "trajectory matches retained spokes")
            if (v := _check_finite(p + ".data", d)) is not None:
                return v
            if (v := _validate_traj(tr, p + ".traj")) is not None:
                return v
        return None
    if isinstance(obj, SensitivityMaps):
        if (v := _check_finite(name + ".maps", obj.maps)) is not None:
            return v
        rss = np.sqrt(np.sum(np.abs(obj.maps) ** 2, axis=0))
        nz = rss > 0
        err = np.abs(rss[nz] - 1.0)
        if err.size and err.max() > RSS_TOL:
            return Violation(name + ".maps", "unit root-sum-of-squares where nonzero",
                             f"max deviation {err.max():.3g}")
        return None
    if isinstance(obj, CineImage):
        if obj.frames.ndim != 3 or obj.frames.shape[1] != obj.frames.shape[2]:
            return Violation(name + ".frames", "shape [T, N, N]", str(obj.frames.shape))
        return _check_finite(name + ".frames", obj.frames)
    if isinstance(obj, DCFWeights):
        if (v := _check_finite(name + ".weights", obj.weights)) is not None:
            return v
        if np.any(obj.weights < 0):
            return Violation(name + ".weights", "weights >= 0")
        return None
    validator = getattr(obj, "validate", None)
    if callable(validator):
        return validator()
    raise TypeError(f"no invariants known for {name}")


def ensure_valid(obj):
    """Raise ValidationError on the first violated invariant; returns obj."""
    v = validate(obj)
    if v is not None:
        raise ValidationError(v)
    return obj
