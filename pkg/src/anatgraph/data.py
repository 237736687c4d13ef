"""Dataset ingestion, windowing, normalization, and the synthetic generator.

Real recordings arrive as CSV (one row per time step, one column per
sensor-channel pair) described by a manifest JSON. The synthetic generator
stands in for multi-user wearable data: every activity has a characteristic
multi-sensor oscillation pattern with an activity-specific inter-sensor
coupling matrix shared by all users, and each user distorts it with personal
amplitude, phase, and offset biases. Cranking up those bias scales produces
measurable cross-user distribution shift while the activity structure stays
learnable.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError
from .graph import DSADS_LAYOUT, OPPT_LAYOUT, SensorLayout

logger = logging.getLogger(__name__)

OPPT_ACTIVITIES = [
    "Open Door 1", "Open Door 2", "Close Door 1", "Close Door 2", "Open Fridge",
    "Close Fridge", "Open Dishwasher", "Close Dishwasher", "Open Drawer 1",
    "Close Drawer 1", "Open Drawer 2", "Close Drawer 2", "Open Drawer 3",
    "Close Drawer 3", "Clean Table", "Drink From Cup", "Toggle Switch",
]

DSADS_ACTIVITIES = [
    "Sitting", "Standing", "Lying On Back", "Lying On Right", "Ascending Stairs",
    "Descending Stairs", "Standing In Elevator Still", "Moving Around In Elevator",
    "Walking In Parking Lot", "Walking On Treadmill In Flat",
    "Walking On Treadmill Inclined Positions", "Running On Treadmill In Flat",
    "Exercising On Stepper", "Exercising On Cross Trainer",
    "Cycling On Exercise Bike In Horizontal Positions",
    "Cycling On Exercise Bike In Vertical Positions", "Rowing", "Jumping",
    "Playing Basketball",
]


@dataclass
class RawRecording:
    """One contiguous recording: signals [L, S, C] with a per-step activity id."""

    user_id: str
    signals: np.ndarray
    activities: np.ndarray

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.activities = np.asarray(self.activities, dtype=np.intp)
        if self.signals.ndim != 3:
            raise ConfigError(f"recording signals must be [L, S, C], got shape {self.signals.shape}")
        if self.activities.shape != (self.signals.shape[0],):
            raise ConfigError("activity annotations must be one per time step")

    def __len__(self) -> int:
        return self.signals.shape[0]


@dataclass
class WindowSet:
    """Labeled fixed-length windows: x is [N, S, T, C]."""

    x: np.ndarray
    activity: np.ndarray
    user: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.activity = np.asarray(self.activity, dtype=np.intp)
        self.user = np.asarray(self.user)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, mask: np.ndarray) -> "WindowSet":
        return WindowSet(self.x[mask], self.activity[mask], self.user[mask])


def concat_window_sets(sets: list[WindowSet]) -> WindowSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        raise ConfigError("no windows produced; check window length against segment lengths")
    return WindowSet(
        np.concatenate([s.x for s in sets]),
        np.concatenate([s.activity for s in sets]),
        np.concatenate([s.user for s in sets]),
    )


def windowize(rec: RawRecording, t_len: int, stride: int) -> WindowSet:
    """Slide a window over each constant-activity run; boundary windows are dropped.

    A run of length L yields floor((L - T) / stride) + 1 windows when L >= T,
    otherwise none.
    """
    if t_len <= 0:
        raise ValueError(f"window length must be positive, got {t_len}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    xs, labels = [], []
    length = len(rec)
    run_start = 0
    for i in range(1, length + 1):
        if i < length and rec.activities[i] == rec.activities[run_start]:
            continue
        run_len = i - run_start
        if run_len >= t_len:
            for start in range(run_start, run_start + run_len - t_len + 1, stride):
                xs.append(rec.signals[start:start + t_len].transpose(1, 0, 2))
                labels.append(rec.activities[run_start])
        run_start = i
    if not xs:
        n_sensors, n_channels = rec.signals.shape[1], rec.signals.shape[2]
        return WindowSet(np.zeros((0, n_sensors, t_len, n_channels)), np.zeros(0, dtype=np.intp),
                         np.zeros(0, dtype="<U32"))
    x = np.stack(xs)
    return WindowSet(x, np.array(labels, dtype=np.intp), np.full(len(xs), rec.user_id, dtype="<U32"))


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel z-score statistics fitted on source-user training windows only.

    The constructor is the leakage guard: target windows never reach
    :meth:`fit`, and :meth:`apply` only reads the fitted statistics.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train_windows: WindowSet) -> "ChannelStats":
        x = train_windows.x
        mean = x.mean(axis=(0, 1, 2))
        std = np.maximum(x.std(axis=(0, 1, 2)), 1e-8)
        return cls(mean=mean, std=std)

    def apply(self, windows: WindowSet) -> WindowSet:
        return WindowSet((windows.x - self.mean) / self.std, windows.activity, windows.user)


# -- synthetic multi-user generator --------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic multi-user activity generator.

    ``amp_bias``, ``phase_bias``, and ``offset_bias`` scale the per-user
    distortions; at zero every user draws from the same distribution.
    ``coupling`` may supply explicit symmetric [n_activities, S, S] matrices,
    otherwise they are generated from the seed.
    """

    n_users: int = 4
    n_activities: int = 5
    n_sensors: int = 5
    window_len: int = 64
    channels: int = 3
    windows_per_segment: int = 30
    stride: int = 32
    amp_bias: float = 0.3          # log-scale spread of the per-user global gain
    amp_sensor_jitter: float = 0.05  # extra per-sensor gain spread on top of the global gain
    phase_bias: float = 0.2
    offset_bias: float = 0.4
    style_bias: float = 0.6        # per-(user, activity) energy redistribution across sensors
    coupling_strength: float = 0.6
    noise_std: float = 0.15
    class_freq_min: float = 1.2    # dominant frequency of activity 0, cycles per window
    class_freq_step: float = 0.3   # spacing between consecutive activities' frequencies
    freq_jitter: float = 0.1       # relative per-sensor-channel detuning
    coupling: list | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_activities", "n_sensors", "window_len", "channels",
                     "windows_per_segment", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("amp_bias", "phase_bias", "offset_bias", "style_bias", "noise_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")

    def coupling_matrices(self, rng: np.random.Generator) -> np.ndarray:
        shape = (self.n_activities, self.n_sensors, self.n_sensors)
        if self.coupling is not None:
            mats = np.asarray(self.coupling, dtype=np.float64)
            if mats.shape != shape:
                raise ConfigError(f"coupling must have shape {shape}, got {mats.shape}")
            if not np.allclose(mats, mats.transpose(0, 2, 1)):
                raise ConfigError("coupling matrices must be symmetric")
            return mats
        raw = rng.uniform(-1.0, 1.0, size=shape)
        sym = 0.5 * (raw + raw.transpose(0, 2, 1))
        eye = np.eye(self.n_sensors)[None]
        return eye + self.coupling_strength * sym * (1.0 - eye)


def synthetic_layout(n_sensors: int) -> SensorLayout:
    """Layout for generated data; the 5-sensor default reuses the full-body layout."""
    if n_sensors == DSADS_LAYOUT.n_sensors:
        return DSADS_LAYOUT
    sides = tuple("left" if i % 2 else "right" for i in range(n_sensors))
    return SensorLayout(
        dataset_id="custom",
        positions=tuple(f"Sensor {i}" for i in range(n_sensors)),
        sides=("center",) + sides[1:],
        regions=tuple("torso" if i == 0 else ("upper_limb" if i % 2 else "lower_limb")
                      for i in range(n_sensors)),
    )


def generate_synthetic(cfg: SyntheticConfig) -> list[RawRecording]:
    """Deterministic multi-user dataset: one recording per (user, activity).

    Per activity: sinusoidal per-sensor-channel patterns (frequency, phase,
    weight) mixed through a symmetric inter-sensor coupling matrix, shared by
    every user. Per user: multiplicative amplitude bias, additive phase bias
    per sensor, and a constant offset per sensor-channel pair, plus white
    measurement noise.
    """
    rng = np.random.default_rng(cfg.seed)
    n_act, n_sens, n_chan, t_len = cfg.n_activities, cfg.n_sensors, cfg.channels, cfg.window_len

    # activities live in overlapping frequency bands; what separates them is the
    # per-sensor-channel energy pattern plus the inter-sensor coupling
    class_freq = cfg.class_freq_min + cfg.class_freq_step * np.arange(n_act)
    freq = class_freq[:, None, None] * (1.0 + cfg.freq_jitter * rng.uniform(-1.0, 1.0, size=(n_act, n_sens, n_chan)))
    phase0 = rng.uniform(0.0, 2.0 * np.pi, size=(n_act, n_sens, n_chan))
    weight = rng.uniform(0.2, 1.8, size=(n_act, n_sens, n_chan))
    coupling = cfg.coupling_matrices(rng)

    # user distortions: one global gain per user, mild per-sensor gain jitter,
    # a phase shift per sensor, a constant offset per sensor-channel pair, and a
    # per-(user, activity) style factor redistributing energy across sensors
    # (the same activity performed with different body-part emphasis)
    gain = np.exp(cfg.amp_bias * rng.standard_normal(cfg.n_users))
    amp = gain[:, None] * np.exp(cfg.amp_sensor_jitter * rng.standard_normal((cfg.n_users, n_sens)))
    phase_shift = cfg.phase_bias * rng.standard_normal((cfg.n_users, n_sens))
    offset = cfg.offset_bias * rng.standard_normal((cfg.n_users, n_sens, n_chan))
    style = np.exp(cfg.style_bias * rng.standard_normal((cfg.n_users, n_act, n_sens)))

    seg_len = t_len + (cfg.windows_per_segment - 1) * cfg.stride
    time = np.arange(seg_len) / float(t_len)

    recordings = []
    for u in range(cfg.n_users):
        for a in range(n_act):
            jitter = rng.uniform(0.0, 2.0 * np.pi)
            # base[t, s, c] before coupling
            angle = (2.0 * np.pi * freq[a][None] * time[:, None, None]
                     + phase0[a][None] + jitter + phase_shift[u][None, :, None])
            base = (weight[a] * style[u, a][:, None])[None] * np.sin(angle)
            coupled = np.einsum("sr,trc->tsc", coupling[a], base)
            signal = (amp[u][None, :, None] * coupled
                      + offset[u][None]
                      + cfg.noise_std * rng.standard_normal((seg_len, n_sens, n_chan)))
            recordings.append(RawRecording(
                user_id=f"user{u}",
                signals=signal,
                activities=np.full(seg_len, a, dtype=np.intp),
            ))
    return recordings


# -- manifest and CSV interchange ----------------------------------------------

_LAYOUTS = {"OPPT": OPPT_LAYOUT, "DSADS": DSADS_LAYOUT}


@dataclass
class DatasetManifest:
    """Companion document for a CSV dataset: layout, channels, classes, rate."""

    layout: SensorLayout
    channels: list[str]
    class_names: list[str]
    sampling_rate: float = 1.0
    clusters: dict[str, list[str]] = field(default_factory=dict)

    def sensor_columns(self) -> list[str]:
        return [f"{pos}_{ch}" for pos in self.layout.positions for ch in self.channels]


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None
    layout_id = doc.get("layout_id")
    if layout_id in _LAYOUTS:
        layout = _LAYOUTS[layout_id]
    else:
        from .graph import load_rules_file  # late import: rules files embed layouts

        rules_path = doc.get("rules_path")
        if rules_path is None:
            raise SchemaError(f"{path}: layout_id {layout_id!r} unknown and no rules_path given")
        layout, _ = load_rules_file(Path(path).parent / rules_path)
    channels = doc.get("channels")
    class_names = doc.get("classes")
    if not isinstance(channels, list) or not channels:
        raise SchemaError(f"{path}: 'channels' must be a non-empty list")
    if not isinstance(class_names, list) or not class_names:
        raise SchemaError(f"{path}: 'classes' must be a non-empty list")
    return DatasetManifest(
        layout=layout,
        channels=[str(c) for c in channels],
        class_names=[str(c) for c in class_names],
        sampling_rate=float(doc.get("sampling_rate", 1.0)),
        clusters={str(k): [str(u) for u in v] for k, v in doc.get("clusters", {}).items()},
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "layout_id": manifest.layout.dataset_id if manifest.layout.dataset_id in _LAYOUTS else "custom",
        "channels": manifest.channels,
        "classes": manifest.class_names,
        "sampling_rate": manifest.sampling_rate,
        "clusters": manifest.clusters,
    }
    if doc["layout_id"] == "custom":
        doc["layout"] = {
            "positions": [
                {"name": n, "side": s, "region": r}
                for n, s, r in zip(manifest.layout.positions, manifest.layout.sides, manifest.layout.regions)
            ]
        }
    Path(path).write_text(json.dumps(doc, indent=2))


def export_csv(recordings: list[RawRecording], manifest: DatasetManifest, path: str | Path) -> None:
    """Write recordings as rows of user_id, activity_id, timestamp, sensor columns."""
    columns = ["user_id", "activity_id", "timestamp"] + manifest.sensor_columns()
    step = 1.0 / manifest.sampling_rate
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        clock: dict[str, int] = {}
        for rec in recordings:
            tick = clock.get(rec.user_id, 0)
            flat = rec.signals.reshape(len(rec), -1)
            for i in range(len(rec)):
                row = [rec.user_id, int(rec.activities[i]), repr((tick + i) * step)]
                row.extend(repr(v) for v in flat[i])
                writer.writerow(row)
            clock[rec.user_id] = tick + len(rec)


def ingest_csv(path: str | Path, manifest: DatasetManifest) -> list[RawRecording]:
    """Parse a dataset CSV into recordings grouped by (user, contiguous activity run).

    Rows with missing or unparsable values are dropped and counted; unknown
    columns or out-of-range activity ids raise a schema error naming the
    offending column or row.
    """
    path = Path(path)
    expected = manifest.sensor_columns()
    n_classes = len(manifest.class_names)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        required = ["user_id", "activity_id", "timestamp"]
        for col in header:
            if col not in required and col not in expected:
                raise SchemaError(f"{path}: unknown column {col!r}")
        missing = [c for c in required + expected if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        positions = {name: header.index(name) for name in header}
        sensor_idx = [positions[c] for c in expected]
        user_idx, act_idx = positions["user_id"], positions["activity_id"]

        dropped = 0
        recordings: list[RawRecording] = []
        cur_user, cur_act = None, None
        cur_rows: list[np.ndarray] = []

        def flush():
            nonlocal cur_rows
            if cur_rows:
                signals = np.stack(cur_rows).reshape(len(cur_rows), manifest.layout.n_sensors,
                                                     len(manifest.channels))
                recordings.append(RawRecording(
                    user_id=cur_user,
                    signals=signals,
                    activities=np.full(len(cur_rows), cur_act, dtype=np.intp),
                ))
            cur_rows = []

        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                dropped += 1
                continue
            user = row[user_idx]
            try:
                act = int(row[act_idx])
            except ValueError:
                raise SchemaError(f"{path}: row {row_no}: activity_id {row[act_idx]!r} is not an integer") from None
            if not 0 <= act < n_classes:
                raise SchemaError(f"{path}: row {row_no}: unknown activity id {act} (have {n_classes} classes)")
            try:
                values = np.array([float(row[i]) for i in sensor_idx])
            except ValueError:
                dropped += 1
                continue
            if np.isnan(values).any():
                dropped += 1
                continue
            if user != cur_user or act != cur_act:
                flush()
                cur_user, cur_act = user, act
            cur_rows.append(values)
        flush()
    if dropped:
        logger.warning("%s: dropped %d rows with missing or unparsable values", path, dropped)
    return recordings


# -- assembled dataset ----------------------------------------------------------


@dataclass
class SensorDataset:
    """Windows plus everything the experiment harness needs to split and train."""

    windows: WindowSet
    layout: SensorLayout
    class_names: list[str]
    channels: list[str]
    clusters: dict[str, list[str]]

    @property
    def n_activities(self) -> int:
        return len(self.class_names)


def build_dataset(recordings: list[RawRecording], manifest: DatasetManifest,
                  t_len: int, stride: int) -> SensorDataset:
    windows = concat_window_sets([windowize(rec, t_len, stride) for rec in recordings])
    clusters = manifest.clusters
    if not clusters:
        users = sorted(set(windows.user.tolist()))
        clusters = {u: [u] for u in users}
    return SensorDataset(
        windows=windows,
        layout=manifest.layout,
        class_names=manifest.class_names,
        channels=manifest.channels,
        clusters=clusters,
    )


def synthetic_manifest(cfg: SyntheticConfig) -> DatasetManifest:
    return DatasetManifest(
        layout=synthetic_layout(cfg.n_sensors),
        channels=[f"ch{c}" for c in range(cfg.channels)],
        class_names=[f"activity{a}" for a in range(cfg.n_activities)],
        sampling_rate=float(cfg.window_len),
    )


def make_synthetic_dataset(cfg: SyntheticConfig) -> SensorDataset:
    """Generate, window, and wrap the synthetic dataset in one call."""
    return build_dataset(generate_synthetic(cfg), synthetic_manifest(cfg),
                         cfg.window_len, cfg.stride)
