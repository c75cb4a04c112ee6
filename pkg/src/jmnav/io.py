"""File formats: IMU, truth and trajectory CSV, JSON run configuration.

All CSV files are UTF-8 with a single header row and SI units. Floats are
written with 17 significant digits, so a write-then-read round trip is
exact.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .baseline import DetectorConfig
from .exceptions import ConfigError, ParseError
from .filterbank import Trajectory
from .gaitsim import Truth
from .models import ModeNoise, MotionModel, same_height_model, varying_gait_model
from .rotations import quat_from_euler
from .strapdown import MAX_DT, NoiseConfig

IMU_COLUMNS = ("t", "sx", "sy", "sz", "wx", "wy", "wz")
TRUTH_COLUMNS = ("t", "rx", "ry", "rz", "vx", "vy", "vz", "yaw", "pitch", "roll", "mode")
MODELS = ("varying-gait", "same-height")
FLOAT_FMT = "%.17g"


def trajectory_columns(n_modes: int) -> tuple:
    head = ("t", "rx", "ry", "rz", "vx", "vy", "vz", "yaw", "pitch", "roll", "map_mode")
    return head + tuple(f"p{m}" for m in range(1, n_modes + 1)) + ("loglik_increment",)


def write_csv(path, columns, table):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header=",".join(columns), comments="", encoding="utf-8")


def _read_csv(path, columns=None):
    """Header and float table of a CSV file; ``columns`` fixes the header."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}", path) from exc
    names = tuple(h.strip() for h in header.split(","))
    if columns is not None and names != tuple(columns):
        raise ParseError(f"{path}: expected header {','.join(columns)}, got {header!r}", path, 1)
    try:
        with warnings.catch_warnings():
            # an empty body is reported below as a parse error
            warnings.simplefilter("ignore", UserWarning)
            table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}", path) from exc
    if table.size == 0:
        raise ParseError(f"{path}: no data rows", path)
    if table.shape[1] != len(names):
        raise ParseError(f"{path}: {table.shape[1]} fields per row, header has {len(names)}", path)
    bad = np.flatnonzero(~np.all(np.isfinite(table), axis=1))
    if bad.size:
        raise ParseError(f"{path}: non-finite value on line {bad[0] + 2}", path, int(bad[0]) + 2)
    return names, table


def _check_time(path, t):
    dt = np.diff(t)
    bad = np.flatnonzero(~((dt > 0) & (dt <= MAX_DT)))
    if bad.size:
        raise ParseError(f"{path}: time step on line {bad[0] + 3} outside (0, {MAX_DT}] s", path, int(bad[0]) + 3)


def read_imu_csv(path) -> np.ndarray:
    """IMU samples as an ``(n, 7)`` array with columns ``t, sx, sy, sz, wx, wy, wz``."""
    _, table = _read_csv(path, IMU_COLUMNS)
    _check_time(path, table[:, 0])
    return table


def write_imu_csv(path, samples):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 7:
        raise ConfigError("IMU samples must have 7 columns")
    write_csv(path, IMU_COLUMNS, samples)


def write_truth_csv(path, truth: Truth):
    table = np.column_stack([truth.t, truth.r, truth.v, truth.euler, truth.mode])
    write_csv(path, TRUTH_COLUMNS, table)


def read_truth_csv(path) -> Truth:
    """Ground truth written by :func:`write_truth_csv`.

    The stance flag is recovered as a non-moving mode with zero velocity,
    and segment tags are not stored.
    """
    _, table = _read_csv(path, TRUTH_COLUMNS)
    _check_time(path, table[:, 0])
    mode = table[:, 10]
    if np.any(mode != np.round(mode)) or np.any(mode < 1):
        raise ParseError(f"{path}: mode column must hold positive integers", path)
    mode = mode.astype(np.int64)
    v = table[:, 4:7]
    q = np.array([quat_from_euler(e) for e in table[:, 7:10]])
    stance = (mode != 1) & np.all(v == 0.0, axis=1)
    segment = np.full(mode.size, "", dtype=object)
    return Truth(table[:, 0], table[:, 1:4], v, q, mode, stance, segment)


def write_trajectory_csv(path, traj: Trajectory):
    L = traj.mode_posterior.shape[1]
    table = np.column_stack([traj.t, traj.r, traj.v, traj.euler, traj.map_mode, traj.mode_posterior, traj.loglik])
    write_csv(path, trajectory_columns(L), table)


def read_trajectory_csv(path) -> Trajectory:
    names, table = _read_csv(path)
    L = len(names) - 12
    if L < 1 or names != trajectory_columns(L):
        raise ParseError(f"{path}: not a trajectory file", path, 1)
    return Trajectory(
        table[:, 0],
        table[:, 1:4],
        table[:, 4:7],
        table[:, 7:10],
        table[:, 10].astype(np.int64),
        table[:, 11 : 11 + L],
        table[:, 11 + L],
    )


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


# ---------------------------------------------------------------- config

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_MODE_NOISE = {
    "type": "object",
    "properties": {"sigma_v": _POSITIVE, "sigma_w": _POSITIVE, "sigma_s": _POSITIVE},
    "required": ["sigma_v", "sigma_w", "sigma_s"],
    "additionalProperties": False,
}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "jmnav run configuration",
    "type": "object",
    "properties": {
        "model": {"enum": list(MODELS)},
        "noise": {
            "type": "object",
            "properties": {
                "sigma_s": {"type": "number", "minimum": 0},
                "sigma_w": {"type": "number", "minimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": MAX_DT},
                "g": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
            },
            "additionalProperties": False,
        },
        "variances": {
            "type": "object",
            "properties": {
                "sigma_nc": _POSITIVE,
                "sigma_h": _POSITIVE,
                "mode2": _MODE_NOISE,
                "mode3": _MODE_NOISE,
            },
            "additionalProperties": False,
        },
        "transition": {"oneOf": [_MATRIX, {"type": "string"}]},
        "mode_prior": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "max_leaves": {"oneOf": [{"type": "integer", "minimum": 1}, {"type": "null"}]},
        "align": {"type": "integer", "minimum": 1},
        "detector": {
            "type": "object",
            "properties": {
                "window": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 0},
                "sigma_a": _POSITIVE,
                "sigma_g": _POSITIVE,
                "sigma_v": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "learn": {
            "type": "object",
            "properties": {
                "max_iter": {"type": "integer", "minimum": 1},
                "tol_loglik": _POSITIVE,
                "method": {"enum": ["scoring", "bfgs"]},
                "gradient": {"enum": ["analytic", "central", "forward"]},
                "pi_init": {"oneOf": [_MATRIX, {"type": "string"}]},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "trajectory": {"type": "string"},
                "report": {"type": "string"},
                "metrics": {"type": "string"},
                "plot_data": {"type": "string"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


@dataclass
class RunConfig:
    """Validated run configuration.

    ``mode2``/``mode3`` hold the constraint standard deviations of the
    two stationary-type modes of whichever model is selected. A missing
    ``transition`` selects the model's default matrix.
    """

    model: str = "varying-gait"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sigma_nc: float = 1.0
    sigma_h: float = 0.01
    mode2: ModeNoise | None = None
    mode3: ModeNoise | None = None
    transition: np.ndarray | None = None
    mode_prior: np.ndarray | None = None
    max_leaves: int | None = 9
    align: int = 20
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    zupt_sigma_v: float = 0.01
    learn: dict = field(default_factory=dict)
    pi_init: np.ndarray | None = None
    outputs: dict = field(default_factory=dict)

    def build_model(self, transition=None) -> MotionModel:
        values = self.transition if transition is None else transition
        if self.model == "varying-gait":
            return varying_gait_model(values, self.mode2, self.mode3, self.sigma_nc, self.noise.g)
        return same_height_model(values, self.mode2, self.mode3, self.sigma_h, self.sigma_nc, self.noise.g)


def _matrix(value, base: Path, label):
    """Inline matrix, or a JSON file holding a matrix or an object with key ``pi``."""
    if isinstance(value, str):
        obj = read_json(base / value)
        value = obj.get("pi") if isinstance(obj, dict) else obj
        if value is None:
            raise ConfigError(f"{label}: {value!r} has no 'pi' entry")
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape != (3, 3):
        raise ConfigError(f"{label} must be a 3x3 matrix")
    return arr


def load_config(source=None) -> RunConfig:
    """Build a :class:`RunConfig` from a JSON file path or an already parsed dict.

    Unknown keys are rejected. Relative matrix file references are resolved
    against the directory of the config file.
    """
    if source is None:
        return RunConfig()
    if isinstance(source, dict):
        raw, base = source, Path.cwd()
    else:
        raw, base = read_json(source), Path(source).parent
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from exc

    noise_raw = dict(raw.get("noise", {}))
    if "g" in noise_raw:
        noise_raw["g"] = np.asarray(noise_raw["g"], dtype=float)
    var = raw.get("variances", {})
    det_raw = dict(raw.get("detector", {}))
    sigma_v = det_raw.pop("sigma_v", 0.01)
    noise = NoiseConfig(**noise_raw)
    learn = dict(raw.get("learn", {}))
    pi_init = learn.pop("pi_init", None)
    cfg = RunConfig(
        model=raw.get("model", "varying-gait"),
        noise=noise,
        sigma_nc=var.get("sigma_nc", 1.0),
        sigma_h=var.get("sigma_h", 0.01),
        mode2=ModeNoise(**var["mode2"]) if "mode2" in var else None,
        mode3=ModeNoise(**var["mode3"]) if "mode3" in var else None,
        transition=_matrix(raw["transition"], base, "transition") if "transition" in raw else None,
        mode_prior=np.asarray(raw["mode_prior"], dtype=float) if "mode_prior" in raw else None,
        max_leaves=raw.get("max_leaves", 9),
        align=raw.get("align", 20),
        detector=DetectorConfig(**det_raw, g_mag=float(np.linalg.norm(noise.g))),
        zupt_sigma_v=sigma_v,
        learn=learn,
        pi_init=_matrix(pi_init, base, "learn.pi_init") if pi_init is not None else None,
        outputs=dict(raw.get("outputs", {})),
    )
    if cfg.mode_prior is not None and cfg.mode_prior.size != 3:
        raise ConfigError("mode_prior must have one entry per mode")
    # builds the model once so that variance and mask errors surface at load time
    cfg.build_model()
    return cfg
