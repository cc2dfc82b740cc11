"""Multi-rate EKF fusing GNSS, IMU, wheel/steer odometry and visual yaw rate.

State vector: [x, y, theta, v, omega, a]. All measurement models are linear
selectors over that state (the steer channel is folded into a yaw-rate
pseudo-measurement via the bicycle relation omega = v tan(steer) / L), so
updates are plain Kalman updates with angle wrapping on heading innovations.
Output is emitted on a fixed 50 Hz grid regardless of input rates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .core import Pose2D, normalize_angle
from .simulate import SensorFrame

STATE_DIM = 6
IX_X, IX_Y, IX_THETA, IX_V, IX_OMEGA, IX_A = range(STATE_DIM)

OUTPUT_RATE_HZ = 50
OUTPUT_DT = 1.0 / OUTPUT_RATE_HZ
MAX_PREDICT_DT = 0.1


class OutOfOrderFrameError(ValueError):
    """Raised when a sensor frame is older than data already fused."""


class MeasurementKind(Enum):
    GNSS_XY = "gnss_xy"
    IMU_THETA_OMEGA_A = "imu_theta_omega_a"
    WHEEL_V = "wheel_v"
    STEER_OMEGA = "steer_omega"
    VO_OMEGA = "vo_omega"


# state indices observed by each kind, and which innovation rows are angles
KIND_INDICES = {
    MeasurementKind.GNSS_XY: [IX_X, IX_Y],
    MeasurementKind.IMU_THETA_OMEGA_A: [IX_THETA, IX_OMEGA, IX_A],
    MeasurementKind.WHEEL_V: [IX_V],
    MeasurementKind.STEER_OMEGA: [IX_OMEGA],
    MeasurementKind.VO_OMEGA: [IX_OMEGA],
}
KIND_ANGLE_ROWS = {MeasurementKind.IMU_THETA_OMEGA_A: [0]}


@dataclass
class Measurement:
    kind: MeasurementKind
    z: np.ndarray
    R: np.ndarray
    t: float

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        k = len(KIND_INDICES[self.kind])
        if self.z.shape != (k,) or self.R.shape != (k, k):
            raise ValueError(f"{self.kind}: z/R dimension mismatch")


@dataclass
class FusionState:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, pose: Pose2D, pos_var: float = 0.25, theta_var: float = 0.04,
                vel_var: float = 25.0) -> "FusionState":
        mean = np.array([pose.x, pose.y, pose.theta, 0.0, 0.0, 0.0])
        cov = np.diag([pos_var, pos_var, theta_var, vel_var, vel_var, vel_var])
        return cls(mean, cov)

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.mean[IX_X], self.mean[IX_Y], self.mean[IX_THETA])


@dataclass
class FilterConfig:
    """Estimator tuning: process noise rates (per second), gate, channel set,
    and assumed sensor sigmas (floored so zero-noise runs stay well posed)."""

    q_diag: tuple = (0.01, 0.01, 0.005, 0.1, 0.1, 0.5)
    gate: float = 5.0
    channels: tuple = ("gnss", "imu", "wheel", "steer", "vo")
    gnss_sigma: float = 0.25
    theta_sigma: float = 0.01
    omega_sigma: float = 0.01
    accel_sigma: float = 0.1
    wheel_sigma: float = 0.05
    steer_sigma: float = 0.01
    wheelbase: float = 1.55
    sigma_floor: float = 1e-3

    def to_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "FilterConfig":
        with open(path) as f:
            d = json.load(f)
        d["q_diag"] = tuple(d.get("q_diag", cls.q_diag))
        d["channels"] = tuple(d.get("channels", cls.channels))
        return cls(**d)

    def var(self, sigma: float) -> float:
        return max(sigma, self.sigma_floor) ** 2


def motion_model(mean: np.ndarray, dt: float) -> np.ndarray:
    x, y, theta, v, omega, a = mean
    out = mean.copy()
    out[IX_X] = x + v * math.cos(theta) * dt
    out[IX_Y] = y + v * math.sin(theta) * dt
    out[IX_THETA] = normalize_angle(theta + omega * dt)
    out[IX_V] = v + a * dt
    return out


def motion_jacobian(mean: np.ndarray, dt: float) -> np.ndarray:
    theta, v = mean[IX_THETA], mean[IX_V]
    F = np.eye(STATE_DIM)
    F[IX_X, IX_THETA] = -v * math.sin(theta) * dt
    F[IX_X, IX_V] = math.cos(theta) * dt
    F[IX_Y, IX_THETA] = v * math.cos(theta) * dt
    F[IX_Y, IX_V] = math.sin(theta) * dt
    F[IX_THETA, IX_OMEGA] = dt
    F[IX_V, IX_A] = dt
    return F


def ekf_predict(s: FusionState, dt: float,
                q_diag=FilterConfig.q_diag) -> FusionState:
    """Propagate mean and covariance by dt (constant turn-rate/acceleration)."""
    if not 0.0 < dt <= MAX_PREDICT_DT:
        raise ValueError(f"predict dt must be in (0, {MAX_PREDICT_DT}], got {dt}")
    F = motion_jacobian(s.mean, dt)
    mean = motion_model(s.mean, dt)
    cov = F @ s.cov @ F.T + np.diag(q_diag) * dt
    cov = 0.5 * (cov + cov.T)
    return FusionState(mean, cov)


def ekf_update(s: FusionState, m: Measurement, gate: float = 5.0
               ) -> tuple[FusionState, bool]:
    """Kalman update; returns (state, accepted). Measurements whose innovation
    Mahalanobis distance exceeds the gate are rejected as outliers."""
    idx = KIND_INDICES[m.kind]
    H = np.zeros((len(idx), STATE_DIM))
    for row, j in enumerate(idx):
        H[row, j] = 1.0
    nu = m.z - s.mean[idx]
    for row in KIND_ANGLE_ROWS.get(m.kind, ()):
        nu[row] = normalize_angle(nu[row])
    S = H @ s.cov @ H.T + m.R
    Sinv = np.linalg.inv(S)
    d2 = float(nu @ Sinv @ nu)
    if gate > 0 and math.sqrt(max(0.0, d2)) > gate:
        return s, False
    K = s.cov @ H.T @ Sinv
    mean = s.mean + K @ nu
    mean[IX_THETA] = normalize_angle(mean[IX_THETA])
    IKH = np.eye(STATE_DIM) - K @ H
    cov = IKH @ s.cov @ IKH.T + K @ m.R @ K.T
    cov = 0.5 * (cov + cov.T)
    return FusionState(mean, cov), True


def measurements_from_frame(frame: SensorFrame, cfg: FilterConfig,
                            state: FusionState) -> list[Measurement]:
    """Channel updates present in a frame, in the fixed fusion order."""
    out: list[Measurement] = []
    if "gnss" in cfg.channels and frame.gnss is not None:
        out.append(Measurement(MeasurementKind.GNSS_XY, np.array(frame.gnss),
                               np.eye(2) * cfg.var(cfg.gnss_sigma), frame.t))
    if "imu" in cfg.channels and frame.imu is not None:
        z = np.array([frame.imu.theta, frame.imu.omega, frame.imu.a])
        R = np.diag([cfg.var(cfg.theta_sigma), cfg.var(cfg.omega_sigma),
                     cfg.var(cfg.accel_sigma)])
        out.append(Measurement(MeasurementKind.IMU_THETA_OMEGA_A, z, R, frame.t))
    if "wheel" in cfg.channels and frame.wheel_speed is not None:
        out.append(Measurement(MeasurementKind.WHEEL_V, np.array([frame.wheel_speed]),
                               np.array([[cfg.var(cfg.wheel_sigma)]]), frame.t))
    if "steer" in cfg.channels and frame.steer_angle is not None:
        # pseudo yaw-rate from the bicycle relation, using the wheel speed when
        # present (state speed otherwise)
        v = frame.wheel_speed if frame.wheel_speed is not None else float(state.mean[IX_V])
        z = v * math.tan(frame.steer_angle) / cfg.wheelbase
        # first-order noise propagation through v*tan(d)/L
        dz_dd = v / (cfg.wheelbase * math.cos(frame.steer_angle) ** 2)
        dz_dv = math.tan(frame.steer_angle) / cfg.wheelbase
        var = (dz_dd * max(cfg.steer_sigma, cfg.sigma_floor)) ** 2 \
            + (dz_dv * max(cfg.wheel_sigma, cfg.sigma_floor)) ** 2
        out.append(Measurement(MeasurementKind.STEER_OMEGA, np.array([z]),
                               np.array([[max(var, cfg.sigma_floor ** 2)]]), frame.t))
    if "vo" in cfg.channels and frame.vo_yaw_rate is not None:
        out.append(Measurement(MeasurementKind.VO_OMEGA, np.array([frame.vo_yaw_rate]),
                               np.array([[cfg.var(cfg.omega_sigma)]]), frame.t))
    return out


@dataclass
class OdometryEstimate:
    t: float
    pose: Pose2D
    v: float
    omega: float
    cov_diag: tuple[float, float, float]  # var(x), var(y), var(theta)


class FusionFilter:
    """Stateful wrapper around the predict/update primitives."""

    def __init__(self, initial: FusionState, cfg: FilterConfig | None = None):
        self.state = initial
        self.cfg = cfg or FilterConfig()
        self.t: float | None = None
        self.skipped_updates = 0

    def predict_to(self, t: float) -> None:
        if self.t is None:
            self.t = t
            return
        remaining = t - self.t
        if remaining < -1e-12:
            raise OutOfOrderFrameError(f"predict to {t} before filter time {self.t}")
        while remaining > 1e-12:
            dt = min(remaining, MAX_PREDICT_DT / 2)
            self.state = ekf_predict(self.state, dt, self.cfg.q_diag)
            remaining -= dt
        self.t = t

    def update(self, m: Measurement) -> bool:
        self.state, ok = ekf_update(self.state, m, self.cfg.gate)
        if not ok:
            self.skipped_updates += 1
        return ok

    def estimate(self) -> OdometryEstimate:
        s = self.state
        return OdometryEstimate(
            t=self.t if self.t is not None else 0.0,
            pose=s.pose, v=float(s.mean[IX_V]), omega=float(s.mean[IX_OMEGA]),
            cov_diag=(float(s.cov[0, 0]), float(s.cov[1, 1]), float(s.cov[2, 2])),
        )


class OdometryStream:
    """Feeds frames to a FusionFilter, emitting estimates on the 50 Hz grid."""

    def __init__(self, filt: FusionFilter):
        self.filter = filt
        self._next_out: float | None = None

    def ingest(self, frame: SensorFrame) -> list[OdometryEstimate]:
        f = self.filter
        out: list[OdometryEstimate] = []
        if f.t is not None and frame.t <= f.t - 1e-12:
            raise OutOfOrderFrameError(
                f"frame at {frame.t} is older than filter time {f.t}")
        if self._next_out is None:
            f.predict_to(frame.t)
            for m in measurements_from_frame(frame, f.cfg, f.state):
                f.update(m)
            out.append(f.estimate())
            self._next_out = frame.t + OUTPUT_DT
            return out
        while self._next_out < frame.t - 1e-9:
            f.predict_to(self._next_out)
            out.append(f.estimate())
            self._next_out += OUTPUT_DT
        f.predict_to(frame.t)
        for m in measurements_from_frame(frame, f.cfg, f.state):
            f.update(m)
        if frame.t >= self._next_out - 1e-9:
            out.append(f.estimate())
            self._next_out += OUTPUT_DT
        return out


def fuse_stream(filt: FusionFilter, frames) -> list[OdometryEstimate]:
    """Batch fusion of a time-ordered frame iterable into 50 Hz estimates."""
    stream = OdometryStream(filt)
    out: list[OdometryEstimate] = []
    for frame in frames:
        out.extend(stream.ingest(frame))
    return out


def odometry_to_csv(estimates: list[OdometryEstimate], path: str) -> None:
    with open(path, "w") as f:
        f.write("t,x,y,theta,v,omega,cov_xx,cov_yy,cov_tt\n")
        for e in estimates:
            f.write(f"{e.t!r},{e.pose.x!r},{e.pose.y!r},{e.pose.theta!r},"
                    f"{e.v!r},{e.omega!r},{e.cov_diag[0]!r},{e.cov_diag[1]!r},"
                    f"{e.cov_diag[2]!r}\n")
