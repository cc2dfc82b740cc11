"""Deterministic closed-loop vehicle plant and multi-rate noisy sensors.

The simulation clock ticks at 100 Hz. Each sensor channel publishes on its
own integer schedule derived from that clock (IMU/wheel/steer 100 Hz, GNSS
5 Hz, LiDAR and cone detections 10 Hz, visual-odometry yaw rate 15 Hz).
All noise comes from one seeded generator owned by the run, so identical
(seed, config, controller) produce bitwise identical logs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import Cone, ConeColor, Pose2D, VehicleState, normalize_angle
from .track import Track

SIM_RATE_HZ = 100
SIM_DT = 1.0 / SIM_RATE_HZ

GNSS_RATE_HZ = 5
IMU_RATE_HZ = 100
WHEEL_RATE_HZ = 100
STEER_RATE_HZ = 100
SCAN_RATE_HZ = 10
DETECTION_RATE_HZ = 10
VO_RATE_HZ = 15

DETECTOR_RANGE = 10.0
DETECTOR_FOV = math.pi          # 180 degrees, forward
LIDAR_MAX_RANGE = 20.0
LIDAR_BEAMS = 181               # 1-degree increments over a 180-degree span
CONE_RADIUS = 0.1               # cones ray-cast as 0.2 m diameter cylinders


@dataclass
class VehicleParams:
    wheelbase: float = 1.55
    max_steer: float = 0.4       # rad
    steer_rate: float = 3.0      # rad/s slew
    tau_v: float = 0.4           # s, first-order speed lag
    max_speed: float = 12.0


DEFAULT_VEHICLE = VehicleParams()


@dataclass
class ControlCommand:
    steer: float = 0.0
    target_speed: float = 0.0


@dataclass
class NoiseConfig:
    gnss_xy: float = 0.25
    imu_theta: float = 0.01
    yaw_rate: float = 0.01
    accel: float = 0.1
    wheel_speed: float = 0.05
    steer_angle: float = 0.0
    lidar_range: float = 0.02
    det_range: float = 0.05
    det_bearing: float = 0.01
    p_color: float = 0.02

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(**{k: 0.0 for k in cls().__dict__})

    def to_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "NoiseConfig":
        with open(path) as f:
            return cls(**json.load(f))


@dataclass
class LaserScan:
    angle_min: float
    angle_max: float
    angle_increment: float
    ranges: np.ndarray
    max_range: float = LIDAR_MAX_RANGE

    def angles(self) -> np.ndarray:
        return self.angle_min + np.arange(len(self.ranges)) * self.angle_increment


@dataclass
class ConeDetection:
    range: float
    bearing: float
    color: ConeColor


@dataclass
class ImuSample:
    theta: float
    omega: float
    a: float


@dataclass
class SensorFrame:
    t: float
    gnss: tuple[float, float] | None = None
    imu: ImuSample | None = None
    wheel_speed: float | None = None
    steer_angle: float | None = None
    scan: LaserScan | None = None
    cone_detections: list[ConeDetection] | None = None
    vo_yaw_rate: float | None = None


def step_vehicle(state: VehicleState, cmd: ControlCommand, dt: float,
                 params: VehicleParams = DEFAULT_VEHICLE) -> VehicleState:
    """Kinematic bicycle step: explicit Euler from the current state.

    Speed tracks the commanded target through a first-order lag; steering
    slews toward the (clamped) command at the actuator rate. Out-of-range
    commands are clamped, never rejected.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    target_steer = min(max(cmd.steer, -params.max_steer), params.max_steer)
    target_v = min(max(cmd.target_speed, 0.0), params.max_speed)

    a = (target_v - state.v) / params.tau_v
    omega = state.v * math.tan(state.steer) / params.wheelbase
    pose = state.pose
    new_pose = Pose2D(
        pose.x + state.v * math.cos(pose.theta) * dt,
        pose.y + state.v * math.sin(pose.theta) * dt,
        normalize_angle(pose.theta + omega * dt),
    )
    dsteer = target_steer - state.steer
    max_ds = params.steer_rate * dt
    steer = state.steer + min(max(dsteer, -max_ds), max_ds)
    v = max(0.0, state.v + a * dt)
    return VehicleState(pose=new_pose, v=v,
                        omega=v * math.tan(steer) / params.wheelbase,
                        a=a, steer=steer)


def channel_due(rate_hz: int, tick: int) -> bool:
    """True when a channel with the given rate publishes at this 100 Hz tick."""
    if tick <= 0:
        return True
    return (tick * rate_hz) // SIM_RATE_HZ > ((tick - 1) * rate_hz) // SIM_RATE_HZ


def cast_scan(pose: Pose2D, cones: list[Cone], noise_sigma: float,
              rng: np.random.Generator, max_range: float = LIDAR_MAX_RANGE) -> LaserScan:
    """Ray-cast a 180-degree forward scan against cones modeled as cylinders.

    Occlusion falls out of taking the nearest hit per beam; beams with no
    return carry the max_range sentinel.
    """
    angle_min = -math.pi / 2
    inc = math.pi / (LIDAR_BEAMS - 1)
    ranges = np.full(LIDAR_BEAMS, max_range)
    for cone in cones:
        lx, ly = pose.inverse_transform(cone.x, cone.y)
        d = math.hypot(lx, ly)
        if d <= CONE_RADIUS + 0.05 or d > max_range + CONE_RADIUS:
            continue
        phi = math.atan2(ly, lx)
        half = math.asin(min(1.0, CONE_RADIUS / d))
        if abs(phi) > math.pi / 2 + half:
            continue
        i0 = max(0, int(math.ceil((phi - half - angle_min) / inc)))
        i1 = min(LIDAR_BEAMS - 1, int(math.floor((phi + half - angle_min) / inc)))
        if i1 < i0:
            continue
        alpha = angle_min + np.arange(i0, i1 + 1) * inc
        b = d * np.sin(alpha - phi)
        under = CONE_RADIUS * CONE_RADIUS - b * b
        hit = d * np.cos(alpha - phi) - np.sqrt(np.clip(under, 0.0, None))
        np.minimum(ranges[i0:i1 + 1], hit, out=ranges[i0:i1 + 1])
    hits = ranges < max_range - 1e-9
    n_hits = int(hits.sum())
    if n_hits and noise_sigma > 0.0:
        ranges[hits] += noise_sigma * rng.standard_normal(n_hits)
    np.clip(ranges, 0.05, max_range, out=ranges)
    return LaserScan(angle_min, math.pi / 2, inc, ranges, max_range)


def detect_cones(pose: Pose2D, cones: list[Cone], noise: NoiseConfig,
                 rng: np.random.Generator) -> list[ConeDetection]:
    """Range/bearing/color detections of cones in the forward field of view."""
    out: list[ConeDetection] = []
    others = {
        ConeColor.BLUE: (ConeColor.YELLOW, ConeColor.ORANGE_LARGE),
        ConeColor.YELLOW: (ConeColor.BLUE, ConeColor.ORANGE_LARGE),
        ConeColor.ORANGE_LARGE: (ConeColor.BLUE, ConeColor.YELLOW),
    }
    for cone in cones:
        lx, ly = pose.inverse_transform(cone.x, cone.y)
        d = math.hypot(lx, ly)
        if d > DETECTOR_RANGE or d < 1e-6:
            continue
        phi = math.atan2(ly, lx)
        if abs(phi) > DETECTOR_FOV / 2:
            continue
        r = d + noise.det_range * rng.standard_normal()
        b = phi + noise.det_bearing * rng.standard_normal()
        color = cone.color
        if noise.p_color > 0.0 and rng.uniform() < noise.p_color:
            color = others[color][int(rng.integers(2))]
        out.append(ConeDetection(max(0.05, r), b, color))
    return out


def sample_sensors(truth: VehicleState, track: Track, t: float,
                   noise: NoiseConfig, rng: np.random.Generator) -> SensorFrame:
    """Sample every sensor channel that is due at simulation time t."""
    tick = int(round(t * SIM_RATE_HZ))
    pose = truth.pose
    frame = SensorFrame(t=t)
    if channel_due(GNSS_RATE_HZ, tick):
        frame.gnss = (pose.x + noise.gnss_xy * rng.standard_normal(),
                      pose.y + noise.gnss_xy * rng.standard_normal())
    if channel_due(IMU_RATE_HZ, tick):
        frame.imu = ImuSample(
            theta=normalize_angle(pose.theta + noise.imu_theta * rng.standard_normal()),
            omega=truth.omega + noise.yaw_rate * rng.standard_normal(),
            a=truth.a + noise.accel * rng.standard_normal(),
        )
    if channel_due(WHEEL_RATE_HZ, tick):
        frame.wheel_speed = max(0.0, truth.v + noise.wheel_speed * rng.standard_normal())
    if channel_due(STEER_RATE_HZ, tick):
        frame.steer_angle = truth.steer + noise.steer_angle * rng.standard_normal()
    if channel_due(SCAN_RATE_HZ, tick):
        frame.scan = cast_scan(pose, track.cones, noise.lidar_range, rng)
    if channel_due(DETECTION_RATE_HZ, tick):
        frame.cone_detections = detect_cones(pose, track.cones, noise, rng)
    if channel_due(VO_RATE_HZ, tick):
        frame.vo_yaw_rate = truth.omega + noise.yaw_rate * rng.standard_normal()
    return frame
