"""Baseline EKF landmark SLAM over cone landmarks.

This is the comparison anchor and intentionally keeps the weaknesses of a
course-grade implementation: greedy gated nearest-neighbour association per
detection, no landmark deletion, and no vehicle-landmark cross-covariance
(each update touches only the vehicle block and the observed landmark's
block). The missing correlations make the no-loop-closure behaviour exact:
revisiting the start never retroactively corrects old landmarks.

Odometry source is selectable: RawIns predicts only when a GNSS sample
arrives (5 Hz pacing, GNSS position deltas plus IMU heading), Fused predicts
from the 50 Hz filtered odometry stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Cone, ConeColor, Pose2D, normalize_angle
from .fusion import OdometryEstimate
from .simulate import ConeDetection, SensorFrame


class OdometryMode(Enum):
    RAW_INS = "raw_ins"
    FUSED = "fused"


@dataclass
class LandmarkSlamConfig:
    det_range_sigma: float = 0.1     # assumed detection noise (inflated)
    det_bearing_sigma: float = 0.02
    gate_chi2: float = 9.21          # 2 dof @ 99%
    new_landmark_var: float = 1.0
    raw_predict_cov: tuple = (0.125, 0.125, 4e-4)  # per 5 Hz GNSS-delta predict
    fused_predict_cov: tuple = (4e-4, 4e-4, 1e-5)  # per 50 Hz odometry predict

    def detection_noise(self) -> np.ndarray:
        return np.diag([self.det_range_sigma ** 2, self.det_bearing_sigma ** 2])


@dataclass
class Association:
    """Result of data association: a matched landmark index or a new landmark."""
    index: int | None

    @property
    def is_new(self) -> bool:
        return self.index is None


class LandmarkSlam:
    """Joint vehicle-and-landmark EKF state (see module docstring for the
    deliberate simplifications)."""

    def __init__(self, initial_pose: Pose2D, cfg: LandmarkSlamConfig | None = None,
                 pose_cov: np.ndarray | None = None):
        self.cfg = cfg or LandmarkSlamConfig()
        self.mean = np.array([initial_pose.x, initial_pose.y, initial_pose.theta])
        self.cov = pose_cov.copy() if pose_cov is not None else np.diag([0.01, 0.01, 0.004])
        self.colors: list[ConeColor] = []

    @property
    def n_landmarks(self) -> int:
        return len(self.colors)

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.mean[0], self.mean[1], self.mean[2])

    def landmark(self, i: int) -> np.ndarray:
        return self.mean[3 + 2 * i: 5 + 2 * i]

    # --- prediction -------------------------------------------------------

    def predict(self, delta: Pose2D, dP: np.ndarray) -> None:
        """Propagate the vehicle block by a body-frame odometry delta.

        Landmark blocks are untouched; the vehicle block follows the standard
        EKF-SLAM prediction F_v P_vv F_v^T + G dP G^T.
        """
        x, y, theta = self.mean[:3]
        c, s = math.cos(theta), math.sin(theta)
        self.mean[0] = x + c * delta.x - s * delta.y
        self.mean[1] = y + s * delta.x + c * delta.y
        self.mean[2] = normalize_angle(theta + delta.theta)

        Fv = np.array([
            [1.0, 0.0, -s * delta.x - c * delta.y],
            [0.0, 1.0, c * delta.x - s * delta.y],
            [0.0, 0.0, 1.0],
        ])
        G = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        Pvv = self.cov[:3, :3]
        self.cov[:3, :3] = Fv @ Pvv @ Fv.T + G @ np.asarray(dP) @ G.T
        # vehicle-landmark cross blocks are identically zero in this baseline,
        # so the standard P_vm <- F_v P_vm is a no-op
        self.cov[:3, :3] = 0.5 * (self.cov[:3, :3] + self.cov[:3, :3].T)

    # --- measurement model ------------------------------------------------

    def _expected(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(h, H_pose, H_lm) of the range-bearing model for landmark i."""
        x, y, theta = self.mean[:3]
        lx, ly = self.landmark(i)
        dx, dy = lx - x, ly - y
        q = dx * dx + dy * dy
        r = math.sqrt(q)
        h = np.array([r, normalize_angle(math.atan2(dy, dx) - theta)])
        Hp = np.array([[-dx / r, -dy / r, 0.0],
                       [dy / q, -dx / q, -1.0]])
        Hl = np.array([[dx / r, dy / r],
                       [-dy / q, dx / q]])
        return h, Hp, Hl

    def _innovation_stats(self, det: ConeDetection, i: int):
        h, Hp, Hl = self._expected(i)
        nu = np.array([det.range - h[0], normalize_angle(det.bearing - h[1])])
        Pl = self.cov[3 + 2 * i: 5 + 2 * i, 3 + 2 * i: 5 + 2 * i]
        S = Hp @ self.cov[:3, :3] @ Hp.T + Hl @ Pl @ Hl.T + self.cfg.detection_noise()
        return nu, S, Hp, Hl

    def associate(self, det: ConeDetection) -> Association:
        """Greedy gated nearest neighbour over color-consistent landmarks."""
        best_i, best_d2 = None, self.cfg.gate_chi2
        for i, color in enumerate(self.colors):
            if color != det.color:
                continue
            # cheap Euclidean prefilter before the Mahalanobis test
            lx, ly = self.landmark(i)
            px, py = self.pose.transform(det.range * math.cos(det.bearing),
                                         det.range * math.sin(det.bearing))
            if (lx - px) ** 2 + (ly - py) ** 2 > 25.0:
                continue
            nu, S, _, _ = self._innovation_stats(det, i)
            d2 = float(nu @ np.linalg.solve(S, nu))
            if d2 < best_d2:
                best_i, best_d2 = i, d2
        return Association(best_i)

    def update(self, det: ConeDetection, assoc: Association) -> None:
        if assoc.is_new:
            self._augment(det)
            return
        i = assoc.index
        nu, S, Hp, Hl = self._innovation_stats(det, i)
        Sinv = np.linalg.inv(S)
        Pv = self.cov[:3, :3]
        sl = slice(3 + 2 * i, 5 + 2 * i)
        Pl = self.cov[sl, sl]
        Kv = Pv @ Hp.T @ Sinv
        Kl = Pl @ Hl.T @ Sinv
        self.mean[:3] += Kv @ nu
        self.mean[2] = normalize_angle(self.mean[2])
        self.mean[sl] += Kl @ nu
        Pv_new = Pv - Kv @ S @ Kv.T
        Pl_new = Pl - Kl @ S @ Kl.T
        self.cov[:3, :3] = 0.5 * (Pv_new + Pv_new.T)
        self.cov[sl, sl] = 0.5 * (Pl_new + Pl_new.T)

    def _augment(self, det: ConeDetection) -> None:
        x, y, theta = self.mean[:3]
        ang = theta + det.bearing
        lx = x + det.range * math.cos(ang)
        ly = y + det.range * math.sin(ang)
        # Jacobians of the init map wrt pose and measurement
        Gv = np.array([
            [1.0, 0.0, -det.range * math.sin(ang)],
            [0.0, 1.0, det.range * math.cos(ang)],
        ])
        Gz = np.array([
            [math.cos(ang), -det.range * math.sin(ang)],
            [math.sin(ang), det.range * math.cos(ang)],
        ])
        Pl = Gv @ self.cov[:3, :3] @ Gv.T + Gz @ self.cfg.detection_noise() @ Gz.T
        n = len(self.mean)
        new_cov = np.zeros((n + 2, n + 2))
        new_cov[:n, :n] = self.cov
        new_cov[n:, n:] = 0.5 * (Pl + Pl.T)
        self.cov = new_cov
        self.mean = np.concatenate([self.mean, [lx, ly]])
        self.colors.append(det.color)

    def process_detections(self, detections: list[ConeDetection]) -> None:
        for det in detections:
            self.update(det, self.associate(det))

    def extract(self) -> tuple[list[Cone], Pose2D]:
        cones = [Cone(float(self.mean[3 + 2 * i]), float(self.mean[4 + 2 * i]), c)
                 for i, c in enumerate(self.colors)]
        return cones, self.pose


class LandmarkSlamPipeline:
    """Feeds sensor frames (and optionally fused odometry) into the SLAM.

    RawIns mode ignores the odometry stream and predicts on GNSS arrivals;
    Fused mode predicts from consecutive 50 Hz odometry poses.
    """

    def __init__(self, mode: OdometryMode, initial_pose: Pose2D,
                 cfg: LandmarkSlamConfig | None = None):
        self.mode = mode
        self.slam = LandmarkSlam(initial_pose, cfg)
        self._last_gnss: tuple[float, float] | None = None
        self._last_theta: float | None = None
        self._last_odom_pose: Pose2D | None = None

    @property
    def pose(self) -> Pose2D:
        return self.slam.pose

    def on_odometry(self, est: OdometryEstimate) -> None:
        if self.mode is not OdometryMode.FUSED:
            return
        if self._last_odom_pose is not None:
            delta = self._last_odom_pose.delta_to(est.pose)
            self.slam.predict(delta, np.diag(self.slam.cfg.fused_predict_cov))
        self._last_odom_pose = est.pose

    def on_frame(self, frame: SensorFrame) -> None:
        if self.mode is OdometryMode.RAW_INS and frame.gnss is not None:
            theta = frame.imu.theta if frame.imu is not None else self.slam.mean[2]
            if self._last_gnss is not None:
                dxw = frame.gnss[0] - self._last_gnss[0]
                dyw = frame.gnss[1] - self._last_gnss[1]
                c, s = math.cos(self._last_theta), math.sin(self._last_theta)
                delta = Pose2D(c * dxw + s * dyw, -s * dxw + c * dyw,
                               normalize_angle(theta - self._last_theta))
                self.slam.predict(delta, np.diag(self.slam.cfg.raw_predict_cov))
            self._last_gnss = frame.gnss
            self._last_theta = theta
        if frame.cone_detections is not None:
            self.slam.process_detections(frame.cone_detections)

    def extract(self) -> tuple[list[Cone], Pose2D]:
        return self.slam.extract()
