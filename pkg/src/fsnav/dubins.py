"""Shortest forward-only Dubins paths (all six words, fixed turn radius).

Candidates from the closed-form case equations are validated by
reconstructing the end pose; any candidate that fails to land on the goal
(numerical edge cases in the CCC words) is discarded rather than trusted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose2D, normalize_angle

_TWO_PI = 2.0 * math.pi


def _mod2pi(x: float) -> float:
    return x % _TWO_PI


@dataclass
class DubinsPath:
    word: str                 # e.g. "LSL"
    params: tuple             # normalized segment lengths (radians / R-units)
    radius: float
    start: Pose2D

    @property
    def length(self) -> float:
        return sum(self.params) * self.radius

    def segments(self) -> list[tuple[str, float, float]]:
        """(kind, arc_length_m, curvature) per segment."""
        out = []
        for kind, p in zip(self.word, self.params):
            if kind == "S":
                out.append(("S", p * self.radius, 0.0))
            elif kind == "L":
                out.append(("L", p * self.radius, 1.0 / self.radius))
            else:
                out.append(("R", p * self.radius, -1.0 / self.radius))
        return out

    def sample(self, step: float) -> tuple[np.ndarray, np.ndarray]:
        """Poses ((N,3) array) and curvatures along the path at ~step spacing.

        Includes both endpoints; each segment is subdivided evenly.
        """
        poses = [[self.start.x, self.start.y, self.start.theta]]
        curv = [0.0]
        x, y, theta = self.start.x, self.start.y, self.start.theta
        for kind, length, kappa in self.segments():
            if length < 1e-12:
                continue
            n = max(1, int(math.ceil(length / step)))
            ds = length / n
            for _ in range(n):
                if kind == "S":
                    x += ds * math.cos(theta)
                    y += ds * math.sin(theta)
                else:
                    dth = kappa * ds
                    x += (math.sin(theta + dth) - math.sin(theta)) / kappa
                    y += -(math.cos(theta + dth) - math.cos(theta)) / kappa
                    theta += dth
                poses.append([x, y, theta])
                curv.append(kappa)
        arr = np.array(poses)
        arr[:, 2] = np.array([normalize_angle(t) for t in arr[:, 2]])
        return arr, np.array(curv)

    def end_pose(self) -> Pose2D:
        arr, _ = self.sample(step=max(self.length, 1e-6))
        # exact endpoint: integrate segment closed forms
        x, y, theta = self.start.x, self.start.y, self.start.theta
        for kind, length, kappa in self.segments():
            if kind == "S":
                x += length * math.cos(theta)
                y += length * math.sin(theta)
            else:
                dth = kappa * length
                x += (math.sin(theta + dth) - math.sin(theta)) / kappa
                y += -(math.cos(theta + dth) - math.cos(theta)) / kappa
                theta += dth
        return Pose2D(x, y, theta)


def _cases(alpha: float, beta: float, d: float):
    sa, sb = math.sin(alpha), math.sin(beta)
    ca, cb = math.cos(alpha), math.cos(beta)
    c_ab = math.cos(alpha - beta)

    # LSL
    p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sa - sb)
    if p_sq >= 0:
        tmp = math.atan2(cb - ca, d + sa - sb)
        yield "LSL", (_mod2pi(-alpha + tmp), math.sqrt(p_sq), _mod2pi(beta - tmp))
    # RSR
    p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sb - sa)
    if p_sq >= 0:
        tmp = math.atan2(ca - cb, d - sa + sb)
        yield "RSR", (_mod2pi(alpha - tmp), math.sqrt(p_sq), _mod2pi(-beta + tmp))
    # LSR
    p_sq = -2 + d * d + 2 * c_ab + 2 * d * (sa + sb)
    if p_sq >= 0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        yield "LSR", (_mod2pi(-alpha + tmp), p, _mod2pi(-_mod2pi(beta) + tmp))
    # RSL
    p_sq = d * d - 2 + 2 * c_ab - 2 * d * (sa + sb)
    if p_sq >= 0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        yield "RSL", (_mod2pi(alpha - tmp), p, _mod2pi(beta - tmp))
    # RLR
    tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sa - sb)) / 8.0
    if abs(tmp) <= 1.0:
        p = _mod2pi(_TWO_PI - math.acos(tmp))
        t = _mod2pi(alpha - math.atan2(ca - cb, d - sa + sb) + p / 2.0)
        yield "RLR", (t, p, _mod2pi(alpha - beta - t + p))
    # LRL
    tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sb - sa)) / 8.0
    if abs(tmp) <= 1.0:
        p = _mod2pi(_TWO_PI - math.acos(tmp))
        t = _mod2pi(-alpha + math.atan2(-ca + cb, d + sa - sb) + p / 2.0)
        yield "LRL", (t, p, _mod2pi(_mod2pi(beta) - alpha + 2.0 * p))


def shortest_dubins(start: Pose2D, goal: Pose2D, radius: float,
                    tol: float = 1e-6) -> DubinsPath | None:
    """Shortest validated Dubins path, or None if every case fails."""
    dx, dy = goal.x - start.x, goal.y - start.y
    dist = math.hypot(dx, dy)
    d = dist / radius
    theta = math.atan2(dy, dx) if dist > 1e-12 else 0.0
    alpha = _mod2pi(start.theta - theta)
    beta = _mod2pi(goal.theta - theta)

    best: DubinsPath | None = None
    for word, params in _cases(alpha, beta, d):
        cand = DubinsPath(word, params, radius, start)
        if best is not None and cand.length >= best.length:
            continue
        end = cand.end_pose()
        if (end.distance_to(goal) > max(tol, 1e-9 * max(1.0, dist))
                or abs(normalize_angle(end.theta - goal.theta)) > 1e-6):
            continue
        best = cand
    return best
