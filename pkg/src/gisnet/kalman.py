"""Constant-velocity Kalman filter baseline."""
from __future__ import annotations

import numpy as np

from .config import DataConfig, KalmanConfig


class CVKalman:
    """State (x, y, vx, vy); positions are measured, acceleration is white noise."""

    def __init__(self, dt: float, accel_std: float = 0.5, meas_var: float = 0.1):
        self.dt = dt
        self.F = np.eye(4)
        self.F[0, 2] = self.F[1, 3] = dt
        self.H = np.zeros((2, 4))
        self.H[0, 0] = self.H[1, 1] = 1.0
        g = np.array([0.5 * dt * dt, dt])
        q1 = np.outer(g, g) * accel_std**2
        self.Q = np.zeros((4, 4))
        for axis in (0, 1):
            idx = [axis, axis + 2]
            self.Q[np.ix_(idx, idx)] = q1
        self.R = np.eye(2) * meas_var
        self.x = np.zeros(4)
        self.P = np.eye(4)

    def initialise(self, z0: np.ndarray, z1: np.ndarray) -> None:
        """Two-point start: position z1, velocity from the first difference."""
        r = self.R[0, 0]
        self.x = np.concatenate([z1, (z1 - z0) / self.dt])
        self.P = np.diag([r, r, 2 * r / self.dt**2, 2 * r / self.dt**2])
        self.P[0, 2] = self.P[2, 0] = self.P[1, 3] = self.P[3, 1] = r / self.dt

    def predict(self) -> None:
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q

    def update(self, z: np.ndarray) -> None:
        y = z - self.H @ self.x
        S = self.H @ self.P @ self.H.T + self.R
        K = np.linalg.solve(S, self.H @ self.P).T
        self.x = self.x + K @ y
        I_KH = np.eye(4) - K @ self.H
        # Joseph form keeps P symmetric positive definite
        self.P = I_KH @ self.P @ I_KH.T + K @ self.R @ K.T

    def filter(self, zs: np.ndarray) -> np.ndarray:
        zs = np.asarray(zs, dtype=np.float64)
        self.initialise(zs[0], zs[1])
        for z in zs[2:]:
            self.predict()
            self.update(z)
        return self.x.copy()

    def rollout(self, steps: int) -> np.ndarray:
        out = np.empty((steps, 2))
        x = self.x.copy()
        for k in range(steps):
            x = self.F @ x
            out[k] = x[:2]
        return out


def cv_kalman_baseline(sample, data: DataConfig = DataConfig(), kalman: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """Filter the history, then coast; (fut, 2) relative to the last observed point."""
    kf = CVKalman(data.dt, kalman.accel_std, kalman.meas_var)
    kf.filter(sample.history)
    return kf.rollout(data.fut_frames) - sample.history[-1]
