"""Constant-velocity Kalman tracker for face boxes.

State is ``[cx, cy, w, h, vcx, vcy]``. Centres follow a constant-velocity
model; width and height are modelled as static with a small random walk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ring import FaceBox

_H = np.hstack([np.eye(4), np.zeros((4, 2))])


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass
class KalmanTrack:
    q: float = 1e-2
    r: float = 25.0
    velocity_var0: float = 1e4
    state: np.ndarray = field(default_factory=lambda: np.zeros(6))
    covariance: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e6)
    initialised: bool = False

    def _transition(self, dt_s: float) -> tuple[np.ndarray, np.ndarray]:
        F = np.eye(6)
        F[0, 4] = F[1, 5] = dt_s
        Q = np.zeros((6, 6))
        for p, v in ((0, 4), (1, 5)):
            Q[p, p] = dt_s**3 / 3
            Q[p, v] = Q[v, p] = dt_s**2 / 2
            Q[v, v] = dt_s
        Q[2, 2] = Q[3, 3] = dt_s
        return F, Q * self.q

    def predict(self, dt_ms: float) -> None:
        F, Q = self._transition(dt_ms / 1000.0)
        self.state = F @ self.state
        P = F @ self.covariance @ F.T + Q
        self.covariance = 0.5 * (P + P.T)

    def update(self, z: np.ndarray) -> None:
        P = self.covariance
        R = np.eye(4) * self.r
        S = _H @ P @ _H.T + R
        K = np.linalg.solve(S, _H @ P).T
        self.state = self.state + K @ (z - _H @ self.state)
        A = np.eye(6) - K @ _H
        P = A @ P @ A.T + K @ R @ K.T  # Joseph form
        self.covariance = 0.5 * (P + P.T)

    def check_spd(self) -> None:
        try:
            np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("track covariance lost positive-definiteness") from exc

    def box(self) -> FaceBox:
        cx, cy, w, h = self.state[:4]
        return FaceBox(float(cx), float(cy), float(w), float(h))


def kalman_step(track: KalmanTrack, measurement: Optional[FaceBox], dt: float) -> FaceBox:
    """Advance ``track`` by ``dt`` ms, fold in ``measurement`` if present, return the posterior box."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = None
    if measurement is not None:
        z = measurement.as_array()
        if not np.all(np.isfinite(z)):
            raise ValueError(f"non-finite measurement {measurement}")
    if not track.initialised:
        if z is None:
            return track.box()
        # diffuse prior: the first measurement becomes the estimate
        track.state = np.concatenate([z, np.zeros(2)])
        track.covariance = np.diag([track.r] * 4 + [track.velocity_var0] * 2)
        track.initialised = True
        track.check_spd()
        return track.box()
    track.predict(dt)
    if z is not None:
        track.update(z)
    track.check_spd()
    return track.box()
