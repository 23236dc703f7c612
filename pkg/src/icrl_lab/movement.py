from __future__ import annotations

import math

import numpy as np


def distance_covered(x1: float, y1: float, x2: float, y2: float) -> float:
    """Return Euclidean distance between two positions."""
    return math.hypot(x2 - x1, y2 - y1)


def clip_displacement(action: np.ndarray, max_step: float, disabled_axes: tuple[int, ...] = ()) -> np.ndarray:
    """Clip each displacement component to [-max_step, max_step].

    Axes listed in ``disabled_axes`` are forced to 0 (a broken actuator).
    """
    step = np.clip(np.asarray(action, dtype=np.float64), -max_step, max_step)
    if disabled_axes:
        step = step.copy()
        step[list(disabled_axes)] = 0.0
    return step


def apply_boundary_clamp(position: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep a position inside the square arena [low, high]^2."""
    return np.clip(position, low, high)


def point_circle_reward(x: float, y: float, dx: float, dy: float, *, literal: bool = False) -> float:
    """Reward counter-clockwise motion along the radius-10 circle.

    The default numerator is the circulation term ``x*dy - y*dx``. With
    ``literal=True`` the numerator is ``y*dx - x*dx`` exactly as it is often
    quoted; it is kept only for comparison runs.
    """
    numerator = (y * dx - x * dx) if literal else (x * dy - y * dx)
    return numerator / (1.0 + abs(math.hypot(x, y) - 10.0))
