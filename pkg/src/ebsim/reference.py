"""Centralized periodic observer/controller: the emulation target.

This is the hypothetical estimator with access to every measurement and the
true (commanded) input sequence.  It runs alongside each scenario so that
every agent's deviation from it can be measured directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GainSet, LtiPlant, predict_state


@dataclass
class CentralizedState:
    """Mutable prediction/posterior pair advanced by the scenario runner."""

    x_pred: np.ndarray
    x_post: np.ndarray

    @classmethod
    def initial(cls, x0: np.ndarray) -> "CentralizedState":
        x0 = np.asarray(x0, dtype=float)
        return cls(x_pred=x0.copy(), x_post=x0.copy())


def centralized_predict(
    state: CentralizedState, plant: LtiPlant, input_history
) -> np.ndarray:
    """Prediction with the true input history over all lags."""
    state.x_pred = predict_state(plant, state.x_post, input_history)
    return state.x_pred


def centralized_update(
    state: CentralizedState, gains: GainSet, plant: LtiPlant, y: np.ndarray
) -> np.ndarray:
    """Posterior from the full measurement vector, summed block by block."""
    y = np.asarray(y, dtype=float)
    if y.shape != (plant.p,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({plant.p},)")
    x = state.x_pred.copy()
    for agent in range(1, plant.agents + 1):
        sl = plant.output_slice(agent)
        Li = gains.L[:, sl]
        Ci = plant.C[sl, :]
        x += Li @ (y[sl] - Ci @ state.x_pred)
    state.x_post = x
    return x


def centralized_control(gains: GainSet, x_post: np.ndarray) -> np.ndarray:
    """Static state feedback on the posterior estimate."""
    return gains.F @ np.asarray(x_post, dtype=float)


def reference_error_step(
    eps_c: np.ndarray,
    gains: GainSet,
    plant: LtiPlant,
    v: np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """Closed-form error recursion of the centralized observer.

    eps(k) = (I-LC)A eps(k-1) + (I-LC) v(k-1) - L w(k).  ``v`` must include
    everything the observer cannot predict (process noise, applied-input
    mismatch, disturbances).  Used as an independent check of the simulated
    centralized error.
    """
    n = plant.n
    ILC = np.eye(n) - gains.L @ plant.C
    return ILC @ (plant.A @ np.asarray(eps_c, dtype=float)) + ILC @ np.asarray(
        v, dtype=float
    ) - gains.L @ np.asarray(w, dtype=float)
