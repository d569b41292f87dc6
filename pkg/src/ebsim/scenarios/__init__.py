"""Shipped desk-scale scenarios.

scalar_2agent
    Two agents sharing one scalar state; the error-bound and trade-off
    workhorse (includes a [sweep] grid).
thermofluid_like
    4-state two-tank process, stable switching dynamics with a diagonal
    common Lyapunov certificate, step disturbances, 5% packet loss.
balancing_platform
    8-state 6-agent unstable platform with lagged inputs and synchronous
    averaging every 200 steps.
balancing_platform_noreset
    The same platform with resets disabled and a harsher loss rate;
    inter-agent errors drift and the closed loop eventually diverges.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..config import load_scenario
from ..sim import Scenario


def available() -> list[str]:
    root = resources.files(__package__)
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


def path(name: str) -> Path:
    p = Path(str(resources.files(__package__) / f"{name}.toml"))
    if not p.exists():
        raise FileNotFoundError(f"no shipped scenario named {name!r}; have {available()}")
    return p


def load(name: str) -> Scenario:
    return load_scenario(path(name))
