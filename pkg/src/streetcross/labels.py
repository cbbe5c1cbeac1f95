"""Decision domains shared by the classifiers and the synthetic generator."""

from __future__ import annotations

from enum import Enum


class TrafficLightState(str, Enum):
    RED = "Red"
    GREEN = "Green"
    YELLOW = "Yellow"
    OFF = "Off"


class CrossingLabel(str, Enum):
    CROSS = "Cross"
    DONT_CROSS = "DontCross"

    @property
    def index(self) -> int:
        return 0 if self is CrossingLabel.CROSS else 1


FOUR_CLASS = (TrafficLightState.RED, TrafficLightState.GREEN, TrafficLightState.YELLOW, TrafficLightState.OFF)
THREE_CLASS = (TrafficLightState.RED, TrafficLightState.GREEN, TrafficLightState.OFF)
CROSSING_CLASSES = (CrossingLabel.CROSS, CrossingLabel.DONT_CROSS)


def class_set(n_classes: int) -> tuple[TrafficLightState, ...]:
    if n_classes == 4:
        return FOUR_CLASS
    if n_classes == 3:
        return THREE_CLASS
    raise ValueError(f"unsupported traffic-light class count {n_classes}")
