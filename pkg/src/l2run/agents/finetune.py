"""Switch from Adam to plain SGD once evaluation returns stop improving."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigurationError


@dataclass
class PlateauDetector:
    """Signals a plateau when a window of ``window`` evaluations fails to beat the best
    return seen before it by more than ``eps * |best|``.

    The first evaluation is the initial reference, so with constant returns
    the plateau fires on evaluation number ``window``.
    """

    eps: float = 0.01
    window: int = 20
    best: float | None = None
    _current: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.window < 1 or self.eps < 0:
            raise ConfigurationError("plateau window must be positive and eps non-negative")

    def observe(self, value: float) -> bool:
        if self.best is None:
            self.best = value
        self._current.append(value)
        if len(self._current) < self.window:
            return False
        peak = max(self._current)
        self._current = []
        improved = peak > self.best + self.eps * abs(self.best)
        self.best = max(self.best, peak)
        return not improved


@dataclass
class TwoStageSchedule:
    stage1_lr: float = 1e-4
    stage2_lr: float = 5e-5
    eps: float = 0.01
    window: int = 20
    stage: int = 1
    switched_at: int | None = None
    detector: PlateauDetector = field(init=False)
    evaluations: int = 0

    def __post_init__(self):
        self.detector = PlateauDetector(self.eps, self.window)


def _optimizers(agent):
    found = [getattr(agent, n) for n in ("actor_opt", "critic_opt", "policy_opt", "value_opt") if hasattr(agent, n)]
    if not found:
        raise ConfigurationError("agent has no optimizers to switch")
    return found


def start_stage_one(agent, schedule: TwoStageSchedule) -> None:
    for opt in _optimizers(agent):
        opt.reset("adam", schedule.stage1_lr)


def two_stage_finetune(agent, schedule: TwoStageSchedule, eval_return: float):
    """Feed one evaluation return; on the first plateau swap every optimizer to SGD in place.

    Moments are dropped at the switch. The switch happens at most once.
    """
    schedule.evaluations += 1
    if schedule.stage == 1 and schedule.detector.observe(eval_return):
        for opt in _optimizers(agent):
            opt.reset("sgd", schedule.stage2_lr)
        schedule.stage = 2
        schedule.switched_at = schedule.evaluations
    return agent
