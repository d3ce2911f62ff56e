import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class WarmupCosineSchedule:
    base_lr: float
    total_steps: int
    warmup_steps: int
    min_lr_fraction: float = 0.01

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base learning rate must be > 0, got {self.base_lr}")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"warmup steps {self.warmup_steps} must lie in (0, total steps {self.total_steps})"
            )

    @classmethod
    def from_fraction(cls, base_lr, total_steps, warmup_fraction=0.05, min_lr_fraction=0.01):
        warmup = max(1, int(round(warmup_fraction * total_steps)))
        return cls(base_lr, total_steps, warmup, min_lr_fraction)

    def to_dict(self):
        return asdict(self)


def lr_at(schedule: WarmupCosineSchedule, step):
    """Linear warmup from 0, then cosine decay to ``min_lr_fraction``·η."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    floor = schedule.min_lr_fraction
    return schedule.base_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


class WarmupCosineScheduler:
    def __init__(self, optimizer, schedule: WarmupCosineSchedule):
        self.optimizer = optimizer
        self.schedule = schedule
        self.last_step = 0
        self.step(0)

    def step(self, step):
        lr = lr_at(self.schedule, step)
        for param_group in self.optimizer.param_groups:
            param_group['lr'] = lr
        self.last_step = step
        return lr

    def get_last_lr(self):
        return [group['lr'] for group in self.optimizer.param_groups]

    def state_dict(self):
        return {'last_step': self.last_step, 'schedule': self.schedule.to_dict()}

    def load_state_dict(self, state):
        self.step(state['last_step'])
