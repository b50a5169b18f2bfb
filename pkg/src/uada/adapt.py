"""Zeroth-order adaptation of augmentation parameters.

For one batch and one sampled pipeline:

1. evaluate the loss of the pipeline as sampled (the base loss);
2. for every adaptable lattice scalar, shift it by ``delta`` and take the
   finite difference ``(L(shifted) - L(base)) / delta`` as its gradient;
3. build one candidate per scalar, moved ``epsilon`` lattice steps along the
   sign of its gradient;
4. evaluate the candidates and keep the one with the largest loss.

Exactly one scalar changes per batch. Operation kinds are never adapted.
"""

from __future__ import annotations

import enum
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .augment import ImageBatch, ParamLocator, ParamSpec, Pipeline, adaptable_params, apply_pipeline
from . import nn


class Strategy(str, enum.Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"
    RANDOM = "random"
    NONE = "none"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "maximize": cls.MAXIMIZE, "maximizeloss": cls.MAXIMIZE, "max": cls.MAXIMIZE,
            "minimize": cls.MINIMIZE, "minimizeloss": cls.MINIMIZE, "min": cls.MINIMIZE,
            "random": cls.RANDOM, "randomsign": cls.RANDOM,
            "none": cls.NONE, "off": cls.NONE, "baseline": cls.NONE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown adaptation strategy {value!r}") from None


@dataclass(frozen=True)
class AdaptConfig:
    delta: int = 1
    epsilon: int = 1
    strategy: Strategy = Strategy.MAXIMIZE
    include_original_in_selection: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if int(self.delta) != self.delta or abs(self.delta) < 1:
            raise ValueError(f"delta must be a nonzero integer, got {self.delta}")
        if int(self.epsilon) != self.epsilon or self.epsilon < 1:
            raise ValueError(f"epsilon must be a positive integer, got {self.epsilon}")


@dataclass(frozen=True)
class GradEstimate:
    locator: ParamLocator
    value: float
    perturbed_loss: float
    base_loss: float
    delta_used: int


class LossEvaluator(Protocol):
    """Loss of a frozen model on one batch under a given pipeline."""

    forward_evals: int

    def loss(self, p: Pipeline) -> float: ...

    def losses(self, pipelines: Sequence[Pipeline]) -> list[float]: ...


class ModelLossEvaluator:
    """Mean cross-entropy of ``model`` on ``batch`` augmented by a pipeline.

    Never touches the weights. With an executor, ``losses`` fans the
    evaluations out; results come back in input order.
    """

    def __init__(
        self, model: nn.Model, batch: ImageBatch, executor: Executor | None = None,
        keep_tapes: bool = False,
    ):
        self.model = model
        self.batch = batch
        self.executor = executor
        self.keep_tapes = keep_tapes
        self.tapes: dict[Pipeline, nn.Tape] = {}
        self._start = model.forward_count

    @property
    def forward_evals(self) -> int:
        return self.model.forward_count - self._start

    def loss(self, p: Pipeline) -> float:
        augmented = apply_pipeline(p, self.batch)
        if self.keep_tapes:
            tape = nn.forward_tape(self.model, augmented.data)
            self.tapes[p] = tape
            return nn.loss(tape.logits, augmented.labels)
        return nn.loss(nn.forward(self.model, augmented.data), augmented.labels)

    def losses(self, pipelines: Sequence[Pipeline]) -> list[float]:
        if self.executor is None or len(pipelines) < 2:
            return [self.loss(p) for p in pipelines]
        return list(self.executor.map(self.loss, pipelines))


class FunctionEvaluator:
    """Wraps a plain ``pipeline -> loss`` callable and counts calls."""

    def __init__(self, fn: Callable[[Pipeline], float]):
        self.fn = fn
        self.forward_evals = 0

    def loss(self, p: Pipeline) -> float:
        self.forward_evals += 1
        return float(self.fn(p))

    def losses(self, pipelines: Sequence[Pipeline]) -> list[float]:
        return [self.loss(p) for p in pipelines]


class _Cache:
    """Per-step memo of evaluated pipelines; repeated pipelines cost no forward."""

    def __init__(self, evaluator: LossEvaluator):
        self.evaluator = evaluator
        self.values: dict[Pipeline, float] = {}
        self.hits = 0

    def put(self, p: Pipeline, value: float):
        self.values[p] = value

    def many(self, pipelines: Sequence[Pipeline]) -> list[float]:
        todo = []
        for p in pipelines:
            if p in self.values or p in todo:
                self.hits += 1
            else:
                todo.append(p)
        for p, v in zip(todo, self.evaluator.losses(todo)):
            self.values[p] = v
        return [self.values[p] for p in pipelines]


def _perturbation(p: Pipeline, loc: ParamLocator, delta: int) -> tuple[Pipeline, int] | None:
    """Shifted pipeline and the step used; the step flips sign at a lattice edge."""
    spec = p.spec(loc)
    level = p.level(loc)
    for step in (delta, -delta):
        if spec.contains(level + step):
            return p.with_level(loc, level + step), step
    return None


def estimate_gradient(
    evaluator: LossEvaluator, p: Pipeline, loc: ParamLocator, base_loss: float, cfg: AdaptConfig
) -> GradEstimate:
    """One-sided finite difference of the loss in one lattice scalar."""
    shifted = _perturbation(p, loc, cfg.delta)
    if shifted is None:
        return GradEstimate(loc, 0.0, base_loss, base_loss, cfg.delta)
    q, step = shifted
    value = evaluator.loss(q)
    return GradEstimate(loc, (value - base_loss) / step, value, base_loss, step)


def _sign(x: float) -> int:
    return 1 if x > 0 else (-1 if x < 0 else 0)


def sign_update(
    level: int, grad: float, cfg: AdaptConfig, spec: ParamSpec,
    rng: np.random.Generator | None = None,
) -> int:
    """Move ``epsilon`` lattice steps by the sign rule of the strategy, clamped to the lattice.

    RandomSign ignores ``grad`` and uses the sign of a standard normal draw
    from ``rng``. A zero sign leaves the level unchanged.
    """
    strategy = cfg.strategy
    if strategy is Strategy.MAXIMIZE:
        direction = _sign(grad)
    elif strategy is Strategy.MINIMIZE:
        direction = -_sign(grad)
    elif strategy is Strategy.RANDOM:
        if rng is None:
            raise ValueError("RandomSign updates need an rng")
        direction = _sign(float(rng.standard_normal()))
    else:
        direction = 0
    return spec.clamp(level + cfg.epsilon * direction)


def propose_candidates(
    p: Pipeline, grads: Sequence[GradEstimate], cfg: AdaptConfig,
    rng: np.random.Generator | None = None,
) -> list[tuple[ParamLocator, Pipeline]]:
    """One single-scalar edit of ``p`` per gradient estimate, in locator order."""
    out = []
    for g in sorted(grads, key=lambda g: g.locator):
        loc = g.locator
        new_level = sign_update(p.level(loc), g.value, cfg, p.spec(loc), rng)
        out.append((loc, p.with_level(loc, new_level)))
    return out


@dataclass
class AdaptOutcome:
    chosen: Pipeline
    chosen_loss: float
    base_loss: float
    candidate_losses: list[tuple[ParamLocator, float]]
    forward_evals: int
    cache_hits: int
    chosen_locator: ParamLocator | None = None
    grads: list[GradEstimate] = field(default_factory=list)

    @property
    def loss_gap(self) -> float:
        return self.chosen_loss - self.base_loss


def _select(entries, strategy: Strategy, rng: np.random.Generator | None):
    """Index into ``entries`` [(locator, pipeline, loss)]; first occurrence wins ties."""
    if strategy is Strategy.RANDOM:
        if rng is None:
            raise ValueError("RandomSign selection needs an rng")
        return int(rng.integers(len(entries)))
    best = 0
    for i in range(1, len(entries)):
        value = entries[i][2]
        if strategy is Strategy.MINIMIZE:
            if value < entries[best][2]:
                best = i
        elif value > entries[best][2]:
            best = i
    return best


def select_candidate(
    evaluator: LossEvaluator, base: tuple[Pipeline, float],
    candidates: Sequence[tuple[ParamLocator, Pipeline]], cfg: AdaptConfig,
    rng: np.random.Generator | None = None, _cache: _Cache | None = None,
) -> AdaptOutcome:
    """Evaluate the candidates and pick one according to the strategy.

    Ties go to the lowest (op_index, param_index); the base pipeline, when
    part of the selection set, is considered last.
    """
    base_p, base_loss = base
    cache = _cache
    if cache is None:
        cache = _Cache(evaluator)
        cache.put(base_p, base_loss)
    start_evals, start_hits = evaluator.forward_evals, cache.hits
    ordered = sorted(candidates, key=lambda c: c[0])
    losses = cache.many([c[1] for c in ordered])
    entries = [(loc, cand, value) for (loc, cand), value in zip(ordered, losses)]
    if cfg.include_original_in_selection or not entries:
        entries.append((None, base_p, base_loss))
    loc, chosen, chosen_loss = entries[_select(entries, cfg.strategy, rng)]
    return AdaptOutcome(
        chosen=chosen,
        chosen_loss=chosen_loss,
        base_loss=base_loss,
        candidate_losses=[(e[0], e[2]) for e in entries if e[0] is not None],
        forward_evals=evaluator.forward_evals - start_evals,
        cache_hits=cache.hits - start_hits,
        chosen_locator=loc,
    )


def adapt_step(
    evaluator: LossEvaluator, p: Pipeline, cfg: AdaptConfig,
    rng: np.random.Generator | None = None,
) -> AdaptOutcome:
    """Base loss, gradient simulation, candidate proposal and selection for one batch."""
    start = evaluator.forward_evals
    base_loss = evaluator.loss(p)
    if cfg.strategy is Strategy.NONE:
        return AdaptOutcome(p, base_loss, base_loss, [], evaluator.forward_evals - start, 0)

    cache = _Cache(evaluator)
    cache.put(p, base_loss)
    locators = adaptable_params(p)
    shifted = [_perturbation(p, loc, cfg.delta) for loc in locators]
    to_eval = [s[0] for s in shifted if s is not None]
    # parameters with no room to move cost nothing; book them as cache hits
    cache.hits += sum(1 for s in shifted if s is None)
    values = iter(cache.many(to_eval))
    grads = []
    for loc, s in zip(locators, shifted):
        if s is None:
            grads.append(GradEstimate(loc, 0.0, base_loss, base_loss, cfg.delta))
        else:
            value = next(values)
            grads.append(GradEstimate(loc, (value - base_loss) / s[1], value, base_loss, s[1]))

    candidates = propose_candidates(p, grads, cfg, rng)
    outcome = select_candidate(evaluator, (p, base_loss), candidates, cfg, rng, _cache=cache)
    outcome.forward_evals = evaluator.forward_evals - start
    outcome.cache_hits = cache.hits
    outcome.grads = grads
    expected = 1 + 2 * len(locators) - cache.hits
    if outcome.forward_evals != expected:
        raise RuntimeError(
            f"forward budget mismatch: {outcome.forward_evals} evaluations, expected {expected}"
        )
    return outcome
