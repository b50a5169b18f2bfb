"""Self-checks of the gradient simulator and the candidate selection.

Each check is independent of the code path it verifies: expected gradients
come from closed-form losses, and expected selections come from evaluating
every member of the selection set afresh and taking the extreme by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .adapt import (
    AdaptConfig, FunctionEvaluator, ModelLossEvaluator, Strategy, adapt_step,
    estimate_gradient, propose_candidates, select_candidate,
)
from .augment import (
    OpInstance, OpKind, ParamLocator, Pipeline, Registry, adaptable_params, apply_pipeline,
    sample_pipeline,
)
from .data import DatasetSpec, gen_synthetic
from .rng import substream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def rotate_pipeline(level: int, height: int = 16, width: int = 16) -> Pipeline:
    return Pipeline((OpInstance.make(OpKind.ROTATE, (level, 1), height, width),))


def quadratic_evaluator(center: int = 3) -> FunctionEvaluator:
    """L(level) = (level - center)^2 on the first scalar of the first op."""
    return FunctionEvaluator(lambda p: float((p.ops[0].levels[0] - center) ** 2))


def check_quadratic() -> CheckResult:
    ev = quadratic_evaluator()
    p = rotate_pipeline(1)
    g = estimate_gradient(ev, p, ParamLocator(0, 0), 4.0, AdaptConfig())
    expected = (1.0 - 4.0) / 1
    ok = g.value == expected and g.delta_used == 1 and ev.forward_evals == 1
    return CheckResult("quadratic gradient", ok, f"G={g.value!r} at level 1 (expected {expected!r})")


def check_constant() -> CheckResult:
    ev = FunctionEvaluator(lambda p: 0.75)
    g = estimate_gradient(ev, rotate_pipeline(4), ParamLocator(0, 0), 0.75, AdaptConfig())
    return CheckResult("constant loss", g.value == 0.0, f"G={g.value!r}")


def check_boundary() -> CheckResult:
    ev = quadratic_evaluator()
    base = 36.0
    g = estimate_gradient(ev, rotate_pipeline(9), ParamLocator(0, 0), base, AdaptConfig())
    expected = (25.0 - 36.0) / -1
    identity = g.value * g.delta_used + g.base_loss
    ulp = np.spacing(abs(g.perturbed_loss))
    ok = g.delta_used == -1 and g.value == expected and abs(identity - g.perturbed_loss) <= ulp
    return CheckResult(
        "boundary reflection", ok,
        f"delta_used={g.delta_used} G={g.value!r} (expected {expected!r}), "
        f"|G*delta+base-perturbed|={abs(identity - g.perturbed_loss):.3g}",
    )


def _fresh_loss(model: nn.Model, batch, p: Pipeline) -> float:
    aug = apply_pipeline(p, batch)
    return nn.loss(nn.forward(model, aug.data), aug.labels)


def brute_force_selection(model, batch, base: Pipeline, cfg: AdaptConfig):
    """Independent selection: fresh finite differences, fresh candidate losses, explicit scan."""
    base_loss = _fresh_loss(model, batch, base)
    members = []
    for loc in adaptable_params(base):
        spec = base.spec(loc)
        level = base.level(loc)
        step = cfg.delta if spec.contains(level + cfg.delta) else -cfg.delta
        if not spec.contains(level + step):
            g = 0.0
        else:
            g = (_fresh_loss(model, batch, base.with_level(loc, level + step)) - base_loss) / step
        sgn = (g > 0) - (g < 0)
        if cfg.strategy is Strategy.MINIMIZE:
            sgn = -sgn
        new = min(max(level + cfg.epsilon * sgn, spec.min_level), spec.max_level)
        cand = base.with_level(loc, new)
        members.append((loc, cand, _fresh_loss(model, batch, cand)))
    if cfg.include_original_in_selection or not members:
        members.append((None, base, base_loss))
    values = [m[2] for m in members]
    target = max(values) if cfg.strategy is Strategy.MAXIMIZE else min(values)
    first = next(m for m in members if m[2] == target)
    return first, base_loss


def frozen_cnn_instances(n: int, seed: int = 0, batch_size: int = 32, max_adaptable: int = 4):
    """A trained-for-nothing (frozen, randomly initialized) cnn-s and n (batch, pipeline) pairs."""
    data = gen_synthetic(DatasetSpec(train_count=256, test_count=1, seed=seed))
    model = nn.init_model(nn.cnn_s(data.input_shape, data.num_classes, init_seed=seed))
    registry = Registry.default(data.input_shape[1], data.input_shape[2])
    rng = substream(seed, "oracle")
    out = []
    while len(out) < n:
        idx = rng.choice(len(data), size=batch_size, replace=False)
        p = sample_pipeline(rng, registry, 2)
        if len(adaptable_params(p)) > max_adaptable:
            continue
        out.append((data.batch(np.sort(idx)), p))
    return model, out


def check_selection(n: int = 50, seed: int = 0, strategy=Strategy.MAXIMIZE) -> CheckResult:
    model, instances = frozen_cnn_instances(n, seed)
    cfg = AdaptConfig(strategy=strategy)
    mismatches = []
    for i, (batch, p) in enumerate(instances):
        outcome = adapt_step(ModelLossEvaluator(model, batch), p, cfg)
        (loc, cand, value), _ = brute_force_selection(model, batch, p, cfg)
        if outcome.chosen_loss != value or outcome.chosen != cand or outcome.chosen_locator != loc:
            mismatches.append(f"#{i} {p.describe()}: got {outcome.chosen_loss!r} want {value!r}")
    ok = not mismatches
    detail = f"{n - len(mismatches)}/{n} instances match the exhaustive {strategy.value}"
    if mismatches:
        detail += "; first counterexample " + mismatches[0]
    return CheckResult(f"selection vs brute force ({strategy.value})", ok, detail)


def check_non_decrease(n: int = 100, seed: int = 1) -> CheckResult:
    model, instances = frozen_cnn_instances(n, seed)
    cfg = AdaptConfig(strategy=Strategy.MAXIMIZE, include_original_in_selection=True)
    bad = []
    for i, (batch, p) in enumerate(instances):
        out = adapt_step(ModelLossEvaluator(model, batch), p, cfg)
        if not out.chosen_loss >= out.base_loss:
            bad.append(f"#{i}: chosen {out.chosen_loss!r} < base {out.base_loss!r}")
    detail = f"{n - len(bad)}/{n} batches with chosen >= base"
    if bad:
        detail += "; counterexample " + bad[0]
    return CheckResult("non-decrease of chosen loss", not bad, detail)


def run_all(n_selection: int = 50, n_batches: int = 100) -> list[CheckResult]:
    return [
        check_quadratic(),
        check_constant(),
        check_boundary(),
        check_selection(n_selection),
        check_non_decrease(n_batches),
    ]
