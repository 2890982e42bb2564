"""Search for the cheapest uniform fixed-point format meeting the precision targets.

Candidates are tried cheapest first. Each one is evaluated with paired ICMS
rollouts in heuristic order; a candidate is pruned when the leading slice of
that order already overshoots a tolerance, and rejected at the first violation
after that. The first candidate that survives its full rollout set wins.
"""

import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import ConfigError, EmptyCandidateSetError
from app.models.fixed_point import FxpFormat, FxpStats
from app.models.robot import JointState, RobotModel
from app.models.simulation import RolloutFailure
from app.schemas.reports import (
    PASSED,
    PRUNED,
    REJECTED,
    AuditEntry,
    CandidateResult,
    QuantReport,
    RangeReport,
    Violation,
)
from app.schemas.run_config import ControllerConfig, SearchConstraints, SimConfig
from app.services.icms import (
    QuantSetup,
    RolloutOutcome,
    fit_compensation,
    heuristic_sample_order,
    initial_states,
    rollout_pairs,
    sample_states,
)
from app.services.rbd_kernels import FUNCTIONS, batch_evaluate, bind
from app.utils.logging import get_logger

logger = get_logger(__name__)

HARDWARE_WIDTHS = {
    "dsp48": [18, 32],
    "dsp58": [24, 32],
}
SAFETY_FACTOR = 2.0


def required_n_int(peak: float, safety: float = SAFETY_FACTOR) -> int:
    """Integer bits (sign included) holding ±safety·peak."""
    if peak <= 0:
        return 1
    return max(1, math.ceil(math.log2(safety * peak)) + 1)


def range_analysis(
    model: RobotModel,
    samples: int = 200,
    seed: int = 0,
    overrides: Optional[Dict[str, float]] = None,
) -> RangeReport:
    """Peak magnitude of every tracked kernel intermediate over sampled states."""
    if samples < 100:
        raise ValueError(f"range analysis needs at least 100 samples, got {samples}")
    stats = FxpStats()
    binding = bind(model, stats=stats)
    states = sample_states(model, samples, seed)
    rng = np.random.default_rng(seed)
    efforts = model.effort_limits
    taus = []
    for s in states:
        tau = binding.gravity_torque(s.q)
        if efforts is not None:
            bounded = np.where(np.isfinite(efforts), efforts, np.abs(tau))
            tau = rng.uniform(-bounded, bounded)
        taus.append(tau)
    for function in FUNCTIONS:
        batch_evaluate(binding, function, states, taus=taus)

    peaks = dict(stats.max_abs)
    for name, value in (overrides or {}).items():
        peaks[name] = float(value)
    peak = max(peaks.values(), default=0.0)
    report = RangeReport(
        n_int=required_n_int(peak),
        peak=peak,
        peaks={k: peaks[k] for k in sorted(peaks)},
        samples=samples,
        seed=seed,
    )
    logger.info(f"Range analysis on {model.name}: peak {peak:.4g}, n_int {report.n_int}")
    return report


def enumerate_candidates(constraints: SearchConstraints, n_int_floor: int) -> List[FxpFormat]:
    """Formats ordered cheapest first: smallest width, then most fractional bits."""
    min_frac = constraints.min_frac
    formats: List[FxpFormat] = []
    if constraints.mode == "unconstrained":
        for n_int in range(n_int_floor, constraints.n_int_max + 1):
            for n_frac in range(min_frac, constraints.n_frac_max + 1):
                if constraints.widths is None or n_int + n_frac in constraints.widths:
                    formats.append(FxpFormat(n_int, n_frac))
    else:
        widths = constraints.widths or HARDWARE_WIDTHS[constraints.mode]
        for width in widths:
            for n_int in range(n_int_floor, width - min_frac + 1):
                formats.append(FxpFormat(n_int, width - n_int))
    formats.sort(key=lambda f: (f.width, -f.n_frac))
    if not formats:
        raise EmptyCandidateSetError(
            f"no {constraints.mode} format holds {n_int_floor} integer bits "
            f"with at least {constraints.min_frac} fractional bits"
        )
    return formats


class PassCriterion:
    """All selected metrics within tolerance, or a weighted score ≤ 1 when weighted."""

    def __init__(self, sim: SimConfig, constraints: SearchConstraints):
        tolerances = dict(constraints.tolerances)
        tolerances.setdefault("trajectory", sim.tolerance)
        missing = [m for m in sim.metrics if m not in tolerances]
        if missing:
            raise ConfigError(f"no tolerance for metrics {missing}", "search.tolerances")
        self.metrics = list(sim.metrics)
        self.tolerances = {m: float(tolerances[m]) for m in self.metrics}
        self.weights = dict(sim.weights) if sim.weights else None

    def ratios(self, values: Dict[str, float]) -> Dict[str, float]:
        return {m: values[m] / self.tolerances[m] for m in self.metrics}

    def worst(self, values: Dict[str, float], factor: float = 1.0) -> Optional[Tuple[str, float]]:
        """Violating (metric, value) at ``factor`` × tolerance, or None."""
        ratios = self.ratios(values)
        if self.weights is not None:
            total = sum(self.weights.get(m, 0.0) for m in self.metrics)
            score = sum(self.weights.get(m, 0.0) * r for m, r in ratios.items()) / total
            # a failed rollout violates whatever the weights
            if math.isinf(max(ratios.values())) or score > factor:
                metric = max(ratios, key=lambda m: (ratios[m], m))
                return metric, values[metric]
            return None
        metric = max(ratios, key=lambda m: (ratios[m], m))
        if ratios[metric] > factor:
            return metric, values[metric]
        return None


def _outcome_metrics(outcome: RolloutOutcome) -> Dict[str, float]:
    metrics = outcome.metrics()
    if isinstance(outcome, RolloutFailure):
        metrics["error"] = outcome.error
    return metrics


class FormatSearch:
    """One search run; holds the evaluation order, budget and results."""

    def __init__(
        self,
        model: RobotModel,
        controller_cfg: ControllerConfig,
        constraints: SearchConstraints,
        sim: SimConfig,
        seed: int = 0,
        rounding: str = "nearest",
        accumulate: str = "wide",
        variant: str = "deferred",
        workers: Optional[int] = None,
    ):
        self.model = model
        self.controller_cfg = controller_cfg
        self.constraints = constraints
        self.sim = sim
        self.seed = seed
        self.rounding = rounding
        self.accumulate = accumulate
        self.variant = variant
        self.workers = workers
        self.criterion = PassCriterion(sim, constraints)
        self.rollouts_used = 0
        starts = initial_states(model, sim, constraints.rollouts_per_candidate, seed)
        self.starts: List[JointState] = heuristic_sample_order(starts, model)
        self.lead = max(1, math.ceil(constraints.prune_fraction * len(self.starts)))

    def setup(self, fmt: FxpFormat, compensation=None) -> QuantSetup:
        return QuantSetup(fmt, self.rounding, self.accumulate, self.variant, compensation)

    def _budget_left(self) -> Optional[int]:
        if self.constraints.max_rollouts is None:
            return None
        return self.constraints.max_rollouts - self.rollouts_used

    def _run(self, setup: QuantSetup, first: int, count: int) -> List[Dict[str, float]]:
        """Metrics of rollouts ``first .. first+count`` of the evaluation order."""
        starts = self.starts[first : first + count]
        self.rollouts_used += len(starts)
        outcomes = rollout_pairs(
            self.model,
            self.controller_cfg,
            setup,
            self.sim,
            starts,
            seed=self.seed + first,
            workers=self.workers,
        )
        return [_outcome_metrics(o) for o in outcomes]

    def _run_single(self, setup: QuantSetup, index: int) -> Dict[str, float]:
        return self._run(setup, index, 1)[0]

    def _scan(self, result: CandidateResult, values: List[Dict[str, float]], first: int, factor: float):
        total = len(self.starts)
        for k, metrics in enumerate(values):
            for m in self.criterion.metrics:
                result.metrics[m] = max(result.metrics.get(m, 0.0), metrics[m])
            hit = self.criterion.worst({m: metrics[m] for m in self.criterion.metrics}, factor)
            if hit is not None:
                metric, value = hit
                result.violation = Violation(
                    metric=metric,
                    value=value,
                    tolerance=self.criterion.tolerances[metric],
                    rollout=first + k,
                    fraction=(first + k + 1) / total,
                    error=metrics.get("error"),
                )
                return True
        return False

    def evaluate(self, fmt: FxpFormat) -> Optional[CandidateResult]:
        """Evaluate one candidate; None when the budget cannot cover it."""
        result = CandidateResult(
            format=str(fmt), n_int=fmt.n_int, n_frac=fmt.n_frac, width=fmt.width
        )
        setup = self.setup(fmt)
        chunk = max(self.lead, 1)
        first = 0
        total = len(self.starts)
        while first < total:
            count = min(chunk, total - first)
            left = self._budget_left()
            if left is not None and left < count:
                return None
            values = self._run(setup, first, count)
            result.rollouts += count
            if first == 0 and self._scan(result, values, first, self.constraints.prune_factor):
                result.status = PRUNED
                return result
            if self._scan(result, values, first, 1.0):
                result.status = REJECTED
                return result
            first += count
        result.status = PASSED
        return result

    def audit(self, pruned: Sequence[CandidateResult]) -> List[AuditEntry]:
        """Re-run the violating rollout of a sample of pruned candidates."""
        fraction = self.constraints.audit_fraction
        if not pruned or fraction <= 0:
            return []
        rng = np.random.default_rng(self.seed)
        count = max(1, math.ceil(fraction * len(pruned)))
        picks = sorted(rng.choice(len(pruned), size=min(count, len(pruned)), replace=False))
        audits = []
        for i in picks:
            left = self._budget_left()
            if left is not None and left < 1:
                logger.warning("Rollout budget exhausted; remaining audits skipped")
                break
            c = pruned[int(i)]
            v = c.violation
            metrics = self._run_single(self.setup(FxpFormat(c.n_int, c.n_frac)), v.rollout)
            value = metrics[v.metric]
            confirmed = self.criterion.worst(
                {m: metrics[m] for m in self.criterion.metrics}
            ) is not None
            audits.append(
                AuditEntry(
                    format=c.format,
                    rollout=v.rollout,
                    metric=v.metric,
                    value=value,
                    tolerance=v.tolerance,
                    confirmed=confirmed,
                )
            )
            if not confirmed:
                logger.warning(f"Pruned candidate {c.format} passed its audit rollout")
        return audits

    def validate_compensation(self, fmt: FxpFormat, compensation) -> Tuple[bool, Dict[str, float]]:
        """Re-run the leading rollouts with the compensation applied."""
        setup = self.setup(fmt, compensation)
        count = self.lead
        left = self._budget_left()
        if left is not None:
            count = min(count, max(left, 0))
        if count == 0:
            return False, {}
        values = self._run(setup, 0, count)
        worst = {m: max(v[m] for v in values) for m in self.criterion.metrics}
        ok = all(self.criterion.worst({m: v[m] for m in self.criterion.metrics}) is None for v in values)
        return ok, worst


def _best_effort(results: Sequence[CandidateResult], criterion: PassCriterion) -> Optional[str]:
    tested = [r for r in results if r.metrics]
    if not tested:
        return None

    def score(r: CandidateResult):
        ratios = criterion.ratios({m: r.metrics.get(m, math.inf) for m in criterion.metrics})
        return (max(ratios.values()), r.width, -r.n_frac)

    return min(tested, key=score).format


def search(
    model: RobotModel,
    controller_cfg: ControllerConfig,
    constraints: SearchConstraints,
    sim: SimConfig,
    seed: int = 0,
    rounding: str = "nearest",
    accumulate: str = "wide",
    variant: str = "deferred",
    workers: Optional[int] = None,
) -> QuantReport:
    """Find the cheapest passing format and fit its M⁻¹ compensation."""
    started = time.perf_counter()
    ranges = range_analysis(model, constraints.range_samples, seed, constraints.range_overrides)
    candidates = enumerate_candidates(constraints, ranges.n_int)
    run = FormatSearch(
        model, controller_cfg, constraints, sim, seed, rounding, accumulate, variant, workers
    )
    logger.info(
        f"Searching {len(candidates)} {constraints.mode} candidates for {model.name} "
        f"with {controller_cfg.kind}, {len(run.starts)} rollouts each"
    )

    results = [
        CandidateResult(format=str(f), n_int=f.n_int, n_frac=f.n_frac, width=f.width)
        for f in candidates
    ]
    status = "fail"
    winner: Optional[FxpFormat] = None
    for k, fmt in enumerate(candidates):
        evaluated = run.evaluate(fmt)
        if evaluated is None:
            status = "budget_exhausted"
            logger.warning(f"Rollout budget exhausted before {fmt}")
            break
        results[k] = evaluated
        logger.debug(
            f"Candidate {fmt}: {evaluated.status} after {evaluated.rollouts} rollouts"
        )
        if evaluated.status == PASSED:
            winner = fmt
            status = "pass"
            break

    report = QuantReport(
        status=status,
        robot=model.name,
        controller=controller_cfg.kind,
        mode=constraints.mode,
        range=ranges,
        tolerances=run.criterion.tolerances,
        candidates=results,
        rollout_budget=constraints.max_rollouts,
        seed=seed,
    )
    if winner is not None:
        comp = fit_compensation(
            model,
            run.setup(winner),
            constraints.compensation_samples,
            seed,
            diagonal_only=not constraints.full_compensation,
        )
        report.chosen_format = str(winner)
        report.compensation = comp.to_dict()
        report.compensation_validated, report.compensation_metrics = run.validate_compensation(
            winner, comp
        )
        logger.info(f"Chosen format {winner} after {run.rollouts_used} rollouts")
    else:
        report.chosen_format = _best_effort(results, run.criterion)
        logger.warning(f"No candidate passed; best effort {report.chosen_format}")

    report.audits = run.audit([r for r in results if r.status == PRUNED])
    report.rollouts_used = run.rollouts_used
    report.wall_time_s = round(time.perf_counter() - started, 3)
    return report


def revalidate(
    model: RobotModel,
    controller_cfg: ControllerConfig,
    fmt: FxpFormat,
    sim: SimConfig,
    constraints: SearchConstraints,
    seed: int,
    rollouts: int = 20,
    compensation=None,
    rounding: str = "nearest",
    accumulate: str = "wide",
    variant: str = "deferred",
) -> List[bool]:
    """Fresh-seed rollouts of a chosen format; True where every metric passes.

    ``rounding``, ``accumulate`` and ``variant`` must match the search that chose ``fmt``.
    """
    criterion = PassCriterion(sim, constraints)
    setup = QuantSetup(fmt, rounding, accumulate, variant, compensation)
    starts = initial_states(model, sim, rollouts, seed)
    outcomes = rollout_pairs(model, controller_cfg, setup, sim, starts, seed)
    return [criterion.worst(o.metrics()) is None for o in outcomes]


def summary_table(report: QuantReport) -> str:
    """Fixed-width candidate table for the terminal."""
    metrics = list(report.tolerances)
    header = f"{'format':>8} {'width':>5} {'status':>9} {'rollouts':>8} " + " ".join(
        f"{m:>12}" for m in metrics
    )
    lines = [header, "-" * len(header)]
    for c in report.candidates:
        values = " ".join(
            f"{c.metrics[m]:>12.4e}" if m in c.metrics else f"{'-':>12}" for m in metrics
        )
        lines.append(f"{c.format:>8} {c.width:>5} {c.status:>9} {c.rollouts:>8} {values}")
    lines.append("")
    lines.append(f"status: {report.status}   chosen: {report.chosen_format or '-'}")
    if report.compensation is not None:
        res = report.compensation["residuals"]
        lines.append(
            f"compensation: M⁻¹ Frobenius {res['frobenius_before']:.4e} -> {res['frobenius_after']:.4e}"
        )
    return "\n".join(lines)
