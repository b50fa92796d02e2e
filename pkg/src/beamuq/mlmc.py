"""Multilevel Monte Carlo engine with coupled-level sampling.

The estimator telescopes the quantity of interest across a mesh hierarchy:
trial samples on the three coarsest levels seed the variance and cost
tables, the sample allocation minimizes total cost under the variance
budget epsilon^2 / 2, and finer levels are appended until the weak-error
heuristic passes or the level cap is hit. Level-0 samples of the coarsest
usable level double as the empirical source for field quantiles.

Per-sample work is measured in wall seconds for reporting, but allocation
and normalized cost use deterministic work units proportional to the free
DOF count of the solves in one sample, so identical seeds give identical
sample tables regardless of worker count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, SampleFailure
from .problems import STREAM_MC, STREAM_MLMC

logger = logging.getLogger(__name__)

#: Empirical quantile levels for the field statistics (1% .. 99% in 2% steps).
QUANTILE_LEVELS = np.arange(1, 100, 2) / 100.0

SCREENING_THRESHOLD_LOG2 = 2.3


@dataclass
class MLMCConfig:
    """Tuning knobs of the estimator loop."""

    master_seed: int = 2024
    n_trial: int = 200
    n_trial_levels: int = 3
    max_level: int = 4
    min_extra_samples: int = 3
    workers: int = 1
    screening: bool = False
    screening_threshold_log2: float = SCREENING_THRESHOLD_LOG2
    max_screen_drops: int = 2
    quantile_cap: int = 20000
    alpha_prior: float = 2.0
    beta_prior: float = 3.0
    gamma_prior: float = 4.0
    max_loop: int = 200
    qoi_node_override: int | None = None


@dataclass
class RateEstimates:
    """Decay/growth exponents of mean, variance and cost over the levels."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0.5 * min(self.beta, self.gamma):
            logger.warning(
                "rate condition alpha >= min(beta, gamma)/2 violated: "
                "alpha=%.3f beta=%.3f gamma=%.3f", self.alpha, self.beta, self.gamma)


@dataclass
class LevelStats:
    """Accumulated moments of Y = P_l - P_{l-1} and of P_l on one level."""

    level: int
    n_field: int
    n: int = 0
    n_trial: int = 0
    sum_y: float = 0.0
    sum_y2: float = 0.0
    sum_p: float = 0.0
    sum_p2: float = 0.0
    vec_sum_y: np.ndarray = field(default=None)
    vec_sum_y2: np.ndarray = field(default=None)
    vec_sum_p: np.ndarray = field(default=None)
    vec_sum_p2: np.ndarray = field(default=None)
    seconds: float = 0.0
    cost_norm: float = 0.0    # deterministic work units per sample

    def __post_init__(self):
        for name in ("vec_sum_y", "vec_sum_y2", "vec_sum_p", "vec_sum_p2"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_field))

    def add(self, y: float, p: float, y_vec: np.ndarray, p_vec: np.ndarray,
            seconds: float, trial: bool) -> None:
        self.n += 1
        if trial:
            self.n_trial += 1
        self.sum_y += y
        self.sum_y2 += y * y
        self.sum_p += p
        self.sum_p2 += p * p
        self.vec_sum_y += y_vec
        self.vec_sum_y2 += y_vec * y_vec
        self.vec_sum_p += p_vec
        self.vec_sum_p2 += p_vec * p_vec
        self.seconds += seconds

    @property
    def n_reported(self) -> int:
        return self.n - self.n_trial

    @property
    def mean_y(self) -> float:
        return self.sum_y / self.n if self.n else 0.0

    @property
    def var_y(self) -> float:
        if self.n < 2:
            return 0.0
        v = (self.sum_y2 - self.sum_y ** 2 / self.n) / (self.n - 1)
        return max(v, 0.0)

    @property
    def var_p(self) -> float:
        if self.n < 2:
            return 0.0
        v = (self.sum_p2 - self.sum_p ** 2 / self.n) / (self.n - 1)
        return max(v, 0.0)

    def vec_mean_y(self) -> np.ndarray:
        return self.vec_sum_y / self.n if self.n else np.zeros(self.n_field)

    def vec_var_p(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros(self.n_field)
        v = (self.vec_sum_p2 - self.vec_sum_p ** 2 / self.n) / (self.n - 1)
        return np.maximum(v, 0.0)

    @property
    def seconds_per_sample(self) -> float:
        return self.seconds / self.n if self.n else 0.0


@dataclass
class MLMCResult:
    """Estimator output: telescoped value, tables, rates and costs."""

    epsilon: float
    q: float
    q_field: np.ndarray
    stats: list[LevelStats]
    rates: RateEstimates
    base_level: int
    finest_level: int
    converged: bool
    qoi_node: int
    cost_norm_total: float
    cost_norm_no_trial: float
    equivalent_max: float
    wall_seconds: float
    sample_seconds: float
    n_failures: int
    screening: dict
    variance_feasible: bool
    field_axis: np.ndarray
    field_std: np.ndarray
    field_quantiles: np.ndarray    # (len(QUANTILE_LEVELS), n_field)

    def levels(self) -> list[int]:
        return [s.level for s in self.stats]

    def n_per_level(self) -> list[int]:
        return [s.n_reported for s in self.stats]


@dataclass
class MCResult:
    """Single-level Monte Carlo baseline at the MLMC finest level."""

    epsilon: float
    level: int
    estimate: float
    n_reported: int       # allocation beyond the pilot (the table N)
    n_drawn: int          # samples actually computed, pilot included
    var_hat: float
    qoi_node: int
    cost_norm_total: float
    wall_seconds: float
    sample_seconds: float
    n_failures: int
    truncated: bool = False


# ---------------------------------------------------------------------------
# Core formulas
# ---------------------------------------------------------------------------

def optimal_samples(variances, costs, epsilon: float) -> np.ndarray:
    """Cost-optimal continuous allocation of Eq-style N_l, rounded up.

    N_l = (2 / eps^2) sqrt(V_l / C_l) * sum_k sqrt(V_k C_k); the ceiling
    keeps the variance constraint sum V_l / N_l <= eps^2 / 2 satisfied.
    """
    v = np.asarray(variances, dtype=float)
    c = np.asarray(costs, dtype=float)
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if np.any(c <= 0.0) or np.any(v < 0.0):
        raise ValueError("costs must be positive and variances non-negative")
    total = np.sum(np.sqrt(v * c))
    raw = (2.0 / epsilon ** 2) * np.sqrt(v / c) * total
    return np.ceil(raw - 1e-12).astype(int)


def estimate_rates(stats: list[LevelStats], base_level: int,
                   cfg: MLMCConfig) -> RateEstimates:
    """Log2-linear regression of |mean Y|, V and cost over levels > base."""
    diff = [s for s in stats if s.level > base_level and s.n >= 2]

    def _slope(levels, values) -> float | None:
        pts = [(l, v) for l, v in zip(levels, values) if v > 0.0]
        if len(pts) < 2:
            return None
        ls = np.array([p[0] for p in pts], dtype=float)
        vs = np.log2([p[1] for p in pts])
        return float(np.polyfit(ls, vs, 1)[0])

    levels = [s.level for s in diff]
    a = _slope(levels, [abs(s.mean_y) for s in diff])
    b = _slope(levels, [s.var_y for s in diff])
    g = _slope(levels, [s.cost_norm for s in diff])
    return RateEstimates(
        alpha=-a if a is not None else cfg.alpha_prior,
        beta=-b if b is not None else cfg.beta_prior,
        gamma=g if g is not None else cfg.gamma_prior,
    )


def bias_converged(mean_y_finest: float, alpha: float, epsilon: float) -> bool:
    """Weak-error heuristic: |E[Y_L]| / (2^alpha - 1) <= epsilon / sqrt(2)."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return abs(mean_y_finest) / (2.0 ** alpha - 1.0) <= epsilon / math.sqrt(2.0)


def screen_coarsest(var_p1: float, var_y1: float,
                    threshold_log2: float = SCREENING_THRESHOLD_LOG2) -> bool:
    """True = keep the coarsest level; drop when the variance-reduction
    margin log2(V[P_1] / V[P_1 - P_0]) fails the threshold."""
    if var_p1 <= 0.0 or var_y1 <= 0.0:
        raise ValueError("variances must be positive")
    return math.log2(var_p1 / var_y1) > threshold_log2


def normalized_cost(counts, gamma: float, levels=None) -> float:
    """Total cost in coarse-sample units: sum of N_l 2^(gamma l)."""
    counts = np.asarray(counts, dtype=float)
    if levels is None:
        levels = np.arange(counts.size)
    levels = np.asarray(levels, dtype=float)
    return float(np.sum(counts * 2.0 ** (gamma * levels)))


def select_qoi_node(selection_fields: np.ndarray) -> int:
    """Index of the node with the largest sample variance; zero-variance
    pilots (up to accumulation roundoff) fall back to the largest mean
    response magnitude."""
    fields = np.atleast_2d(np.asarray(selection_fields, dtype=float))
    var = fields.var(axis=0, ddof=1) if fields.shape[0] > 1 else np.zeros(fields.shape[1])
    floor = (1e-12 * np.max(np.abs(fields), initial=0.0)) ** 2
    if np.all(var <= floor):
        return int(np.argmax(np.abs(fields.mean(axis=0))))
    return int(np.argmax(var))


# ---------------------------------------------------------------------------
# Sampling machinery
# ---------------------------------------------------------------------------

def _chunk_worker(args):
    problem, level, base_level, stream, replicates = args
    out = []
    for rep in replicates:
        try:
            draw = problem.draw(stream, level, rep)
            t0 = time.perf_counter()
            payload_f = problem.evaluate(level, draw)
            payload_c = problem.evaluate(level - 1, draw) if level > base_level else None
            seconds = time.perf_counter() - t0
            out.append((rep, payload_f, payload_c, seconds, None))
        except SampleFailure as exc:
            out.append((rep, None, None, 0.0, str(exc)))
    return out


class _Sampler:
    """Draws coupled samples with counter-based replicate indices, replacing
    failed samples with fresh indices and tracking the failure budget."""

    def __init__(self, problem, base_level: int, stream: int, workers: int):
        self.problem = problem
        self.base_level = base_level
        self.stream = stream
        self.workers = max(1, workers)
        self.next_rep: dict[int, int] = {}
        self.n_failures = 0
        self.n_attempted = 0
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
        return False

    def _run(self, level: int, replicates: list[int]):
        chunks = max(1, min(len(replicates), self.workers * 4))
        parts = [list(p) for p in np.array_split(np.array(replicates), chunks) if p.size]
        args = [(self.problem, level, self.base_level, self.stream, part)
                for part in parts]
        if self._pool is None or len(replicates) < 2:
            batches = map(_chunk_worker, args)
        else:
            batches = self._pool.map(_chunk_worker, args)
        out = []
        for batch in batches:
            out.extend(batch)
        return out

    def collect(self, level: int, count: int):
        """`count` successful coupled samples, in replicate order."""
        results = []
        while len(results) < count:
            need = count - len(results)
            start = self.next_rep.get(level, 0)
            reps = list(range(start, start + need))
            self.next_rep[level] = start + need
            self.n_attempted += need
            for rep, pf, pc, sec, err in self._run(level, reps):
                if err is None:
                    results.append((rep, pf, pc, sec))
                else:
                    self.n_failures += 1
                    logger.warning("sample %d on level %d failed: %s", rep, level, err)
            if self.n_failures > max(5, 0.01 * self.n_attempted):
                raise NumericError(
                    f"{self.n_failures} sample failures out of {self.n_attempted} "
                    "attempts (above the 1% budget)")
        return results


def sample_difference(problem, level: int, replicate: int, qoi_node: int,
                      base_level: int = 0, stream: int = STREAM_MLMC):
    """One coupled multilevel difference at a fixed replicate index.

    Returns (Y scalar, P_l scalar, difference vector on the reporting grid,
    seconds). The same draw feeds both the fine and the coarse solve; on the
    base level the coarse contribution is zero.
    """
    draw = problem.draw(stream, level, replicate)
    t0 = time.perf_counter()
    payload_f = problem.evaluate(level, draw)
    payload_c = problem.evaluate(level - 1, draw) if level > base_level else None
    seconds = time.perf_counter() - t0
    p_scalar = problem.qoi_scalar(payload_f, qoi_node)
    vec_f = problem.field_vector(payload_f, qoi_node)
    if payload_c is None:
        y_vec = vec_f.copy()
        y = p_scalar
    else:
        y_vec = vec_f - problem.field_vector(payload_c, qoi_node)
        y = p_scalar - problem.qoi_scalar(payload_c, qoi_node)
    return y, p_scalar, y_vec, seconds


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def _convert(problem, qoi_node, rep_result):
    rep, payload_f, payload_c, seconds = rep_result
    p = problem.qoi_scalar(payload_f, qoi_node)
    p_vec = problem.field_vector(payload_f, qoi_node)
    if payload_c is None:
        return p, p, p_vec.copy(), p_vec, seconds
    y = p - problem.qoi_scalar(payload_c, qoi_node)
    y_vec = p_vec - problem.field_vector(payload_c, qoi_node)
    return y, p, y_vec, p_vec, seconds


def run_mlmc(problem, epsilon: float, cfg: MLMCConfig) -> MLMCResult:
    """Full adaptive MLMC run for one problem and one tolerance."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    t_start = time.perf_counter()
    base = 0
    screening_info = {"evaluated": False, "dropped_levels": [], "ratios_log2": []}
    discarded: list[LevelStats] = []

    with _Sampler(problem, base, STREAM_MLMC, cfg.workers) as sampler:
        # Trial phase: raw payloads are kept until the QoI node is known.
        trial_levels = list(range(base, base + cfg.n_trial_levels))
        trial_raw = {lvl: sampler.collect(lvl, cfg.n_trial) for lvl in trial_levels}

        def _selection_node():
            if cfg.qoi_node_override is not None:
                return cfg.qoi_node_override
            fields = np.array([problem.selection_field(r[1])
                               for r in trial_raw[base]])
            return select_qoi_node(fields)

        qoi_node = _selection_node()

        # Coarse-level screening on the trial set.
        if cfg.screening:
            drops = 0
            while drops < cfg.max_screen_drops and base + cfg.n_trial_levels <= cfg.max_level:
                screening_info["evaluated"] = True
                lvl1 = base + 1
                p1 = np.array([problem.qoi_scalar(r[1], qoi_node) for r in trial_raw[lvl1]])
                y1 = p1 - np.array([problem.qoi_scalar(r[2], qoi_node)
                                    for r in trial_raw[lvl1]])
                v_p1 = float(np.var(p1, ddof=1))
                v_y1 = float(np.var(y1, ddof=1))
                ratio = math.log2(v_p1 / v_y1) if v_p1 > 0 and v_y1 > 0 else math.inf
                screening_info["ratios_log2"].append(ratio)
                if v_p1 > 0 and v_y1 > 0 and not screen_coarsest(
                        v_p1, v_y1, cfg.screening_threshold_log2):
                    # Discard the coarsest level; its pilot cost is retained.
                    dropped = LevelStats(level=base, n_field=problem.axis.size)
                    for rep, pf, pc, sec in trial_raw.pop(base):
                        dropped.n += 1
                        dropped.n_trial += 1
                        dropped.seconds += sec
                    dropped.cost_norm = problem.work_units(base, base)
                    discarded.append(dropped)
                    screening_info["dropped_levels"].append(base)
                    base += 1
                    sampler.base_level = base
                    new_top = base + cfg.n_trial_levels - 1
                    if new_top not in trial_raw:
                        trial_raw[new_top] = sampler.collect(new_top, cfg.n_trial)
                    # Level `base` samples lose their coarse halves.
                    trial_raw[base] = [(rep, pf, None, sec)
                                       for rep, pf, pc, sec in trial_raw[base]]
                    qoi_node = _selection_node()
                    drops += 1
                else:
                    break

        # Fold the trial payloads into the accumulators.
        n_field = problem.axis.size
        stats: dict[int, LevelStats] = {}
        extrapolated_var: dict[int, float] = {}
        quantile_store: list[np.ndarray] = []

        def _ensure(lvl: int) -> LevelStats:
            if lvl not in stats:
                s = LevelStats(level=lvl, n_field=n_field)
                s.cost_norm = problem.work_units(lvl, base)
                stats[lvl] = s
            return stats[lvl]

        def _absorb(lvl: int, results, trial: bool):
            s = _ensure(lvl)
            for res in results:
                y, p, y_vec, p_vec, sec = _convert(problem, qoi_node, res)
                s.add(y, p, y_vec, p_vec, sec, trial)
                if lvl == base and len(quantile_store) < cfg.quantile_cap:
                    quantile_store.append(p_vec)

        for lvl in sorted(trial_raw):
            _absorb(lvl, trial_raw[lvl], trial=True)
        trial_raw.clear()

        # Allocation loop: draw, re-estimate, extend levels until the bias
        # heuristic passes or the level cap is reached.
        converged = False
        rates = estimate_rates(list(stats.values()), base, cfg)
        for _ in range(cfg.max_loop):
            levels = sorted(stats)
            v = []
            for lvl in levels:
                s = stats[lvl]
                v.append(s.var_y if s.n >= 2 else extrapolated_var.get(lvl, 0.0))
            c = [stats[lvl].cost_norm for lvl in levels]
            n_opt = optimal_samples(v, c, epsilon)
            trial_top = base + cfg.n_trial_levels - 1
            n_opt = np.array([
                max(n, cfg.min_extra_samples) if lvl > trial_top else n
                for n, lvl in zip(n_opt, levels)
            ])
            drew = False
            for lvl, n_target in zip(levels, n_opt):
                # Trial samples seed the estimates but do not count toward
                # the allocation; the reported N_l is the fresh draw.
                extra = int(n_target) - stats[lvl].n_reported
                if extra > 0:
                    _absorb(lvl, sampler.collect(lvl, extra), trial=False)
                    drew = True
            rates = estimate_rates(list(stats.values()), base, cfg)
            if drew:
                continue
            finest = max(stats)
            if bias_converged(stats[finest].mean_y, rates.alpha, epsilon):
                converged = True
                break
            if finest >= cfg.max_level:
                logger.warning("bias not converged at the level cap %d", finest)
                break
            extrapolated_var[finest + 1] = stats[finest].var_y * 2.0 ** (-rates.beta)
            _ensure(finest + 1)
        n_failures = sampler.n_failures

    # Assemble the result tables.
    ordered = [stats[lvl] for lvl in sorted(stats)]
    finest = max(stats)
    q = sum(s.mean_y for s in ordered)
    q_field = np.sum([s.vec_mean_y() for s in ordered], axis=0)
    gamma = rates.gamma
    all_counts = [(s.level, s.n, s.n_reported) for s in ordered] + \
                 [(s.level, s.n, 0) for s in discarded]
    cost_total = normalized_cost([n for _, n, _ in all_counts], gamma,
                                 [l for l, _, _ in all_counts])
    cost_no_trial = normalized_cost([s.n_reported for s in ordered], gamma,
                                    [s.level for s in ordered])
    equivalent_max = cost_no_trial / 2.0 ** (gamma * finest)
    feasible = sum(s.var_y / s.n for s in ordered if s.n) \
        <= epsilon ** 2 / 2.0 * (1.0 + 1e-9)

    base_stats = stats[base]
    quantiles = (np.quantile(np.array(quantile_store), QUANTILE_LEVELS, axis=0)
                 if quantile_store else np.zeros((QUANTILE_LEVELS.size, problem.axis.size)))

    return MLMCResult(
        epsilon=epsilon,
        q=q,
        q_field=q_field,
        stats=ordered,
        rates=rates,
        base_level=base,
        finest_level=finest,
        converged=converged,
        qoi_node=qoi_node,
        cost_norm_total=cost_total,
        cost_norm_no_trial=cost_no_trial,
        equivalent_max=equivalent_max,
        wall_seconds=time.perf_counter() - t_start,
        sample_seconds=sum(s.seconds for s in ordered) + sum(s.seconds for s in discarded),
        n_failures=n_failures,
        screening=screening_info,
        variance_feasible=bool(feasible),
        field_axis=problem.axis,
        field_std=np.sqrt(base_stats.vec_var_p()),
        field_quantiles=quantiles,
    )


def run_mc(problem, epsilon: float, level: int, cfg: MLMCConfig,
           max_draw: int | None = None) -> MCResult:
    """Plain Monte Carlo at a fixed level, pilot-sized like the MLMC trial.

    `max_draw` caps the post-pilot samples actually computed; the reported
    N and normalized cost always reflect the full pilot-based allocation,
    and a capped run is flagged `truncated` (its estimate then carries a
    wider error than epsilon).
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    t_start = time.perf_counter()
    with _Sampler(problem, level, STREAM_MC, cfg.workers) as sampler:
        pilot = sampler.collect(level, cfg.n_trial)
        fields = np.array([problem.selection_field(r[1]) for r in pilot])
        qoi_node = select_qoi_node(fields)
        values = [problem.qoi_scalar(r[1], qoi_node) for r in pilot]
        seconds = sum(r[3] for r in pilot)
        var_hat = float(np.var(values, ddof=1)) if len(values) > 1 else 0.0
        # Like the MLMC table convention, the pilot does not count toward N.
        n_needed = max(int(math.ceil(2.0 * var_hat / epsilon ** 2 - 1e-12)), 1)
        n_draw = n_needed if max_draw is None else min(n_needed, max_draw)
        batch = sampler.collect(level, n_draw)
        values.extend(problem.qoi_scalar(r[1], qoi_node) for r in batch)
        seconds += sum(r[3] for r in batch)
        var_hat = float(np.var(values, ddof=1))
        n_failures = sampler.n_failures
    return MCResult(
        epsilon=epsilon,
        level=level,
        estimate=float(np.mean(values)),
        n_reported=n_needed,
        n_drawn=len(values),
        var_hat=var_hat,
        qoi_node=qoi_node,
        cost_norm_total=(n_needed + cfg.n_trial) * problem.work_units(level, level),
        wall_seconds=time.perf_counter() - t_start,
        sample_seconds=seconds,
        n_failures=n_failures,
        truncated=n_draw < n_needed,
    )
