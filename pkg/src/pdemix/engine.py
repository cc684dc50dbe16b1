"""Per-sample stochastic variational inference over the candidate-PDE mixture.

Each sample is fit independently: posteriors start at the priors, logits at
zero (uniform responsibility), and an Adam loop minimizes the single-draw
negative ELBO with fresh noise each step. Reported ELBOs come from a
fixed-seed multi-draw evaluation so runs are deterministic and comparable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from .datagen import Dataset, SampleRecord
from .pde import PdeParams, ReactionKind, StepFailure, NonFinite, Trajectory, integrate
from .variational import (ComponentSpec, ElboResult, FitDiverged,
                          VariationalState, elbo, gaussian_nll)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 2000
    learning_rate: float = 1e-2
    adam_betas: tuple[float, float] = (0.9, 0.999)
    eval_mc_samples: int = 32
    seed: int = 0
    convergence: tuple[int, float] = (100, 1e-4)  # (window, rel_tol)
    solver_rtol: float = 1e-6
    solver_atol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, lr: float, betas: tuple[float, float], eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class FitReport:
    sample_id: str
    status: str  # Converged | MaxIters | Diverged
    elbo_trace: list[float]
    final_elbo: float
    final_elbo_se: float
    final_weights: np.ndarray
    assigned: int
    params: np.ndarray  # (K, 2) posterior medians (z_x, z_r)
    state: VariationalState
    component_kinds: list[str]
    predicted: Optional[Trajectory] = None


def _sample_digest(sample_id: str) -> int:
    return int.from_bytes(hashlib.sha256(sample_id.encode()).digest()[:8], "big")


def _fit_rng(cfg_seed: int, sample_id: str, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg_seed,
                                spawn_key=(_sample_digest(sample_id), stream))
    return np.random.default_rng(ss)


def _median_params(state: VariationalState, components: Sequence[ComponentSpec],
                   k: int) -> PdeParams:
    med = state.medians()
    kind = components[k].kind
    z_r = 0.0 if kind is ReactionKind.NONE else float(med[k, 1])
    return PdeParams(float(med[k, 0]), z_r, kind)


def evaluate_elbo(sample: SampleRecord, components: Sequence[ComponentSpec],
                  state: VariationalState, cfg: FitConfig) -> tuple[float, float]:
    """Low-variance ELBO estimate: mean over fixed-seed MC draws.

    Returns (elbo, standard_error). Diverging draws are skipped; if every
    draw diverges the ELBO is -inf.
    """
    rng = _fit_rng(cfg.seed, sample.id, stream=1)
    k = len(components)
    vals = []
    for _ in range(cfg.eval_mc_samples):
        noise = rng.standard_normal((k, 2))
        try:
            res = elbo(sample.frames, sample.times, components, state, noise,
                       cfg.solver_rtol, cfg.solver_atol)
        except FitDiverged:
            continue
        vals.append(-res.loss)
    if not vals:
        return float("-inf"), float("inf")
    arr = np.asarray(vals)
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else float("inf")
    return float(arr.mean()), se


def fit_sample(sample: SampleRecord, components: Sequence[ComponentSpec],
               cfg: FitConfig) -> FitReport:
    """Adam on the negative ELBO until convergence or max_iters."""
    if sample.frames.shape[0] < 2:
        raise ValueError("sample needs at least 2 frames")
    components = list(components)
    k = len(components)
    rng = _fit_rng(cfg.seed, sample.id, stream=0)
    state = VariationalState.init_at_priors(components)
    adam = Adam(cfg.learning_rate, cfg.adam_betas)
    window, rel_tol = cfg.convergence
    trace: list[float] = []
    status = "MaxIters"
    consecutive_failures = 0

    for _ in range(cfg.max_iters):
        noise = rng.standard_normal((k, 2))
        try:
            res = elbo(sample.frames, sample.times, components, state, noise,
                       cfg.solver_rtol, cfg.solver_atol)
        except FitDiverged:
            consecutive_failures += 1
            if consecutive_failures > 10:
                status = "Diverged"
                break
            continue
        consecutive_failures = 0
        trace.append(-res.loss)
        state = VariationalState.from_vector(
            adam.step(state.to_vector(), res.branch_grad), k)
        state.clamp()
        if len(trace) >= 2 * window:
            recent = float(np.mean(trace[-window:]))
            previous = float(np.mean(trace[-2 * window:-window]))
            if abs(recent - previous) <= rel_tol * max(1.0, abs(previous)):
                status = "Converged"
                break

    final_elbo, final_se = evaluate_elbo(sample, components, state, cfg)
    weights = state.weights()
    assigned = int(np.argmax(weights))
    predicted = None
    try:
        predicted = integrate(_median_params(state, components, assigned),
                              np.asarray(sample.frames[0], dtype=np.float64),
                              sample.times, cfg.solver_rtol, cfg.solver_atol)
    except (StepFailure, NonFinite):
        pass
    return FitReport(sample_id=sample.id, status=status, elbo_trace=trace,
                     final_elbo=final_elbo, final_elbo_se=final_se,
                     final_weights=weights, assigned=assigned,
                     params=state.medians(), state=state,
                     component_kinds=[c.kind.value for c in components],
                     predicted=predicted)


_POOL_ARGS = {}


def _pool_fit(sample: SampleRecord) -> FitReport:
    return fit_sample(sample, _POOL_ARGS["components"], _POOL_ARGS["cfg"])


def _pool_init(components, cfg):
    _POOL_ARGS["components"] = components
    _POOL_ARGS["cfg"] = cfg


def fit_many(samples: Sequence[SampleRecord], components: Sequence[ComponentSpec],
             cfg: FitConfig, workers: int = 1) -> list[FitReport]:
    """Fit all samples; results ordered by sample id regardless of scheduling."""
    samples = sorted(samples, key=lambda s: s.id)
    if workers <= 1 or len(samples) <= 1:
        reports = [fit_sample(s, components, cfg) for s in samples]
    else:
        ctx = get_context("spawn")
        with ctx.Pool(workers, initializer=_pool_init,
                      initargs=(list(components), cfg)) as pool:
            reports = pool.map(_pool_fit, samples)
    return sorted(reports, key=lambda r: r.sample_id)


def assign_component(report: FitReport) -> int:
    """argmax of the final mixture weights; ties break to the lowest index."""
    return int(np.argmax(report.final_weights))


@dataclass
class EvalTables:
    confusion: np.ndarray  # (K, K), rows = truth, cols = predicted
    accuracy: float
    macro_recall: float
    weights: list[tuple[str, np.ndarray]]            # (sample_id, c)
    residuals: list[tuple[str, int, int, float, float]]
    # (sample_id, true_component, assigned, z_x_resid, z_r_resid)


def evaluate_assignments(dataset_samples: Sequence[SampleRecord],
                         reports: Sequence[FitReport]) -> EvalTables:
    by_id = {s.id: s for s in dataset_samples}
    k = reports[0].final_weights.size if reports else 0
    confusion = np.zeros((k, k), dtype=int)
    weights = []
    residuals = []
    recalls = []
    correct = 0
    for rep in reports:
        sample = by_id.get(rep.sample_id)
        if sample is None or sample.truth is None:
            raise ValueError(f"sample {rep.sample_id} has no ground truth")
        t = sample.truth
        confusion[t.component_id, rep.assigned] += 1
        if t.component_id == rep.assigned:
            correct += 1
        weights.append((rep.sample_id, rep.final_weights))
        med = rep.params[rep.assigned]
        residuals.append((rep.sample_id, t.component_id, rep.assigned,
                          t.z_x - float(med[0]), t.z_r - float(med[1])))
    n = len(reports)
    for row in range(k):
        total = confusion[row].sum()
        if total:
            recalls.append(confusion[row, row] / total)
    return EvalTables(
        confusion=confusion,
        accuracy=correct / n if n else float("nan"),
        macro_recall=float(np.mean(recalls)) if recalls else float("nan"),
        weights=weights, residuals=residuals)


@dataclass
class EvidenceResult:
    value: float          # sum over samples of the evaluation ELBO
    stderr: float         # MC standard error of the sum
    per_sample: dict[str, float]
    reports: list[FitReport] = field(repr=False, default_factory=list)


def model_evidence(samples: Sequence[SampleRecord],
                   components: Sequence[ComponentSpec],
                   subset: Sequence[int], cfg: FitConfig) -> EvidenceResult:
    """Refit with only the subset's components and sum evaluation ELBOs.

    Excluding a component renormalizes the mixture weights over the
    remainder; continuous posteriors are refit rather than frozen.
    """
    subset = sorted(set(subset))
    if not subset:
        raise ValueError("subset must be non-empty")
    if subset[0] < 0 or subset[-1] >= len(components):
        raise ValueError(f"subset indices out of range: {subset}")
    sub = [components[i] for i in subset]
    reports = fit_many(samples, sub, cfg)
    total = float(sum(r.final_elbo for r in reports))
    stderr = float(np.sqrt(sum(r.final_elbo_se ** 2 for r in reports)))
    return EvidenceResult(value=total, stderr=stderr,
                          per_sample={r.sample_id: r.final_elbo for r in reports},
                          reports=reports)


def predict(report: FitReport, sample: SampleRecord, times,
            n_draws: int = 100, cfg: Optional[FitConfig] = None) -> Trajectory:
    """Posterior-mean prediction of the assigned component.

    Draws parameter samples from the assigned component's posterior,
    integrates each from the first observed frame, and averages pointwise.
    """
    cfg = cfg or FitConfig()
    rng = _fit_rng(cfg.seed, sample.id, stream=2)
    k = report.assigned
    kind = ReactionKind(report.component_kinds[k])
    st = report.state
    t = np.asarray(times, dtype=np.float64)
    x0 = np.asarray(sample.frames[0], dtype=np.float64)
    acc = None
    for _ in range(n_draws):
        zx = float(np.exp(st.mu_x[k] + np.exp(st.log_var_x[k] / 2)
                          * rng.standard_normal()))
        if kind is ReactionKind.NONE:
            zr = 0.0
        else:
            zr = float(np.exp(st.mu_r[k] + np.exp(st.log_var_r[k] / 2)
                              * rng.standard_normal()))
        traj = integrate(PdeParams(zx, zr, kind), x0, t,
                         cfg.solver_rtol, cfg.solver_atol)
        acc = traj.frames if acc is None else acc + traj.frames
    return Trajectory(times=t, frames=acc / n_draws)


@dataclass
class DegeneracyReport:
    sample_id: str
    nll_true: float
    nll_wrong: float
    gap: float            # nll_wrong - nll_true
    param_err_true: float
    param_err_wrong: float
    flagged: bool


# a wrong model counts as degenerate when it predicts almost as well while
# being much further from the generating parameters
NLL_GAP_FRACTION = 0.05
PARAM_ERROR_RATIO = 2.0


def _single_fit_nll(sample: SampleRecord, comp: ComponentSpec,
                    cfg: FitConfig) -> tuple[float, np.ndarray]:
    rep = fit_sample(sample, [comp], cfg)
    params = _median_params(rep.state, [comp], 0)
    traj = integrate(params, np.asarray(sample.frames[0], dtype=np.float64),
                     sample.times, cfg.solver_rtol, cfg.solver_atol)
    nll = gaussian_nll(np.asarray(sample.frames[1:], dtype=np.float64),
                       traj.frames[1:], np.exp(rep.state.log_sigma2))
    return nll, np.array([params.z_x, params.z_r])


def _param_error(fit: np.ndarray, truth) -> float:
    ex = abs(fit[0] - truth.z_x) / max(truth.z_x, 1e-12)
    er = abs(fit[1] - truth.z_r) / max(truth.z_r, 1e-12)
    return max(ex, er)


def degeneracy_probe(sample: SampleRecord, true_component: ComponentSpec,
                     wrong_component: ComponentSpec,
                     cfg: FitConfig) -> DegeneracyReport:
    """Fit the generating and a mismatched single-component model, compare."""
    if sample.truth is None:
        raise ValueError("degeneracy probe needs ground truth")
    nll_t, p_t = _single_fit_nll(sample, true_component, cfg)
    nll_w, p_w = _single_fit_nll(sample, wrong_component, cfg)
    err_t = _param_error(p_t, sample.truth)
    err_w = _param_error(p_w, sample.truth)
    gap = nll_w - nll_t
    flagged = (gap < NLL_GAP_FRACTION * abs(nll_t)
               and err_w >= PARAM_ERROR_RATIO * err_t)
    return DegeneracyReport(sample_id=sample.id, nll_true=nll_t, nll_wrong=nll_w,
                            gap=gap, param_err_true=err_t, param_err_wrong=err_w,
                            flagged=flagged)
