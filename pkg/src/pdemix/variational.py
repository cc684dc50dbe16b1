"""Variational objective for the mixture of candidate PDEs.

Per-sample posteriors are log-normal over the physical coefficients
(one pair per mixture component), a categorical over components, and a
learned scalar observation noise. The loss is the negative ELBO:

    loss = -log sum_k c_k exp(-NLL_k)
           + sum_k c_k [KL(q(z_x^k) || p) + KL(q(z_r^k) || p)]
           + KL(q(c) || Cat(1/K))

Gradients are exact: through the PDE solve via forward sensitivities,
through sampling via the reparameterization trick, and into the logits
via the softmax Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde import (PdeParams, ReactionKind, integrate_with_sensitivities,
                  StepFailure, NonFinite, DEFAULT_RTOL, DEFAULT_ATOL)

PROB_FLOOR = 1e-12
LOG_VAR_MIN = np.log(1e-12)
LOG_VAR_MAX = np.log(1e4)


class FitDiverged(RuntimeError):
    """PDE solve failed at the current posterior draw."""


@dataclass
class LogNormalPosterior:
    mu: float
    log_var: float


@dataclass
class CategoricalPosterior:
    logits: np.ndarray

    def probs(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass
class NoiseModel:
    log_sigma2: float

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2))


@dataclass(frozen=True)
class PriorSpec:
    """Log-space normal priors over the coefficients; uniform over components."""

    z_x_prior: tuple[float, float] = (float(np.log(0.1)), 1.0)  # (mu0, var0)
    z_r_prior: tuple[float, float] = (float(np.log(0.05)), 1.0)

    def __post_init__(self):
        if self.z_x_prior[1] <= 0 or self.z_r_prior[1] <= 0:
            raise ValueError("prior variances must be positive")


@dataclass(frozen=True)
class ComponentSpec:
    """One candidate PDE: reaction kind plus coefficient priors."""

    kind: ReactionKind
    priors: PriorSpec = field(default_factory=PriorSpec)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    p = e / e.sum()
    p = np.clip(p, PROB_FLOOR, None)
    return p / p.sum()


def sample_reparameterized(post: LogNormalPosterior, noise: float):
    """Draw z~ = exp(mu + sd * noise) and its gradients w.r.t. (mu, log_var)."""
    sd = np.exp(post.log_var / 2.0)
    z_tilde = float(np.exp(post.mu + sd * noise))
    dz_dmu = z_tilde
    dz_dlogvar = z_tilde * noise * sd / 2.0
    return z_tilde, dz_dmu, dz_dlogvar


def kl_normal(q: tuple[float, float], p: tuple[float, float]) -> float:
    """KL(N(mu, e^log_var) || N(mu0, var0)); q is (mu, log_var), p is (mu0, var0)."""
    mu, log_var = q
    mu0, var0 = p
    if var0 <= 0:
        raise ValueError("prior variance must be positive")
    var_q = np.exp(log_var)
    return float(0.5 * (np.log(var0) - log_var + (var_q + (mu - mu0) ** 2) / var0 - 1.0))


def _kl_normal_grads(q: tuple[float, float], p: tuple[float, float]):
    """d KL / d mu and d KL / d log_var."""
    mu, log_var = q
    mu0, var0 = p
    var_q = np.exp(log_var)
    return (mu - mu0) / var0, 0.5 * (var_q / var0 - 1.0)


def kl_categorical_uniform(probs: np.ndarray) -> float:
    """KL(Cat(probs) || Cat(1/K)) with the 0 log 0 = 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    k = p.size
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) + np.log(k))))


def gaussian_nll(x: np.ndarray, x_hat: np.ndarray, sigma2: float) -> float:
    """Gaussian negative log-likelihood with shared scalar variance.

    Compares exactly the arrays given; the caller decides which frames
    participate (the t = 0 frame is supplied, not predicted, so the ELBO
    slices it off before calling).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    d = x.size
    ss = float(np.sum((x - x_hat) ** 2))
    return 0.5 * (ss / sigma2 + d * np.log(2.0 * np.pi * sigma2))


@dataclass
class MixtureRecon:
    loss: float
    responsibilities: np.ndarray  # d loss / d nll_k, lies in the simplex
    d_logits: np.ndarray          # d loss / d logits via the softmax Jacobian


def mixture_recon_loss(c: np.ndarray, nlls: np.ndarray) -> MixtureRecon:
    """-log sum_k c_k exp(-nll_k), stabilized by shifting with min_k nll_k."""
    c = np.asarray(c, dtype=np.float64)
    nlls = np.asarray(nlls, dtype=np.float64)
    m = nlls.min()
    w = c * np.exp(m - nlls)
    s = w.sum()
    loss = float(m - np.log(s))
    r = w / s
    # d loss / d c_k = -exp(-nll_k)/sum = -r_k / c_k; chained through softmax
    # this collapses to c - r.
    return MixtureRecon(loss=loss, responsibilities=r, d_logits=c - r)


def _softmax_jvp(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits of sum_k c_k g_k treating g as constant."""
    return c * (g - float(c @ g))


@dataclass
class VariationalState:
    """Per-sample posterior over one mixture of K candidate PDEs."""

    mu_x: np.ndarray       # (K,)
    log_var_x: np.ndarray  # (K,)
    mu_r: np.ndarray       # (K,)
    log_var_r: np.ndarray  # (K,)
    logits: np.ndarray     # (K,)
    log_sigma2: float

    @property
    def n_components(self) -> int:
        return self.mu_x.size

    @classmethod
    def init_at_priors(cls, components: list[ComponentSpec],
                       log_sigma2: float = float(np.log(0.01))) -> "VariationalState":
        k = len(components)
        return cls(
            mu_x=np.array([c.priors.z_x_prior[0] for c in components]),
            log_var_x=np.array([np.log(c.priors.z_x_prior[1]) for c in components]),
            mu_r=np.array([c.priors.z_r_prior[0] for c in components]),
            log_var_r=np.array([np.log(c.priors.z_r_prior[1]) for c in components]),
            logits=np.zeros(k),
            log_sigma2=log_sigma2,
        )

    def weights(self) -> np.ndarray:
        return softmax(self.logits)

    def medians(self) -> np.ndarray:
        """Posterior medians (exp mu) of (z_x, z_r) per component, shape (K, 2)."""
        return np.stack([np.exp(self.mu_x), np.exp(self.mu_r)], axis=1)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu_x, self.log_var_x, self.mu_r,
                               self.log_var_r, self.logits, [self.log_sigma2]])

    @classmethod
    def from_vector(cls, v: np.ndarray, k: int) -> "VariationalState":
        v = np.asarray(v, dtype=np.float64)
        if v.size != 5 * k + 1:
            raise ValueError(f"expected vector of length {5 * k + 1}, got {v.size}")
        return cls(mu_x=v[0:k].copy(), log_var_x=v[k:2 * k].copy(),
                   mu_r=v[2 * k:3 * k].copy(), log_var_r=v[3 * k:4 * k].copy(),
                   logits=v[4 * k:5 * k].copy(), log_sigma2=float(v[5 * k]))

    def clamp(self) -> None:
        np.clip(self.log_var_x, LOG_VAR_MIN, LOG_VAR_MAX, out=self.log_var_x)
        np.clip(self.log_var_r, LOG_VAR_MIN, LOG_VAR_MAX, out=self.log_var_r)


@dataclass
class ElboResult:
    loss: float
    grad: np.ndarray           # aligned with VariationalState.to_vector()
    recon: float
    kl_z: float
    kl_c: float
    nlls: np.ndarray           # (K,)
    responsibilities: np.ndarray
    weights: np.ndarray
    z_draws: np.ndarray        # (K, 2) sampled (z_x, z_r) per component
    branch_grad: np.ndarray = None
    # Like grad, but each component's posterior coordinates carry the
    # gradient of its own conditional objective nll_k + KL_k, with no
    # responsibility or weight factor. This mirrors an amortized
    # per-component encoder, where every branch receives gradient from its
    # own reconstruction regardless of the current mixture weights; fit
    # loops use it so that unlikely components keep learning. Logit and
    # noise coordinates are identical to grad.


def elbo(frames: np.ndarray, times: np.ndarray, components: list[ComponentSpec],
         state: VariationalState, noise: np.ndarray,
         rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> ElboResult:
    """Single-draw Monte Carlo negative ELBO and its exact gradient.

    frames[0] seeds the PDE solves; frames[1:] enter the likelihood.
    noise has shape (K, 2): one standard-normal draw per component for
    (z_x, z_r). Propagates solver failures as FitDiverged.
    """
    k = len(components)
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if frames.shape[0] != times.size or frames.shape[0] < 2:
        raise ValueError("need >= 2 frames matching times")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (k, 2):
        raise ValueError(f"noise must have shape ({k}, 2)")

    x0 = frames[0]
    obs = frames[1:]
    d = obs.size
    sigma2 = float(np.exp(state.log_sigma2))
    c = state.weights()

    nlls = np.empty(k)
    dnll_dzx = np.empty(k)
    dnll_dzr = np.empty(k)
    dnll_dls2 = np.empty(k)
    zxs = np.empty(k)
    zrs = np.empty(k)
    dzx_dmu = np.empty(k)
    dzx_dlv = np.empty(k)
    dzr_dmu = np.empty(k)
    dzr_dlv = np.empty(k)
    kls = np.empty(k)
    dkl = np.empty((k, 4))  # d(klx+klr)/d(mu_x, lv_x, mu_r, lv_r)

    for i, comp in enumerate(components):
        zx, gmx, glx = sample_reparameterized(
            LogNormalPosterior(state.mu_x[i], state.log_var_x[i]), noise[i, 0])
        zr, gmr, glr = sample_reparameterized(
            LogNormalPosterior(state.mu_r[i], state.log_var_r[i]), noise[i, 1])
        if comp.kind is ReactionKind.NONE:
            zr_used = 0.0
            gmr = glr = 0.0  # z_r does not reach the decoder
        else:
            zr_used = zr
        zxs[i], zrs[i] = zx, zr_used
        dzx_dmu[i], dzx_dlv[i] = gmx, glx
        dzr_dmu[i], dzr_dlv[i] = gmr, glr

        params = PdeParams(zx, zr_used, comp.kind)
        try:
            bundle = integrate_with_sensitivities(params, x0, times, rtol, atol)
        except (StepFailure, NonFinite) as exc:
            raise FitDiverged(f"component {i} ({comp.kind.value}): {exc}") from exc
        res = bundle.trajectory.frames[1:] - obs
        ss = float(np.sum(res ** 2))
        nlls[i] = 0.5 * (ss / sigma2 + d * np.log(2.0 * np.pi * sigma2))
        dnll_dzx[i] = float(np.sum(res * bundle.d_dzx[1:])) / sigma2
        dnll_dzr[i] = float(np.sum(res * bundle.d_dzr[1:])) / sigma2
        dnll_dls2[i] = 0.5 * (d - ss / sigma2)

        qx = (state.mu_x[i], state.log_var_x[i])
        qr = (state.mu_r[i], state.log_var_r[i])
        klx = kl_normal(qx, comp.priors.z_x_prior)
        klr = kl_normal(qr, comp.priors.z_r_prior)
        kls[i] = klx + klr
        gx = _kl_normal_grads(qx, comp.priors.z_x_prior)
        gr = _kl_normal_grads(qr, comp.priors.z_r_prior)
        dkl[i] = (gx[0], gx[1], gr[0], gr[1])

    mix = mixture_recon_loss(c, nlls)
    r = mix.responsibilities
    kl_z = float(c @ kls)
    kl_c = kl_categorical_uniform(c)
    loss = mix.loss + kl_z + kl_c

    d_mu_x = r * dnll_dzx * dzx_dmu + c * dkl[:, 0]
    d_lv_x = r * dnll_dzx * dzx_dlv + c * dkl[:, 1]
    d_mu_r = r * dnll_dzr * dzr_dmu + c * dkl[:, 2]
    d_lv_r = r * dnll_dzr * dzr_dlv + c * dkl[:, 3]
    d_logits = (mix.d_logits + _softmax_jvp(c, kls)
                + _softmax_jvp(c, np.log(c) + np.log(k) + 1.0))
    d_ls2 = float(r @ dnll_dls2)

    grad = np.concatenate([d_mu_x, d_lv_x, d_mu_r, d_lv_r, d_logits, [d_ls2]])

    b_mu_x = dnll_dzx * dzx_dmu + dkl[:, 0]
    b_lv_x = dnll_dzx * dzx_dlv + dkl[:, 1]
    b_mu_r = dnll_dzr * dzr_dmu + dkl[:, 2]
    b_lv_r = dnll_dzr * dzr_dlv + dkl[:, 3]
    branch = np.concatenate([b_mu_x, b_lv_x, b_mu_r, b_lv_r, d_logits, [d_ls2]])

    return ElboResult(loss=loss, grad=grad, recon=mix.loss, kl_z=kl_z, kl_c=kl_c,
                      nlls=nlls, responsibilities=r, weights=c,
                      z_draws=np.stack([zxs, zrs], axis=1), branch_grad=branch)
