"""Joint classifier and anomaly-screen training.

Training maximizes a dual objective over per-sample margin duals lam,
per-class statistic duals mu, and per-class coverage duals kappa:

    D = sum_n [lam_n + log(1 - lam_n / c)]
        - sum_z mu_z gamma_z + sum_z kappa_z beta_z - log Z(lam, mu, kappa)

where Z integrates the joint density described in :mod:`gemmed.model`
over the decision values f and the nominal indicators eta. The exact
gradients are posterior expectations,

    dD/dlam_n   = 1 - 1/(c - lam_n) - E[eta_n y_n f_n]
    dD/dmu_z    = -gamma_z + E[sum_{n in z} eta_n dt_n]
    dD/dkappa_z = beta_z - E[sum_{n in z} eta_n] / n

estimated here with a blocked Gibbs sampler that alternates an exact
Gaussian draw of f given the current binary indicators with Bernoulli
draws of the indicators given f. Ascent steps are projected back to
lam in [0, lambda_cap] and mu, kappa nonnegative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import entr, expit
from scipy.stats import norm, t as student_t

from .baselines import solve_svm_dual
from .dataset import LabeledDataset, class_index
from .errors import TrainingFailure
from .gem import GemConfig, compute_gem_stats, knn_distance_sum, loo_threshold
from .kernels import GramMatrix, KernelSpec, gram_matrix, kernel_cross
from .model import (DualState, HyperParams, TrainedModel, eta_logits,
                    resolve_p0)

__all__ = [
    "GibbsExpectations", "init_duals", "sample_f_given_eta", "eta_conditional",
    "gibbs_expectations", "dual_gradient", "train", "decision_function",
    "predict", "anomaly_score", "anomaly_scores", "detect",
]


def init_duals(dataset: LabeledDataset, gram: GramMatrix,
               hyper: HyperParams) -> DualState:
    """Initial duals: mu = kappa = 0, lam from the plain SVM solution.

    The SVM is solved at its default box C = 1 and the resulting
    coefficients are clipped into [0, lambda_cap]. If the solver fails
    outright, lam falls back to lambda_cap / 2 everywhere.
    """
    cap = hyper.resolved_cap
    try:
        alpha, _, _ = solve_svm_dual(gram.values, dataset.y.astype(float), C=1.0)
        lam = np.clip(alpha, 0.0, cap)
    except Exception:  # degenerate Gram; keep training able to start
        warnings.warn("SVM initializer failed; starting from lambda_cap / 2",
                      stacklevel=2)
        lam = np.full(dataset.n, cap / 2.0)
    return DualState(lam=lam, mu=np.zeros(2), kappa=np.zeros(2))


def sample_f_given_eta(state: DualState, eta: np.ndarray, gram: GramMatrix,
                       y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw decision values from the exact Gaussian conditional.

    f | eta is Normal with mean K (lam * eta * y) and covariance K;
    the cached Cholesky factor supplies the correlated noise.
    """
    mean = gram.values @ (state.lam * eta * y)
    return mean + gram.factor @ rng.standard_normal(gram.n)


def eta_conditional(state: DualState, f_n: float, n_idx: int, y: np.ndarray,
                    d_tilde: np.ndarray, p0: np.ndarray, n_total: int) -> float:
    """Probability that sample n_idx is nominal given its decision value."""
    p = p0[n_idx]
    slot = class_index(y[n_idx])
    logit = (np.log(p) - np.log1p(-p)
             + state.lam[n_idx] * y[n_idx] * f_n
             - state.mu[slot] * d_tilde[n_idx]
             + state.kappa[slot] / n_total)
    return float(expit(logit))


@dataclass
class GibbsExpectations:
    """Sampler averages over post-burn-in sweeps, with standard errors.

    e_eta_y_f approximates E[eta_n y_n f_n] per sample; e_sum_eta_d the
    per-class E[sum eta_n dt_n] (1/n units); e_sum_eta the per-class
    raw indicator sums E[sum eta_n]. eta_hat is the averaged indicator
    mean. Standard errors come from nonoverlapping batch means, which
    absorbs the sweep-to-sweep correlation of the chain.
    """

    e_eta_y_f: np.ndarray
    e_sum_eta_d: np.ndarray
    e_sum_eta: np.ndarray
    eta_hat: np.ndarray
    se_eta_y_f: np.ndarray
    se_sum_eta_d: np.ndarray
    se_sum_eta: np.ndarray
    se_eta_hat: np.ndarray
    n_sweeps: int


def _batch_se(rows: np.ndarray) -> np.ndarray:
    """Batch-means standard error of the column means of rows.

    The raw batch-means scale is inflated by a Student-t factor chosen
    so that a +/-3 SE band keeps the two-sided normal 3-sigma coverage
    despite the handful of batches behind the variance estimate; with
    few batches the uncorrected band undercovers noticeably.
    """
    n = rows.shape[0]
    if n < 2:
        return np.full(rows.shape[1], np.inf)
    n_batches = int(np.clip(np.floor(np.sqrt(n)), 2, 25))
    size = n // n_batches
    trimmed = rows[n - n_batches * size:]
    batches = trimmed.reshape(n_batches, size, -1).mean(axis=1)
    level = 2.0 * norm.sf(3.0)  # two-sided tail mass of the 3-sigma band
    correction = student_t.isf(level / 2.0, df=n_batches - 1) / 3.0
    return correction * batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


def gibbs_expectations(state: DualState, y: np.ndarray, gram: GramMatrix,
                       d_tilde: np.ndarray, p0: np.ndarray,
                       hyper: HyperParams,
                       rng: np.random.Generator) -> GibbsExpectations:
    """Run the blocked sampler and average the gradient expectations.

    Sweep t draws f from its Gaussian conditional given the previous
    sweep's binary indicator vector, then draws ``inner_draws``
    independent indicator vectors given f; their mean feeds the
    averages (a conditional-mean estimate with lower variance) and the
    last of them carries the chain, so the (f, eta) sequence is an
    exact blocked Gibbs chain for the joint density. Only sweeps after
    ``burn_in`` contribute to the returned averages. Output is
    bit-reproducible for a fixed generator state.
    """
    n = gram.n
    yf_sign = y.astype(float)
    eta_state = np.ones(n)  # binary chain state, all-ones start
    n_post = hyper.gibbs_sweeps - hyper.burn_in
    rec_eyf = np.empty((n_post, n))
    rec_eta = np.empty((n_post, n))
    row = 0
    for t in range(1, hyper.gibbs_sweeps + 1):
        f = sample_f_given_eta(state, eta_state, gram, yf_sign, rng)
        prob = expit(eta_logits(state, f, yf_sign, d_tilde, p0, n))
        draws = rng.random((hyper.inner_draws, n)) < prob
        eta_bar = draws.mean(axis=0)
        eta_state = draws[-1].astype(float)
        if t > hyper.burn_in:
            rec_eyf[row] = eta_bar * yf_sign * f
            rec_eta[row] = eta_bar
            row += 1

    masks = np.stack([y == -1, y == 1])  # class slots 0, 1
    rec_sum_eta_d = np.stack([rec_eta[:, m] @ d_tilde[m] for m in masks], axis=1)
    rec_sum_eta = np.stack([rec_eta[:, m].sum(axis=1) for m in masks], axis=1)

    return GibbsExpectations(
        e_eta_y_f=rec_eyf.mean(axis=0),
        e_sum_eta_d=rec_sum_eta_d.mean(axis=0),
        e_sum_eta=rec_sum_eta.mean(axis=0),
        eta_hat=rec_eta.mean(axis=0),
        se_eta_y_f=_batch_se(rec_eyf),
        se_sum_eta_d=_batch_se(rec_sum_eta_d),
        se_sum_eta=_batch_se(rec_sum_eta),
        se_eta_hat=_batch_se(rec_eta),
        n_sweeps=n_post,
    )


def dual_gradient(state: DualState, exps: GibbsExpectations,
                  gamma_hat: np.ndarray, beta_hat: np.ndarray, n_total: int,
                  hyper: HyperParams):
    """Exact dual gradient at the supplied expectations."""
    if np.any(state.lam >= hyper.c):
        raise ValueError("lam must stay strictly below c")
    g_lam = 1.0 - 1.0 / (hyper.c - state.lam) - exps.e_eta_y_f
    g_mu = exps.e_sum_eta_d - np.asarray(gamma_hat, dtype=float)
    g_kappa = np.asarray(beta_hat, dtype=float) - exps.e_sum_eta / n_total
    return g_lam, g_mu, g_kappa


def mean_field_dual_estimate(state: DualState, gram: GramMatrix, y: np.ndarray,
                             d_tilde: np.ndarray, gamma_hat: np.ndarray,
                             beta_hat: np.ndarray, p0: np.ndarray,
                             eta_bar: np.ndarray, hyper: HyperParams) -> float:
    """Cheap dual-objective estimate from a factorized indicator surrogate.

    Bounds log Z from below with the usual evidence bound at the
    current indicator means, so the returned value upper-bounds the
    true dual objective. Used only for monitoring.
    """
    n = gram.n
    a = state.lam * y
    a_bar = a * eta_bar
    quad = 0.5 * a_bar @ gram.values @ a_bar
    quad += 0.5 * np.sum(a * a * np.diag(gram.values) * eta_bar * (1.0 - eta_bar))
    mu_n = state.mu[np.where(y > 0, 1, 0)]
    kap_n = state.kappa[np.where(y > 0, 1, 0)]
    linear = eta_bar @ (kap_n / n - mu_n * d_tilde)
    prior = np.sum(eta_bar * np.log(p0) + (1.0 - eta_bar) * np.log1p(-p0))
    entropy = np.sum(entr(eta_bar) + entr(1.0 - eta_bar))
    elbo = quad + linear + prior + entropy
    closed = np.sum(state.lam + np.log1p(-state.lam / hyper.c))
    closed += -state.mu @ gamma_hat + state.kappa @ beta_hat
    return float(closed - elbo)


def train(dataset: LabeledDataset, kernel: KernelSpec, gem_config: GemConfig,
          hyper: HyperParams) -> TrainedModel:
    """Fit the joint model by projected dual ascent.

    Each step estimates the gradient expectations with the blocked
    sampler at the current duals, then takes a projected ascent step.
    With ``steps`` = 0 the duals stay at their initialization and one
    sampler pass still produces eta_hat. After the loop the nominal
    support is {n : eta_hat_n > 1/2}; training fails if it is empty or
    too small to calibrate the leave-one-out detection threshold.
    """
    if len(np.unique(dataset.y)) < 2:
        raise ValueError("training data must contain both classes")
    gram = gram_matrix(kernel, dataset.x)
    stats = compute_gem_stats(dataset, gem_config)
    p0 = resolve_p0(hyper, gem_config.target_coverage, dataset.n)
    y = dataset.y.astype(float)
    cap = hyper.resolved_cap
    state = init_duals(dataset, gram, hyper)
    rng = np.random.default_rng(hyper.seed)

    trace: list[float] = []
    eta_hat: np.ndarray | None = None
    calm_steps = 0
    for _ in range(hyper.steps):
        exps = gibbs_expectations(state, y, gram, stats.d_tilde, p0, hyper, rng)
        eta_hat = exps.eta_hat
        g_lam, g_mu, g_kappa = dual_gradient(state, exps, stats.gamma_hat,
                                             stats.beta_hat, dataset.n, hyper)
        new_lam = np.clip(state.lam + hyper.rate_lambda * g_lam, 0.0, cap)
        new_mu = np.maximum(state.mu + hyper.rate_mu * g_mu, 0.0)
        new_kappa = np.maximum(state.kappa + hyper.rate_kappa * g_kappa, 0.0)
        residual = max(
            np.max(np.abs(new_lam - state.lam)) / hyper.rate_lambda,
            np.max(np.abs(new_mu - state.mu)) / hyper.rate_mu,
            np.max(np.abs(new_kappa - state.kappa)) / hyper.rate_kappa,
        )
        state = DualState(new_lam, new_mu, new_kappa)
        trace.append(mean_field_dual_estimate(state, gram, y, stats.d_tilde,
                                              stats.gamma_hat, stats.beta_hat,
                                              p0, exps.eta_hat, hyper))
        if hyper.early_stop:
            calm_steps = calm_steps + 1 if residual < hyper.stop_tol else 0
            if calm_steps >= hyper.stop_patience:
                break
    if eta_hat is None:
        exps = gibbs_expectations(state, y, gram, stats.d_tilde, p0, hyper, rng)
        eta_hat = exps.eta_hat

    nominal = np.flatnonzero(eta_hat > 0.5)
    if nominal.size == 0:
        raise TrainingFailure(
            "no sample ended with eta_hat > 1/2; mean eta_hat="
            f"{float(eta_hat.mean()):.3f}, mu={state.mu}, check coverage/p0"
        )
    if nominal.size < gem_config.k + 1:
        raise TrainingFailure(
            f"nominal support has {nominal.size} point(s); need at least "
            f"k+1={gem_config.k + 1} to calibrate the detection threshold"
        )
    theta = loo_threshold(dataset.x[nominal], gem_config.k, gem_config.alpha)

    return TrainedModel(
        kernel=kernel,
        x=dataset.x.copy(),
        y=dataset.y.copy(),
        lam=state.lam.copy(),
        eta_hat=eta_hat.copy(),
        gamma_hat=stats.gamma_hat.copy(),
        beta_hat=stats.beta_hat.copy(),
        theta=theta,
        k=gem_config.k,
        alpha=gem_config.alpha,
        target_coverage=gem_config.target_coverage,
        trace=trace,
        hyper=hyper,
        gem=stats,
    )


def decision_function(model: TrainedModel, xs: np.ndarray) -> np.ndarray:
    coef = model.eta_hat * model.lam * model.y
    return kernel_cross(model.kernel, np.atleast_2d(np.asarray(xs, dtype=float)),
                        model.x) @ coef


def predict(model: TrainedModel, xs: np.ndarray):
    """Label queries by the sign of the decision function; ties go to +1."""
    arr = np.asarray(xs, dtype=float)
    labels = np.where(decision_function(model, arr) < 0, -1, 1)
    return int(labels[0]) if arr.ndim == 1 else labels


def _nominal_points(model: TrainedModel) -> np.ndarray:
    nominal = model.nominal_idx
    if nominal.size < model.k:
        raise ValueError(
            f"nominal support has {nominal.size} point(s) but k={model.k}; "
            "the detector is not usable on this model"
        )
    return model.x[nominal]

def anomaly_score(model: TrainedModel, x) -> float:
    """k-NN distance sum from one query into the nominal support."""
    return knn_distance_sum(x, _nominal_points(model), model.k)


def anomaly_scores(model: TrainedModel, xs: np.ndarray) -> np.ndarray:
    pts = _nominal_points(model)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return np.array([knn_distance_sum(row, pts, model.k) for row in xs])


def detect(model: TrainedModel, xs: np.ndarray):
    """True where the anomaly score exceeds the calibrated threshold."""
    arr = np.asarray(xs, dtype=float)
    if arr.ndim == 1:
        return bool(anomaly_score(model, arr) > model.theta)
    return anomaly_scores(model, arr) > model.theta
