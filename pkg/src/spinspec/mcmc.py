"""Posterior uncertainties of the fitted parameters by Metropolis-Hastings.

Sampling targets the 25-parameter posterior with a Gaussian likelihood
``exp(-sum_k (f_exp_k - f_sim_k)^2 / (2 sigma^2))`` over the peaks assigned
at the fit optimum, and flat priors inside the fit bounds.  The noise scale
``sigma`` defaults to the optimum rmsd (an empirical-Bayes choice).  Peak
assignments stay frozen during sampling, so the reported widths exclude
assignment ambiguity; see :data:`UNDERESTIMATION_CAVEAT`.

Several independent chains run with distinct seeds; convergence is judged
with the split-chain R-hat diagnostic computed across all half-chains.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, UndefinedObjectiveError
from .fitting import (
    DEFAULT_WINDOW_GHZ,
    FitProblem,
    PARAM_NAMES,
    _canonical_params,
    _frequency_table,
    derive_assignments,
    params_to_vector,
    vector_to_params,
)
from .transitions import SystemParams

#: Printed with every summary: widths from a frozen-assignment chain with
#: this many parameters are best treated as lower bounds.
UNDERESTIMATION_CAVEAT = (
    "uncertainties may be underestimated: the likelihood keeps peak "
    "assignments frozen and the model has 25 strongly coupled parameters"
)

#: Acceptance rates outside this range after adaptation trigger a warning.
ACCEPTANCE_HEALTHY = (0.05, 0.8)

#: Steps between proposal-scale updates during burn-in.
_ADAPT_BLOCK = 50


@dataclass(frozen=True)
class McmcConfig:
    """Chain layout and proposal settings."""

    n_samples: int = 20_000
    burn_in: int = 4_000
    n_chains: int = 2
    seed: int = 42
    scales: np.ndarray | None = None
    target_acceptance: float = 0.3
    sigma_ghz: float | None = None
    window_ghz: float = DEFAULT_WINDOW_GHZ
    thin: int = 1

    def __post_init__(self):
        if not (0 <= self.burn_in < self.n_samples):
            raise InvalidParameterError("burn-in must be shorter than the chain")
        if not (0.2 <= self.target_acceptance <= 0.5):
            raise InvalidParameterError("target acceptance must lie in [0.2, 0.5]")
        if self.n_chains < 1 or self.thin < 1:
            raise InvalidParameterError("n_chains and thin must be positive")
        if self.sigma_ghz is not None and not (self.sigma_ghz > 0):
            raise InvalidParameterError("sigma must be positive")


@dataclass(frozen=True)
class PosteriorSummary:
    """Moments and diagnostics of the retained samples."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray
    correlation: np.ndarray
    acceptance_rate: float
    r_hat: np.ndarray
    n_samples: int
    n_chains: int
    sigma_ghz: float
    warnings: tuple = ()
    caveat: str = UNDERESTIMATION_CAVEAT

    def to_json_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "correlation": [[float(v) for v in row] for row in self.correlation],
            "acceptance_rate": self.acceptance_rate,
            "r_hat": [float(v) for v in self.r_hat],
            "n_samples": self.n_samples,
            "n_chains": self.n_chains,
            "sigma_GHz": self.sigma_ghz,
            "warnings": list(self.warnings),
            "caveat": self.caveat,
        }


def metropolis_chain(
    log_prob,
    x0,
    scales,
    n_samples: int,
    rng,
    *,
    burn_in: int = 0,
    target_acceptance: float = 0.3,
    thin: int = 1,
):
    """Random-walk Metropolis with a global scale adapted during burn-in only.

    Returns (samples, acceptance_rate): retained post-burn-in samples (thinned)
    and the acceptance fraction measured after adaptation stopped.

    Args:
        log_prob: callable returning the log target density (may be -inf).
        x0: starting point; must have finite log probability.
        scales: per-parameter proposal sigmas.
        n_samples: total steps including burn-in.
        rng: numpy Generator.
        burn_in: steps during which the global proposal factor adapts and
            after which samples start being retained.
        target_acceptance: adaptation target for the acceptance fraction.
        thin: keep every thin-th post-burn-in sample.
    """
    x = np.asarray(x0, dtype=float).copy()
    scales = np.asarray(scales, dtype=float)
    if scales.shape != x.shape or not np.all(scales > 0):
        raise InvalidParameterError("proposal scales must be positive, one per parameter")
    lp = float(log_prob(x))
    if not math.isfinite(lp):
        raise InvalidParameterError("chain start has zero probability")

    kept = []
    factor = 1.0
    block_accepts = 0
    accepted_post = 0
    steps_post = 0
    for t in range(n_samples):
        proposal = x + rng.normal(size=x.size) * scales * factor
        lp_new = float(log_prob(proposal))
        if math.log(rng.random()) < lp_new - lp:
            x, lp = proposal, lp_new
            block_accepts += 1
            if t >= burn_in:
                accepted_post += 1
        if t >= burn_in:
            steps_post += 1
            if (t - burn_in) % thin == 0:
                kept.append(x.copy())
        elif (t + 1) % _ADAPT_BLOCK == 0:
            rate = block_accepts / _ADAPT_BLOCK
            factor *= math.exp((rate - target_acceptance) / 0.5)
            factor = min(max(factor, 1e-6), 1e6)
            block_accepts = 0
    acceptance = accepted_post / max(steps_post, 1)
    return np.asarray(kept), acceptance


def split_r_hat(chains: np.ndarray) -> np.ndarray:
    """Split-chain Gelman-Rubin diagnostic, one value per parameter.

    ``chains`` has shape (n_chains, n_samples, n_params); every chain is cut
    in half so intra-chain drift also inflates the statistic.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 3 or chains.shape[1] < 4:
        raise InvalidParameterError("need (n_chains, n_samples>=4, n_params) samples")
    half = chains.shape[1] // 2
    parts = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m, n = parts.shape[0], parts.shape[1]
    means = parts.mean(axis=1)
    variances = parts.var(axis=1, ddof=1)
    within = variances.mean(axis=0)
    between = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / within)
    return np.where(within > 0, r, 1.0)


def _psd_correlation(samples: np.ndarray) -> np.ndarray:
    """Correlation matrix projected to the symmetric PSD cone, unit diagonal."""
    cov = np.cov(samples, rowvar=False)
    cov = np.atleast_2d(cov)
    sd = np.sqrt(np.diag(cov))
    safe = np.where(sd > 0, sd, 1.0)
    corr = cov / np.outer(safe, safe)
    corr = 0.5 * (corr + corr.T)
    vals, vecs = np.linalg.eigh(corr)
    corr = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    d = np.sqrt(np.clip(np.diag(corr), 1e-300, None))
    corr = corr / np.outer(d, d)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    # zero-variance parameters carry no correlation information
    corr[sd == 0, :] = 0.0
    corr[:, sd == 0] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def default_scales(
    log_prob, x0: np.ndarray, span: np.ndarray, n_params: int
) -> np.ndarray:
    """Per-parameter proposal sigmas from the local curvature of -log_prob.

    Each parameter gets sigma_i ~ 1/sqrt(curvature_i), scaled by the usual
    2.4/sqrt(d) random-walk factor; flat or ill-behaved directions fall back
    to a small fraction of the parameter span.
    """
    lp0 = log_prob(x0)
    scales = np.empty(x0.size)
    for i in range(x0.size):
        delta = max(1e-4 * span[i], 1e-12)
        xp, xm = x0.copy(), x0.copy()
        xp[i] += delta
        xm[i] -= delta
        curv = -(log_prob(xp) - 2.0 * lp0 + log_prob(xm)) / delta**2
        if math.isfinite(curv) and curv > 0:
            scales[i] = 1.0 / math.sqrt(curv)
        else:
            scales[i] = 1e-3 * span[i]
    return scales * 2.4 / math.sqrt(n_params)


def run_mcmc(
    problem: FitProblem,
    start: SystemParams,
    config: McmcConfig,
    assignments: np.ndarray | None = None,
):
    """Sample the parameter posterior around a fit optimum.

    Args:
        problem: the fitted peak set with its bounds.
        start: fit optimum used as chain start and assignment reference.
        config: chain layout; ``config.sigma_ghz`` defaults to the rmsd of
            ``start`` under the frozen assignments.
        assignments: optional (n_peaks, 2) assignment array; derived from
            ``start`` at ``config.window_ghz`` when omitted.

    Returns:
        (PosteriorSummary, chains) where chains has shape
        (n_chains, n_retained, 25).
    """
    start = _canonical_params(start)
    x0 = params_to_vector(start)
    if np.any(x0 < problem.lower) or np.any(x0 > problem.upper):
        raise InvalidParameterError("start violates the parameter bounds")

    if assignments is None:
        assignments = derive_assignments(start, problem, config.window_ghz)
    else:
        assignments = np.asarray(assignments, dtype=int)
    mask = assignments[:, 0] >= 0
    if not np.any(mask):
        raise UndefinedObjectiveError("no peaks assigned at the MCMC start")
    gi = assignments[mask, 0]
    ei = assignments[mask, 1]
    fidx = problem.field_index[mask]
    f_exp = problem.frequencies[mask]

    def residuals(x):
        table = _frequency_table(vector_to_params(x), problem.unique_fields)
        return f_exp - table[fidx, gi, ei]

    sigma = config.sigma_ghz
    if sigma is None:
        sigma = float(np.sqrt(np.mean(residuals(x0) ** 2)))
        sigma = max(sigma, 1e-9)

    def log_prob(x):
        if np.any(x < problem.lower) or np.any(x > problem.upper):
            return -np.inf
        r = residuals(x)
        return float(-0.5 * np.sum((r / sigma) ** 2))

    span = problem.upper - problem.lower
    scales = config.scales
    if scales is None:
        scales = default_scales(log_prob, x0, span, x0.size)
    else:
        scales = np.asarray(scales, dtype=float)

    rng = np.random.default_rng(config.seed)
    chain_seeds = rng.integers(0, 2**63 - 1, size=config.n_chains)
    chains = []
    rates = []
    for chain_seed in chain_seeds:
        samples, rate = metropolis_chain(
            log_prob,
            x0,
            scales,
            config.n_samples,
            np.random.default_rng(int(chain_seed)),
            burn_in=config.burn_in,
            target_acceptance=config.target_acceptance,
            thin=config.thin,
        )
        chains.append(samples)
        rates.append(rate)
    chains = np.asarray(chains)
    flat = chains.reshape(-1, x0.size)

    warnings = []
    acceptance = float(np.mean(rates))
    low, high = ACCEPTANCE_HEALTHY
    if not (low <= acceptance <= high):
        warnings.append(
            f"acceptance rate {acceptance:.3f} outside [{low}, {high}] after adaptation"
        )
    if config.n_chains >= 2 or chains.shape[1] >= 4:
        r_hat = split_r_hat(chains)
        if np.any(r_hat > 1.1):
            worst = PARAM_NAMES[int(np.argmax(r_hat))]
            warnings.append(f"split-chain R-hat above 1.1 (worst: {worst})")
    else:
        r_hat = np.full(x0.size, np.nan)

    summary = PosteriorSummary(
        names=PARAM_NAMES,
        mean=flat.mean(axis=0),
        std=flat.std(axis=0, ddof=1),
        correlation=_psd_correlation(flat),
        acceptance_rate=acceptance,
        r_hat=r_hat,
        n_samples=int(flat.shape[0]),
        n_chains=int(config.n_chains),
        sigma_ghz=float(sigma),
        warnings=tuple(warnings),
    )
    return summary, chains
