"""Maximum-likelihood attribution of adoption events to Sm, Cx or St.

The per-step terms follow the Markov factorisation of an ego trajectory given
its neighbours' states. :func:`trajectory_loglik` sums them step by step;
:func:`loglik_terms` gives the same sums in closed form for whole adopter
tables, which is what the experiment drivers use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .contagion import ConfigurationError, Mechanism, threshold_reached
from .features import EgoObservation

NEG_INF = -math.inf
CLASS_ORDER = (Mechanism.SM, Mechanism.CX, Mechanism.ST)  # also the tie-break priority


@dataclass(frozen=True)
class Hypothesis:
    """A generative explanation of one trajectory.

    For ``tag == ST`` the ``via`` field names the assigned mechanism under
    which the spontaneous adoption happened; its parameter is still needed for
    the stay steps.
    """

    tag: Mechanism
    beta: float | None = None
    phi: float | None = None
    via: Mechanism | None = None

    def __post_init__(self):
        for v in (self.beta, self.phi):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"parameter {v} not in [0, 1]")

    @property
    def base(self) -> Mechanism:
        return self.via if self.tag == Mechanism.ST else self.tag


@dataclass
class ClassificationResult:
    predicted: Mechanism
    log_likelihoods: dict = field(default_factory=dict)
    margin: float = 0.0


@dataclass(frozen=True)
class KnownParams:
    beta: float
    phi: float
    r: float = 0.0


def _log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def _n_log_keep(n: int, beta: float) -> float:
    """log (1 - beta)^n with the convention 0 * log 0 = 0."""
    if n == 0:
        return 0.0
    return n * math.log1p(-beta) if beta < 1.0 else NEG_INF


def step_loglik(transition: str, n_inf: int, k: int, hyp: Hypothesis, with_spontaneous: bool = False,
                r: float = 0.0) -> float:
    """Log-probability of one ego transition (``"00"``, ``"01"`` or ``"11"``)
    given ``n_inf`` infected neighbours out of ``k`` at the previous step."""
    if transition not in ("00", "01", "11"):
        raise ValueError(f"unknown transition {transition!r}")
    if n_inf > k:
        raise ValueError("n_inf exceeds degree")
    if transition == "11":
        return 0.0
    base = hyp.base
    if base == Mechanism.SM and hyp.beta is None:
        raise ConfigurationError("simple hypothesis needs beta")
    if base == Mechanism.CX and hyp.phi is None:
        raise ConfigurationError("complex hypothesis needs phi")
    if hyp.tag == Mechanism.ST and not with_spontaneous:
        raise ConfigurationError("spontaneous hypothesis needs with_spontaneous=True")

    stay = 0.0 if not with_spontaneous else _log(1.0 - r)
    if base == Mechanism.SM:
        keep = _n_log_keep(n_inf, hyp.beta)
        if transition == "00":
            return stay + keep
        if hyp.tag == Mechanism.ST:
            return _log(r) + keep
        return stay + _log(1.0 - math.exp(keep))
    ind = threshold_reached(n_inf, k, hyp.phi)
    if transition == "00":
        return stay + (NEG_INF if ind else 0.0)
    if hyp.tag == Mechanism.ST:
        return _log(r) + (NEG_INF if ind else 0.0)
    return 0.0 if ind else NEG_INF


def trajectory_loglik(obs: EgoObservation, hyp: Hypothesis, r: float = 0.0, with_spontaneous: bool | None = None) -> float:
    """Sum of step terms over the ego's trajectory.

    An adopter contributes steps ``0 .. t_a - 1`` (the later 1->1 steps are
    zero); a non-adopter contributes stay steps up to its horizon.
    """
    if with_spontaneous is None:
        with_spontaneous = hyp.tag == Mechanism.ST or r > 0
    if obs.adoption_time is not None:
        n_steps, last = obs.adoption_time, "01"
    else:
        if obs.horizon is None:
            raise ValueError("non-adopting observation needs a horizon")
        n_steps, last = obs.horizon, "00"
    total = 0.0
    for t in range(n_steps):
        tr = last if t == n_steps - 1 else "00"
        total += step_loglik(tr, obs.infected_count(t), obs.degree, hyp, with_spontaneous, r)
        if total == NEG_INF:
            return NEG_INF
    return total


def loglik_terms(t_a, k, n_inf, sum_stim, n_prev, beta, phi, r=0.0, with_spontaneous=True) -> dict:
    """Closed-form trajectory log-likelihoods for arrays of adopters.

    Returns a dict with keys ``"Sm"``, ``"SmSt"``, ``"Cx"``, ``"CxSt"``.
    Simple stay steps see ``sum_stim - n_inf`` infected-neighbour-steps in
    total, the adoption step sees ``n_inf``. The complex chain is consistent
    only if the threshold is crossed exactly at the last step before adoption.
    """
    t_a = np.asarray(t_a, dtype=np.float64)
    f3 = np.asarray(n_inf, dtype=np.float64)
    f4 = np.asarray(sum_stim, dtype=np.float64)
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), t_a.shape)
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), t_a.shape)
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), t_a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        lb = np.log1p(-beta)
        stay_exp = f4 - f3

        def times(n, logv):
            return np.where(n == 0, 0.0, n * logv)

        l1r = np.log1p(-r) if with_spontaneous else np.zeros_like(t_a)
        lr = np.log(r)
        keep_last = times(f3, lb)
        sm_adopt = np.log(-np.expm1(keep_last))
        sm = times(t_a, l1r) + times(stay_exp, lb) + sm_adopt
        sm_st = times(t_a - 1, l1r) + lr + times(f4, lb)
        reached_last = np.asarray(threshold_reached(f3, k, phi), dtype=bool)
        reached_prev = np.asarray(threshold_reached(n_prev, k, phi), dtype=bool)
        base = times(t_a - 1, l1r)
        cx = np.where(reached_last & ~reached_prev, base, -np.inf)
        cx_st = np.where(~reached_last, base + lr, -np.inf)
    return {"Sm": sm, "SmSt": sm_st, "Cx": cx, "CxSt": cx_st}


def decide(terms: dict, n_classes: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arg-max over hypotheses with priority Sm > Cx > St on ties.

    Returns ``(predicted, logliks, margin)`` where ``logliks`` has columns
    Sm, Cx, St and the spontaneous likelihood is the better of its two
    scenarios.
    """
    sm, cx = terms["Sm"], terms["Cx"]
    if n_classes == 2:
        st = np.full_like(sm, -np.inf)
    else:
        st = np.maximum(terms["SmSt"], terms["CxSt"])
    L = np.column_stack([sm, cx, st])
    pred = np.argmax(L, axis=1)
    if n_classes == 2:
        L = L[:, :2]
    srt = np.sort(L, axis=1)
    with np.errstate(invalid="ignore"):
        margin = np.where(np.isfinite(srt[:, -1]), srt[:, -1] - srt[:, -2], np.nan)
    return pred.astype(np.int8), L, margin


def _obs_counts(obs: EgoObservation):
    if obs.adoption_time is None:
        raise ValueError("classification needs an adoption")
    ta = obs.adoption_time
    f3 = obs.infected_count(ta - 1)
    n_prev = obs.infected_count(ta - 2) if ta >= 2 else 0
    f4 = int(obs.stimuli.sum())
    return ta, f3, f4, n_prev


def _result(terms: dict, n_classes: int) -> ClassificationResult:
    pred, L, margin = decide({k: np.atleast_1d(v) for k, v in terms.items()}, n_classes)
    names = ("Sm", "Cx", "St")[:n_classes]
    return ClassificationResult(Mechanism(int(pred[0])), {n: float(L[0, i]) for i, n in enumerate(names)}, float(margin[0]))


def classify_known(obs: EgoObservation, params: KnownParams, n_classes: int = 3) -> ClassificationResult:
    """Classify with the generating parameters supplied.

    Two classes compare Sm and Cx without spontaneous adoption; three classes
    add the spontaneous hypothesis, scored by the better of its two scenarios.
    """
    if params is None or params.beta is None or params.phi is None:
        raise ConfigurationError("known-parameter classification needs beta, phi and r")
    if n_classes not in (2, 3):
        raise ValueError("n_classes must be 2 or 3")
    ta, f3, f4, n_prev = _obs_counts(obs)
    terms = loglik_terms(ta, obs.degree, f3, f4, n_prev, params.beta, params.phi, params.r,
                         with_spontaneous=n_classes == 3)
    return _result(terms, n_classes)


def estimate_params(obs: EgoObservation) -> tuple[float | None, float]:
    """``(beta_hat, phi_hat)``: inverse stimulus count and infected fraction at adoption.

    ``beta_hat`` is None when no stimulus was received.
    """
    f4 = int(obs.stimuli.sum())
    phi_hat = obs.n_infected / obs.degree if obs.degree else 0.0
    return (1.0 / f4 if f4 >= 1 else None), phi_hat


def estimated_params_arrays(degree, n_inf, sum_stim) -> tuple[np.ndarray, np.ndarray]:
    f4 = np.asarray(sum_stim, dtype=np.float64)
    with np.errstate(divide="ignore"):
        beta_hat = np.where(f4 >= 1, 1.0 / f4, np.nan)
    return beta_hat, np.asarray(n_inf, dtype=np.float64) / np.asarray(degree, dtype=np.float64)


@dataclass(frozen=True)
class RateEstimate:
    r_hat: float  # mean fraction of susceptible steps spent with an infected neighbour
    r_hat_alt: float  # adoptions without infected neighbours per neighbour-free susceptible step
    n_nodes: int


def estimate_r(observations) -> RateEstimate:
    """Rate estimates from adopter observations (or an adopter table)."""
    if hasattr(observations, "t_a"):
        ta = np.asarray(observations.t_a, dtype=np.float64)
        f3 = np.asarray(observations.n_infected)
        first = np.asarray(observations.t_first)
        exposure = np.where(f3 > 0, ta - first, 0).astype(np.float64)
    else:
        obs = [o for o in observations if o.adoption_time is not None]
        ta = np.array([o.adoption_time for o in obs], dtype=np.float64)
        exposure = np.array([o.exposure_steps for o in obs], dtype=np.float64)
        f3 = np.array([o.n_infected for o in obs])
    if len(ta) == 0:
        raise ValueError("need at least one observation")
    ok = ta > 0
    r_hat = float(np.mean(exposure[ok] / ta[ok])) if ok.any() else float("nan")
    free_steps = float((ta - exposure).sum())
    r_alt = float((f3 == 0).sum() / free_steps) if free_steps > 0 else float("nan")
    return RateEstimate(r_hat, r_alt, int(ok.sum()))


def _estimated_terms(t_a, k, n_inf, sum_stim, n_prev, r_hat):
    beta_hat, phi_hat = estimated_params_arrays(k, n_inf, sum_stim)
    # The observed infected fraction sits exactly on the strict threshold;
    # half a neighbour below makes the observed count the first that crosses it.
    phi_eff = np.clip((np.asarray(n_inf, dtype=np.float64) - 0.5) / np.asarray(k, dtype=np.float64), 0.0, 1.0)
    b = np.where(np.isnan(beta_hat), 0.0, beta_hat)
    terms = loglik_terms(t_a, k, n_inf, sum_stim, n_prev, b, phi_eff, r_hat, with_spontaneous=True)
    no_beta = np.isnan(beta_hat)
    terms["Sm"] = np.where(no_beta, -np.inf, terms["Sm"])
    terms["SmSt"] = np.where(no_beta, -np.inf, terms["SmSt"])
    return terms


def classify_unknown(obs: EgoObservation, r_hat: float) -> ClassificationResult:
    """Classify with ``beta_hat``, ``phi_hat`` and a population ``r_hat``.

    Without any stimulus only the spontaneous hypothesis remains.
    """
    ta, f3, f4, n_prev = _obs_counts(obs)
    return _result(_estimated_terms(ta, obs.degree, f3, f4, n_prev, r_hat), 3)


def classify_table(table, params: KnownParams | None = None, r_hat: float | None = None, n_classes: int = 3):
    """Batch classification of an :class:`AdopterTable`.

    With ``params`` the per-row ``beta``/``phi`` may be arrays; otherwise the
    parameters are estimated per row and ``r_hat`` is used.
    """
    if params is not None:
        terms = loglik_terms(table.t_a, table.degree, table.n_infected, table.sum_stimuli, table.n_prev,
                             params.beta, params.phi, params.r, with_spontaneous=n_classes == 3)
        return decide(terms, n_classes)
    if r_hat is None:
        raise ConfigurationError("need either known parameters or r_hat")
    terms = _estimated_terms(table.t_a, table.degree, table.n_infected, table.sum_stimuli, table.n_prev, r_hat)
    return decide(terms, 3)


# -- analytic accuracy for isolated stars ---------------------------------------


def required_infected(k: int, phi: float) -> int:
    """Smallest infected count that strictly exceeds ``phi * k``."""
    return int(math.floor(phi * k + 1e-9)) + 1


def analytic_accuracy(k: int, beta: float, phi: float, r: float, warn: bool = True) -> float:
    """Approximate two-class accuracy on a degree-``k`` star.

    Complex egos are always recognised. A simple ego is mistaken for complex
    when it waits out every infected count below the required one and then
    adopts on the very next step; waiting is a race between two geometric
    clocks per count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    m = required_infected(k, phi)
    if m > k:
        if warn:
            warnings.warn(f"threshold unreachable for k={k}, phi={phi}; simple always wins", stacklevel=2)
        return 1.0
    prod = 1.0
    for n in range(1, m):
        p = 1.0 - (1.0 - r) ** (k - n)
        b = 1.0 - (1.0 - beta) ** n
        denom = b + p - p * b
        prod *= (p - p * b) / denom if denom > 0 else 0.0
    b_m = 1.0 - (1.0 - beta) ** m
    return 1.0 - 0.5 * prod * b_m


def analytic_grid(degree_law, betas, phis, r: float) -> np.ndarray:
    """Accuracy averaged over the degree law, rows = beta, columns = phi."""
    ks, w = degree_law.pmf()
    out = np.zeros((len(betas), len(phis)))
    for i, b in enumerate(betas):
        for j, f in enumerate(phis):
            vals = np.array([analytic_accuracy(int(k), b, f, r, warn=False) for k in ks])
            out[i, j] = float(np.dot(w, vals))
    return out
