"""Independent reference computations used by the tests."""

import numpy as np
from scipy.stats import binom


def star_misclassification(k: int, beta: float, phi: float, r: float, tol: float = 1e-13) -> float:
    """Exact probability that a simple ego on a degree-``k`` star looks complex.

    Markov chain over (infected neighbours now, whether the previous count was
    below the threshold). A simple ego is read as complex exactly when it adopts
    on the first step at which the count has reached the threshold count ``m``.
    Neighbours may adopt simultaneously, which the analytic approximation
    ignores.
    """
    m = int(np.floor(phi * k + 1e-9)) + 1
    if m > k:
        return 0.0
    n = np.arange(k + 1)
    adopt = 1.0 - (1.0 - beta) ** n
    # move[n, j]: probability that n infected become n + j in one step
    move = np.zeros((k + 1, k + 1))
    for i in range(k + 1):
        move[i, : k - i + 1] = binom.pmf(np.arange(k - i + 1), k - i, r)
    below = np.zeros(k + 1)
    above = np.zeros(k + 1)  # previous count already at or past m
    below[0] = 1.0
    err = 0.0
    while below.sum() + above.sum() > tol:
        err += float((below * adopt)[m:].sum())
        stay_b, stay_a = below * (1 - adopt), above * (1 - adopt)
        nb, na = np.zeros(k + 1), np.zeros(k + 1)
        for i in range(k + 1):
            mass = stay_b[i] + stay_a[i]
            if mass == 0.0:
                continue
            row = mass * move[i, : k - i + 1]
            if i < m:
                nb[i:] += row
            else:
                na[i:] += row
        below, above = nb, na
    return err


def star_accuracy(degree_law, beta: float, phi: float, r: float, k_max: int = 40) -> float:
    """Two-class accuracy (mean recall) averaged over the degree law."""
    ks, w = degree_law.pmf()
    keep = ks <= k_max
    errs = np.array([star_misclassification(int(k), beta, phi, r) for k in ks[keep]])
    return 1.0 - 0.5 * float(np.dot(w[keep], errs))


def brute_force_trajectory_loglik(step_counts, k, beta, phi, r, tag):
    """Direct product of per-step probabilities for one ego trajectory.

    ``step_counts[t]`` is the infected-neighbour count seen at step ``t``;
    the ego stays for every step but the last and adopts at the last.
    ``tag`` is "Sm", "Cx", "SmSt" or "CxSt".
    """
    prob = 1.0
    T = len(step_counts)
    for t, n in enumerate(step_counts):
        if tag.startswith("Sm"):
            p_mech = 1.0 - (1.0 - beta) ** n
        else:
            p_mech = 1.0 if n - phi * k > 1e-9 else 0.0
        if t < T - 1:
            prob *= (1 - r) * (1 - p_mech)
        elif tag == "Sm":
            prob *= (1 - r) * p_mech
        elif tag == "Cx":
            # a threshold crossing adopts with certainty: no (1 - r) factor
            prob *= p_mech
        else:
            prob *= r * (1 - p_mech)
    return np.log(prob) if prob > 0 else -np.inf
