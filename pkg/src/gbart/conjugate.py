"""Marginal-likelihood tree updates for the Gaussian model, used as a reference sampler.

With a Normal likelihood and Normal leaf prior the leaf values integrate out,
so tree structure can be updated from the closed-form marginal of the
backfit residuals and leaf values drawn exactly afterwards.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import UnsupportedModelError
from .models import GaussianFamily
from .sampler import (
    SamplerState,
    _log,
    _merge,
    choose_move,
    log_birth_prior_ratio,
    move_probabilities,
)
from .tree import Birth, Change, Death, apply_move, node_region, sample_split_rule, with_leaf_values

_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_marginal(residuals: np.ndarray, sigma: float, sigma_mu: float) -> float:
    """Log of ``int prod_i N(R_i | mu, sigma^2) N(mu | 0, sigma_mu^2) dmu``; 0 for an empty leaf."""
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if n == 0:
        return 0.0
    s2, t2 = sigma * sigma, sigma_mu * sigma_mu
    total = float(r.sum())
    ss = float(np.dot(r, r))
    return (-0.5 * n * (_LOG_2PI + math.log(s2)) - 0.5 * math.log1p(n * t2 / s2)
            - 0.5 * (ss - t2 * total * total / (s2 + n * t2)) / s2)


def gaussian_leaf_posterior(residuals: np.ndarray, sigma: float, sigma_mu: float) -> tuple[float, float]:
    """Mean and sd of the Normal full conditional of one leaf value."""
    r = np.asarray(residuals, dtype=float)
    prec = r.size / sigma**2 + 1.0 / sigma_mu**2
    return float(r.sum()) / sigma**2 / prec, prec ** -0.5


def conjugate_gaussian_tree_update(t: int, state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """Structure move accepted on the integrated likelihood, then exact leaf draws."""
    family = state.family
    if not isinstance(family, GaussianFamily):
        raise UnsupportedModelError("the conjugate sampler needs the gaussian family")
    sigma, sigma_mu = family.sigma, state.sigma_mu
    lam = state.partial_fit(t)
    resid = state.y - lam
    tree, members = state.trees[t], state.members[t]
    probs = state.move_probs

    def marg(idx):
        return gaussian_log_marginal(resid[idx], sigma, sigma_mu)

    def split(idx, rule):
        left = state.X[idx, rule.feature] <= rule.cutpoint
        return idx[left], idx[~left]

    kind = choose_move(tree, probs, rng)
    counter = state.counters[kind]
    counter.attempts += 1
    new_members = dict(members)
    log_ratio = -math.inf
    if kind == "birth":
        leaves = tree.leaves()
        leaf = leaves[rng.integers(len(leaves))]
        rule = sample_split_rule(rng, node_region(tree, leaf, state.num_features), state.split_probs)
        move = Birth(leaf, rule, 0.0, 0.0)
        new_tree = tree if rule.degenerate else apply_move(tree, move)
        if not rule.degenerate:
            idx = new_members.pop(leaf)
            i_l, i_r = split(idx, rule)
            new_members[leaf + "L"], new_members[leaf + "R"] = i_l, i_r
            log_ratio = (log_birth_prior_ratio(len(leaf), state.prior)
                         + ((marg(i_l) + marg(i_r)) - marg(idx))
                         + ((_log(move_probabilities(new_tree, probs)[1]) - math.log(len(new_tree.nog())))
                            - (_log(move_probabilities(tree, probs)[0]) - math.log(len(leaves)))))
    else:
        nog = tree.nog()
        branch = nog[rng.integers(len(nog))]
        i_l, i_r = new_members[branch + "L"], new_members[branch + "R"]
        idx = _merge(i_l, i_r)
        if kind == "death":
            new_tree = apply_move(tree, Death(branch, 0.0))
            del new_members[branch + "L"], new_members[branch + "R"]
            new_members[branch] = idx
            log_ratio = (-log_birth_prior_ratio(len(branch), state.prior)
                         + (marg(idx) - (marg(i_l) + marg(i_r)))
                         + ((_log(move_probabilities(new_tree, probs)[0]) - math.log(len(new_tree.leaves())))
                            - (_log(move_probabilities(tree, probs)[1]) - math.log(len(nog)))))
        else:
            rule = sample_split_rule(rng, node_region(tree, branch, state.num_features), state.split_probs)
            new_tree = tree if rule.degenerate else apply_move(tree, Change(branch, rule, 0.0, 0.0))
            if not rule.degenerate:
                n_l, n_r = split(idx, rule)
                new_members[branch + "L"], new_members[branch + "R"] = n_l, n_r
                log_ratio = (marg(n_l) + marg(n_r)) - (marg(i_l) + marg(i_r))

    if math.log(rng.random()) < log_ratio:
        counter.accepts += 1
        tree, members = new_tree, new_members

    values = {}
    for path in tree.leaves():
        mean, sd = gaussian_leaf_posterior(resid[members[path]], sigma, sigma_mu)
        values[path] = mean + sd * rng.standard_normal()
    state.set_tree(t, with_leaf_values(tree, values), members, lam)
    return state
