"""Independent reference computations used to check the sampler.

These are written from first principles (full joint densities, closed-form
Normal posteriors) and deliberately avoid the sampler's own node-level
bookkeeping.
"""

import math

import numpy as np

from gbart.tree import log_tree_prior, node_region


def gaussian_leaf_posterior(resid, sigma, sigma_mu):
    """Exact Normal full conditional of a leaf value given its residuals."""
    prec = len(resid) / sigma**2 + 1.0 / sigma_mu**2
    return float(np.sum(resid)) / sigma**2 / prec, prec ** -0.5


def normal_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)


def log_joint(tree, X, y, lam, sigma, sigma_mu, prior, s):
    """log pi(T) + sum_leaves log N(mu | 0, sigma_mu^2) + sum_i log N(y_i | lam_i + g(x_i), sigma^2)."""
    total = log_tree_prior(tree, prior, s)
    total += sum(normal_logpdf(tree[p].leaf_value, 0.0, sigma_mu) for p in tree.leaves())
    fit = lam + tree.evaluate(X)
    total += float(np.sum(-0.5 * ((y - fit) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)))
    return total


def _move_probs(tree, probs):
    if len(tree.nodes) == 1:
        return 1.0, 0.0, 0.0
    return tuple(p / sum(probs) for p in probs)


def brute_force_birth_log_ratio(tree, new_tree, leaf, X, y, lam, sigma, sigma_mu, prior, s, probs):
    """Reversible-jump ratio for a Gaussian BIRTH built from full joint densities.

    Forward: choose a leaf uniformly, draw the rule from its prior (density
    s_j / width, which also appears in pi(T')), then the two child values
    from their exact Normal conditionals.  Reverse: choose a NOG branch
    uniformly and draw the merged value from its exact conditional.
    """
    rule = new_tree[leaf].rule
    region = node_region(tree, leaf, X.shape[1])
    log_rule = math.log(s[rule.feature]) - math.log(region.width(rule.feature))

    members = tree.partition(X)[leaf]
    resid = y - lam - (tree.evaluate(X) - tree[leaf].leaf_value)
    left = members[X[members, rule.feature] <= rule.cutpoint]
    right = members[X[members, rule.feature] > rule.cutpoint]

    m_l, v_l = gaussian_leaf_posterior(resid[left], sigma, sigma_mu)
    m_r, v_r = gaussian_leaf_posterior(resid[right], sigma, sigma_mu)
    m_p, v_p = gaussian_leaf_posterior(resid[members], sigma, sigma_mu)
    mu_l, mu_r = new_tree[leaf + "L"].leaf_value, new_tree[leaf + "R"].leaf_value

    log_fwd = (math.log(_move_probs(tree, probs)[0]) - math.log(len(tree.leaves())) + log_rule
               + normal_logpdf(mu_l, m_l, v_l) + normal_logpdf(mu_r, m_r, v_r))
    log_rev = (math.log(_move_probs(new_tree, probs)[1]) - math.log(len(new_tree.nog()))
               + normal_logpdf(tree[leaf].leaf_value, m_p, v_p))
    return (log_joint(new_tree, X, y, lam, sigma, sigma_mu, prior, s) + log_rev
            - log_joint(tree, X, y, lam, sigma, sigma_mu, prior, s) - log_fwd)
