"""Reversible-jump backfitting for sums of trees under an arbitrary likelihood.

Each tree is updated given the fit ``lam`` of all the other trees.  A BIRTH,
DEATH or CHANGE move is proposed jointly with new leaf values drawn from
Laplace (Gaussian) approximations to the leaf full conditionals, accepted with
the reversible-jump Metropolis-Hastings ratio, and then every leaf value is
refreshed by slice sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SamplerConfig
from .errors import NumericalError
from .likelihood import LikelihoodFamily
from .slice import log_half_cauchy, slice_sample
from .tree import (
    Birth,
    Change,
    DecisionTree,
    Death,
    Forest,
    Move,
    TreePriorParams,
    apply_move,
    branch_prob,
    log_tree_prior,
    node_region,
    sample_split_rule,
    with_leaf_values,
)

LAPLACE_MAX_ITER = 50
CURVATURE_FLOOR = 1e-8
SLICE_MAX_STEPS = 50
MOVES = ("birth", "death", "change")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def normal_logpdf(x: float, mean: float, sd: float) -> float:
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - _HALF_LOG_2PI


@dataclass(frozen=True)
class LeafProposal:
    """``Normal(mean, sd**2)`` proposal for one leaf value."""

    mean: float
    sd: float
    iterations: int = 0
    capped: bool = False

    def log_density(self, x: float) -> float:
        return normal_logpdf(x, self.mean, self.sd)

    def draw(self, rng: np.random.Generator) -> float:
        return self.mean + self.sd * rng.standard_normal()


@dataclass
class MoveCounter:
    attempts: int = 0
    accepts: int = 0

    @property
    def rejects(self) -> int:
        return self.attempts - self.accepts

    @property
    def rate(self) -> float:
        return self.accepts / self.attempts if self.attempts else float("nan")


class SamplerState:
    """Mutable state of one chain.

    Trees are immutable values; the state swaps them out as moves are
    accepted.  ``members[t]`` maps each leaf of tree ``t`` to the sorted
    indices of the training rows routed there, ``tree_fits[t]`` is that tree's
    output at every row and ``fit`` is the whole forest's output.
    """

    def __init__(self, X, y, delta, family: LikelihoodFamily, config: SamplerConfig):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.delta = None if delta is None else np.asarray(delta, dtype=float)
        self.family = family
        self.config = config
        n, p = self.X.shape
        T = config.num_trees
        self.trees = [DecisionTree.leaf(0.0) for _ in range(T)]
        self.members = [{"": np.arange(n)} for _ in range(T)]
        self.tree_fits = np.zeros((T, n))
        self.fit = np.zeros(n)
        self.sigma_mu = config.sigma_mu_scale
        self.split_probs = np.full(p, 1.0 / p)
        self.prior = TreePriorParams(config.gamma, config.beta)
        self.move_probs = (config.p_birth, config.p_death, config.p_change)
        self.counters = {m: MoveCounter() for m in MOVES}
        self.laplace_calls = 0
        self.laplace_capped = 0
        self.iteration = 0

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray, lam: np.ndarray):
        d = None if self.delta is None else self.delta[idx]
        return self.y[idx], lam[idx], d

    def partial_fit(self, t: int) -> np.ndarray:
        """Fit of every tree except ``t``."""
        return self.fit - self.tree_fits[t]

    def set_tree(self, t: int, tree: DecisionTree, members: dict, lam: np.ndarray) -> None:
        fit_t = np.empty(len(self.y))
        for path, idx in members.items():
            fit_t[idx] = tree[path].leaf_value
        self.trees[t] = tree
        self.members[t] = members
        self.tree_fits[t] = fit_t
        self.fit = lam + fit_t

    def set_forest(self, trees) -> None:
        """Replace every tree, rebuilding leaf memberships and fits."""
        if len(trees) != len(self.trees):
            raise ValueError(f"expected {len(self.trees)} trees, got {len(trees)}")
        self.trees = list(trees)
        self.members = [tree.partition(self.X) for tree in self.trees]
        self.tree_fits = np.array([tree.evaluate(self.X) for tree in self.trees])
        self.fit = self.tree_fits.sum(axis=0)

    def forest(self) -> Forest:
        return Forest(tuple(self.trees), self.sigma_mu, self.split_probs.copy())

    def leaf_values(self) -> np.ndarray:
        return np.array([tree[p].leaf_value for tree in self.trees for p in tree.leaves()])

    def split_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_features)
        for tree in self.trees:
            for p in tree.branches():
                counts[tree[p].rule.feature] += 1
        return counts

    def log_posterior(self) -> float:
        """Unnormalized log posterior of the current state."""
        total = float(np.sum(self.family.log_density(self.y, self.fit, self.delta)))
        for tree in self.trees:
            total += log_tree_prior(tree, self.prior, self.split_probs)
            for p in tree.leaves():
                total += normal_logpdf(tree[p].leaf_value, 0.0, self.sigma_mu)
        total += log_half_cauchy(self.sigma_mu, self.config.sigma_mu_scale)
        return total + self.family.log_nuisance_prior()


# ---------------------------------------------------------------------------
# Node-level quantities


def log_node_score(y, lam, delta, mu: float, family: LikelihoodFamily, sigma_mu: float) -> float:
    """``log pi_mu(mu) + sum log f(y_i | lam_i + mu)`` over the rows at one node."""
    total = normal_logpdf(mu, 0.0, sigma_mu)
    if len(y):
        total += float(family.log_density(y, lam + mu, delta).sum())
    return total if total == total else -math.inf


def _gradient_curvature(y, lam, delta, m, family, sigma_mu, fisher):
    prior_prec = 1.0 / sigma_mu**2
    try:
        u, info = family.score_and_info(y, lam + m, delta)
    except NumericalError:
        return math.nan, math.nan
    grad = float(u.sum()) - m * prior_prec
    curv = float(info.sum())
    if not fisher:
        curv = max(curv, CURVATURE_FLOOR)
    return grad, curv + prior_prec


def laplace_leaf_proposal(y, lam, delta, family: LikelihoodFamily, sigma_mu: float,
                          init: float = 0.0, max_iter: int = LAPLACE_MAX_ITER) -> LeafProposal:
    """Gaussian approximation to one leaf's full conditional by Fisher scoring.

    Iterates ``m <- m + U(m) / I(m)`` from ``init``, always taking at least
    one step, until ``|U(m)| <= sqrt(I(m)) / 10``, where ``U`` and ``I`` are the score and
    information of the leaf's log full conditional (prior included).  Families
    without Fisher information use Newton steps on the observed information,
    floored so the curvature stays positive.  If the iteration cap is hit the
    current point is returned with ``capped=True``.
    """
    if len(y) == 0:
        return LeafProposal(0.0, sigma_mu)
    fisher = family.use_fisher and family.fisher_info is not None
    m = float(init)
    grad, curv = _gradient_curvature(y, lam, delta, m, family, sigma_mu, fisher)
    if not (math.isfinite(grad) and math.isfinite(curv)):
        m = 0.0
        grad, curv = _gradient_curvature(y, lam, delta, m, family, sigma_mu, fisher)
        if not (math.isfinite(grad) and math.isfinite(curv)):
            raise NumericalError("leaf log likelihood is not finite at the prior mean")
    it = 0
    capped = False
    while it == 0 or abs(grad) > math.sqrt(curv) / 10.0:
        if it == max_iter:
            capped = True
            break
        step = grad / curv
        for _ in range(60):
            g_new, c_new = _gradient_curvature(y, lam, delta, m + step, family, sigma_mu, fisher)
            if math.isfinite(g_new) and math.isfinite(c_new):
                break
            step *= 0.5
        else:
            capped = True
            break
        m += step
        grad, curv = g_new, c_new
        it += 1
    return LeafProposal(m, curv ** -0.5, it, capped)


# ---------------------------------------------------------------------------
# Move probabilities and acceptance ratios


def move_probabilities(tree: DecisionTree, probs: tuple[float, float, float]) -> tuple[float, float, float]:
    """``(p_birth, p_death, p_change)`` for ``tree``; a root-only tree can only grow."""
    if tree.is_root_only:
        return 1.0, 0.0, 0.0
    total = sum(probs)
    return probs[0] / total, probs[1] / total, probs[2] / total


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def log_birth_prior_ratio(depth: int, prior: TreePriorParams) -> float:
    """``log[rho_d (1 - rho_{d+1})^2 / (1 - rho_d)]`` for splitting a leaf at ``depth``."""
    rho = branch_prob(depth, prior)
    rho_next = branch_prob(depth + 1, prior)
    return _log(rho) + 2.0 * math.log1p(-rho_next) - math.log1p(-rho)


@dataclass
class MoveResult:
    """Outcome of evaluating a proposed move."""

    log_ratio: float
    new_tree: DecisionTree
    new_members: dict = field(repr=False)
    laplace: list = field(default_factory=list, repr=False)


class _Context:
    """Bundles what ratio computations need from the chain state."""

    def __init__(self, state: SamplerState, lam: np.ndarray):
        self.state = state
        self.lam = lam
        self.family = state.family
        self.sigma_mu = state.sigma_mu

    def laplace(self, idx, init):
        y, lam, d = self.state.subset(idx, self.lam)
        prop = laplace_leaf_proposal(y, lam, d, self.family, self.sigma_mu, init)
        if len(idx):
            self.state.laplace_calls += 1
            self.state.laplace_capped += prop.capped
        return prop

    def score(self, idx, mu):
        y, lam, d = self.state.subset(idx, self.lam)
        return log_node_score(y, lam, d, mu, self.family, self.sigma_mu)

    def split(self, idx, rule):
        left = self.state.X[idx, rule.feature] <= rule.cutpoint
        return idx[left], idx[~left]


def _merge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sort(np.concatenate([a, b]))


def acceptance_log_ratio(move: Move, tree: DecisionTree, members: dict, state: SamplerState,
                         lam: np.ndarray, forward: tuple | None = None) -> MoveResult:
    """Log Metropolis-Hastings ratio of ``move`` applied to ``tree``.

    ``forward`` optionally carries the proposals the move's leaf values were
    drawn from (they are recomputed otherwise).  Reverse-move proposals are
    built exactly as the reverse move would build them: BIRTH children start
    Fisher scoring at the parent's value, a DEATH merge starts at the mean of
    the two children, and CHANGE children start at the values they replace.
    The split-rule prior cancels against its proposal in every move.
    """
    ctx = _Context(state, lam)
    probs = state.move_probs
    new_tree = apply_move(tree, move)
    members = dict(members)

    if isinstance(move, Birth):
        path = move.leaf
        if move.rule.degenerate:
            return MoveResult(-math.inf, new_tree, members)
        mu_old = tree[path].leaf_value
        idx = members.pop(path)
        i_left, i_right = ctx.split(idx, move.rule)
        members[path + "L"], members[path + "R"] = i_left, i_right
        fwd_l, fwd_r = forward or (ctx.laplace(i_left, mu_old), ctx.laplace(i_right, mu_old))
        rev = ctx.laplace(idx, 0.5 * (move.mu_left + move.mu_right))
        log_prior = log_birth_prior_ratio(len(path), state.prior)
        log_lik = (ctx.score(i_left, move.mu_left) + ctx.score(i_right, move.mu_right)) - ctx.score(idx, mu_old)
        log_q = ((_log(move_probabilities(new_tree, probs)[1]) - math.log(len(new_tree.nog())))
                 - (_log(move_probabilities(tree, probs)[0]) - math.log(len(tree.leaves()))))
        log_g = rev.log_density(mu_old) - (fwd_l.log_density(move.mu_left) + fwd_r.log_density(move.mu_right))
        total = log_prior + log_lik + log_q + log_g
        return MoveResult(total, new_tree, members, [fwd_l, fwd_r, rev])

    if isinstance(move, Death):
        path = move.branch
        mu_l, mu_r = tree[path + "L"].leaf_value, tree[path + "R"].leaf_value
        i_left, i_right = members.pop(path + "L"), members.pop(path + "R")
        idx = _merge(i_left, i_right)
        members[path] = idx
        (fwd,) = forward or (ctx.laplace(idx, 0.5 * (mu_l + mu_r)),)
        rev_l, rev_r = ctx.laplace(i_left, move.mu), ctx.laplace(i_right, move.mu)
        log_prior = -log_birth_prior_ratio(len(path), state.prior)
        log_lik = ctx.score(idx, move.mu) - (ctx.score(i_left, mu_l) + ctx.score(i_right, mu_r))
        log_q = ((_log(move_probabilities(new_tree, probs)[0]) - math.log(len(new_tree.leaves())))
                 - (_log(move_probabilities(tree, probs)[1]) - math.log(len(tree.nog()))))
        log_g = (rev_l.log_density(mu_l) + rev_r.log_density(mu_r)) - fwd.log_density(move.mu)
        total = log_prior + log_lik + log_q + log_g
        return MoveResult(total, new_tree, members, [fwd, rev_l, rev_r])

    if isinstance(move, Change):
        path = move.branch
        if move.rule.degenerate:
            return MoveResult(-math.inf, new_tree, members)
        mu_l, mu_r = tree[path + "L"].leaf_value, tree[path + "R"].leaf_value
        old_l, old_r = members[path + "L"], members[path + "R"]
        new_l, new_r = ctx.split(_merge(old_l, old_r), move.rule)
        members[path + "L"], members[path + "R"] = new_l, new_r
        fwd_l, fwd_r = forward or (ctx.laplace(new_l, mu_l), ctx.laplace(new_r, mu_r))
        rev_l, rev_r = ctx.laplace(old_l, move.mu_left), ctx.laplace(old_r, move.mu_right)
        log_lik = ((ctx.score(new_l, move.mu_left) + ctx.score(new_r, move.mu_right))
                   - (ctx.score(old_l, mu_l) + ctx.score(old_r, mu_r)))
        log_g = ((rev_l.log_density(mu_l) + rev_r.log_density(mu_r))
                 - (fwd_l.log_density(move.mu_left) + fwd_r.log_density(move.mu_right)))
        return MoveResult(log_lik + log_g, new_tree, members, [fwd_l, fwd_r, rev_l, rev_r])

    raise TypeError(f"unknown move {move!r}")


# ---------------------------------------------------------------------------
# Tree update


def choose_move(tree: DecisionTree, probs, rng: np.random.Generator) -> str:
    p_birth, p_death, _ = move_probabilities(tree, probs)
    u = rng.random()
    if u < p_birth:
        return "birth"
    return "death" if u < p_birth + p_death else "change"


def propose_move(kind: str, tree: DecisionTree, members: dict, state: SamplerState, lam: np.ndarray,
                 rng: np.random.Generator) -> tuple[Move, tuple | None]:
    """Draw a move of the given kind together with its leaf-value proposals."""
    ctx = _Context(state, lam)
    s = state.split_probs
    if kind == "birth":
        leaves = tree.leaves()
        leaf = leaves[rng.integers(len(leaves))]
        rule = sample_split_rule(rng, node_region(tree, leaf, state.num_features), s)
        if rule.degenerate:
            return Birth(leaf, rule, 0.0, 0.0), None
        mu_old = tree[leaf].leaf_value
        i_left, i_right = ctx.split(members[leaf], rule)
        fwd = (ctx.laplace(i_left, mu_old), ctx.laplace(i_right, mu_old))
        return Birth(leaf, rule, fwd[0].draw(rng), fwd[1].draw(rng)), fwd

    nog = tree.nog()
    branch = nog[rng.integers(len(nog))]
    mu_l, mu_r = tree[branch + "L"].leaf_value, tree[branch + "R"].leaf_value
    if kind == "death":
        fwd = (ctx.laplace(_merge(members[branch + "L"], members[branch + "R"]), 0.5 * (mu_l + mu_r)),)
        return Death(branch, fwd[0].draw(rng)), fwd

    rule = sample_split_rule(rng, node_region(tree, branch, state.num_features), s)
    if rule.degenerate:
        return Change(branch, rule, mu_l, mu_r), None
    new_l, new_r = ctx.split(_merge(members[branch + "L"], members[branch + "R"]), rule)
    fwd = (ctx.laplace(new_l, mu_l), ctx.laplace(new_r, mu_r))
    return Change(branch, rule, fwd[0].draw(rng), fwd[1].draw(rng)), fwd


def slice_refresh_leaves(tree: DecisionTree, members: dict, state: SamplerState, lam: np.ndarray,
                         rng: np.random.Generator) -> DecisionTree:
    """One stepping-out slice update of every leaf value of ``tree``.

    The initial bracket width is the Laplace standard deviation evaluated at the
    current leaf value (``sigma_mu`` for empty leaves).
    """
    family, sigma_mu = state.family, state.sigma_mu
    fisher = family.use_fisher and family.fisher_info is not None
    values = {}
    for path in tree.leaves():
        y, l, d = state.subset(members[path], lam)
        mu = tree[path].leaf_value
        if len(y):
            _, curv = _gradient_curvature(y, l, d, mu, family, sigma_mu, fisher)
            width = curv ** -0.5 if math.isfinite(curv) else sigma_mu
        else:
            width = sigma_mu

        def target(m, y=y, l=l, d=d):
            return log_node_score(y, l, d, m, family, sigma_mu)

        values[path], _ = slice_sample(mu, target, width, rng, max_steps=SLICE_MAX_STEPS)
    return with_leaf_values(tree, values)


def rj_update_tree(t: int, state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """Reversible-jump update of tree ``t`` followed by a slice refresh of its leaves."""
    lam = state.partial_fit(t)
    tree, members = state.trees[t], state.members[t]
    kind = choose_move(tree, state.move_probs, rng)
    counter = state.counters[kind]
    counter.attempts += 1
    move, forward = propose_move(kind, tree, members, state, lam, rng)
    if forward is not None:
        result = acceptance_log_ratio(move, tree, members, state, lam, forward)
        if math.log(rng.random()) < result.log_ratio:
            counter.accepts += 1
            tree, members = result.new_tree, result.new_members
    tree = slice_refresh_leaves(tree, members, state, lam, rng)
    state.set_tree(t, tree, members, lam)
    return state


# ---------------------------------------------------------------------------
# Hyperparameters


def update_sigma_mu(leaf_values: np.ndarray, c: float, rng: np.random.Generator,
                    current: float) -> float:
    """Slice step on ``log sigma_mu`` given the leaf values and a half-Cauchy(0, c) prior."""
    leaf_values = np.asarray(leaf_values, dtype=float)
    n = leaf_values.size
    ss = float(np.dot(leaf_values, leaf_values))

    def log_target(log_s):
        s = math.exp(log_s)
        return -n * log_s - 0.5 * ss / (s * s) + log_half_cauchy(s, c) + log_s

    new, _ = slice_sample(math.log(current), log_target, 0.5, rng)
    return math.exp(new)


def update_split_probs(counts: np.ndarray, xi: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``s ~ Dirichlet(xi / P + counts)``.

    Gamma variates are generated on the log scale
    (``log G(a) = log G(a + 1) + log(U) / a``) so that tiny shapes do not
    underflow to an all-zero vector.
    """
    counts = np.asarray(counts, dtype=float)
    shape = xi / counts.size + counts
    log_g = np.log(rng.gamma(shape + 1.0)) + np.log(rng.random(counts.size)) / shape
    w = np.exp(log_g - log_g.max())
    return w / w.sum()


def gibbs_iteration(state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """One sweep over every tree, then ``sigma_mu``, split probabilities and nuisance parameters."""
    from .conjugate import conjugate_gaussian_tree_update

    config = state.config
    update = rj_update_tree if config.sampler == "rjmcmc" else conjugate_gaussian_tree_update
    state.fit = state.tree_fits.sum(axis=0)
    # overflow in extreme proposals yields -inf scores, which are simply rejected
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(config.num_trees):
            update(t, state, rng)
    if config.update_sigma_mu:
        state.sigma_mu = update_sigma_mu(state.leaf_values(), config.sigma_mu_scale, rng, state.sigma_mu)
    if config.update_split_probs:
        state.split_probs = update_split_probs(state.split_counts(), config.xi, rng)
    if config.update_nuisance:
        state.family.update_nuisance(state.y, state.fit, state.delta, rng)
    state.iteration += 1
    return state
