"""Decision trees, forests and the branching-process tree prior.

Nodes are addressed by their path from the root, a string over ``{"L", "R"}``
(the root is the empty string).  A branch at path ``b`` sends ``x`` to ``b + "L"``
when ``x[feature] <= cutpoint`` and to ``b + "R"`` otherwise.

Trees are immutable values: :func:`apply_move` returns a new tree and leaves its
input untouched, so unchanged trees can be shared freely between posterior
snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import StructureError

#: Interval widths below this are treated as zero when sampling a cutpoint.
DEGENERATE_WIDTH = 1e-12


@dataclass(frozen=True)
class SplitRule:
    """Rule ``x[feature] <= cutpoint``.

    ``degenerate`` marks rules drawn on a zero-width interval; the sampler
    rejects any move that would install one.
    """

    feature: int
    cutpoint: float
    degenerate: bool = False


@dataclass(frozen=True)
class TreeNode:
    path: str
    rule: SplitRule | None = None
    leaf_value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.rule is None

    @property
    def kind(self) -> str:
        return "leaf" if self.rule is None else "branch"

    @property
    def depth(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[lower_j, upper_j]`` of points routed to a node."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def unit(cls, num_features: int) -> "Region":
        return cls(np.zeros(num_features), np.ones(num_features))

    def width(self, feature: int) -> float:
        return float(self.upper[feature] - self.lower[feature])

    def contains(self, other: "Region") -> bool:
        return bool(np.all(self.lower <= other.lower) and np.all(other.upper <= self.upper))


@dataclass(frozen=True)
class TreePriorParams:
    """Branching-process prior: depth-``d`` nodes split with probability ``gamma * (1 + d) ** -beta``."""

    gamma: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    def rho(self, depth: int) -> float:
        return branch_prob(depth, self)


def branch_prob(depth: int, params: TreePriorParams) -> float:
    """Prior probability that a node at ``depth`` is a branch."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    return params.gamma * (1.0 + depth) ** (-params.beta)


class DecisionTree:
    """A full binary tree keyed by node path.

    Parameters
    ----------
    nodes : mapping of str to TreeNode
        Must contain the root ``""``; every branch must have both children and
        every leaf must have none.
    check : bool
        Validate the structure on construction.
    """

    __slots__ = ("_nodes",)

    def __init__(self, nodes: Mapping[str, TreeNode], check: bool = True):
        self._nodes = dict(nodes)
        if check:
            self._validate()

    @classmethod
    def leaf(cls, value: float = 0.0) -> "DecisionTree":
        """Single-node tree whose root is a leaf holding ``value``."""
        return cls({"": TreeNode("", None, float(value))}, check=False)

    def _validate(self) -> None:
        if "" not in self._nodes:
            raise StructureError("tree has no root node")
        for path, node in self._nodes.items():
            if node.path != path:
                raise StructureError(f"node stored under {path!r} reports path {node.path!r}")
            if path and path[:-1] not in self._nodes:
                raise StructureError(f"node {path!r} has no parent")
            has_left = path + "L" in self._nodes
            has_right = path + "R" in self._nodes
            if node.is_leaf and (has_left or has_right):
                raise StructureError(f"leaf {path!r} has children")
            if not node.is_leaf and not (has_left and has_right):
                raise StructureError(f"branch {path!r} is missing a child")

    @property
    def nodes(self) -> Mapping[str, TreeNode]:
        return MappingProxyType(self._nodes)

    def __getitem__(self, path: str) -> TreeNode:
        try:
            return self._nodes[path]
        except KeyError:
            raise StructureError(f"no node at path {path!r}") from None

    def __contains__(self, path: str) -> bool:
        return path in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[str]:
        return iter(self._nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self._nodes == other._nodes

    def __repr__(self) -> str:
        return f"DecisionTree({len(self.leaves())} leaves)"

    def leaves(self) -> list[str]:
        return [p for p, n in self._nodes.items() if n.rule is None]

    def branches(self) -> list[str]:
        return [p for p, n in self._nodes.items() if n.rule is not None]

    def nog(self) -> list[str]:
        """Branches whose two children are both leaves."""
        nodes = self._nodes
        return [
            p for p, n in nodes.items()
            if n.rule is not None and nodes[p + "L"].rule is None and nodes[p + "R"].rule is None
        ]

    @property
    def is_root_only(self) -> bool:
        return len(self._nodes) == 1

    def partition(self, X: np.ndarray, index: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Map each leaf path to the (sorted) row indices of ``X`` routed there."""
        if index is None:
            index = np.arange(X.shape[0])
        out = {}
        stack = [("", index)]
        nodes = self._nodes
        while stack:
            path, idx = stack.pop()
            node = nodes.get(path)
            if node is None:
                raise StructureError(f"missing node {path!r} while routing")
            if node.rule is None:
                out[path] = idx
                continue
            go_left = X[idx, node.rule.feature] <= node.rule.cutpoint
            stack.append((path + "R", idx[~go_left]))
            stack.append((path + "L", idx[go_left]))
        return out

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Leaf value reached by every row of ``X``."""
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0])
        for path, idx in self.partition(X).items():
            out[idx] = self._nodes[path].leaf_value
        return out


def route(x: Sequence[float], tree: DecisionTree) -> str:
    """Path of the unique leaf of ``tree`` containing ``x``."""
    path = ""
    while True:
        node = tree[path]
        if node.rule is None:
            return path
        path += "L" if x[node.rule.feature] <= node.rule.cutpoint else "R"


def node_sets(tree: DecisionTree) -> tuple[list[str], list[str], list[str]]:
    """Return ``(leaves, branches, nog)`` for ``tree``."""
    return tree.leaves(), tree.branches(), tree.nog()


def node_region(tree: DecisionTree, path: str, num_features: int) -> Region:
    """Box of points that ``tree`` routes to ``path``, intersected with the unit cube."""
    if path not in tree:
        raise StructureError(f"no node at path {path!r}")
    lower = np.zeros(num_features)
    upper = np.ones(num_features)
    for depth in range(len(path)):
        rule = tree[path[:depth]].rule
        j, c = rule.feature, rule.cutpoint
        if path[depth] == "L":
            upper[j] = min(upper[j], c)
        else:
            lower[j] = max(lower[j], c)
    return Region(lower, upper)


@dataclass(frozen=True)
class Forest:
    """Sum-of-trees model with its shared hyperparameters."""

    trees: tuple[DecisionTree, ...]
    sigma_mu: float
    split_probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")
        if not self.sigma_mu > 0:
            raise ValueError("sigma_mu must be positive")
        s = np.asarray(self.split_probs, dtype=float)
        if np.any(s < 0) or abs(s.sum() - 1.0) > 1e-9:
            raise ValueError("split_probs must lie on the simplex")
        object.__setattr__(self, "split_probs", s)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def num_features(self) -> int:
        return len(self.split_probs)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.evaluate(X)
        return total


def forest_eval(x: Sequence[float], forest: Forest) -> float:
    """``r(x)``: the sum over trees of the leaf value reached by ``x``."""
    return float(sum(tree[route(x, tree)].leaf_value for tree in forest.trees))


def sample_split_rule(rng: np.random.Generator, region: Region, s: np.ndarray) -> SplitRule:
    """Draw ``feature ~ Categorical(s)`` and ``cutpoint ~ Uniform(region[feature])``."""
    cum = np.cumsum(s)
    j = min(int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right")), len(s) - 1)
    lo, hi = float(region.lower[j]), float(region.upper[j])
    if hi - lo < DEGENERATE_WIDTH:
        return SplitRule(j, lo, degenerate=True)
    return SplitRule(j, float(rng.uniform(lo, hi)))


def log_rule_prior(rule: SplitRule, region: Region, s: np.ndarray) -> float:
    """Log density of ``rule`` under the split-rule prior at ``region``."""
    width = region.width(rule.feature)
    if rule.degenerate or width < DEGENERATE_WIDTH or s[rule.feature] <= 0:
        return -math.inf
    return math.log(s[rule.feature]) - math.log(width)


def sample_tree_prior(
    rng: np.random.Generator,
    params: TreePriorParams,
    s: np.ndarray,
    sigma_mu: float = 1.0,
) -> DecisionTree:
    """Draw a tree from the branching process with iid ``Normal(0, sigma_mu**2)`` leaves."""
    s = np.asarray(s, dtype=float)
    num_features = len(s)
    nodes = {}
    frontier = [("", Region.unit(num_features))]
    while frontier:
        path, region = frontier.pop(0)
        if rng.uniform() < branch_prob(len(path), params):
            rule = sample_split_rule(rng, region, s)
            nodes[path] = TreeNode(path, rule)
            left_upper = region.upper.copy()
            left_upper[rule.feature] = rule.cutpoint
            right_lower = region.lower.copy()
            right_lower[rule.feature] = rule.cutpoint
            frontier.append((path + "L", Region(region.lower, left_upper)))
            frontier.append((path + "R", Region(right_lower, region.upper)))
        else:
            nodes[path] = TreeNode(path, None, float(rng.normal(0.0, sigma_mu)))
    return DecisionTree(nodes, check=False)


def log_tree_prior(tree: DecisionTree, params: TreePriorParams, s: np.ndarray) -> float:
    """Log prior of the topology and split rules of ``tree`` (leaf values excluded)."""
    total = 0.0
    num_features = len(s)
    for path, node in tree.nodes.items():
        rho = branch_prob(len(path), params)
        if node.rule is None:
            total += math.log1p(-rho)
        else:
            total += math.log(rho) if rho > 0 else -math.inf
            total += log_rule_prior(node.rule, node_region(tree, path, num_features), s)
    return total


@dataclass(frozen=True)
class Birth:
    leaf: str
    rule: SplitRule
    mu_left: float
    mu_right: float


@dataclass(frozen=True)
class Death:
    branch: str
    mu: float


@dataclass(frozen=True)
class Change:
    branch: str
    rule: SplitRule
    mu_left: float
    mu_right: float


Move = Union[Birth, Death, Change]


def _require_nog(tree: DecisionTree, path: str) -> None:
    node = tree[path]
    if node.rule is None or not (tree[path + "L"].is_leaf and tree[path + "R"].is_leaf):
        raise StructureError(f"node {path!r} is not a non-grandparent branch")


def apply_move(tree: DecisionTree, move: Move) -> DecisionTree:
    """Return a new tree with ``move`` applied; ``tree`` itself is not modified."""
    nodes = dict(tree.nodes)
    if isinstance(move, Birth):
        path = move.leaf
        if not tree[path].is_leaf:
            raise StructureError(f"BIRTH target {path!r} is not a leaf")
        nodes[path] = TreeNode(path, move.rule)
        nodes[path + "L"] = TreeNode(path + "L", None, float(move.mu_left))
        nodes[path + "R"] = TreeNode(path + "R", None, float(move.mu_right))
    elif isinstance(move, Death):
        path = move.branch
        _require_nog(tree, path)
        del nodes[path + "L"], nodes[path + "R"]
        nodes[path] = TreeNode(path, None, float(move.mu))
    elif isinstance(move, Change):
        path = move.branch
        _require_nog(tree, path)
        nodes[path] = TreeNode(path, move.rule)
        nodes[path + "L"] = TreeNode(path + "L", None, float(move.mu_left))
        nodes[path + "R"] = TreeNode(path + "R", None, float(move.mu_right))
    else:
        raise TypeError(f"unknown move {move!r}")
    return DecisionTree(nodes, check=False)


def with_leaf_values(tree: DecisionTree, values: Mapping[str, float]) -> DecisionTree:
    """Copy of ``tree`` with the given leaves' values replaced."""
    nodes = dict(tree.nodes)
    for path, value in values.items():
        if not nodes[path].is_leaf:
            raise StructureError(f"{path!r} is not a leaf")
        nodes[path] = TreeNode(path, None, float(value))
    return DecisionTree(nodes, check=False)
