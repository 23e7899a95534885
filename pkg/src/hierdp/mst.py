"""Tree-structured private synthetic data.

Privately selects a maximum-spanning-tree set of pairwise marginals over
a mutual-information correlation graph (features plus one region node),
measures each selected pairwise table with the Gaussian mechanism, fits
the tree-factored distribution those marginals determine, and samples a
synthetic population by ancestral sampling from the region root.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .mechanisms import PrivacyBudget, RandomSource, exponential_mechanism, gaussian_noise
from .population import Population
from .queries import joint_counts

__all__ = [
    "region_node",
    "mutual_information",
    "select_tree",
    "TreeModel",
    "measure_and_fit",
    "sample_synthetic",
    "run_mst",
    "MSTResult",
]


def region_node(population: Population) -> int:
    """Index of the region pseudo-node in the correlation graph."""
    return population.schema.num_features


def _node_column(population: Population, node: int) -> np.ndarray:
    if node == region_node(population):
        return population.leaf_idx
    return population.values[:, node]


def _node_size(population: Population, node: int) -> int:
    if node == region_node(population):
        return population.tree.num_leaves
    return population.schema.sizes[node]


def _pair_counts(population: Population, a: int, b: int) -> np.ndarray:
    col_a = _node_column(population, a)
    col_b = _node_column(population, b)
    da, db = _node_size(population, a), _node_size(population, b)
    flat = col_a * db + col_b
    return np.bincount(flat, minlength=da * db).reshape(da, db).astype(np.int64)


def mutual_information(population: Population, feature_a: int, feature_b: int) -> float:
    """Empirical mutual information (nats) between two graph nodes.

    The region column participates as a pseudo-feature over leaf ids.
    Zero joint cells contribute nothing.
    """
    last = region_node(population)
    for f in (feature_a, feature_b):
        if not (0 <= f <= last):
            raise ValidationError(f"invalid graph node {f}")
    if feature_a == feature_b:
        raise ValidationError("mutual information needs two distinct nodes")
    joint = _pair_counts(population, feature_a, feature_b) / population.n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mi = 0.0
    for i in range(joint.shape[0]):
        for j in range(joint.shape[1]):
            p = joint[i, j]
            if p > 0:
                mi += p * math.log(p / (pa[i] * pb[j]))
    return max(0.0, mi)


def mi_matrix(population: Population) -> np.ndarray:
    """Symmetric pairwise MI over all features plus the region node."""
    n_nodes = region_node(population) + 1
    out = np.zeros((n_nodes, n_nodes))
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            out[a, b] = out[b, a] = mutual_information(population, a, b)
    return out


def select_tree(
    population: Population,
    budget_fraction: float,
    epsilon: float,
    rng: np.random.Generator,
    mi_sensitivity: float = 1.0,
    ledger: PrivacyBudget | None = None,
) -> list[tuple[int, int]]:
    """Privately pick a spanning tree of the correlation graph.

    Prim-style growth from a uniformly drawn start node: each of the
    (nodes-1) steps runs the exponential mechanism over the cut-crossing
    edges with the selection budget split evenly across steps. As the
    selection epsilon grows the result converges to the exact maximum
    spanning tree.
    """
    n_nodes = region_node(population) + 1
    if n_nodes < 2:
        raise ValidationError("need at least two graph nodes to build a tree")
    if not (0.0 < budget_fraction <= 1.0):
        raise ValidationError("budget_fraction must lie in (0, 1]")
    eps_select = budget_fraction * epsilon
    if ledger is not None:
        ledger.spend(eps_select, 0.0)
    eps_step = eps_select / (n_nodes - 1)
    weights = mi_matrix(population)

    start = int(rng.integers(n_nodes))
    in_tree = {start}
    edges: list[tuple[int, int]] = []
    for _ in range(n_nodes - 1):
        candidates = [
            (u, v)
            for u in sorted(in_tree)
            for v in range(n_nodes)
            if v not in in_tree
        ]
        scores = [weights[u, v] for u, v in candidates]
        pick = exponential_mechanism(candidates, scores, mi_sensitivity, eps_step, rng)
        u, v = candidates[pick]
        in_tree.add(v)
        edges.append((u, v))
    return edges


@dataclass
class TreeModel:
    """Tree-factored distribution over features plus the region node.

    Edges are directed away from the region root. Each edge carries a
    calibrated pairwise table (parent axis first) whose parent margin
    matches the parent's node marginal, so the whole model is mutually
    consistent and sampleable by ancestral sampling.
    """

    schema: object
    tree: object
    edges: list[tuple[int, int]]
    node_marginals: dict[int, np.ndarray]
    edge_tables: dict[tuple[int, int], np.ndarray]
    conditionals: dict[tuple[int, int], np.ndarray]
    degenerate_rows: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    @property
    def root(self) -> int:
        return self.schema.num_features

    def validate(self) -> None:
        nodes = set()
        for u, v in self.edges:
            nodes.update((u, v))
        if len(self.edges) != len(nodes) - 1:
            raise ValidationError("edges do not form a spanning tree")
        for node, marg in self.node_marginals.items():
            if (marg < 0).any() or abs(marg.sum() - 1.0) > 1e-9:
                raise ValidationError(f"node {node} marginal is not a distribution")
        for (u, v), table in self.edge_tables.items():
            if (table < 0).any() or abs(table.sum() - 1.0) > 1e-9:
                raise ValidationError(f"edge {(u, v)} table is not a distribution")
            if np.abs(table.sum(axis=1) - self.node_marginals[u]).max() > 1e-6:
                raise ValidationError(f"edge {(u, v)} parent margin inconsistent")
            if np.abs(table.sum(axis=0) - self.node_marginals[v]).max() > 1e-6:
                raise ValidationError(f"edge {(u, v)} child margin inconsistent")

    def to_json(self) -> str:
        return json.dumps(
            {
                "root": self.root,
                "edges": [[u, v] for u, v in self.edges],
                "node_marginals": {str(k): v.tolist() for k, v in self.node_marginals.items()},
                "edge_tables": {f"{u}-{v}": t.tolist() for (u, v), t in self.edge_tables.items()},
                "degenerate_rows": {f"{u}-{v}": r for (u, v), r in self.degenerate_rows.items()},
            },
            indent=2,
        )


def _orient_edges(edges: list[tuple[int, int]], root: int) -> list[tuple[int, int]]:
    adjacency: dict[int, list[int]] = {}
    for u, v in edges:
        adjacency.setdefault(u, []).append(v)
        adjacency.setdefault(v, []).append(u)
    for k in adjacency:
        adjacency[k].sort()
    oriented: list[tuple[int, int]] = []
    seen = {root}
    frontier = [root]
    while frontier:
        node = frontier.pop(0)
        for nxt in adjacency.get(node, []):
            if nxt not in seen:
                seen.add(nxt)
                oriented.append((node, nxt))
                frontier.append(nxt)
    if len(oriented) != len(edges):
        raise ValidationError("edge list is not connected through the region root")
    return oriented


def measure_and_fit(
    population: Population,
    tree_edges: list[tuple[int, int]],
    measurement_budget: tuple[float, float],
    rng: np.random.Generator,
    ledger: PrivacyBudget | None = None,
) -> TreeModel:
    """Measure each edge's pairwise table with Gaussian noise and fit the model.

    The (epsilon, delta) measurement budget is split evenly across edges;
    each pairwise count table has add/remove-one sensitivity 1. Noisy
    tables are clamped at zero and renormalized, then recalibrated
    root-outward (parent marginal times conditional rows) so node and
    edge marginals agree exactly. Parent rows that clamp to zero get the
    table's child margin as their conditional and are flagged as
    degenerate for the sampler's diagnostics.
    """
    eps_m, delta_m = measurement_budget
    n_edges = len(tree_edges)
    if n_edges == 0:
        raise ValidationError("cannot fit a model with no edges")
    eps_edge = eps_m / n_edges
    delta_edge = delta_m / n_edges

    root = region_node(population)
    oriented = _orient_edges(tree_edges, root)

    raw_joint: dict[tuple[int, int], np.ndarray] = {}
    for u, v in oriented:
        if ledger is not None:
            ledger.spend(eps_edge, delta_edge)
        counts = _pair_counts(population, u, v).astype(np.float64)
        noisy = counts + gaussian_noise(1.0, eps_edge, delta_edge, rng, size=counts.shape)
        np.maximum(noisy, 0.0, out=noisy)
        total = noisy.sum()
        if total <= 0:
            noisy = np.full_like(noisy, 1.0 / noisy.size)
            total = 1.0
        raw_joint[(u, v)] = noisy / total

    node_marginals: dict[int, np.ndarray] = {}
    first_parent, first_child = oriented[0]
    node_marginals[root] = raw_joint[(first_parent, first_child)].sum(axis=1)

    conditionals: dict[tuple[int, int], np.ndarray] = {}
    edge_tables: dict[tuple[int, int], np.ndarray] = {}
    degenerate: dict[tuple[int, int], list[int]] = {}
    for u, v in oriented:
        joint = raw_joint[(u, v)]
        rows = joint.sum(axis=1)
        child_margin = joint.sum(axis=0)
        if child_margin.sum() <= 0:
            child_margin = np.full(joint.shape[1], 1.0 / joint.shape[1])
        else:
            child_margin = child_margin / child_margin.sum()
        cond = np.empty_like(joint)
        bad_rows: list[int] = []
        for i, mass in enumerate(rows):
            if mass > 0:
                cond[i] = joint[i] / mass
            else:
                cond[i] = child_margin
                bad_rows.append(i)
        calibrated = node_marginals[u][:, None] * cond
        conditionals[(u, v)] = cond
        edge_tables[(u, v)] = calibrated
        node_marginals[v] = calibrated.sum(axis=0)
        if bad_rows:
            degenerate[(u, v)] = bad_rows

    model = TreeModel(
        schema=population.schema,
        tree=population.tree,
        edges=oriented,
        node_marginals=node_marginals,
        edge_tables=edge_tables,
        conditionals=conditionals,
        degenerate_rows=degenerate,
    )
    model.validate()
    return model


def sample_synthetic(
    model: TreeModel,
    n_out: int,
    rng: np.random.Generator,
    diagnostics: dict | None = None,
) -> Population:
    """Ancestral sampling: region root first, then outward along tree edges.

    Records whose parent value hits a degenerate (zero-mass) conditional
    row are drawn from the fallback child margin baked in at fit time;
    `diagnostics["fallback_draws"]` counts them when a dict is passed.
    """
    if n_out < 1:
        raise ValidationError("n_out must be >= 1")
    root = model.root
    columns: dict[int, np.ndarray] = {}
    root_marg = model.node_marginals[root]
    columns[root] = rng.choice(root_marg.size, size=n_out, p=root_marg)
    fallback_draws = 0
    for u, v in model.edges:
        cond = model.conditionals[(u, v)]
        bad = set(model.degenerate_rows.get((u, v), []))
        parent_vals = columns[u]
        child_vals = np.empty(n_out, dtype=np.int64)
        for pv in range(cond.shape[0]):
            idx = np.nonzero(parent_vals == pv)[0]
            if idx.size == 0:
                continue
            child_vals[idx] = rng.choice(cond.shape[1], size=idx.size, p=cond[pv])
            if pv in bad:
                fallback_draws += idx.size
        columns[v] = child_vals
    if diagnostics is not None:
        diagnostics["fallback_draws"] = diagnostics.get("fallback_draws", 0) + fallback_draws

    values = np.column_stack([columns[m] for m in range(model.schema.num_features)])
    return Population(model.schema, model.tree, values, columns[root])


@dataclass
class MSTResult:
    synthetic: Population
    model: TreeModel
    budget: PrivacyBudget
    diagnostics: dict


def run_mst(
    population: Population,
    epsilon: float,
    delta: float,
    seed: int,
    selection_fraction: float = 0.1,
    mi_sensitivity: float = 1.0,
    n_out: int | None = None,
) -> MSTResult:
    """End-to-end MST run: select, measure, fit, sample.

    By default 10% of epsilon funds tree selection and the rest (plus all
    of delta) funds Gaussian measurements; the split is exposed rather
    than hidden. The synthetic size defaults to the true n, which is
    treated as public.
    """
    budget = PrivacyBudget(epsilon, delta)
    source = RandomSource(seed)
    edges = select_tree(
        population,
        selection_fraction,
        epsilon,
        source.substream("mst-select").generator(),
        mi_sensitivity=mi_sensitivity,
        ledger=budget,
    )
    model = measure_and_fit(
        population,
        edges,
        (epsilon * (1.0 - selection_fraction), delta),
        source.substream("mst-measure").generator(),
        ledger=budget,
    )
    diagnostics: dict = {}
    synthetic = sample_synthetic(
        model,
        population.n if n_out is None else n_out,
        source.substream("mst-sample").generator(),
        diagnostics=diagnostics,
    )
    return MSTResult(synthetic, model, budget, diagnostics)
