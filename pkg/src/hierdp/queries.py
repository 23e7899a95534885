"""k-way marginal queries and their evaluation over the region hierarchy.

A query is a conjunction of (feature = value) predicates; its answer at a
tree node counts the records in that node's subtree matching every
predicate. Answers are materialized for all nodes of the tree, leaf
counts first, then aggregated upward.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .errors import InfeasibleQueryError, SchemaError, ValidationError
from .population import FeatureSchema, Population, RegionTree

__all__ = [
    "MarginalQuery",
    "QuerySet",
    "AnswerTable",
    "NoisyAnswerTable",
    "evaluate",
    "sample_query_sets",
    "marginal_table",
    "joint_counts",
]


@dataclass(frozen=True)
class MarginalQuery:
    """Conjunction of (feature_index, value) predicates, one per feature.

    Predicates are stored sorted by feature index, so two queries with
    the same predicate set compare equal. Geographic region is not a
    schema feature and therefore can never appear as a predicate.
    """

    predicates: tuple[tuple[int, int], ...]

    def __post_init__(self):
        preds = tuple(sorted((int(f), int(v)) for f, v in self.predicates))
        object.__setattr__(self, "predicates", preds)
        if len(preds) == 0:
            raise ValidationError("query needs at least one predicate")
        feats = [f for f, _ in preds]
        if len(set(feats)) != len(feats):
            raise ValidationError("query predicates must use distinct features")

    @property
    def k(self) -> int:
        return len(self.predicates)

    def check_schema(self, schema: FeatureSchema) -> None:
        for f, v in self.predicates:
            if not (0 <= f < schema.num_features):
                raise SchemaError(f"query uses unknown feature index {f}")
            if not (0 <= v < schema.sizes[f]):
                raise SchemaError(
                    f"query value {v} outside domain of feature {schema.names[f]!r}"
                )

    def to_json_obj(self, schema: FeatureSchema) -> list[dict]:
        return [{"feature": schema.names[f], "value": v} for f, v in self.predicates]


@dataclass(frozen=True)
class QuerySet:
    """Ordered, duplicate-free collection of marginal queries."""

    queries: tuple[MarginalQuery, ...]

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        if len(set(self.queries)) != len(self.queries):
            raise ValidationError("query set contains duplicate queries")

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def check_schema(self, schema: FeatureSchema) -> None:
        for q in self.queries:
            q.check_schema(schema)

    def to_json(self, schema: FeatureSchema) -> str:
        return json.dumps([q.to_json_obj(schema) for q in self.queries], indent=2)

    @classmethod
    def from_json(cls, text: str, schema: FeatureSchema) -> "QuerySet":
        name_to_idx = {n: i for i, n in enumerate(schema.names)}
        queries = []
        for conj in json.loads(text):
            preds = []
            for pred in conj:
                if pred["feature"] not in name_to_idx:
                    raise SchemaError(f"unknown feature {pred['feature']!r} in query JSON")
                preds.append((name_to_idx[pred["feature"]], int(pred["value"])))
            queries.append(MarginalQuery(tuple(preds)))
        qs = cls(tuple(queries))
        qs.check_schema(schema)
        return qs


class AnswerTable:
    """Per-query, per-tree-node answer matrix.

    Ground truth and final releases hold non-negative integers; noisy
    intermediate tables hold reals. Column order is the tree's level
    order.
    """

    def __init__(self, query_set: QuerySet, tree: RegionTree, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != (len(query_set), tree.num_nodes):
            raise ValidationError(
                f"answer table shape {values.shape} does not match "
                f"({len(query_set)}, {tree.num_nodes})"
            )
        self.query_set = query_set
        self.tree = tree
        self.values = values

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def root_values(self) -> np.ndarray:
        return self.values[:, self.tree.node_index[self.tree.root]]

    def to_csv(self, path) -> None:
        """Export as rows of (query_id, region_id, value)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["query_id", "region_id", "value"])
            for qi in range(self.values.shape[0]):
                for ni, node in enumerate(self.tree.node_ids):
                    writer.writerow([qi, node, repr(self.values[qi, ni].item())])


# Noisy tables share the container; the dtype of `values` tells them apart.
NoisyAnswerTable = AnswerTable


def evaluate(population: Population, queries: QuerySet) -> AnswerTable:
    """Exact counts for every (query, tree node) pair.

    Leaf counts are computed once per query and aggregated up the tree,
    so the result satisfies consistency, validity, and faithfulness by
    construction.
    """
    queries.check_schema(population.schema)
    tree = population.tree
    leaf_counts = np.empty((len(queries), tree.num_leaves), dtype=np.int64)
    for i, q in enumerate(queries):
        feats = np.fromiter((f for f, _ in q.predicates), dtype=np.int64)
        vals = np.fromiter((v for _, v in q.predicates), dtype=np.int64)
        leaf_counts[i] = kernels.count_matches_by_leaf(
            population.values, population.leaf_idx, feats, vals, tree.num_leaves
        )
    values = leaf_counts @ tree.leaf_membership.T
    return AnswerTable(queries, tree, values)


def _subset_tables(schema: FeatureSchema, k: int):
    """All k-feature subsets with their assignment counts and cumulative offsets."""
    subsets = list(combinations(range(schema.num_features), k))
    cell_counts = np.array(
        [int(np.prod([schema.sizes[f] for f in s])) for s in subsets], dtype=np.int64
    )
    offsets = np.concatenate([[0], np.cumsum(cell_counts)])
    return subsets, cell_counts, offsets


def _unrank(index: int, subsets, offsets, schema: FeatureSchema) -> MarginalQuery:
    si = int(np.searchsorted(offsets, index, side="right")) - 1
    subset = subsets[si]
    rem = index - int(offsets[si])
    preds = []
    for f in reversed(subset):
        size = schema.sizes[f]
        preds.append((f, rem % size))
        rem //= size
    return MarginalQuery(tuple(preds))


def sample_query_sets(
    seed: int,
    schema: FeatureSchema,
    k: int,
    count_in: int,
    count_out: int,
) -> tuple[QuerySet, QuerySet]:
    """Disjoint in-/out-of-distribution query sets, uniform without replacement.

    The universe is every (k-feature subset, value assignment) pair;
    queries are unranked from flat indices so the universe is never
    materialized. Deterministic in `seed`.
    """
    if k < 1 or k > schema.num_features:
        raise InfeasibleQueryError(f"k={k} not supported by schema with M={schema.num_features}")
    subsets, _, offsets = _subset_tables(schema, k)
    total = int(offsets[-1])
    want = count_in + count_out
    if want > total:
        raise InfeasibleQueryError(
            f"requested {want} distinct {k}-way queries but only {total} exist"
        )
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    if total <= 1_000_000:
        picks = rng.choice(total, size=want, replace=False)
    else:
        chosen: list[int] = []
        seen: set[int] = set()
        while len(chosen) < want:
            batch = rng.integers(0, total, size=want)
            for idx in batch:
                idx = int(idx)
                if idx not in seen:
                    seen.add(idx)
                    chosen.append(idx)
                    if len(chosen) == want:
                        break
        picks = np.asarray(chosen)
    queries = [_unrank(int(i), subsets, offsets, schema) for i in picks]
    return QuerySet(tuple(queries[:count_in])), QuerySet(tuple(queries[count_in:]))


def joint_counts(population: Population, feature_subset) -> np.ndarray:
    """Unnormalized contingency table over a feature subset's value grid."""
    subset = list(feature_subset)
    if not subset:
        raise ValidationError("feature subset must be non-empty")
    if len(set(subset)) != len(subset):
        raise ValidationError("feature subset must be distinct")
    for f in subset:
        if not (0 <= f < population.schema.num_features):
            raise SchemaError(f"unknown feature index {f}")
    shape = tuple(population.schema.sizes[f] for f in subset)
    flat = np.ravel_multi_index(tuple(population.values[:, f] for f in subset), shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape)))
    return counts.reshape(shape).astype(np.int64)


def marginal_table(population: Population, feature_subset) -> np.ndarray:
    """Normalized joint empirical distribution over a feature subset."""
    counts = joint_counts(population, feature_subset)
    return counts / counts.sum()
