"""Mixture-of-product-distributions synthetic data with adaptive measurements.

The model is a K-component mixture; each component holds a distribution
over leaf regions plus one independent probability vector per feature.
Fitting runs an iterative loop: privately select a high-error (query,
node) pair with the exponential mechanism, measure it with the Gaussian
mechanism, then run projected gradient descent on the squared error of
the model against every measurement logged so far. Sampling is ancestral:
component, then region, then features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .mechanisms import PrivacyBudget, RandomSource, exponential_mechanism, gaussian_noise
from .population import Population
from .queries import AnswerTable, MarginalQuery, QuerySet, evaluate

__all__ = [
    "HPDModel",
    "MeasurementLog",
    "model_answer",
    "model_answer_gradient",
    "project_rows_to_simplex",
    "adaptive_measurements_fit",
    "sample_synthetic",
    "run_hpd",
    "HPDResult",
]


def project_rows_to_simplex(mat: np.ndarray) -> np.ndarray:
    """Exact Euclidean projection of every row onto the probability simplex.

    Sort-and-threshold scheme; deterministic and exact up to float
    arithmetic.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    n_rows, dim = mat.shape
    u = np.sort(mat, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, dim + 1)
    positive = u - css / idx > 0
    rho = positive.sum(axis=1)
    tau = css[np.arange(n_rows), rho - 1] / rho
    return np.maximum(mat - tau[:, None], 0.0)


@dataclass
class HPDModel:
    """Mixture of hierarchical product distributions.

    weights: (K,); region_dist: (K, leaves); feature_probs[m]: (K, d_m).
    """

    schema: object
    tree: object
    weights: np.ndarray
    region_dist: np.ndarray
    feature_probs: list[np.ndarray]

    @property
    def num_components(self) -> int:
        return self.weights.size

    def validate(self) -> None:
        def check(vec, label):
            if (vec < 0).any() or np.abs(vec.sum(axis=-1) - 1.0).max() > 1e-9:
                raise ValidationError(f"{label} is not on the simplex")

        check(self.weights, "mixture weights")
        check(self.region_dist, "region distribution")
        for m, probs in enumerate(self.feature_probs):
            check(probs, f"feature {m} probabilities")

    def to_json_obj(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "region_dist": self.region_dist.tolist(),
            "feature_probs": [p.tolist() for p in self.feature_probs],
        }


@dataclass
class MeasurementRecord:
    round_index: int
    query_index: int
    node_id: str
    noisy_answer: float
    epsilon_spent: float
    delta_spent: float


@dataclass
class MeasurementLog:
    """Append-only record of every private measurement taken during a fit."""

    entries: list[MeasurementRecord] = field(default_factory=list)

    def append(self, record: MeasurementRecord) -> None:
        expected_round = 1 if not self.entries else self.entries[-1].round_index
        if record.round_index not in (expected_round, expected_round + 1):
            raise ValidationError("measurement rounds must be contiguous from 1")
        self.entries.append(record)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["round", "query_id", "region_id", "noisy_answer", "epsilon_spent", "delta_spent"]
            )
            for rec in self.entries:
                writer.writerow(
                    [
                        rec.round_index,
                        rec.query_index,
                        rec.node_id,
                        repr(rec.noisy_answer),
                        repr(rec.epsilon_spent),
                        repr(rec.delta_spent),
                    ]
                )


def _subtree_mass(model: HPDModel, node_id: str) -> np.ndarray:
    tree = model.tree
    if node_id not in tree.node_index:
        raise ValidationError(f"unknown region node {node_id!r}")
    mask = tree.leaf_membership[tree.node_index[node_id]].astype(np.float64)
    return model.region_dist @ mask


def model_answer(model: HPDModel, query: MarginalQuery, region_node: str, n_total: float) -> float:
    """Expected count of the query in the node's subtree under the mixture."""
    mass = _subtree_mass(model, region_node)
    factors = np.ones(model.num_components)
    for f, v in query.predicates:
        factors *= model.feature_probs[f][:, v]
    return float(n_total * np.sum(model.weights * mass * factors))


def model_answer_gradient(model: HPDModel, query: MarginalQuery, region_node: str, n_total: float):
    """Analytic gradient of `model_answer` in every model parameter.

    Returns (d_weights, d_region, d_features) with the shapes of the
    model's parameter arrays; entries for features outside the query are
    zero.
    """
    tree = model.tree
    mask = tree.leaf_membership[tree.node_index[region_node]].astype(np.float64)
    mass = model.region_dist @ mask
    k_feats = [f for f, _ in query.predicates]
    factor_per_pred = np.stack(
        [model.feature_probs[f][:, v] for f, v in query.predicates]
    )  # (k, K)
    full = factor_per_pred.prod(axis=0)

    d_weights = n_total * mass * full
    d_region = n_total * (model.weights * full)[:, None] * mask[None, :]
    d_features = [np.zeros_like(p) for p in model.feature_probs]
    for s, (f, v) in enumerate(query.predicates):
        excl = np.delete(factor_per_pred, s, axis=0).prod(axis=0) if len(k_feats) > 1 else np.ones(
            model.num_components
        )
        d_features[f][:, v] = n_total * model.weights * mass * excl
    return d_weights, d_region, d_features


class _FitWorkspace:
    """Vectorized forward/gradient passes over the logged measurements."""

    def __init__(self, model: HPDModel, membership: np.ndarray, kmax: int):
        self.model = model
        self.membership = membership.astype(np.float64)  # (nodes, leaves)
        self.kmax = kmax
        self.q_feats = np.empty((0, kmax), dtype=np.int64)
        self.q_vals = np.empty((0, kmax), dtype=np.int64)
        self.node_rows = np.empty(0, dtype=np.int64)
        self.targets = np.empty(0, dtype=np.float64)

    def add(self, query: MarginalQuery, node_row: int, target_frac: float) -> None:
        feats = np.full(self.kmax, -1, dtype=np.int64)
        vals = np.zeros(self.kmax, dtype=np.int64)
        for s, (f, v) in enumerate(query.predicates):
            feats[s] = f
            vals[s] = v
        self.q_feats = np.vstack([self.q_feats, feats])
        self.q_vals = np.vstack([self.q_vals, vals])
        self.node_rows = np.append(self.node_rows, node_row)
        self.targets = np.append(self.targets, target_frac)

    def _factors(self, weights, region, feats):
        count = self.q_feats.shape[0]
        fac = np.ones((count, self.kmax, weights.size))
        for m, probs in enumerate(feats):
            rows, slots = np.nonzero(self.q_feats == m)
            if rows.size:
                fac[rows, slots] = probs[:, self.q_vals[rows, slots]].T
        return fac

    def loss_and_grads(self, weights, region, feats, want_grads=True):
        count = self.q_feats.shape[0]
        fac = self._factors(weights, region, feats)
        full = fac.prod(axis=1)  # (J, K)
        mask_rows = self.membership[self.node_rows]  # (J, leaves)
        mass = mask_rows @ region.T  # (J, K)
        pred = np.einsum("c,jc,jc->j", weights, full, mass)
        resid = pred - self.targets
        loss = float(np.mean(resid**2))
        if not want_grads:
            return loss, None
        scale = 2.0 / count
        g_w = scale * np.einsum("j,jc,jc->c", resid, full, mass)
        g_region = scale * weights[:, None] * np.einsum("j,jc,jl->cl", resid, full, mask_rows)
        # exclusion products per predicate slot: prefix * suffix along the slot axis
        prefix = np.ones_like(fac)
        suffix = np.ones_like(fac)
        for s in range(1, self.kmax):
            prefix[:, s] = prefix[:, s - 1] * fac[:, s - 1]
            suffix[:, self.kmax - 1 - s] = suffix[:, self.kmax - s] * fac[:, self.kmax - s]
        excl = prefix * suffix
        coeff = scale * resid[:, None] * weights[None, :] * mass  # (J, K)
        g_feats = [np.zeros_like(p) for p in feats]
        for m in range(len(feats)):
            rows, slots = np.nonzero(self.q_feats == m)
            if rows.size == 0:
                continue
            contrib = coeff[rows] * excl[rows, slots]  # (|rows|, K)
            np.add.at(g_feats[m].T, self.q_vals[rows, slots], contrib)
        return loss, (g_w, g_region, g_feats)


def _init_model(
    population: Population, num_components: int, rng: np.random.Generator
) -> HPDModel:
    schema, tree = population.schema, population.tree
    jitter = 0.01

    def simplex_rows(rows, dim):
        base = np.full((rows, dim), 1.0 / dim)
        return project_rows_to_simplex(base + jitter * rng.standard_normal((rows, dim)))

    weights = np.full(num_components, 1.0 / num_components)
    region = simplex_rows(num_components, tree.num_leaves)
    feats = [simplex_rows(num_components, d) for d in schema.sizes]
    return HPDModel(schema, tree, weights, region, feats)


def adaptive_measurements_fit(
    population: Population,
    queries: QuerySet,
    budget: tuple[float, float],
    rounds: int = 100,
    learning_rate: float = 0.1,
    seed: int = 0,
    num_components: int = 32,
    inner_steps: int = 25,
    ledger: PrivacyBudget | None = None,
) -> tuple[HPDModel, MeasurementLog]:
    """Fit an HPD mixture by the select/measure/optimize loop.

    The (epsilon, delta) budget is split evenly across rounds and, within
    a round, evenly between the exponential-mechanism selection and the
    Gaussian measurement (delta funds only the Gaussian side). Candidates
    are every (query, tree node) pair; scores are absolute count errors
    of the current model, with sensitivity 1. The optimizer minimizes
    mean squared error in count fractions over all logged measurements,
    re-projecting every probability vector onto the simplex after each
    step and halving the step when it would increase the loss.
    """
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    epsilon, delta = budget
    eps_round = epsilon / rounds / 2.0
    delta_round = delta / rounds
    n = population.n
    tree = population.tree
    truth = evaluate(population, queries)
    truth_counts = truth.values.astype(np.float64)

    source = RandomSource(seed)
    rng_init = source.substream("hpd-init").generator()
    rng_select = source.substream("hpd-select").generator()
    rng_measure = source.substream("hpd-measure").generator()

    model = _init_model(population, num_components, rng_init)
    membership = tree.leaf_membership
    kmax = max(q.k for q in queries)
    workspace = _FitWorkspace(model, membership, kmax)
    log = MeasurementLog()

    n_queries = len(queries)
    n_nodes = tree.num_nodes
    candidates = [(qi, ni) for qi in range(n_queries) for ni in range(n_nodes)]

    weights, region, feats = model.weights, model.region_dist, model.feature_probs
    for round_index in range(1, rounds + 1):
        if ledger is not None:
            ledger.spend(2 * eps_round, delta_round)
        # model counts for every candidate, for the selection scores
        fac = np.ones((n_queries, num_components))
        scratch = _FitWorkspace(model, membership, kmax)
        for qi, q in enumerate(queries):
            for f, v in q.predicates:
                fac[qi] *= feats[f][:, v]
        node_mass = membership.astype(np.float64) @ region.T  # (nodes, K)
        model_counts = n * (fac * weights) @ node_mass.T  # (queries, nodes)
        scores = np.abs(truth_counts - model_counts).ravel()
        pick = exponential_mechanism(candidates, scores, 1.0, eps_round, rng_select)
        qi, ni = candidates[pick]

        noisy = float(
            truth_counts[qi, ni] + gaussian_noise(1.0, eps_round, delta_round, rng_measure)
        )
        log.append(
            MeasurementRecord(
                round_index=round_index,
                query_index=qi,
                node_id=tree.node_ids[ni],
                noisy_answer=noisy,
                epsilon_spent=2 * eps_round,
                delta_spent=delta_round,
            )
        )
        workspace.add(queries.queries[qi], ni, noisy / n)

        loss, grads = workspace.loss_and_grads(weights, region, feats)
        for _ in range(inner_steps):
            if grads is None:
                break
            g_w, g_region, g_feats = grads
            step = learning_rate
            improved = False
            for _attempt in range(12):
                cand_w = project_rows_to_simplex(weights - step * g_w)[0]
                cand_region = project_rows_to_simplex(region - step * g_region)
                cand_feats = [
                    project_rows_to_simplex(p - step * g)
                    for p, g in zip(feats, g_feats)
                ]
                cand_loss, cand_grads = workspace.loss_and_grads(
                    cand_w, cand_region, cand_feats
                )
                if cand_loss <= loss + 1e-15:
                    weights, region, feats = cand_w, cand_region, cand_feats
                    loss, grads = cand_loss, cand_grads
                    improved = True
                    break
                step /= 2.0
            if not improved:
                break

    model = HPDModel(population.schema, tree, weights, region, feats)
    model.validate()
    return model, log


def sample_synthetic(model: HPDModel, n_out: int, rng: np.random.Generator) -> Population:
    """Draw records ancestrally: component, then region leaf, then features."""
    if n_out < 1:
        raise ValidationError("n_out must be >= 1")
    k = model.num_components
    comp = rng.choice(k, size=n_out, p=model.weights)
    leaf_idx = np.empty(n_out, dtype=np.int64)
    values = np.empty((n_out, model.schema.num_features), dtype=np.int64)
    for c in range(k):
        idx = np.nonzero(comp == c)[0]
        if idx.size == 0:
            continue
        leaf_idx[idx] = rng.choice(model.region_dist.shape[1], size=idx.size, p=model.region_dist[c])
        for m, probs in enumerate(model.feature_probs):
            values[idx, m] = rng.choice(probs.shape[1], size=idx.size, p=probs[c])
    return Population(model.schema, model.tree, values, leaf_idx)


@dataclass
class HPDResult:
    synthetic: Population
    model: HPDModel
    log: MeasurementLog
    budget: PrivacyBudget


def run_hpd(
    population: Population,
    queries: QuerySet,
    epsilon: float,
    delta: float,
    seed: int,
    rounds: int = 100,
    learning_rate: float = 0.1,
    num_components: int = 32,
    inner_steps: int = 25,
    n_out: int | None = None,
) -> HPDResult:
    """End-to-end HPD-Fixed run: fit by adaptive measurements, then sample."""
    budget = PrivacyBudget(epsilon, delta)
    model, log = adaptive_measurements_fit(
        population,
        queries,
        (epsilon, delta),
        rounds=rounds,
        learning_rate=learning_rate,
        seed=seed,
        num_components=num_components,
        inner_steps=inner_steps,
        ledger=budget,
    )
    rng = RandomSource(seed).substream("hpd-sample").generator()
    synthetic = sample_synthetic(model, population.n if n_out is None else n_out, rng)
    return HPDResult(synthetic, model, log, budget)
