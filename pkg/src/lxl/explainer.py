"""Latent local-rule explanations: genetic neighborhood, surrogate tree, rules,
exemplars, counter-exemplar and saliency map.

Everything is driven by a frozen black-box + AAE pair; ``explain`` is a pure
function of (models, image, params.seed).
"""

from __future__ import annotations

import base64
import io
import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from PIL import Image as PILImage

from .data import CLASS_NAMES
from .errors import ExplanationInfeasibleError
from .models import classify, decode, encode
from .tree import DecisionTree

SCHEMA_VERSION = "explanation/1"


# ----------------------------------------------------------------------
# domain types

@dataclass
class LatentCandidate:
    z: np.ndarray
    decoded: np.ndarray
    label: int
    discriminator_score: float
    fitness: float
    confidence: float  # black-box score for its own label


@dataclass
class Neighborhood:
    anchor_z: np.ndarray
    anchor_label: int
    candidates: list
    generation_log: dict  # {"same": [...], "diff": [...]} best fitness per generation

    def same_label(self):
        return [c for c in self.candidates if c.label == self.anchor_label]

    def different_label(self):
        return [c for c in self.candidates if c.label != self.anchor_label]


@dataclass
class Rule:
    premise: list  # (feature index, "<=" | ">", threshold)
    consequence: int

    def satisfied_by(self, z):
        for f, op, thr in self.premise:
            if op == "<=" and not z[f] <= thr:
                return False
            if op == ">" and not z[f] > thr:
                return False
        return True

    def violations(self, z):
        count = 0
        for f, op, thr in self.premise:
            ok = z[f] <= thr if op == "<=" else z[f] > thr
            count += 0 if ok else 1
        return count


@dataclass
class SurrogateTree:
    tree: DecisionTree
    fidelity: float
    no_counterfactual: bool = False


@dataclass
class Explanation:
    anchor_image: np.ndarray
    anchor_label: int
    anchor_scores: np.ndarray
    exemplars: list
    counter_exemplar: np.ndarray
    counter_label: int
    neighbors: list  # (decoded image, label, latent distance)
    rule: Rule
    counterfactual_rules: list
    saliency: np.ndarray
    fidelity: float
    seed: int


@dataclass
class ExplainParams:
    population_size: int = 100
    generations: int = 10
    n_same: int = 200
    n_diff: int = 200
    mutation_sigma: float = 0.4
    mutation_prob: float = 0.5
    crossover_prob: float = 0.7
    init_sigma: float = 0.6
    validity_threshold: float = 0.35
    n_exemplars: int = 4
    n_neighbors: int = 8
    tree_max_depth: int = 8
    tree_min_leaf: int = 5
    counter_lambda: float = 0.5
    exemplar_jitter: float = 0.5
    max_extra_generations: int = 30
    seed: int = 0


# ----------------------------------------------------------------------
# disde: validity gate + decode + black-box label

def _disc_scores_individual(aae, z_batch):
    """Discriminator scores with singleton semantics for each row.

    The cross-batch similarity statistic is an empty sum for a lone sample, so
    per-candidate validity is computed with that statistic fixed at zero; this
    keeps validity independent of which other candidates share the batch.
    """
    p = aae.params
    z = np.atleast_2d(np.asarray(z_batch, np.float32))
    h = z @ p["disc.fc1.w"].data + p["disc.fc1.b"].data
    h = np.where(h > 0, h, 0.2 * h)
    logits = h @ p["disc.fc2.w"].data[:aae.disc_width] + p["disc.fc2.b"].data
    return (1.0 / (1.0 + np.exp(-logits)))[:, 0]


def disde(aae, h, blackbox, threshold=0.35):
    """Validity flag, decoded image and black-box label for a latent vector."""
    h = np.asarray(h, np.float32)
    score = float(_disc_scores_individual(aae, h)[0])
    decoded = decode(aae, h)
    label = int(np.argmax(classify(blackbox, decoded)))
    return score >= threshold, decoded, label


# ----------------------------------------------------------------------
# genetic neighborhood generation

def _evaluate(aae, blackbox, pop, anchor_z, anchor_label, want_same, d_max):
    """Batched decode/classify/discriminate; returns fitness and candidate data."""
    decoded = decode(aae, pop)
    scores = classify(blackbox, decoded)
    labels = np.argmax(scores, axis=1)
    disc = _disc_scores_individual(aae, pop)
    dist = np.sqrt(((pop - anchor_z) ** 2).sum(axis=1))
    label_term = (labels == anchor_label) if want_same else (labels != anchor_label)
    fitness = label_term.astype(np.float64) + (1.0 - dist / d_max)
    if want_same:
        fitness -= (dist < 1e-9).astype(np.float64)  # discourage returning z itself
    return fitness, decoded, labels, scores, disc


def neighgen_genetic(z, blackbox, aae, params=None):
    """Evolve same-label and different-label latent sub-populations around z."""
    params = params or ExplainParams()
    if params.population_size < 10:
        raise ValueError("population size must be >= 10")
    if params.generations < 1:
        raise ValueError("generations must be >= 1")
    z = np.asarray(z, np.float32)
    anchor_label = int(np.argmax(classify(blackbox, decode(aae, z))))
    rng = np.random.default_rng(params.seed)
    log = {}
    pools = {}

    for side, want_same, requested in (
        ("same", True, params.n_same), ("diff", False, params.n_diff),
    ):
        pop = z[None, :] + params.init_sigma * rng.standard_normal(
            (params.population_size, z.size)
        ).astype(np.float32)
        # distance normalizer is frozen at the initial spread so the fitness
        # function is stationary and elitism yields a monotone best-fitness log
        init_dist = np.sqrt(((pop - z) ** 2).sum(axis=1))
        d_max = float(init_dist.max()) or 1.0
        pool = {}
        best_log = []
        elite = None
        gen = 0
        while gen < params.generations + params.max_extra_generations:
            # the elite always survives at index 0 and the fitness function is
            # stationary, so the best-per-generation log is non-decreasing
            fitness, decoded, labels, scores, disc = _evaluate(
                aae, blackbox, pop, z, anchor_label, want_same, d_max,
            )
            best_idx = int(np.argmax(fitness))
            elite = (pop[best_idx].copy(), float(fitness[best_idx]))
            best_log.append(float(fitness[best_idx]))

            side_ok = (labels == anchor_label) if want_same else (labels != anchor_label)
            for i in np.nonzero(side_ok & (disc >= params.validity_threshold))[0]:
                key = pop[i].tobytes()
                if key not in pool:
                    pool[key] = LatentCandidate(
                        z=pop[i].copy(), decoded=decoded[i], label=int(labels[i]),
                        discriminator_score=float(disc[i]), fitness=float(fitness[i]),
                        confidence=float(scores[i, labels[i]]),
                    )
            gen += 1
            if gen >= params.generations and len(pool) >= requested:
                break

            # tournament selection + uniform crossover + gaussian mutation
            new_pop = [elite[0].copy()]
            while len(new_pop) < params.population_size:
                contenders = rng.integers(0, params.population_size, size=3)
                pa = pop[contenders[np.argmax(fitness[contenders])]]
                contenders = rng.integers(0, params.population_size, size=3)
                pb = pop[contenders[np.argmax(fitness[contenders])]]
                if rng.random() < params.crossover_prob:
                    mask = rng.random(z.size) < 0.5
                    child = np.where(mask, pa, pb)
                else:
                    child = pa.copy()
                mut = rng.random(z.size) < params.mutation_prob
                child = child + mut * params.mutation_sigma * rng.standard_normal(z.size)
                new_pop.append(child.astype(np.float32))
            pop = np.stack(new_pop)

        if len(pool) < requested:
            raise ExplanationInfeasibleError(
                "neighgen",
                f"only {len(pool)} valid {side}-label candidates of {requested} requested",
            )
        ranked = sorted(pool.values(), key=lambda c: -c.fitness)
        pools[side] = ranked[:requested]
        log[side] = best_log

    return Neighborhood(
        anchor_z=z, anchor_label=anchor_label,
        candidates=pools["same"] + pools["diff"], generation_log=log,
    )


# ----------------------------------------------------------------------
# surrogate tree and rules

def fit_surrogate(neighborhood, max_depth=8, min_leaf=5):
    x = np.stack([c.z for c in neighborhood.candidates])
    y = np.array([c.label for c in neighborhood.candidates])
    tree = DecisionTree(max_depth=max_depth, min_leaf=min_leaf)
    if len(np.unique(y)) == 1:
        tree.fit(x[:1], y[:1])  # degenerate single-leaf tree
        return SurrogateTree(tree=tree, fidelity=1.0, no_counterfactual=True)
    tree.fit(x, y)
    fidelity = float(np.mean(tree.predict(x) == y))
    return SurrogateTree(tree=tree, fidelity=fidelity)


def extract_rules(surrogate, z):
    """Decision rule on z's root-to-leaf path plus ranked counterfactual rules."""
    z = np.asarray(z, np.float64)
    premise, leaf = surrogate.tree.path_for(z)
    rule = Rule(premise=premise, consequence=int(leaf.label))
    counterfactuals = []
    for path, node in surrogate.tree.leaf_paths():
        if node.label == rule.consequence:
            continue
        cf = Rule(premise=path, consequence=int(node.label))
        counterfactuals.append((cf.violations(z), -node.support, len(counterfactuals), cf))
    counterfactuals.sort(key=lambda t: t[:3])
    return rule, [cf for _, _, _, cf in counterfactuals]


# ----------------------------------------------------------------------
# exemplars, counter-exemplar, saliency

def generate_exemplars(rule, aae, blackbox, count=4, anchor=None, jitter=0.5,
                       validity_threshold=0.35, rng=None, max_batches=200):
    """Latent rejection sampling around the anchor, filtered by rule and disde."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = rng or np.random.default_rng(0)
    k = aae.latent_dim
    found = []
    for _ in range(max_batches):
        if anchor is not None:
            batch = np.asarray(anchor, np.float32)[None, :] \
                + jitter * rng.standard_normal((32, k)).astype(np.float32)
        else:
            batch = rng.standard_normal((32, k)).astype(np.float32)
        ok = np.array([rule.satisfied_by(row) for row in batch])
        if not ok.any():
            continue
        batch = batch[ok]
        disc = _disc_scores_individual(aae, batch)
        batch = batch[disc >= validity_threshold]
        if not len(batch):
            continue
        decoded = decode(aae, batch)
        labels = np.argmax(classify(blackbox, decoded), axis=1)
        for img, lab in zip(decoded, labels):
            if lab == rule.consequence:
                found.append(img)
                if len(found) == count:
                    return found
    warnings.warn(f"exemplar sampling budget exhausted: {len(found)}/{count} found")
    return found


def select_counterexemplar(neighborhood, counter_lambda=0.5):
    """Different-label candidate closest in latent space, boosted by confidence."""
    diff = neighborhood.different_label()
    if not diff:
        raise ExplanationInfeasibleError(
            "counterexemplar", "no different-label candidates in neighborhood"
        )
    z = neighborhood.anchor_z
    best = None
    for idx, cand in enumerate(diff):
        dist = float(np.sqrt(((cand.z - z) ** 2).sum()))
        score = dist - counter_lambda * cand.confidence
        key = (score, idx)  # deterministic tie-break by candidate order
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


def saliency_map(x, exemplars):
    """Median exemplar difference, channel-averaged, normalized to [-1, 1]."""
    if not exemplars:
        raise ValueError("at least one exemplar required")
    x = np.asarray(x, np.float32)
    for e in exemplars:
        if e.shape != x.shape:
            raise ValueError(f"exemplar shape {e.shape} != image shape {x.shape}")
    diffs = np.stack(exemplars) - x[None]
    med = np.median(diffs, axis=0).mean(axis=2)
    peak = np.abs(med).max()
    if peak == 0.0:
        return np.zeros(x.shape[:2], np.float32)
    return (med / peak).astype(np.float32)


# ----------------------------------------------------------------------
# full pipeline

def explain(x, blackbox, aae, params=None, class_names=None):
    params = params or ExplainParams()
    class_names = class_names or CLASS_NAMES
    x = np.asarray(x, np.float32)
    scores = classify(blackbox, x)
    anchor_label = int(np.argmax(scores))
    z = encode(aae, x)
    rng = np.random.default_rng(params.seed + 1)

    neighborhood = neighgen_genetic(z, blackbox, aae, params)
    surrogate = fit_surrogate(
        neighborhood, max_depth=params.tree_max_depth, min_leaf=params.tree_min_leaf
    )
    rule, counterfactuals = extract_rules(surrogate, z)

    exemplar_rule = rule if rule.consequence == anchor_label \
        else Rule(premise=[], consequence=anchor_label)
    exemplars = generate_exemplars(
        exemplar_rule, aae, blackbox, count=params.n_exemplars, anchor=z,
        jitter=params.exemplar_jitter, validity_threshold=params.validity_threshold,
        rng=rng,
    )
    if len(exemplars) < params.n_exemplars:
        raise ExplanationInfeasibleError(
            "exemplars", f"found {len(exemplars)}/{params.n_exemplars}"
        )
    counter = select_counterexemplar(neighborhood, params.counter_lambda)
    diff = neighborhood.different_label()
    dists = [float(np.sqrt(((c.z - z) ** 2).sum())) for c in diff]
    order = np.argsort(dists, kind="stable")[:params.n_neighbors]
    neighbors = [(diff[i].decoded, diff[i].label, dists[i]) for i in order]

    return Explanation(
        anchor_image=x, anchor_label=anchor_label, anchor_scores=scores,
        exemplars=exemplars, counter_exemplar=counter.decoded,
        counter_label=counter.label, neighbors=neighbors,
        rule=rule, counterfactual_rules=counterfactuals,
        saliency=saliency_map(x, exemplars), fidelity=surrogate.fidelity,
        seed=params.seed,
    )


# ----------------------------------------------------------------------
# usefulness proxy

def usefulness_eval(test_set, blackbox, aae, params=None, seed=0, cache=None):
    """1-NN assignment of each test image to the class of its nearest exemplar.

    For every test image one same-class and one different-class reference is
    drawn; the image is assigned the class of the closest exemplar (pixel L2)
    generated for those references.  ``cache`` (a dict) reuses exemplars across
    resamples keyed by reference instance id.
    """
    params = params or ExplainParams()
    items = list(test_set.items)
    if not items:
        raise ValueError("empty test set")
    labels = set(it.label for it in items)
    if len(labels) < 2:
        raise ValueError("test set must contain at least two classes")
    rng = np.random.default_rng(seed)
    cache = cache if cache is not None else {}

    def exemplars_for(ref):
        if ref.instance_id not in cache:
            z = encode(aae, ref.image)
            ref_label = int(np.argmax(classify(blackbox, ref.image)))
            rule = Rule(premise=[], consequence=ref_label)
            ex = generate_exemplars(
                rule, aae, blackbox, count=params.n_exemplars, anchor=z,
                jitter=params.exemplar_jitter,
                validity_threshold=params.validity_threshold,
                rng=np.random.default_rng(params.seed + hash(ref.instance_id) % 10000),
            )
            cache[ref.instance_id] = (ref_label, ex)
        return cache[ref.instance_id]

    correct = 0
    scored = 0
    for item in items:
        same_pool = [it for it in items if it.label == item.label and it is not item]
        diff_pool = [it for it in items if it.label != item.label]
        if not same_pool or not diff_pool:
            continue
        same_ref = same_pool[rng.integers(len(same_pool))]
        diff_ref = diff_pool[rng.integers(len(diff_pool))]
        candidates = []
        for ref in (same_ref, diff_ref):
            ref_label, exemplars = exemplars_for(ref)
            for e in exemplars:
                candidates.append((float(((e - item.image) ** 2).sum()), ref_label))
        if not candidates:
            continue
        assigned = min(candidates)[1]
        correct += int(assigned == item.label)
        scored += 1
    if scored == 0:
        raise ValueError("no scorable test items")
    return correct / scored


# ----------------------------------------------------------------------
# serialization (schema "explanation/1")

def _png_b64(image):
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    buf = io.BytesIO()
    PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _png_b64_decode(payload):
    arr = np.asarray(PILImage.open(io.BytesIO(base64.b64decode(payload))))
    return arr.astype(np.float32) / 255.0


def _saliency_overlay(image, saliency, strength=0.6):
    """Alpha-blended red (positive) / blue (negative) diverging overlay."""
    image = np.asarray(image, np.float32)
    mag = np.abs(saliency)[:, :, None]
    color = np.zeros_like(image)
    color[:, :, 0] = np.where(saliency > 0, 1.0, 0.0)
    color[:, :, 2] = np.where(saliency < 0, 1.0, 0.0)
    return image * (1 - strength * mag) + color * strength * mag


def _rule_dict(rule, class_names):
    return {
        "premise": [[int(f), op, float(thr)] for f, op, thr in rule.premise],
        "consequence": rule.consequence,
        "class_name": class_names[rule.consequence],
    }


def serialize_explanation(explanation, class_names=None):
    """Stable JSON bytes for an Explanation (base64 PNG images)."""
    class_names = class_names or CLASS_NAMES
    doc = {
        "schema": SCHEMA_VERSION,
        "seed": explanation.seed,
        "anchor": {
            "image": _png_b64(explanation.anchor_image),
            "label": explanation.anchor_label,
            "class_name": class_names[explanation.anchor_label],
            "scores": [float(s) for s in explanation.anchor_scores],
        },
        "exemplars": [_png_b64(e) for e in explanation.exemplars],
        "counter_exemplar": {
            "image": _png_b64(explanation.counter_exemplar),
            "label": explanation.counter_label,
            "class_name": class_names[explanation.counter_label],
        },
        "neighbors": [
            {
                "image": _png_b64(img),
                "label": int(lab),
                "class_name": class_names[lab],
                "latent_distance": float(dist),
            }
            for img, lab, dist in explanation.neighbors
        ],
        "rule": _rule_dict(explanation.rule, class_names),
        "counterfactual_rules": [
            _rule_dict(r, class_names) for r in explanation.counterfactual_rules
        ],
        "saliency": {
            "values": [[float(v) for v in row] for row in explanation.saliency],
            "png": _png_b64(
                _saliency_overlay(explanation.anchor_image, explanation.saliency)
            ),
        },
        "fidelity": float(explanation.fidelity),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
