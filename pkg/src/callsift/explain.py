"""Characterize what a trained detector learned.

Four views, from local to global:

* local surrogate explanations: perturb one histogram around its corpus
  context, fit a weighted ridge surrogate to the model's malware score,
  and report signed per-feature weights (negative = pushes toward malware,
  positive = pushes toward goodware — bars drawn left/right accordingly);
* group summaries: mean +- std of local weights over a group of samples
  (e.g. correctly classified malware vs missed malware);
* decision-tree rule extraction: one human-readable rule per leaf,
  jointly exhaustive and mutually exclusive, replaying the tree exactly;
* class frequency marks: which calls are used more by which class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forest import LEAF, DecisionTree
from .traces import (
    GOODWARE,
    MALWARE,
    SyscallTrace,
    SyscallVocabulary,
    encode_histogram,
)


@dataclass(frozen=True)
class LimeConfig:
    feature_means: np.ndarray  # corpus means used as the masking baseline
    perturbations: int = 1000
    kernel_width: float | None = None  # None = 0.75 * sqrt(d)
    ridge: float = 1e-3
    top_k: int | None = None
    seed: int = 0
    mask_probability: float = 0.5


@dataclass(eq=False)
class LocalExplanation:
    sample_id: str
    weights: np.ndarray  # signed, negative supports malware
    fidelity: float | None  # weighted R^2 of the surrogate; None if undefined
    kernel_width: float
    perturbations: int
    seed: int
    top: list[tuple[int, float]] = field(default_factory=list)
    notes: tuple[str, ...] = ()

    def top_features(self, names: list[str] | None = None) -> list[tuple[str, float]]:
        out = []
        for idx, w in self.top:
            out.append((names[idx] if names else f"f{idx}", w))
        return out


def _weighted_ridge(
    X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, ridge: float
) -> tuple[np.ndarray, float]:
    """Ridge fit with intercept on weighted, centered data."""
    w = sample_weight / sample_weight.sum()
    x_mean = w @ X
    y_mean = float(w @ y)
    Xc = X - x_mean
    yc = y - y_mean
    a = Xc.T @ (Xc * w[:, None]) + ridge * np.eye(X.shape[1])
    b = Xc.T @ (w * yc)
    coef = np.linalg.solve(a, b)
    intercept = y_mean - float(x_mean @ coef)
    return coef, intercept


def lime_explain(model, sample: np.ndarray, config: LimeConfig,
                 sample_id: str = "") -> LocalExplanation:
    """Fit a local linear surrogate to the model's malware score.

    ``model`` is either a callable mapping an (n, d) matrix to n scores or
    an object exposing ``score_histograms``.  Perturbations mask each
    feature to its corpus mean independently with probability 1/2; samples
    are weighted by an exponential kernel on Euclidean distance from the
    original.  The reported weight sign follows the display convention:
    the surrogate coefficient is negated, so weights pointing toward
    malware are negative (drawn leftward).
    """
    score_fn = model.score_histograms if hasattr(model, "score_histograms") else model
    x = np.asarray(sample, dtype=np.float64)
    means = np.asarray(config.feature_means, dtype=np.float64)
    if x.shape != means.shape:
        raise ValueError("sample and feature_means dimensionality mismatch")
    d = x.shape[0]
    kernel_width = (
        config.kernel_width if config.kernel_width is not None else 0.75 * math.sqrt(d)
    )
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 5]))
    mask = rng.random((config.perturbations, d)) < config.mask_probability
    Z = np.where(mask, means[None, :], x[None, :])
    Z[0] = x  # keep the anchor itself in the fit
    scores = np.asarray(score_fn(Z), dtype=np.float64)
    notes = tuple(getattr(model, "explanation_notes", ()))
    if np.allclose(scores, scores[0], atol=1e-12):
        return LocalExplanation(
            sample_id=sample_id,
            weights=np.zeros(d),
            fidelity=None,
            kernel_width=kernel_width,
            perturbations=config.perturbations,
            seed=config.seed,
            top=[],
            notes=notes + ("degenerate: constant model score over perturbations",),
        )
    dist = np.linalg.norm(Z - x, axis=1)
    sample_weight = np.exp(-(dist**2) / kernel_width**2)
    coef, intercept = _weighted_ridge(Z, scores, sample_weight, config.ridge)
    fitted = Z @ coef + intercept
    w = sample_weight / sample_weight.sum()
    ss_res = float(w @ (scores - fitted) ** 2)
    ss_tot = float(w @ (scores - w @ scores) ** 2)
    fidelity = 1.0 - ss_res / ss_tot if ss_tot > 0 else None
    weights = -coef  # display convention: malware-supporting weights negative
    order = np.argsort(-np.abs(weights), kind="stable")
    k = config.top_k if config.top_k is not None else d
    top = [(int(i), float(weights[i])) for i in order[:k]]
    return LocalExplanation(
        sample_id=sample_id,
        weights=weights,
        fidelity=fidelity,
        kernel_width=kernel_width,
        perturbations=config.perturbations,
        seed=config.seed,
        top=top,
        notes=notes,
    )


CORRECT_MALWARE = "correct-malware"
MISCLASSIFIED_MALWARE = "misclassified-malware"
CORRECT_GOODWARE = "correct-goodware"
MISCLASSIFIED_GOODWARE = "misclassified-goodware"


@dataclass(eq=False)
class ExplanationSummary:
    group: str
    feature_indices: np.ndarray  # ranked by |mean weight|, top_k kept
    means: np.ndarray
    stds: np.ndarray
    n_samples: int


def summarize_explanations(
    explanations: list[LocalExplanation], group: str, top_k: int = 15
) -> ExplanationSummary:
    """Per-feature mean +- std of local weights over one group of samples."""
    if not explanations:
        raise ValueError(f"empty explanation group {group!r}")
    W = np.vstack([e.weights for e in explanations])
    means = W.mean(axis=0)
    stds = W.std(axis=0)  # population std: a single sample has spread 0
    order = np.argsort(-np.abs(means), kind="stable")[:top_k]
    return ExplanationSummary(
        group=group,
        feature_indices=order,
        means=means[order],
        stds=stds[order],
        n_samples=len(explanations),
    )


def group_explanations(
    explanations: list[LocalExplanation],
    predictions: np.ndarray,
    labels: np.ndarray,
    group: str,
) -> list[LocalExplanation]:
    """Select the explanations belonging to one prediction-outcome group."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    masks = {
        CORRECT_MALWARE: (lab == 1) & (pred == 1),
        MISCLASSIFIED_MALWARE: (lab == 1) & (pred == 0),
        CORRECT_GOODWARE: (lab == 0) & (pred == 0),
        MISCLASSIFIED_GOODWARE: (lab == 0) & (pred == 1),
    }
    if group not in masks:
        raise ValueError(f"unknown group {group!r}")
    return [e for e, keep in zip(explanations, masks[group]) if keep]


def render_summary(summary: ExplanationSummary, names: list[str]) -> str:
    """Signed text bar chart: malware-supporting bars grow leftward."""
    if summary.means.size == 0:
        return f"[{summary.group}] no features"
    scale = float(np.abs(summary.means).max()) or 1.0
    half = 24
    name_w = max(len(names[i]) for i in summary.feature_indices)
    lines = [f"[{summary.group}]  n={summary.n_samples}  (# left = malware, right = goodware)"]
    for idx, mean, std in zip(summary.feature_indices, summary.means, summary.stds):
        bar = int(round(abs(mean) / scale * half))
        left = ("#" * bar).rjust(half) if mean < 0 else " " * half
        right = ("#" * bar) if mean > 0 else ""
        lines.append(
            f"{names[idx]:>{name_w}} {left}|{right:<{half}} {mean:+.4f} (+-{std:.4f})"
        )
    return "\n".join(lines)


# --- decision rules -------------------------------------------------------------


@dataclass(frozen=True)
class RuleCondition:
    feature_index: int
    feature_name: str
    op: str  # "<=" or ">"
    threshold: float

    def holds(self, x: np.ndarray) -> bool:
        v = x[self.feature_index]
        return v <= self.threshold if self.op == "<=" else v > self.threshold


@dataclass(frozen=True)
class DecisionRule:
    conditions: tuple[RuleCondition, ...]
    predicted: str  # goodware | malware
    leaf_counts: tuple[float, float]  # [goodware, malware]

    def matches(self, x: np.ndarray) -> bool:
        return all(c.holds(x) for c in self.conditions)


def extract_rules(
    tree: DecisionTree, feature_names: list[str] | None = None
) -> list[DecisionRule]:
    """One rule per leaf: the root-to-leaf threshold path.

    The rule set partitions the input space, so exactly one rule matches
    any vector and replaying the rules reproduces the tree's predictions.
    """
    names = feature_names or [f"f{i}" for i in range(tree.n_features)]
    rules: list[DecisionRule] = []

    def walk(node: int, conds: tuple[RuleCondition, ...]) -> None:
        f = int(tree.feature[node])
        if f == LEAF:
            g, m = tree.class_counts[node]
            predicted = MALWARE if (m >= g) else GOODWARE  # score>=0.5 tie rule
            rules.append(DecisionRule(conditions=conds, predicted=predicted,
                                      leaf_counts=(float(g), float(m))))
            return
        thr = float(tree.threshold[node])
        walk(int(tree.left[node]), conds + (RuleCondition(f, names[f], "<=", thr),))
        walk(int(tree.right[node]), conds + (RuleCondition(f, names[f], ">", thr),))

    walk(0, ())
    return rules


def rules_predict(rules: list[DecisionRule], X: np.ndarray) -> np.ndarray:
    """Replay a rule set over a matrix; exactly one rule fires per row."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i, row in enumerate(X):
        matched = [r for r in rules if r.matches(row)]
        if len(matched) != 1:
            raise ValueError(f"rule set must match exactly once, got {len(matched)}")
        out[i] = 1 if matched[0].predicted == MALWARE else 0
    return out


def render_rule(rule: DecisionRule) -> str:
    lines = [f"if {c.feature_name} {c.op} {_fmt(c.threshold)}," for c in rule.conditions]
    g, m = rule.leaf_counts
    lines.append(f"class={rule.predicted}, [ {g:g}. {m:g}.]")
    return "\n".join(lines)


def render_rules(rules: list[DecisionRule]) -> str:
    return "\n\n".join(render_rule(r) for r in rules)


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".") if x != int(x) else f"{x:g}"


# --- class frequency comparison ---------------------------------------------------


@dataclass(frozen=True)
class ClassFrequencyMark:
    feature: str
    mark: str  # goodware | malware | tie


def class_frequency_marks(
    traces: list[SyscallTrace],
    features: list[str],
    vocab: SyscallVocabulary,
    tie_tolerance: float = 0.05,
) -> list[ClassFrequencyMark]:
    """Which class uses each call more, by mean normalized frequency.

    A relative difference within ``tie_tolerance`` is a tie.  Raises when a
    class is absent from the dataset (means would be undefined).
    """
    by_class: dict[str, list[np.ndarray]] = {GOODWARE: [], MALWARE: []}
    for t in traces:
        if t.label in by_class:
            by_class[t.label].append(encode_histogram(t, vocab, normalize=True).values)
    for label, rows in by_class.items():
        if not rows:
            raise ValueError(f"class {label!r} absent from dataset")
    mean_g = np.vstack(by_class[GOODWARE]).mean(axis=0)
    mean_m = np.vstack(by_class[MALWARE]).mean(axis=0)
    marks = []
    for name in features:
        idx = vocab.index_of(name)
        g, m = float(mean_g[idx]), float(mean_m[idx])
        denom = max(g, m)
        if denom == 0 or abs(g - m) / denom <= tie_tolerance:
            mark = "tie"
        else:
            mark = GOODWARE if g > m else MALWARE
        marks.append(ClassFrequencyMark(feature=name, mark=mark))
    return marks


def render_frequency_table(marks: list[ClassFrequencyMark]) -> str:
    """Feature/goodware/malware columns; ties render as '-' in both."""
    name_w = max(len(m.feature) for m in marks) if marks else 8
    lines = [f"{'Feature':<{name_w}}  {'Goodware':>8}  {'Malware':>8}"]
    for m in marks:
        if m.mark == "tie":
            g_cell, m_cell = "-", "-"
        elif m.mark == GOODWARE:
            g_cell, m_cell = "X", ""
        else:
            g_cell, m_cell = "", "X"
        lines.append(f"{m.feature:<{name_w}}  {g_cell:>8}  {m_cell:>8}")
    return "\n".join(lines)


# --- adapting sequence models to histogram explanations -----------------------------


class LsmHistogramScorer:
    """Score histograms through an LSM by uniform temporal spreading.

    The LSM natively consumes multi-hot sequences; to explain it on the
    histogram surface, a (possibly fractional, normalized) histogram is
    scaled to a nominal event count, rounded, and spread one event per
    millisecond step in vocabulary order.  This is an approximation and is
    flagged in every explanation produced through it.
    """

    explanation_notes = ("approximation: histogram spread uniformly over time for LSM input",)

    def __init__(self, lsm_classifier, nominal_length: int = 100):
        if lsm_classifier.lsm is None or lsm_classifier.vocab is None:
            raise ValueError("LSM classifier must be fitted first")
        self.classifier = lsm_classifier
        self.nominal_length = nominal_length

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.score_histograms(X)

    def score_histograms(self, X: np.ndarray) -> np.ndarray:
        from .traces import MultiHotMatrix  # local import to avoid cycle noise

        X = np.asarray(X, dtype=np.float64)
        scores = np.empty(X.shape[0])
        lsm = self.classifier.lsm
        for i, hist in enumerate(X):
            total = hist.sum()
            counts = hist
            if 0 < total <= 1.5:  # normalized histogram: rescale to events
                counts = hist * self.nominal_length
            counts = np.rint(counts).astype(np.int64)
            calls = np.repeat(np.arange(counts.size), np.maximum(counts, 0))
            if calls.size == 0:
                matrix = MultiHotMatrix(
                    np.zeros((0, counts.size), dtype=np.int64),
                    np.zeros(0, dtype=np.int64),
                )
            else:
                rows = np.zeros((calls.size, counts.size), dtype=np.int64)
                rows[np.arange(calls.size), calls] = 1
                matrix = MultiHotMatrix(rows, np.arange(calls.size, dtype=np.int64))
            _, scores[i] = lsm.predict_one(matrix)
        return scores
