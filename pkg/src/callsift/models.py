"""Trace-level classifiers: encoding + learner bundles with a shared
fit/predict surface, and the model-kind registry used by the CLI.

Every classifier here:

* builds its vocabulary from the training traces only (later traces may
  contain new call names; those fall into the OOV slot),
* truncates traces to the configured length before encoding,
* predicts (labels_int, scores) with the shared tie rule (score >= 0.5
  means malware).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import forest, reservoir
from .traces import (
    SyscallTrace,
    SyscallVocabulary,
    build_vocabulary,
    encode_histogram,
    encode_multihot,
    truncate,
)

DEFAULT_TRUNCATION = 1000

TREE = "tree"
HIST_RF = "hist-rf"
LINEAR = "linear"
LSM = "lsm"
ENSEMBLE = "ensemble"
MODEL_KINDS = (TREE, HIST_RF, LINEAR, LSM, ENSEMBLE)


@dataclass(frozen=True)
class EncodingOptions:
    truncation: int = DEFAULT_TRUNCATION
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")


class HistogramClassifier:
    """Histogram encoding in front of a tree, forest, or linear learner."""

    def __init__(self, kind: str, seed: int = 0,
                 encoding: EncodingOptions | None = None, params=None):
        if kind not in (TREE, HIST_RF, LINEAR):
            raise ValueError(f"not a histogram model kind: {kind!r}")
        self.kind = kind
        self.seed = seed
        self.encoding = encoding or EncodingOptions()
        self.params = params
        self.vocab: SyscallVocabulary | None = None
        self.model = None

    def _encode(self, traces) -> np.ndarray:
        assert self.vocab is not None, "fit before predict"
        rows = [
            encode_histogram(
                truncate(t, self.encoding.truncation),
                self.vocab,
                normalize=self.encoding.normalize,
            ).values
            for t in traces
        ]
        return np.vstack(rows)

    def fit(self, traces: list[SyscallTrace], labels: np.ndarray) -> "HistogramClassifier":
        self.vocab = build_vocabulary(traces)
        X = self._encode(traces)
        y = np.asarray(labels, dtype=np.int64)
        if self.kind == TREE:
            params = self.params or forest.TreeParams(seed=self.seed)
            self.model = forest.train_decision_tree(X, y, params)
        elif self.kind == HIST_RF:
            params = self.params or forest.ForestParams(seed=self.seed)
            self.model = forest.train_random_forest(X, y, params)
        else:
            params = self.params or forest.LinearParams(seed=self.seed)
            self.model = forest.train_linear(X, y, params)
        return self

    def score_histograms(self, X: np.ndarray) -> np.ndarray:
        """Score pre-encoded histogram vectors (the explanation surface)."""
        assert self.model is not None, "fit before predict"
        return self.model.predict_scores(np.asarray(X, dtype=np.float64))

    def predict(self, traces) -> tuple[np.ndarray, np.ndarray]:
        scores = self.score_histograms(self._encode(traces))
        return (scores >= 0.5).astype(np.int64), scores


class LsmClassifier:
    """Multi-hot encoding into a fixed liquid, then a trained readout."""

    def __init__(
        self,
        seed: int = 0,
        encoding: EncodingOptions | None = None,
        liquid_config: reservoir.LiquidConfig | None = None,
        lif: reservoir.LifParams | None = None,
        windows: int = 4,
        readout_kind: str = reservoir.LINEAR,
        readout_grid: list[dict] | None = None,
        folds: int = 10,
    ):
        self.seed = seed
        self.encoding = encoding or EncodingOptions()
        self.liquid_config = liquid_config
        self.lif = lif or reservoir.LifParams()
        self.windows = windows
        self.readout_kind = readout_kind
        self.readout_grid = readout_grid
        self.folds = folds
        self.vocab: SyscallVocabulary | None = None
        self.lsm: reservoir.LsmModel | None = None

    def _states(self, traces) -> np.ndarray:
        assert self.vocab is not None and self.lsm is not None
        rows = [
            self.lsm.state_of(
                encode_multihot(truncate(t, self.encoding.truncation), self.vocab)
            ).features
            for t in traces
        ]
        return np.vstack(rows)

    def fit(self, traces: list[SyscallTrace], labels: np.ndarray) -> "LsmClassifier":
        self.vocab = build_vocabulary(traces)
        config = self.liquid_config or reservoir.LiquidConfig(
            input_channels=self.vocab.width
        )
        if config.input_channels != self.vocab.width:
            raise ValueError("liquid_config.input_channels must match vocabulary width")
        topology = reservoir.build_liquid(config, seed=self.seed)
        # placeholder readout so _states can run before training completes
        self.lsm = reservoir.LsmModel(
            topology=topology, lif=self.lif, windows=self.windows, readout=None
        )
        states = self._states(traces)
        y = np.asarray(labels, dtype=np.int64)
        folds = min(self.folds, int(np.bincount(y, minlength=2).min()))
        if folds < 2:
            raise ValueError("LSM readout needs at least 2 samples of each class")
        readout = reservoir.train_readout(
            states, y, search=self.readout_grid, folds=folds,
            seed=self.seed, kind=self.readout_kind,
        )
        self.lsm = reservoir.LsmModel(
            topology=topology, lif=self.lif, windows=self.windows, readout=readout
        )
        return self

    def predict(self, traces) -> tuple[np.ndarray, np.ndarray]:
        assert self.lsm is not None and self.lsm.readout is not None, "fit first"
        scores = self.lsm.readout.predict_scores(self._states(traces))
        return (scores >= 0.5).astype(np.int64), scores


class VotingEnsembleClassifier:
    """Majority vote over member classifiers; even ties go to malware."""

    def __init__(self, members: dict[str, object]):
        if not members:
            raise ValueError("ensemble needs at least one member")
        self.members = members

    def fit(self, traces, labels) -> "VotingEnsembleClassifier":
        for member in self.members.values():
            member.fit(traces, labels)
        return self

    def predict(self, traces) -> tuple[np.ndarray, np.ndarray]:
        votes = np.vstack([m.predict(traces)[0] for m in self.members.values()])
        score = votes.mean(axis=0)
        return (score >= 0.5).astype(np.int64), score


def make_classifier(
    kind: str,
    seed: int = 0,
    encoding: EncodingOptions | None = None,
    ensemble_members: tuple[str, ...] = (TREE, HIST_RF, LINEAR, LSM),
    **kwargs,
):
    if kind in (TREE, HIST_RF, LINEAR):
        return HistogramClassifier(kind, seed=seed, encoding=encoding, **kwargs)
    if kind == LSM:
        return LsmClassifier(seed=seed, encoding=encoding, **kwargs)
    if kind == ENSEMBLE:
        return VotingEnsembleClassifier(
            {m: make_classifier(m, seed=seed, encoding=encoding) for m in ensemble_members}
        )
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
