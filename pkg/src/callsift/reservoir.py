"""Liquid state machine: a randomly wired pool of leaky integrate-and-fire
neurons driven by multi-hot call sequences, a windowed spike-count state
extractor, and a trainable readout.

The liquid is fixed after construction (only the readout trains) and acts
as a temporal kernel: per-time-step call counts inject current into a
random subset of neurons, membrane potentials decay exponentially between
steps, and spikes propagate one step later through sparse signed recurrent
weights.  The feature vector for a trace is the per-neuron spike count in
W consecutive windows spanning the occupied part of the input.

Dynamics per step (dt = simulation_step):

    v <- v * exp(-dt / tau) + input_current + recurrent_current
    spike where v >= threshold, then v <- reset and the neuron stays
    silent (clamped at reset, ignoring input) for refractory_period steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forest import LinearModel, LinearParams, train_linear
from .traces import MultiHotMatrix


@dataclass(frozen=True)
class LifParams:
    membrane_time_constant: float = 30.0  # ms
    threshold: float = 1.0
    reset_potential: float = 0.0
    refractory_period: int = 2  # steps
    simulation_step: float = 1.0  # ms, matches the trace granularity

    def __post_init__(self) -> None:
        if self.membrane_time_constant <= 0 or self.simulation_step <= 0:
            raise ValueError("time constants must be positive")
        if self.refractory_period < 0:
            raise ValueError("refractory_period must be >= 0")
        if self.reset_potential >= self.threshold:
            raise ValueError("reset_potential must be below threshold")


@dataclass(frozen=True)
class LiquidConfig:
    input_channels: int
    neuron_count: int = 135
    input_fanout_fraction: float = 0.3
    input_weight_low: float = 0.2
    input_weight_high: float = 0.5
    recurrent: bool = True
    recurrent_sparsity: float = 0.1
    excitatory_fraction: float = 0.8
    spectral_radius: float = 0.9

    def __post_init__(self) -> None:
        if self.neuron_count < 1:
            raise ValueError("neuron_count must be >= 1")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if not 0.0 < self.input_fanout_fraction <= 1.0:
            raise ValueError("input_fanout_fraction must be in (0, 1]")
        if self.input_weight_low < 0 or self.input_weight_high < self.input_weight_low:
            raise ValueError("need 0 <= input_weight_low <= input_weight_high")
        if not 0.0 <= self.recurrent_sparsity <= 1.0:
            raise ValueError("recurrent_sparsity must be in [0, 1]")
        if not 0.0 <= self.excitatory_fraction <= 1.0:
            raise ValueError("excitatory_fraction must be in [0, 1]")

    @property
    def fanout(self) -> int:
        return max(1, int(self.input_fanout_fraction * self.neuron_count))


@dataclass(eq=False)
class LiquidTopology:
    """Fixed wiring: dense input map and signed sparse recurrent weights."""

    neuron_count: int
    input_weights: np.ndarray  # (channels, neurons), 0 where not wired
    recurrent_weights: np.ndarray  # (neurons, neurons), 0 diagonal
    seed: int

    @property
    def input_channels(self) -> int:
        return self.input_weights.shape[0]

    def fanout_of(self, channel: int) -> int:
        return int((self.input_weights[channel] != 0).sum())


def build_liquid(config: LiquidConfig, seed: int = 0) -> LiquidTopology:
    """Wire a liquid deterministically from the seed.

    Every input channel drives exactly ``floor(fraction * neuron_count)``
    distinct neurons (at least one).  Recurrent connections are sparse with
    an excitatory/inhibitory sign split and are rescaled so the spectral
    radius stays below one (keeps the liquid from self-exciting forever).
    """
    n = config.neuron_count
    if config.recurrent and n < 2 and config.recurrent_sparsity > 0:
        raise ValueError("recurrence needs at least 2 neurons (no self-connections)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    w_in = np.zeros((config.input_channels, n))
    for ch in range(config.input_channels):
        targets = rng.choice(n, size=config.fanout, replace=False)
        w_in[ch, targets] = rng.uniform(
            config.input_weight_low, config.input_weight_high, size=config.fanout
        )
    w_rec = np.zeros((n, n))
    if config.recurrent and config.recurrent_sparsity > 0 and n >= 2:
        mask = rng.random((n, n)) < config.recurrent_sparsity
        np.fill_diagonal(mask, False)
        weights = rng.uniform(0.1, 1.0, size=(n, n))
        sign = np.where(
            rng.random(n) < config.excitatory_fraction, 1.0, -1.0
        )  # sign per presynaptic neuron
        w_rec = mask * weights * sign[np.newaxis, :]
        radius = float(np.max(np.abs(np.linalg.eigvals(w_rec))))
        if radius > 0:
            w_rec *= config.spectral_radius / radius
    return LiquidTopology(
        neuron_count=n, input_weights=w_in, recurrent_weights=w_rec, seed=seed
    )


@dataclass(frozen=True, eq=False)
class LiquidStateVector:
    """Per-neuron spike counts in W consecutive windows, concatenated."""

    features: np.ndarray  # (neuron_count * windows,)
    windows: int


def simulate_liquid(
    topology: LiquidTopology,
    lif: LifParams,
    input_matrix: MultiHotMatrix,
    windows: int = 4,
    record: bool = False,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Run the LIF dynamics; returns (windowed spike counts, potentials).

    The horizon and window boundaries derive from the last *occupied*
    (nonzero) input row, so appending all-zero rows can never change the
    output.  An input with no occupied rows yields all-zero features.
    ``record`` additionally returns the post-step membrane potential at
    every step (for diagnostics and tests).
    """
    if input_matrix.width != topology.input_channels:
        raise ValueError(
            f"input has {input_matrix.width} channels, liquid expects "
            f"{topology.input_channels}"
        )
    if windows < 1:
        raise ValueError("windows must be >= 1")
    n = topology.neuron_count
    occupied = np.flatnonzero(input_matrix.counts.sum(axis=1) > 0)
    if occupied.size == 0:
        return np.zeros((windows, n)), (np.zeros((0, n)) if record else None)
    last_step = int(input_matrix.time_steps[occupied[-1]])
    horizon = int(last_step // lif.simulation_step) + 1

    # dense per-step injected current
    current = np.zeros((horizon, n))
    sim_steps = (input_matrix.time_steps // lif.simulation_step).astype(np.int64)
    for row, t in enumerate(sim_steps):
        if 0 <= t < horizon:
            current[t] += input_matrix.counts[row] @ topology.input_weights

    decay = math.exp(-lif.simulation_step / lif.membrane_time_constant)
    v = np.full(n, lif.reset_potential)
    refractory = np.zeros(n, dtype=np.int64)
    prev_spikes = np.zeros(n)
    spike_counts = np.zeros((windows, n))
    potentials = np.zeros((horizon, n)) if record else None
    w_rec_t = topology.recurrent_weights  # [post, pre]
    for t in range(horizon):
        active = refractory == 0
        v = np.where(active, v * decay + current[t] + w_rec_t @ prev_spikes, lif.reset_potential)
        spikes = active & (v >= lif.threshold)
        v[spikes] = lif.reset_potential
        refractory[~active] -= 1
        refractory[spikes] = lif.refractory_period
        prev_spikes = spikes.astype(np.float64)
        spike_counts[t * windows // horizon] += prev_spikes
        if record:
            potentials[t] = v
    return spike_counts, potentials


def run_liquid(
    topology: LiquidTopology,
    lif: LifParams,
    input_matrix: MultiHotMatrix,
    windows: int = 4,
) -> LiquidStateVector:
    counts, _ = simulate_liquid(topology, lif, input_matrix, windows=windows)
    return LiquidStateVector(features=counts.reshape(-1), windows=windows)


# --- readout ------------------------------------------------------------------


@dataclass(eq=False)
class RbfSvm:
    """RBF-kernel SVM trained by simplified SMO on the dual."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i, y in {-1, +1}
    bias: float
    sigma: float
    box: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        k = _rbf_kernel(X, self.support_vectors, self.sigma)
        return k @ self.dual_coef + self.bias

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        # squash the margin to the shared [0, 1] score convention
        return 1.0 / (1.0 + np.exp(-self.decision(np.asarray(X, dtype=np.float64))))


def _rbf_kernel(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    aa = (a**2).sum(axis=1)[:, None]
    bb = (b**2).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    return np.exp(-d2 / (2.0 * sigma**2))


def train_rbf_svm(
    X: np.ndarray,
    y01: np.ndarray,
    sigma: float,
    box: float,
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 8,
) -> RbfSvm:
    """Simplified SMO (random second index, seeded) on the dual problem."""
    if sigma <= 0 or box <= 0:
        raise ValueError("sigma and box must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.where(np.asarray(y01) > 0, 1.0, -1.0)
    n = X.shape[0]
    K = _rbf_kernel(X, X, sigma)
    alpha = np.zeros(n)
    b = 0.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    quiet_passes = 0
    total_passes = 0
    while quiet_passes < max_passes and total_passes < 200:
        total_passes += 1
        changed = 0
        for i in range(n):
            ei = (alpha * y) @ K[:, i] + b - y[i]
            if (y[i] * ei < -tol and alpha[i] < box) or (y[i] * ei > tol and alpha[i] > 0):
                j = int(rng.integers(0, n - 1))
                if j >= i:
                    j += 1
                ej = (alpha * y) @ K[:, j] + b - y[j]
                ai_old, aj_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    lo, hi = max(0.0, aj_old - ai_old), min(box, box + aj_old - ai_old)
                else:
                    lo, hi = max(0.0, ai_old + aj_old - box), min(box, ai_old + aj_old)
                if lo >= hi:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                aj = aj_old - y[j] * (ei - ej) / eta
                aj = min(hi, max(lo, aj))
                if abs(aj - aj_old) < 1e-7:
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                alpha[i], alpha[j] = ai, aj
                b1 = b - ei - y[i] * (ai - ai_old) * K[i, i] - y[j] * (aj - aj_old) * K[i, j]
                b2 = b - ej - y[i] * (ai - ai_old) * K[i, j] - y[j] * (aj - aj_old) * K[j, j]
                if 0 < ai < box:
                    b = b1
                elif 0 < aj < box:
                    b = b2
                else:
                    b = (b1 + b2) / 2.0
                changed += 1
        quiet_passes = quiet_passes + 1 if changed == 0 else 0
    sv = alpha > 1e-9
    return RbfSvm(
        support_vectors=X[sv],
        dual_coef=(alpha * y)[sv],
        bias=b,
        sigma=sigma,
        box=box,
    )


LINEAR = "linear"
RBF_SVM = "rbf-svm"


@dataclass(eq=False)
class ReadoutModel:
    """Trained readout plus the feature standardization fitted with it.

    Spike counts scale with the simulated horizon, so the readout always
    standardizes features with the training-set mean and spread before the
    inner model sees them.
    """

    kind: str
    model: LinearModel | RbfSvm
    hyperparams: dict
    feature_mean: np.ndarray
    feature_std: np.ndarray
    search_log: list[tuple[dict, float]] = field(default_factory=list)

    def _transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_scores(self._transform(X))


def default_linear_grid() -> list[dict]:
    return [{"l2": l2} for l2 in (1e-4, 1e-3, 1e-2)]


def default_rbf_grid(n_sigma: int = 5, n_box: int = 5) -> list[dict]:
    """Exhaustive log-spaced sigma x box grid (deterministic order)."""
    sigmas = np.logspace(-1, 2, n_sigma)
    boxes = np.logspace(-1, 2, n_box)
    return [{"sigma": float(s), "box": float(c)} for s in sigmas for c in boxes]


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded stratified fold assignment; keeps both classes in every fold."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 29]))
    assignment = np.zeros(y.shape[0], dtype=np.int64)
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(members.size)]
        assignment[members] = np.arange(members.size) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


def _fit_readout(kind: str, X: np.ndarray, y: np.ndarray, point: dict, seed: int):
    if kind == LINEAR:
        params = LinearParams(
            learning_rate=point.get("learning_rate", 0.3),
            epochs=point.get("epochs", 300),
            l2=point.get("l2", 1e-3),
            seed=seed,
        )
        return train_linear(X, y, params)
    if kind == RBF_SVM:
        return train_rbf_svm(X, y, sigma=point["sigma"], box=point["box"], seed=seed)
    raise ValueError(f"unknown readout kind {kind!r}")


def train_readout(
    states: list[LiquidStateVector] | np.ndarray,
    labels: np.ndarray,
    search: list[dict] | None = None,
    folds: int = 10,
    seed: int = 0,
    kind: str = LINEAR,
) -> ReadoutModel:
    """Pick the grid point with minimal mean CV 0-1 loss, refit on all data.

    Ties resolve to the earliest grid point.  Every evaluated point and its
    loss lands in ``search_log`` so a search can be audited or reproduced.
    """
    if isinstance(states, np.ndarray):
        X = np.asarray(states, dtype=np.float64)
    else:
        X = np.vstack([s.features for s in states])
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("states and labels length mismatch")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ValueError("readout training needs both classes present")
    if counts.min() < folds:
        raise ValueError(f"need at least {folds} samples per class for {folds}-fold CV")
    grid = search if search is not None else (
        default_linear_grid() if kind == LINEAR else default_rbf_grid()
    )
    if not grid:
        raise ValueError("empty hyperparameter grid")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Xs = (X - mean) / std
    fold_idx = _stratified_folds(y, folds, seed)
    log: list[tuple[dict, float]] = []
    best_i = 0
    best_loss = math.inf
    for i, point in enumerate(grid):
        losses = []
        for f in range(folds):
            test_idx = fold_idx[f]
            train_idx = np.setdiff1d(np.arange(y.shape[0]), test_idx)
            model = _fit_readout(kind, Xs[train_idx], y[train_idx], point, seed)
            pred = (model.predict_scores(Xs[test_idx]) >= 0.5).astype(np.int64)
            losses.append(float((pred != y[test_idx]).mean()))
        mean_loss = float(np.mean(losses))
        log.append((dict(point), mean_loss))
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_i = i
    final = _fit_readout(kind, Xs, y, grid[best_i], seed)
    return ReadoutModel(
        kind=kind,
        model=final,
        hyperparams=dict(grid[best_i]),
        feature_mean=mean,
        feature_std=std,
        search_log=log,
    )


# --- end-to-end model ----------------------------------------------------------


@dataclass(eq=False)
class LsmModel:
    """Frozen liquid plus trained readout; the full trace classifier."""

    topology: LiquidTopology
    lif: LifParams
    windows: int
    readout: ReadoutModel

    def state_of(self, input_matrix: MultiHotMatrix) -> LiquidStateVector:
        return run_liquid(self.topology, self.lif, input_matrix, windows=self.windows)

    def predict_one(self, input_matrix: MultiHotMatrix) -> tuple[int, float]:
        return lsm_predict(self.topology, self.lif, self.readout, input_matrix, self.windows)


def lsm_predict(
    topology: LiquidTopology,
    lif: LifParams,
    readout: ReadoutModel,
    input_matrix: MultiHotMatrix,
    windows: int = 4,
) -> tuple[int, float]:
    """(label_int, score) for one trace; ties at 0.5 go to malware."""
    state = run_liquid(topology, lif, input_matrix, windows=windows)
    score = float(readout.predict_scores(state.features.reshape(1, -1))[0])
    return (1 if score >= 0.5 else 0), score
