"""Streaming training rounds: intake, filtering, selection and SGD.

Sequential execution selects the round's batch under the current parameters
and trains on it. Pipelined execution trains on the batch staged in the
previous round while the next batch is selected under the parameters the
round started with (one-round delay). Pipelining is simulated: the two lanes
run one after the other and wall-clock is accounted by :class:`TimingModel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import model as M
from .config import ExperimentConfig
from .importance import (SelectionError, SelectionPlan, WeightedBatch, build_plan_baseline,
                         build_plan_cis, build_plan_is, draw_batch)
from .stream import MixtureSpec, NoiseSpec, StreamSource, Window
from .stream_filter import StreamFilter
from .variance_lab import closed_form_variance

# stream-derived rng namespaces
_DRAW, _BOOTSTRAP = 11, 12


@dataclass
class TimingModel:
    t_filter_per_sample: float = 0.0
    t_grad_per_sample: float = 0.0
    t_plan: float = 0.0
    t_train_per_batch: float = 0.0
    t_sync: float = 0.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "TimingModel":
        return cls(cfg.t_filter_per_sample, cfg.t_grad_per_sample, cfg.t_plan,
                   cfg.t_train_per_batch, cfg.t_sync)

    def selection_time(self, n_filtered: int, n_scored: int, planned: bool) -> float:
        return (n_filtered * self.t_filter_per_sample + n_scored * self.t_grad_per_sample
                + (self.t_plan if planned else 0.0))

    def sequential(self, lane_b: float) -> float:
        return lane_b + self.t_train_per_batch

    def pipelined(self, lane_b: float) -> float:
        return max(self.t_train_per_batch, lane_b) + self.t_sync


@dataclass
class Selection:
    batch: WeightedBatch
    plan: SelectionPlan
    n_candidates: int
    lane_time: float
    variance: float
    fallback: bool = False


@dataclass
class RoundRecord:
    round: int
    strategy: str
    batch_hist: dict[int, int]
    variance_closed_form: float
    train_loss: float
    test_acc: float
    test_loss: float
    seq_time: float
    pipe_time: float
    lane_a: float
    lane_b: float
    fallback: bool = False

    def hist_string(self, n_classes: int) -> str:
        return ":".join(str(self.batch_hist.get(c, 0)) for c in range(n_classes))


@dataclass
class RunState:
    params: M.ModelParams
    filt: StreamFilter
    seq_time: float = 0.0
    pipe_time: float = 0.0
    staged: WeightedBatch | None = None
    history: list = field(default_factory=list)


def evaluate(params: M.ModelParams, X, y) -> tuple[float, float]:
    """Argmax accuracy and mean cross-entropy on a held-out set."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty held-out set")
    logits = M.forward(params, np.asarray(X))
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return acc, float(M.cross_entropy(logits, y).mean())


def importance_drift_probe(params_a: M.ModelParams, params_b: M.ModelParams, X, y,
                           scope: str = M.LAST_LAYER) -> float:
    """Spearman correlation of per-sample gradient norms under two parameter sets."""
    if len(y) < 3:
        raise ValueError("need at least 3 samples")
    na = np.linalg.norm(M.per_sample_gradients(params_a, X, y, scope), axis=1)
    nb = np.linalg.norm(M.per_sample_gradients(params_b, X, y, scope), axis=1)
    if np.array_equal(na, nb):
        return 1.0
    return float(spearmanr(na, nb).statistic)


def source_from_config(cfg: ExperimentConfig, seed: int) -> StreamSource:
    noise = NoiseSpec(cfg.noise, cfg.noise_fraction, cfg.noise_sigma)
    if cfg.stream_kind == "csv":
        return StreamSource(cfg.stream_velocity, seed, csv_path=cfg.stream_path, noise=noise)
    mix = MixtureSpec(cfg.dim, cfg.n_classes, cfg.class_sep, list(cfg.class_spread), seed)
    return StreamSource(cfg.stream_velocity, seed, mixture=mix, noise=noise)


class StreamTrainer:
    """One (config, strategy, seed) run over a stream."""

    def __init__(self, cfg: ExperimentConfig, strategy: str, seed: int,
                 source: StreamSource | None = None, keep_params: bool = False):
        self.cfg = cfg
        self.strategy = strategy
        self.seed = seed
        self.source = source or source_from_config(cfg, seed)
        self.n_classes = max(cfg.n_classes, self.source.n_classes)
        self.timing = TimingModel.from_config(cfg)
        sizes = cfg.layer_sizes(self.source.dim, self.n_classes)
        params = M.init_params(sizes, seed=seed, feature_block=cfg.feature_block)
        fdim = sizes[params.feature_block]
        self.state = RunState(params, StreamFilter(fdim, cfg.buffer_capacity, cfg.stats_decay, cfg.buffer_quota))
        self.test = self.source.held_out(cfg.n_test)
        self.keep_params = keep_params
        self.plans: list[dict] = []

    def lr_at(self, t: int) -> float:
        return self.cfg.lr * self.cfg.lr_decay ** (t // self.cfg.lr_decay_every)

    @property
    def uses_filter(self) -> bool:
        return self.strategy == "cis" and self.cfg.candidates == "buffer"

    def _intake(self, params: M.ModelParams, win: Window):
        F = M.extract_features(params, win.X)
        self.state.filt.observe_window(win.ids, win.X, win.y, F)

    def _candidates(self, win: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.uses_filter:
            return win.ids, win.X, win.y
        snap = self.state.filt.snapshot()
        if self.cfg.clear_after_round:
            self.state.filt.buffer.clear()
        if not snap:
            return win.ids[:0], win.X[:0], win.y[:0]
        return (np.array([c.sample_id for c in snap]), np.stack([c.x for c in snap]),
                np.array([c.label for c in snap]))

    def select(self, params: M.ModelParams, win: Window, t: int) -> Selection:
        """Filter the window and draw the batch for round ``t`` under ``params``."""
        cfg = self.cfg
        rng = np.random.default_rng([self.seed, t, _DRAW])
        if self.uses_filter:
            self._intake(params, win)
        ids, X, y = self._candidates(win)
        fallback = False
        n_scored = len(y) if self.strategy != "rs" else 0
        grads = None
        try:
            if len(y) == 0:
                raise SelectionError("empty candidate snapshot")
            if self.strategy in ("cis", "is"):
                grads = M.per_sample_gradients(params, X, y, cfg.importance_scope)
                build = build_plan_cis if self.strategy == "cis" else build_plan_is
                plan = build(y, grads, cfg.batch_size)
            elif self.strategy == "rs":
                plan = build_plan_baseline("rs", y, cfg.batch_size)
            else:
                plan = build_plan_baseline(self.strategy, y, cfg.batch_size, M.forward(params, X))
        except SelectionError:
            ids, X, y = win.ids, win.X, win.y
            plan = build_plan_baseline("rs", y, cfg.batch_size)
            fallback = True
        batch = draw_batch(plan, rng, X)
        batch.ids = ids[batch.ids]
        if grads is None:
            grads = M.per_sample_gradients(params, X, y, cfg.importance_scope)
        variance = closed_form_variance(plan, grads).total
        lane = self.timing.selection_time(len(win) if self.uses_filter else 0, n_scored,
                                          self.strategy != "rs")
        if self._dump:
            self.plans.append({"round": t, **plan.to_json(), "candidate_ids": ids.tolist()})
        return Selection(batch, plan, len(y), lane, variance, fallback)

    _dump = False

    def _update(self, batch: WeightedBatch, t: int):
        lr = self.lr_at(t)
        if lr > 0:
            self.state.params = M.sgd_step(self.state.params, batch, lr)

    def _record(self, t: int, sel: Selection, batch: WeightedBatch, train_loss: float) -> RoundRecord:
        st = self.state
        st.seq_time += self.timing.sequential(sel.lane_time)
        st.pipe_time += self.timing.pipelined(sel.lane_time)
        acc, tl = evaluate(st.params, self.test.X, self.test.y)
        rec = RoundRecord(t, self.strategy, _hist(batch, self.n_classes), sel.variance, train_loss, acc, tl, st.seq_time, st.pipe_time,
                          self.timing.t_train_per_batch, sel.lane_time, sel.fallback)
        if self.keep_params:
            st.history.append(st.params.copy())
        return rec

    def run_round_sequential(self, t: int) -> RoundRecord:
        win = self.source.window(t)
        params = self.state.params
        train_loss = float(M.loss(params, win.X, win.y).mean())
        sel = self.select(params, win, t)
        self._update(sel.batch, t)
        return self._record(t, sel, sel.batch, train_loss)

    def run_round_pipelined(self, t: int) -> RoundRecord:
        win = self.source.window(t)
        snapshot = self.state.params
        train_loss = float(M.loss(snapshot, win.X, win.y).mean())
        staged = self.state.staged
        if staged is None:
            boot = build_plan_baseline("rs", win.y, self.cfg.batch_size)
            staged = draw_batch(boot, np.random.default_rng([self.seed, t, _BOOTSTRAP]), win.X)
        # lane B reads the pre-update snapshot; lane A trains the staged batch
        sel = self.select(snapshot, win, t)
        self._update(staged, t)
        self.state.staged = sel.batch
        return self._record(t, sel, staged, train_loss)

    def run(self, rounds: int | None = None, mode: str | None = None, dump_plans: bool = False) -> list[RoundRecord]:
        self._dump = dump_plans
        rounds = self.cfg.rounds if rounds is None else rounds
        step = self.run_round_pipelined if (mode or self.cfg.mode) == "pipelined" else self.run_round_sequential
        return [step(t) for t in range(rounds)]


def _hist(batch: WeightedBatch, n_classes: int) -> dict[int, int]:
    return {c: int((batch.labels == c).sum()) for c in range(n_classes)}


def final_accuracy(records: list[RoundRecord], window: int) -> float:
    """Mean held-out accuracy over the last ``window`` rounds."""
    tail = records[-window:]
    return float(np.mean([r.test_acc for r in tail]))


def rounds_to_target(records: list[RoundRecord], target: float) -> int | None:
    """1-based count of rounds until held-out accuracy first reaches ``target``."""
    for r in records:
        if r.test_acc >= target:
            return r.round + 1
    return None
