"""EM training loop: warm start, mean-field E-step, piecewise M-step.

The E-step updates one unlabeled node at a time, in ascending node
order, against the original (un-redistributed) factors:

    log q_i(y) <- s_i(y) + sum_{j in N(i) labeled} a_ij K[y, y_j]
                         + sum_{k in N(i) unlabeled} a_ik (K q_k)[y]

The M-step fixes q and runs full-batch Adam ascent on the expected
piecewise objective, updating the backbone weights together with K and
alpha. Labeled nodes stay clamped throughout; model selection keeps the
checkpoint with the best validation accuracy seen at any phase
boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from . import gcn
from .data import Dataset, Split
from .errors import ConfigError, DegenerateInputError, NonFiniteObjectiveError
from .factors import (PairwiseParams, Redistribution, build_pieces,
                      diagnose_non_finite, objective_and_gradients,
                      COEFFICIENT_MODES, REDISTRIBUTION_SCHEMES)
from .graph import Graph, normalized_adjacency_operator
from .numerics import AdamState, adam_step, softmax_rows, stream

_ROW_SUM_TOL = 1e-12


@dataclass
class Proposal:
    """Mean-field distribution over the unlabeled nodes, one row each."""

    node_ids: np.ndarray   # sorted unlabeled node ids
    q: np.ndarray          # (len(node_ids), c)
    num_nodes: int

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        if self.q.shape[0] != len(self.node_ids):
            raise ConfigError("proposal table and node ids disagree")
        if self.q.size:
            if self.q.min() < 0:
                raise ConfigError("proposal rows must be non-negative")
            if np.abs(self.q.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
                raise ConfigError("proposal rows must sum to 1")
        positions = np.full(self.num_nodes, -1, dtype=np.int64)
        positions[self.node_ids] = np.arange(len(self.node_ids))
        self._positions = positions

    def position(self, node) -> int:
        return int(self._positions[node])

    def row(self, node) -> np.ndarray:
        pos = self._positions[node]
        if pos < 0:
            raise ConfigError(f"node {node} is labeled; the proposal has no row for it")
        return self.q[pos]

    def copy(self):
        return Proposal(self.node_ids.copy(), self.q.copy(), self.num_nodes)

    @classmethod
    def from_scores(cls, scores, unlabeled_ids, num_nodes):
        unlabeled_ids = np.sort(np.asarray(unlabeled_ids, dtype=np.int64))
        return cls(unlabeled_ids, softmax_rows(scores[unlabeled_ids]), num_nodes)


@dataclass
class TrainConfig:
    seed: int = 0
    hidden: int = 16
    dropout_keep: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    warm_epochs: int = 200
    patience: int = 50
    em_rounds: int = 5
    e_sweeps: int = 10
    e_tolerance: float = 1e-4
    m_epochs: int = 50
    redistribution: str = "average"
    coefficient_mode: str = "edge"
    alpha_init: float = 1.0

    def __post_init__(self):
        if self.hidden < 1 or self.warm_epochs < 0 or self.em_rounds < 0:
            raise ConfigError("hidden must be >= 1 and epoch/round counts >= 0")
        if self.e_sweeps < 1 or self.m_epochs < 1 or self.patience < 1:
            raise ConfigError("e_sweeps, m_epochs and patience must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        if self.lr <= 0 or self.e_tolerance <= 0 or self.weight_decay < 0:
            raise ConfigError("lr and e_tolerance must be positive, weight_decay >= 0")
        if self.redistribution not in REDISTRIBUTION_SCHEMES:
            raise ConfigError(f"unknown redistribution scheme {self.redistribution!r}")
        if self.coefficient_mode not in COEFFICIENT_MODES:
            raise ConfigError(f"unknown coefficient mode {self.coefficient_mode!r}")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)   # (phase, step, metric, value)
    best_phase: str = ""
    test_accuracy: float = float("nan")

    def add(self, phase, step, metric, value):
        self.records.append((phase, int(step), metric, float(value)))

    def trace(self, phase, metric):
        return [v for p, _, m, v in self.records if p == phase and m == metric]

    def to_text(self) -> str:
        lines = ["# mrfgcn train report",
                 f"# best_phase {self.best_phase}",
                 f"# test_accuracy {self.test_accuracy!r}"]
        lines += [f"{p}\t{s}\t{m}\t{v!r}" for p, s, m, v in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


@dataclass
class TrainResult:
    params: gcn.GcnParams
    pairwise: PairwiseParams
    proposal: Proposal
    report: TrainReport


def make_r(q: Proposal, labels, train_ids, num_classes) -> np.ndarray:
    """Full per-node label distribution table: point masses on labeled rows."""
    r = np.zeros((q.num_nodes, num_classes))
    train_ids = np.asarray(train_ids, dtype=np.int64)
    r[train_ids, labels[train_ids]] = 1.0
    r[q.node_ids] = q.q
    return r


def _labeled_mask(num_nodes, train_ids):
    mask = np.zeros(num_nodes, dtype=bool)
    mask[np.asarray(train_ids, dtype=np.int64)] = True
    return mask


def mean_field_site_update(q: Proposal, node, scores, pp: PairwiseParams,
                           g: Graph, labels, train_ids) -> Proposal:
    """Closed-form update of one proposal row; reference implementation."""
    labeled = _labeled_mask(g.num_nodes, train_ids)
    if labeled[node]:
        raise ConfigError(f"node {node} is labeled and cannot be updated")
    k = pp.K
    lo, hi = g.indptr[node], g.indptr[node + 1]
    logits = scores[node].astype(np.float64).copy()
    for leaf, eid in zip(g.indices[lo:hi], g.slot_edge_ids[lo:hi]):
        a = pp.alpha_at(np.array([eid]))[0]
        if labeled[leaf]:
            logits += a * k[:, labels[leaf]]
        else:
            logits += a * (k @ q.row(leaf))
    out = q.copy()
    shifted = np.exp(logits - logits.max())
    out.q[q.position(node)] = shifted / shifted.sum()
    return out


def _e_step_stats(q: Proposal, scores, pp: PairwiseParams, g: Graph, labels,
                  train_ids, sweeps, tolerance):
    """Sequential sweeps in ascending node order; returns (q, sweeps_run, tv)."""
    labeled = _labeled_mask(g.num_nodes, train_ids)
    if len(q.node_ids) == 0:
        return q.copy(), 0, 0.0
    k = pp.K
    centers = g.slot_centers
    leaves = g.indices
    alphas = pp.alpha_at(g.slot_edge_ids)
    positions = np.full(g.num_nodes, -1, dtype=np.int64)
    positions[q.node_ids] = np.arange(len(q.node_ids))

    # contributions from labeled neighbors never change during the E-step
    base = scores[q.node_ids].astype(np.float64).copy()
    sel = ~labeled[centers] & labeled[leaves]
    if sel.any():
        contrib = alphas[sel, None] * k[:, labels[leaves[sel]]].T
        full = np.zeros((g.num_nodes, k.shape[0]))
        np.add.at(full, centers[sel], contrib)
        base += full[q.node_ids]

    # unlabeled neighborhoods packed per unlabeled node, in CSR (ascending) order
    sel_u = ~labeled[centers] & ~labeled[leaves]
    nb_pos = positions[leaves[sel_u]]
    nb_alpha = alphas[sel_u]
    counts = np.bincount(positions[centers[sel_u]], minlength=len(q.node_ids))
    u_indptr = np.zeros(len(q.node_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=u_indptr[1:])

    table = q.q.copy()
    sweeps_run, max_tv = 0, 0.0
    for _ in range(sweeps):
        max_tv = 0.0
        for u in range(len(q.node_ids)):
            logits = base[u]
            lo, hi = u_indptr[u], u_indptr[u + 1]
            if hi > lo:
                w = nb_alpha[lo:hi] @ table[nb_pos[lo:hi]]
                logits = logits + k @ w
            e = np.exp(logits - logits.max())
            row = e / e.sum()
            tv = 0.5 * np.abs(row - table[u]).sum()
            if tv > max_tv:
                max_tv = tv
            table[u] = row
        sweeps_run += 1
        if max_tv < tolerance:
            break
    return Proposal(q.node_ids.copy(), table, q.num_nodes), sweeps_run, max_tv


def e_step(q: Proposal, scores, pp: PairwiseParams, g: Graph, labels, train_ids,
           sweeps=10, tolerance=1e-4) -> Proposal:
    out, _, _ = _e_step_stats(q, scores, pp, g, labels, train_ids, sweeps, tolerance)
    return out


def m_step(params: gcn.GcnParams, pp: PairwiseParams, q: Proposal, features,
           norm_adj, g: Graph, redist: Redistribution, labels, train_ids,
           config: TrainConfig, rng_dropout):
    """Full-batch Adam ascent on the expected piecewise objective.

    Returns (params, pp, objective_trace); q stays fixed. Fresh optimizer
    state is used for each M-step.
    """
    r = make_r(q, labels, train_ids, pp.num_classes)
    st_w0 = AdamState.for_param(params.w0, lr=config.lr, weight_decay=config.weight_decay)
    st_w1 = AdamState.for_param(params.w1, lr=config.lr)
    st_raw = AdamState.for_param(pp.raw, lr=config.lr)
    st_alpha = AdamState.for_param(pp.alpha, lr=config.lr) if pp.mode != "none" else None

    trace = []
    for _ in range(config.m_epochs):
        scores, cache = gcn.forward(params, features, norm_adj,
                                    dropout_keep=config.dropout_keep, rng=rng_dropout)
        value, grad_scores, grad_raw, grad_alpha = objective_and_gradients(
            r, scores, pp, redist, g)
        if not np.isfinite(value):
            node = diagnose_non_finite(g, scores, pp, redist)
            raise NonFiniteObjectiveError(
                f"piecewise objective became non-finite (piece at node {node})")
        gw0, gw1 = gcn.backward(params, cache, grad_scores)
        params = gcn.GcnParams(adam_step(params.w0, -gw0, st_w0),
                               adam_step(params.w1, -gw1, st_w1))
        new_alpha = pp.alpha if st_alpha is None else adam_step(pp.alpha, -grad_alpha, st_alpha)
        pp = PairwiseParams(adam_step(pp.raw, -grad_raw, st_raw), new_alpha, pp.mode)
        trace.append(value)
    return params, pp, trace


def predict(scores, pp: PairwiseParams, q: Proposal, g: Graph, labels, train_ids,
            sweeps=50, tolerance=1e-4) -> np.ndarray:
    """Converge the proposal under fixed factors, then take per-node argmax.

    Labeled nodes report their own label.
    """
    out = np.empty(g.num_nodes, dtype=np.int64)
    train_ids = np.asarray(train_ids, dtype=np.int64)
    out[train_ids] = labels[train_ids]
    if len(q.node_ids):
        q_final = e_step(q, scores, pp, g, labels, train_ids,
                         sweeps=sweeps, tolerance=tolerance)
        out[q_final.node_ids] = np.argmax(q_final.q, axis=1)
    return out


def evaluate(predictions, labels, node_set) -> float:
    node_set = np.asarray(node_set, dtype=np.int64)
    if len(node_set) == 0:
        raise DegenerateInputError("cannot evaluate accuracy over an empty node set")
    return float(np.mean(predictions[node_set] == labels[node_set]))


@dataclass
class _Checkpoint:
    val_accuracy: float
    phase: str
    params: gcn.GcnParams
    pairwise: PairwiseParams
    proposal: Proposal | None


def train(ds: Dataset, split: Split, config: TrainConfig) -> TrainResult:
    """Warm start, then alternate E- and M-steps; return the best checkpoint."""
    g = ds.graph
    labels, train_ids = ds.labels, split.train
    if len(train_ids) == 0:
        raise ConfigError("the train split is empty")
    norm_adj = normalized_adjacency_operator(g)
    features = ds.features
    unlabeled = np.setdiff1d(np.arange(g.num_nodes), train_ids)

    rng_drop = stream(config.seed, "dropout")
    params = gcn.init_params(ds.num_features, config.hidden, ds.num_classes,
                             stream(config.seed, "gcn_init"))
    pp = PairwiseParams.init(ds.num_classes, g.num_edges,
                             mode=config.coefficient_mode, alpha_init=config.alpha_init)
    _, redist = build_pieces(g, config.redistribution)
    report = TrainReport()

    def eval_scores(p):
        s, _ = gcn.forward(p, features, norm_adj)
        return s

    def val_accuracy_of(predictions):
        if len(split.val) == 0:
            return float("nan")
        return evaluate(predictions, labels, split.val)

    best: _Checkpoint | None = None
    use_selection = len(split.val) > 0

    def consider(acc, phase, p, pw, q):
        # with no validation nodes there is nothing to select on; keep the
        # final state instead of a checkpoint
        nonlocal best
        if not use_selection:
            return True
        if best is None or acc > best.val_accuracy:
            best = _Checkpoint(acc, phase, p.copy(), pw.copy(),
                               None if q is None else q.copy())
            return True
        return False

    # ---- warm start: supervised training of the backbone on the train set
    st_w0 = AdamState.for_param(params.w0, lr=config.lr, weight_decay=config.weight_decay)
    st_w1 = AdamState.for_param(params.w1, lr=config.lr)
    epochs_since_best = 0
    for epoch in range(config.warm_epochs):
        loss, gw0, gw1 = gcn.supervised_loss_and_grad(
            params, features, norm_adj, labels, train_ids,
            train_mode=True, rng=rng_drop, dropout_keep=config.dropout_keep)
        params = gcn.GcnParams(adam_step(params.w0, gw0, st_w0),
                               adam_step(params.w1, gw1, st_w1))
        scores = eval_scores(params)
        acc = val_accuracy_of(np.argmax(scores, axis=1))
        report.add("warm", epoch, "supervised_loss", loss)
        report.add("warm", epoch, "val_accuracy", acc)
        if consider(acc, f"warm:{epoch}", params, pp, None):
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    scores = eval_scores(params)
    q = Proposal.from_scores(scores, unlabeled, g.num_nodes)

    # ---- EM rounds
    for rnd in range(1, config.em_rounds + 1):
        scores = eval_scores(params)
        q, sweeps_run, _ = _e_step_stats(q, scores, pp, g, labels, train_ids,
                                         config.e_sweeps, config.e_tolerance)
        phase = f"round{rnd}:e"
        acc = val_accuracy_of(predict(scores, pp, q, g, labels, train_ids,
                                      sweeps=config.e_sweeps, tolerance=config.e_tolerance))
        report.add(phase, 0, "sweeps_run", sweeps_run)
        report.add(phase, 0, "val_accuracy", acc)
        consider(acc, phase, params, pp, q)

        params, pp, trace = m_step(params, pp, q, features, norm_adj, g, redist,
                                   labels, train_ids, config, rng_drop)
        phase = f"round{rnd}:m"
        for step, value in enumerate(trace):
            report.add(phase, step, "objective", value)
        scores = eval_scores(params)
        acc = val_accuracy_of(predict(scores, pp, q, g, labels, train_ids,
                                      sweeps=config.e_sweeps, tolerance=config.e_tolerance))
        report.add(phase, 0, "val_accuracy", acc)
        consider(acc, phase, params, pp, q)

    # ---- restore the selected checkpoint and make final predictions
    if best is not None:
        params, pp = best.params, best.pairwise
        scores = eval_scores(params)
        q = best.proposal if best.proposal is not None else \
            Proposal.from_scores(scores, unlabeled, g.num_nodes)
    else:
        scores = eval_scores(params)

    q = e_step(q, scores, pp, g, labels, train_ids,
               sweeps=max(50, config.e_sweeps), tolerance=config.e_tolerance)
    predictions = predict(scores, pp, q, g, labels, train_ids,
                          sweeps=config.e_sweeps, tolerance=config.e_tolerance)
    report.best_phase = best.phase if best is not None else "last"
    if len(split.val):
        report.add("final", 0, "val_accuracy", evaluate(predictions, labels, split.val))
    if len(split.test):
        report.test_accuracy = evaluate(predictions, labels, split.test)
        report.add("final", 0, "test_accuracy", report.test_accuracy)
    return TrainResult(params=params, pairwise=pp, proposal=q, report=report)
