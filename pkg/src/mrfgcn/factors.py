"""Pairwise label factors, star pieces, and the piecewise training objective.

Pairwise log-factors are ``alpha_e * K[y_j, y_k]`` with one shared
symmetric matrix K and (depending on mode) a per-edge, per-layer, or
fixed unit scale. K is stored as an unconstrained matrix and read as
its symmetric part, so any gradient step preserves symmetry exactly.

Each node induces one star piece (itself plus its neighbors). Factor
redistribution assigns every unary log-factor an exponent in each piece
containing its node, and every pairwise log-factor exponent 1/2 in its
two pieces; the exponents of one factor always sum to 1 across pieces,
so the summed redistributed pieces reproduce the global factor sum.

The piecewise objective for a table r of per-node label distributions is

    sum_i <r_i, s_i> + sum_{(j,k) in E} alpha_jk r_j^T K r_k
        - sum_i log Zbar_i

where log Zbar_i is the partition function of the redistributed star
piece at node i, computed in closed form by summing leaf nodes out
first. Per-edge tensors below index directed orientations: slot d of a
graph covers (center(d), leaf(d)); tensors of shape (2E, c, c) put the
center label on axis 1 and the leaf label on axis 2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import Graph
from .numerics import log_sum_exp

COEFFICIENT_MODES = ("edge", "layer", "none")
REDISTRIBUTION_SCHEMES = ("average", "center")


@dataclass
class PairwiseParams:
    raw: np.ndarray      # (c, c) unconstrained; K is its symmetric part
    alpha: np.ndarray    # (E,) for edge mode, (1,) for layer, (0,) for none
    mode: str = "edge"

    def __post_init__(self):
        if self.mode not in COEFFICIENT_MODES:
            raise ConfigError(f"unknown coefficient mode {self.mode!r}")
        expected = {"layer": 1, "none": 0}.get(self.mode)
        if expected is not None and self.alpha.shape != (expected,):
            raise ConfigError(f"{self.mode} mode stores {expected} alpha value(s), "
                              f"got shape {self.alpha.shape}")

    @property
    def num_classes(self) -> int:
        return self.raw.shape[0]

    @property
    def K(self) -> np.ndarray:
        return 0.5 * (self.raw + self.raw.T)

    def alpha_at(self, edge_ids) -> np.ndarray:
        """Per-edge scale for the given dense edge ids."""
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        if self.mode == "edge":
            return self.alpha[edge_ids]
        if self.mode == "layer":
            return np.full(edge_ids.shape, self.alpha[0])
        return np.ones(edge_ids.shape)

    def copy(self):
        return PairwiseParams(self.raw.copy(), self.alpha.copy(), self.mode)

    @classmethod
    def init(cls, num_classes, num_edges, mode="edge", alpha_init=1.0):
        if mode == "edge":
            alpha = np.full(num_edges, float(alpha_init))
        elif mode == "layer":
            alpha = np.array([float(alpha_init)])
        elif mode == "none":
            alpha = np.zeros(0)
        else:
            raise ConfigError(f"unknown coefficient mode {mode!r}")
        return cls(raw=np.zeros((num_classes, num_classes)), alpha=alpha, mode=mode)


@dataclass(frozen=True)
class StarPiece:
    center: int
    leaves: np.ndarray     # sorted neighbor ids
    edge_ids: np.ndarray   # dense edge id of (center, leaf), aligned with leaves


@dataclass
class Redistribution:
    """Unary factor exponents per piece; pairwise exponent is a constant.

    A node's exponent depends only on the node and on whether it sits at a
    piece's center or on its rim, so two vectors cover every (node, piece)
    pair. build-time validation checks the partition of unity
    center_exp[i] + d(i) * leaf_exp[i] == 1.
    """

    scheme: str
    center_exp: np.ndarray
    leaf_exp: np.ndarray
    pair_exp: float = 0.5

    def unary_exponent(self, node, piece_center) -> float:
        return float(self.center_exp[node] if node == piece_center else self.leaf_exp[node])

    @classmethod
    def for_graph(cls, g: Graph, scheme: str):
        if scheme == "average":
            u = 1.0 / (g.degrees + 1.0)
            redist = cls(scheme=scheme, center_exp=u, leaf_exp=u.copy())
        elif scheme == "center":
            redist = cls(scheme=scheme, center_exp=np.ones(g.num_nodes),
                         leaf_exp=np.zeros(g.num_nodes))
        else:
            raise ConfigError(f"unknown redistribution scheme {scheme!r}")
        unity = redist.center_exp + g.degrees * redist.leaf_exp
        assert np.allclose(unity, 1.0)
        return redist


def build_pieces(g: Graph, scheme="average"):
    """One star piece per node plus the redistribution exponents."""
    pieces = []
    for node in range(g.num_nodes):
        lo, hi = g.indptr[node], g.indptr[node + 1]
        pieces.append(StarPiece(center=node, leaves=g.indices[lo:hi],
                                edge_ids=g.slot_edge_ids[lo:hi]))
    return pieces, Redistribution.for_graph(g, scheme)


def pairwise_log_factor(pp: PairwiseParams, edge_id, y_j, y_k) -> float:
    return float(pp.alpha_at(np.array([edge_id]))[0] * pp.K[y_j, y_k])


def _leaf_message_table(piece, scores, pp, redist):
    """(num_leaves, c, c) table of leaf log-terms; axis 1 = center label."""
    k = pp.K
    alphas = pp.alpha_at(piece.edge_ids)
    return (redist.leaf_exp[piece.leaves][:, None, None] * scores[piece.leaves][:, None, :]
            + redist.pair_exp * alphas[:, None, None] * k[None, :, :])


def piece_log_partition(piece: StarPiece, scores, pp, redist) -> float:
    """log of the redistributed star piece's partition function.

    Leaves are summed out first, leaving one log-sum-exp over the center
    label.
    """
    b = redist.center_exp[piece.center] * scores[piece.center]
    if len(piece.leaves):
        t = _leaf_message_table(piece, scores, pp, redist)
        b = b + log_sum_exp(t, axis=2).sum(axis=0)
    return log_sum_exp(b)


@dataclass
class PieceMarginals:
    center: np.ndarray      # (c,)
    leaves: np.ndarray      # (num_leaves, c)
    pairwise: np.ndarray    # (num_leaves, c, c); axis 1 = center label


def piece_marginals(piece: StarPiece, scores, pp, redist) -> PieceMarginals:
    """Exact unary and pairwise marginals of the piece distribution."""
    c = pp.num_classes
    b = redist.center_exp[piece.center] * scores[piece.center]
    if len(piece.leaves) == 0:
        center = np.exp(b - log_sum_exp(b))
        return PieceMarginals(center=center, leaves=np.zeros((0, c)),
                              pairwise=np.zeros((0, c, c)))
    t = _leaf_message_table(piece, scores, pp, redist)
    msgs = log_sum_exp(t, axis=2)           # (m, c)
    b = b + msgs.sum(axis=0)
    log_z = log_sum_exp(b)
    pairwise = np.exp((b - log_z)[None, :, None] - msgs[:, :, None] + t)
    return PieceMarginals(center=np.exp(b - log_z),
                          leaves=pairwise.sum(axis=1), pairwise=pairwise)


def _segment_sum(values, indptr):
    """Sum `values` rows over CSR-style segments, tolerating empty segments.

    reduceat runs over the starts of the nonempty segments only; each such
    span then covers exactly one segment, because empty segments have no
    width.
    """
    n = len(indptr) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    if values.shape[0] == 0 or n == 0:
        return out
    nonempty = np.flatnonzero(indptr[1:] > indptr[:-1])
    if len(nonempty) == 0:
        return out
    out[nonempty] = np.add.reduceat(values, indptr[:-1][nonempty], axis=0)
    return out


def _piece_stats(g: Graph, scores, pp, redist, want_marginals):
    """Batched star inference over all pieces.

    Returns (log_z, mu_center, pair_marg, leaf_marg); the latter two are
    None unless marginals were requested. pair_marg[d] is the joint
    (center label, leaf label) marginal of directed slot d's piece edge and
    leaf_marg[d] the corresponding leaf marginal, both under the piece of
    center(d).
    """
    centers = g.slot_centers
    leaves = g.indices
    k = pp.K
    alphas = pp.alpha_at(g.slot_edge_ids)

    t = (redist.leaf_exp[leaves][:, None, None] * scores[leaves][:, None, :]
         + redist.pair_exp * alphas[:, None, None] * k[None, :, :])
    hi = t.max(axis=2)
    msgs = hi + np.log(np.exp(t - hi[:, :, None]).sum(axis=2))   # (2E, c)

    b = redist.center_exp[:, None] * scores + _segment_sum(msgs, g.indptr)
    b_hi = b.max(axis=1)
    log_z = b_hi + np.log(np.exp(b - b_hi[:, None]).sum(axis=1))
    mu_center = np.exp(b - log_z[:, None])

    if not want_marginals:
        return log_z, mu_center, None, None
    cavity = b[centers] - msgs
    pair_marg = np.exp(cavity[:, :, None] + t - log_z[centers][:, None, None])
    leaf_marg = pair_marg.sum(axis=1)
    return log_z, mu_center, pair_marg, leaf_marg


def _pair_expectations(r, pp, g):
    """<r_j, K r_k> for every edge, in stored (j, k) order."""
    rk = r @ pp.K
    j, k = g.edges[:, 0], g.edges[:, 1]
    return np.einsum("ec,ec->e", rk[j], r[k]) if g.num_edges else np.zeros(0)


def expected_piecewise_objective(r, scores, pp, redist, g: Graph) -> float:
    """Expected redistributed piecewise log-likelihood under r."""
    log_z, _, _, _ = _piece_stats(g, scores, pp, redist, want_marginals=False)
    alphas = pp.alpha_at(np.arange(g.num_edges))
    value = float((r * scores).sum() + (alphas * _pair_expectations(r, pp, g)).sum()
                  - log_z.sum())
    return value


def objective_and_gradients(r, scores, pp, redist, g: Graph):
    """Objective value plus exact gradients in one shared inference pass.

    Gradients are w.r.t. scores, the unconstrained K storage, and the
    alpha parameter vector (None in no-coefficient mode).
    """
    log_z, mu_center, pair_marg, _ = _piece_stats(g, scores, pp, redist,
                                                  want_marginals=True)
    alphas_e = pp.alpha_at(np.arange(g.num_edges))
    alphas_d = pp.alpha_at(g.slot_edge_ids)
    pair_dots = _pair_expectations(r, pp, g)
    value = float((r * scores).sum() + (alphas_e * pair_dots).sum() - log_z.sum())

    # leaf contribution: pieces where node i sits on the rim are the
    # reverses of the slots centered at i
    leaf_marg_at_leaf = pair_marg.sum(axis=1)[g.slot_reverse]
    grad_scores = (r - redist.center_exp[:, None] * mu_center
                   - redist.leaf_exp[:, None] * _segment_sum(leaf_marg_at_leaf, g.indptr))

    j, k = g.edges[:, 0], g.edges[:, 1]
    if g.num_edges:
        g_k = np.einsum("e,ea,eb->ab", alphas_e, r[j], r[k])
        g_k -= redist.pair_exp * np.einsum("d,dab->ab", alphas_d, pair_marg)
    else:
        g_k = np.zeros_like(pp.raw)
    grad_raw = 0.5 * (g_k + g_k.T)

    grad_alpha = None
    if pp.mode != "none":
        dots = np.einsum("dab,ab->d", pair_marg, pp.K)
        per_edge = pair_dots - redist.pair_exp * np.bincount(
            g.slot_edge_ids, weights=dots, minlength=g.num_edges)
        grad_alpha = per_edge if pp.mode == "edge" else np.array([per_edge.sum()])

    return value, grad_scores, grad_raw, grad_alpha


def objective_gradients(r, scores, pp, redist, g: Graph):
    """Gradients of expected_piecewise_objective (scores, K storage, alpha)."""
    _, grad_scores, grad_raw, grad_alpha = objective_and_gradients(r, scores, pp, redist, g)
    return grad_scores, grad_raw, grad_alpha


def diagnose_non_finite(g: Graph, scores, pp, redist):
    """Return the first node whose piece partition is non-finite, or None."""
    if not np.isfinite(scores).all():
        return int(np.flatnonzero(~np.isfinite(scores).all(axis=1))[0])
    log_z, _, _, _ = _piece_stats(g, scores, pp, redist, want_marginals=False)
    bad = np.flatnonzero(~np.isfinite(log_z))
    return int(bad[0]) if len(bad) else None
