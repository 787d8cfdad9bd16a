"""Training objectives with values and analytic gradients.

Implements the five pre-training objectives (per-question cross-entropy,
masked-token NLL, dropout-contrastive sentence loss in both a literal and a
standard in-batch form, cosine similarity, symmetric paired InfoNCE) plus
the Cox partial log-likelihood used for prognosis fine-tuning.

Every ``*_grad`` function returns ``(value, gradients...)`` where the
gradients are exact derivatives of the returned value; they are validated
against central finite differences in the test suite.  Softmaxes are
computed with max-subtraction, which diverges from naive evaluation at the
bit level but not beyond ~1 ulp.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "MultiTaskBatch",
    "MlmBatch",
    "SimcsePair",
    "AlignedBatch",
    "CoxBatch",
    "softmax",
    "multitask_ce",
    "multitask_ce_grad",
    "mlm_loss",
    "mlm_loss_grad",
    "cosine_sim",
    "cosine_sim_grad",
    "simcse_loss",
    "simcse_loss_grad",
    "clip_infonce",
    "clip_infonce_grad",
    "cox_partial_loglik",
    "cox_partial_loglik_grad",
    "TAU_MIN",
    "TAU_MAX",
]

# Learnable temperature is stored as log(1/tau); tau is clamped to this
# range after every update.
TAU_MIN = 0.01
TAU_MAX = 100.0


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stable softmax (max-subtracted)."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _logsumexp(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(logits - m), axis=axis, keepdims=True))).squeeze(axis)


# ---------------------------------------------------------------------------
# Batch carriers
# ---------------------------------------------------------------------------


@dataclass
class MultiTaskBatch:
    """Logits and integer labels for one classification question.

    ``logits`` is (N, C); ``labels`` is (N,) with values in [0, C).
    """

    logits: np.ndarray
    labels: np.ndarray
    head: int = 0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.logits.ndim != 2 or self.labels.ndim != 1:
            raise InvalidArgumentError("logits must be (N, C) and labels (N,)")
        if self.logits.shape[0] != self.labels.shape[0]:
            raise InvalidArgumentError("logits and labels disagree on N")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidArgumentError("logits must be finite")
        c = self.logits.shape[1]
        if np.any(self.labels < 0) or np.any(self.labels >= c):
            raise InvalidArgumentError(f"labels must lie in [0, {c})")


@dataclass
class MlmBatch:
    """Predicted vocabulary distributions at masked positions.

    ``probs`` is (N, M, V): N samples, M masked positions each, V vocabulary
    entries; every distribution must sum to 1 within 1e-9.  ``targets`` is
    (N, M) with the true token ids.
    """

    probs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.probs.ndim != 3 or self.targets.ndim != 2:
            raise InvalidArgumentError("probs must be (N, M, V) and targets (N, M)")
        if self.probs.shape[:2] != self.targets.shape:
            raise InvalidArgumentError("probs and targets disagree on (N, M)")
        if self.probs.shape[1] < 1:
            raise InvalidArgumentError("need at least one masked position")
        sums = self.probs.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise InvalidArgumentError("each probability row must sum to 1 within 1e-9")
        v = self.probs.shape[2]
        if np.any(self.targets < 0) or np.any(self.targets >= v):
            raise InvalidArgumentError(f"targets must lie in [0, {v})")


@dataclass
class SimcsePair:
    """Two dropout-perturbed encodings of the same sentences, (N, D) each."""

    h: np.ndarray
    h_pos: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.h_pos = np.asarray(self.h_pos, dtype=np.float64)
        if self.h.shape != self.h_pos.shape or self.h.ndim != 2:
            raise InvalidArgumentError("h and h_pos must both be (N, D)")
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.h_pos))):
            raise InvalidArgumentError("embeddings must be finite")
        if self.tau <= 0:
            raise InvalidArgumentError("tau must be positive")


@dataclass
class AlignedBatch:
    """L2-normalized paired image/text embeddings with learnable temperature.

    The temperature is carried as ``log_inv_tau`` = log(1/tau); the
    constructor clamps tau into [TAU_MIN, TAU_MAX].
    """

    u: np.ndarray
    v: np.ndarray
    log_inv_tau: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise InvalidArgumentError("u and v must both be (N, D)")
        for name, rows in (("u", self.u), ("v", self.v)):
            norms = np.linalg.norm(rows, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise InvalidArgumentError(f"rows of {name} must be unit-norm within 1e-9")
        lo, hi = np.log(1.0 / TAU_MAX), np.log(1.0 / TAU_MIN)
        self.log_inv_tau = float(np.clip(self.log_inv_tau, lo, hi))

    @property
    def tau(self) -> float:
        return float(np.exp(-self.log_inv_tau))


@dataclass
class CoxBatch:
    """Linear predictors with right-censored outcomes."""

    eta: np.ndarray
    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.int64)
        n = self.eta.shape[0]
        if self.times.shape != (n,) or self.events.shape != (n,):
            raise InvalidArgumentError("eta, times, events must share length")
        if np.any(self.times <= 0) or not np.all(np.isfinite(self.times)):
            raise InvalidArgumentError("times must be positive and finite")
        if not np.all(np.isin(self.events, (0, 1))):
            raise InvalidArgumentError("events must be 0/1")
        if self.events.sum() < 1:
            raise InvalidArgumentError("need at least one event")


# ---------------------------------------------------------------------------
# Per-question cross-entropy
# ---------------------------------------------------------------------------


def multitask_ce(batch: MultiTaskBatch, reduction: str = "mean") -> float:
    """Categorical cross-entropy over one question's logits.

    ``sum`` reduction is -sum_i log softmax(logits_i)[label_i]; ``mean``
    divides by N.
    """
    return multitask_ce_grad(batch, reduction)[0]


def multitask_ce_grad(batch: MultiTaskBatch, reduction: str = "mean"):
    """Cross-entropy with gradient w.r.t. the logits."""
    if reduction not in ("sum", "mean"):
        raise InvalidArgumentError(f"unknown reduction {reduction!r}")
    n = batch.logits.shape[0]
    logp = batch.logits - _logsumexp(batch.logits, axis=1)[:, None]
    value = -float(logp[np.arange(n), batch.labels].sum())
    grad = softmax(batch.logits, axis=1)
    grad[np.arange(n), batch.labels] -= 1.0
    if reduction == "mean":
        value /= n
        grad /= n
    return value, grad


# ---------------------------------------------------------------------------
# Masked-token negative log-likelihood
# ---------------------------------------------------------------------------


def mlm_loss(batch: MlmBatch) -> float:
    """Mean negative log-probability of true tokens at masked positions.

    Normalized by N*M.  +inf is returned (flagged degenerate by the caller)
    when a true token has probability zero.
    """
    return _mlm_nll(batch.probs, batch.targets)[0]


def mlm_loss_grad(batch: MlmBatch):
    """Masked-token NLL with gradient w.r.t. the probability tensor."""
    return _mlm_nll(batch.probs, batch.targets)


def _mlm_nll(probs: np.ndarray, targets: np.ndarray):
    # Core math without the simplex check so it stays differentiable for
    # finite-difference validation.
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, m, _ = probs.shape
    idx_n = np.repeat(np.arange(n), m)
    idx_m = np.tile(np.arange(m), n)
    picked = probs[idx_n, idx_m, targets.ravel()]
    grad = np.zeros_like(probs)
    if np.any(picked <= 0.0):
        return float("inf"), grad
    value = -float(np.log(picked).sum()) / (n * m)
    grad[idx_n, idx_m, targets.ravel()] = -1.0 / (picked * n * m)
    return value, grad


# ---------------------------------------------------------------------------
# Cosine similarity
# ---------------------------------------------------------------------------


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    return cosine_sim_grad(a, b)[0]


def cosine_sim_grad(a: np.ndarray, b: np.ndarray):
    """Cosine similarity with gradients w.r.t. both vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidArgumentError("cosine similarity undefined for zero vectors")
    s = float(a @ b / (na * nb))
    da = b / (na * nb) - s * a / na**2
    db = a / (na * nb) - s * b / nb**2
    return s, da, db


def _cosine_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise InvalidArgumentError("cosine similarity undefined for zero rows")
    return (x @ y.T) / np.outer(nx, ny)


# ---------------------------------------------------------------------------
# Dropout-contrastive sentence loss
# ---------------------------------------------------------------------------


def simcse_loss(pair: SimcsePair, variant: str = "standard") -> float:
    """Contrastive loss over two dropout passes of the same sentences.

    ``as_written`` evaluates the literal form whose denominator sums
    exp(sim(h_i, h_j)/tau) over first-pass embeddings j != i only; it can be
    negative and is used for conformance checks.  ``standard`` is the usual
    in-batch form with denominator sum_j exp(sim(h_i, h_j+)/tau) including
    j = i, and is the training default.
    """
    return simcse_loss_grad(pair, variant)[0]


def simcse_loss_grad(pair: SimcsePair, variant: str = "standard"):
    """Sentence-contrastive loss with gradients w.r.t. h and h_pos."""
    h, hp, tau = pair.h, pair.h_pos, pair.tau
    n = h.shape[0]
    if variant == "as_written":
        if n < 2:
            raise InvalidArgumentError("as_written needs N >= 2 (empty denominator)")
        return _simcse_literal(h, hp, tau)
    if variant == "standard":
        return _simcse_standard(h, hp, tau)
    raise InvalidArgumentError(f"unknown variant {variant!r}")


def _simcse_standard(h, hp, tau):
    n = h.shape[0]
    sims = _cosine_matrix(h, hp)  # (i, j) = sim(h_i, h_j+)
    logits = sims / tau
    logp = logits - _logsumexp(logits, axis=1)[:, None]
    value = -float(np.trace(logp)) / n
    # d(value)/d(sims[i, j]) = (P_ij - delta_ij) / (n * tau)
    coeff = (softmax(logits, axis=1) - np.eye(n)) / (n * tau)
    dh, dhp = _cosine_matrix_backward(h, hp, coeff)
    return value, dh, dhp


def _simcse_literal(h, hp, tau):
    n = h.shape[0]
    s_pos = np.array([cosine_sim(h[i], hp[i]) for i in range(n)])
    sims_hh = _cosine_matrix(h, h)
    off = ~np.eye(n, dtype=bool)
    # log denominator over first-pass negatives, excluding the diagonal
    logits = sims_hh / tau
    masked = np.where(off, logits, -np.inf)
    logden = _logsumexp(masked, axis=1)
    value = -float(np.sum(s_pos / tau - logden)) / n

    coeff_pos = -np.ones(n) / (n * tau)
    dh = np.zeros_like(h)
    dhp = np.zeros_like(hp)
    for i in range(n):
        _, da, db = cosine_sim_grad(h[i], hp[i])
        dh[i] += coeff_pos[i] * da
        dhp[i] += coeff_pos[i] * db
    # denominator weights: softmax over the off-diagonal entries of row i
    w = np.where(off, np.exp(logits - logden[:, None]), 0.0)
    coeff_hh = w / (n * tau)
    gh_a, gh_b = _cosine_matrix_backward(h, h, coeff_hh)
    dh += gh_a + gh_b
    return value, dh, dhp


def _cosine_matrix_backward(x, y, coeff):
    """Backprop ``sum(coeff * cosine_matrix(x, y))`` to x and y."""
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    s = (x @ y.T) / np.outer(nx, ny)
    xn = x / nx[:, None]
    yn = y / ny[:, None]
    # d s_ij / d x_i = (y_j / |y_j| - s_ij * x_i / |x_i|) / |x_i|
    dx = (coeff @ yn - (coeff * s).sum(axis=1)[:, None] * xn) / nx[:, None]
    dy = (coeff.T @ xn - (coeff * s).sum(axis=0)[:, None] * yn) / ny[:, None]
    return dx, dy


# ---------------------------------------------------------------------------
# Symmetric paired InfoNCE
# ---------------------------------------------------------------------------


def clip_infonce(batch: AlignedBatch) -> float:
    """Symmetric InfoNCE over a batch of aligned pairs."""
    return clip_infonce_grad(batch)[0]


def clip_infonce_grad(batch: AlignedBatch):
    """Symmetric InfoNCE with gradients w.r.t. u, v and log(1/tau)."""
    return _infonce_raw(batch.u, batch.v, batch.log_inv_tau)


def _infonce_raw(u: np.ndarray, v: np.ndarray, log_inv_tau: float):
    """Differentiable core: similarities are plain row dot products.

    Valid as the cosine form whenever the rows are unit-norm; kept
    unchecked so gradients can be validated off the constraint manifold.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = u.shape[0]
    scale = float(np.exp(log_inv_tau))
    logits = (u @ v.T) * scale

    logp_row = logits - _logsumexp(logits, axis=1)[:, None]
    logp_col = logits - _logsumexp(logits, axis=0)[None, :]
    value = -float(np.trace(logp_row) + np.trace(logp_col)) / n

    g = (softmax(logits, axis=1) + softmax(logits, axis=0) - 2.0 * np.eye(n)) / n
    du = scale * (g @ v)
    dv = scale * (g.T @ u)
    dlog_inv_tau = float(np.sum(g * logits))
    return value, du, dv, dlog_inv_tau


def _infonce_from_sims(sims: np.ndarray, log_inv_tau: float = 0.0) -> float:
    """InfoNCE evaluated directly on a similarity matrix (test hook)."""
    n = sims.shape[0]
    logits = np.asarray(sims, dtype=np.float64) * float(np.exp(log_inv_tau))
    logp_row = logits - _logsumexp(logits, axis=1)[:, None]
    logp_col = logits - _logsumexp(logits, axis=0)[None, :]
    return -float(np.trace(logp_row) + np.trace(logp_col)) / n


# ---------------------------------------------------------------------------
# Cox partial log-likelihood (Breslow ties)
# ---------------------------------------------------------------------------


def cox_partial_loglik(batch: CoxBatch, ties: str = "breslow") -> float:
    """Negative log partial likelihood of a proportional-hazards model."""
    return cox_partial_loglik_grad(batch, ties)[0]


def cox_partial_loglik_grad(batch: CoxBatch, ties: str = "breslow"):
    """Negative log partial likelihood with gradient w.r.t. eta.

    Breslow tie handling: every event at a tied time shares the full
    risk-set denominator.
    """
    if ties != "breslow":
        raise InvalidArgumentError(f"unsupported tie method {ties!r}")
    return _cox_nll(batch.eta, batch.times, batch.events)


def _cox_nll(eta: np.ndarray, times: np.ndarray, events: np.ndarray):
    eta = np.asarray(eta, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    n = eta.shape[0]

    order = np.argsort(times, kind="stable")
    t_s = times[order]
    e_s = events[order]
    eta_s = eta[order]

    m = eta_s.max()
    w = np.exp(eta_s - m)
    # risk_tail[i] = sum_{j >= i} exp(eta_j - m) over the time-sorted array
    risk_tail = np.cumsum(w[::-1])[::-1]

    value = 0.0
    dweight = np.zeros(n)  # sum over event times t <= t_i of d_t / S(t)
    i = 0
    while i < n:
        j = i
        while j < n and t_s[j] == t_s[i]:
            j += 1
        d = int(e_s[i:j].sum())
        if d > 0:
            s = risk_tail[i]
            value -= float(eta_s[i:j][e_s[i:j] == 1].sum())
            value += d * (m + np.log(s))
            dweight[i:] += d / s
        i = j

    grad_s = w * dweight
    grad_s[e_s == 1] -= 1.0
    grad = np.empty(n)
    grad[order] = grad_s
    return float(value), grad
