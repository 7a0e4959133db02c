"""Structured state-space math: discretization, recurrence and the matrix form.

Shapes follow one convention throughout: ``T`` steps, ``E`` independent
channels and state size ``N`` per channel.

* ``delta``: (T, E) positive step sizes
* ``A``: (E, N) diagonal state matrix entries, all negative
* ``B``, ``C``: (T, E, N) per-step input/output vectors
* ``x``, ``y``: (T, E)

Single-channel inputs (``x`` of shape (T,)) are accepted by the functions
that take ``x`` and give outputs of the same rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import DimensionError, Tensor


class DomainError(ValueError):
    """Raised when SSM parameters leave their valid domain."""


@dataclass(frozen=True)
class SsmParams:
    delta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        delta, A, B, C = (np.asarray(v, dtype=np.float64) for v in (self.delta, self.A, self.B, self.C))
        if delta.ndim != 2 or A.ndim != 2 or B.ndim != 3 or C.ndim != 3:
            raise DimensionError("expected delta (T,E), A (E,N), B and C (T,E,N)")
        T, E = delta.shape
        if A.shape[0] != E or B.shape != (T, E, A.shape[1]) or C.shape != B.shape:
            raise DimensionError(
                f"inconsistent shapes delta{delta.shape} A{A.shape} B{B.shape} C{C.shape}")
        if not np.all(delta > 0):
            raise DomainError("step sizes must be strictly positive")
        if not np.all(A < 0):
            raise DomainError("diagonal state entries must be negative")
        for name, v in (("delta", delta), ("A", A), ("B", B), ("C", C)):
            object.__setattr__(self, name, v)

    @classmethod
    def single_channel(cls, delta, A, B, C) -> "SsmParams":
        """Build from delta (T,), A (N,), B (T,N), C (T,N)."""
        delta = np.asarray(delta, dtype=np.float64)
        return cls(delta[:, None], np.asarray(A, dtype=np.float64)[None, :],
                   np.asarray(B, dtype=np.float64)[:, None, :],
                   np.asarray(C, dtype=np.float64)[:, None, :])

    @property
    def seq_len(self) -> int:
        return self.delta.shape[0]

    @property
    def channels(self) -> int:
        return self.delta.shape[1]

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class DiscreteSsmParams:
    Abar: np.ndarray
    Bbar: np.ndarray

    def __post_init__(self):
        if self.Abar.shape != self.Bbar.shape or self.Abar.ndim != 3:
            raise DimensionError("Abar and Bbar must both be (T, E, N)")

    @property
    def seq_len(self) -> int:
        return self.Abar.shape[0]


def discretize(p: SsmParams) -> DiscreteSsmParams:
    """Zero-order hold for the state matrix, Euler step for the input matrix."""
    if not np.all(p.delta > 0):
        raise DomainError("step sizes must be strictly positive")
    step = p.delta[:, :, None]
    return DiscreteSsmParams(np.exp(step * p.A[None]), step * p.B)


def _channels(x, T: int, E: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape != (T, E):
        raise DimensionError(f"input shape {x.shape} does not match ({T}, {E})")
    return x, squeeze


def recurrence(d: DiscreteSsmParams, C, x, return_states: bool = False):
    """Run h_t = Abar_t h_{t-1} + Bbar_t x_t, y_t = C_t . h_t from h_{-1} = 0."""
    T, E, N = d.Abar.shape
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (T, E, N):
        raise DimensionError(f"C shape {C.shape} does not match {(T, E, N)}")
    x, squeeze = _channels(x, T, E)
    states = np.empty((T, E, N))
    h = np.zeros((E, N))
    for t in range(T):
        h = d.Abar[t] * h + d.Bbar[t] * x[t][:, None]
        states[t] = h
    y = np.einsum("ten,ten->te", C, states)
    if squeeze:
        y = y[:, 0]
    return (y, states) if return_states else y


def hidden_expansion(d: DiscreteSsmParams, x, t: int) -> np.ndarray:
    """Hidden state at step ``t`` as an explicit sum over earlier inputs.

    h_t = sum_s (Abar_t ... Abar_{s+1}) Bbar_s x_s, with the empty product
    at s = t taken as the identity.  Returns (E, N).
    """
    T, E, N = d.Abar.shape
    if not 0 <= t < T:
        raise IndexError(f"step {t} outside [0, {T})")
    x, _ = _channels(x, T, E)
    h = np.zeros((E, N))
    for s in range(t + 1):
        chain = np.ones((E, N))
        for j in range(s + 1, t + 1):
            chain = chain * d.Abar[j]
        h += chain * d.Bbar[s] * x[s][:, None]
    return h


def semiseparable_matrix(d: DiscreteSsmParams, C) -> np.ndarray:
    """Per-channel lower-triangular M with M[j, i] = C_j . (Abar_j...Abar_{i+1}) Bbar_i.

    Returns (E, T, T).
    """
    T, E, N = d.Abar.shape
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (T, E, N):
        raise DimensionError(f"C shape {C.shape} does not match {(T, E, N)}")
    M = np.zeros((E, T, T))
    for i in range(T):
        chain = d.Bbar[i].copy()
        M[:, i, i] = np.sum(C[i] * chain, axis=-1)
        for j in range(i + 1, T):
            chain = chain * d.Abar[j]
            M[:, j, i] = np.sum(C[j] * chain, axis=-1)
    return M


def matrix_form(M, x) -> np.ndarray:
    """y = M x, per channel when M is (E, T, T) and x is (T, E)."""
    M = np.asarray(M, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if M.ndim == 2:
        if x.ndim != 1 or M.shape != (x.shape[0], x.shape[0]):
            raise DimensionError(f"M {M.shape} incompatible with x {x.shape}")
        return M @ x
    if M.ndim != 3 or x.ndim != 2 or M.shape[1:] != (x.shape[0], x.shape[0]) or M.shape[0] != x.shape[1]:
        raise DimensionError(f"M {M.shape} incompatible with x {x.shape}")
    return np.einsum("ets,se->te", M, x)


# -- selective (input-dependent) parameters ------------------------------------

def softplus_inverse(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


@dataclass
class SelectiveWeights:
    """Projections from features to (delta, B, C) plus the fixed diagonal A.

    ``W_B`` and ``W_C`` map an E-dim input to an (E, N) block, giving every
    channel its own input/output vectors.
    """

    W_delta: np.ndarray  # (E, E)
    b_delta: np.ndarray  # (E,)
    A_log: np.ndarray    # (E, N); A = -exp(A_log)
    W_B: np.ndarray      # (E, E*N)
    W_C: np.ndarray      # (E, E*N)

    @classmethod
    def init(cls, channels: int, state_dim: int, rng: np.random.Generator) -> "SelectiveWeights":
        E, N = channels, state_dim
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=E))
        return cls(
            W_delta=rng.normal(0.0, E ** -0.5, size=(E, E)),
            b_delta=softplus_inverse(dt),
            A_log=np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (E, 1))),
            W_B=rng.normal(0.0, E ** -0.5, size=(E, E * N)),
            W_C=rng.normal(0.0, E ** -0.5, size=(E, E * N)),
        )

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log)

    @property
    def channels(self) -> int:
        return self.W_delta.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A_log.shape[1]


def selective_params(x, w: SelectiveWeights) -> SsmParams:
    x = np.asarray(x, dtype=np.float64)
    T, E = x.shape
    if E != w.channels:
        raise DimensionError(f"feature width {E} does not match weights ({w.channels})")
    N = w.state_dim
    delta = np.logaddexp(0.0, x @ w.W_delta + w.b_delta)
    return SsmParams(delta, w.A, (x @ w.W_B).reshape(T, E, N), (x @ w.W_C).reshape(T, E, N))


def selective_scan(x, w: SelectiveWeights) -> np.ndarray:
    """Selective parameters, discretization and recurrence in sequence."""
    p = selective_params(x, w)
    return recurrence(discretize(p), p.C, x)


# -- differentiable scan used by the model --------------------------------------

def _scan_states(dA: np.ndarray, dBx: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    T = dA.shape[0]
    states = np.empty_like(dBx)
    prev = np.zeros(dA.shape[1:], dtype=dA.dtype) if h0 is None else h0
    for t in range(T):
        cur = states[t]
        np.multiply(dA[t], prev, out=cur)
        cur += dBx[t]
        prev = cur
    return states


def scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, keep=None) -> Tensor:
    """Discretize and run the diagonal selective recurrence as one graph node.

    u, delta: (T, E); A: (E, N); B, C: (T, E, N).  ``keep`` is an optional
    (T,) 0/1 mask; a zero at step t drops the carried state before the update.
    """
    u, delta, A, B, C = (nm.as_tensor(v) for v in (u, delta, A, B, C))
    T, E = u.shape
    N = A.shape[1]
    if delta.shape != (T, E) or A.shape != (E, N) or B.shape != (T, E, N) or C.shape != (T, E, N):
        raise DimensionError("scan operand shapes disagree")
    dA = np.exp(delta.data[:, :, None] * A.data[None])
    if keep is not None:
        keep = np.asarray(keep, dtype=dA.dtype).reshape(T, 1, 1)
        dA = dA * keep
    bx = B.data * u.data[:, :, None]
    dBx = delta.data[:, :, None] * bx
    states = _scan_states(dA, dBx)
    y = np.einsum("ten,ten->te", C.data, states)

    def backward(gy):
        gC = gy[:, :, None] * states
        gh = gy[:, :, None] * C.data
        for t in range(T - 2, -1, -1):
            gh[t] += dA[t + 1] * gh[t + 1]
        prev = np.concatenate([np.zeros_like(states[:1]), states[:-1]])
        g_dA = gh * prev
        g_expo = g_dA * dA  # derivative of exp(delta*A); masked steps already zero
        g_delta = np.sum(g_expo * A.data[None], axis=-1) + np.sum(gh * bx, axis=-1)
        gA = np.einsum("ten,te->en", g_expo, delta.data)
        g_bx = gh * delta.data[:, :, None]
        gB = g_bx * u.data[:, :, None]
        gu = np.sum(g_bx * B.data, axis=-1)
        return gu, g_delta, gA, gB, gC

    return nm.custom_op(y, (u, delta, A, B, C), backward, "scan")


def streaming_scan(u: np.ndarray, delta: np.ndarray, A: np.ndarray, W_B: np.ndarray,
                   W_C: np.ndarray, src: np.ndarray, keep=None, chunk: int = 2048) -> np.ndarray:
    """Forward-only scan that builds B and C a chunk at a time.

    ``src`` is the (T, E) input that B and C are projected from.  Keeps memory
    at O(chunk * E * N) for long sequences; no graph is recorded.
    """
    T, E = u.shape
    N = A.shape[1]
    y = np.empty((T, E), dtype=u.dtype)
    h = np.zeros((E, N), dtype=u.dtype)
    for lo in range(0, T, chunk):
        hi = min(T, lo + chunk)
        Bc = (src[lo:hi] @ W_B).reshape(hi - lo, E, N)
        Cc = (src[lo:hi] @ W_C).reshape(hi - lo, E, N)
        dA = np.exp(delta[lo:hi, :, None] * A[None])
        if keep is not None:
            dA = dA * np.asarray(keep[lo:hi], dtype=dA.dtype)[:, None, None]
        dBx = delta[lo:hi, :, None] * Bc * u[lo:hi, :, None]
        states = _scan_states(dA, dBx, h)
        h = states[-1].copy()
        y[lo:hi] = np.einsum("ten,ten->te", Cc, states)
    return y
