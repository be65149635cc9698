"""Per-port analytical models: M/M/1/b closed forms and CTMCs for SP and
GPS (shared by WFQ and DRR) scheduling.

Conventions:
  - Classes are 0-indexed; class 0 is the highest priority. Buffers b_i
    count all class-i packets in the system, including the one in service.
  - SP states are (s, q) with s the class in service (-1 when idle, in
    which case q = 0). GPS states are plain occupancy vectors q.
  - Service is exponential and non-preemptive.

Stationary distributions use ARPACK (Arnoldi on the uniformized transition
matrix). On this box SuperLU suffers severe fill-in on these grid-like
generators, so the direct sparse solve is the fallback, not the primary,
path; tiny chains are solved densely.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order
from dataclasses import dataclass

STATE_CAP = 10 ** 6
_DENSE_CUTOFF = 400
# residual tolerance for ||pi Q||_inf on the rate-normalized generator
_RESIDUAL_TOL = 1e-10


@dataclass
class QueueMetrics:
    p_b: np.ndarray           # per-class blocking probability
    W: np.ndarray             # per-class mean delay, s
    Var: np.ndarray           # per-class delay variance, s^2
    L: np.ndarray             # per-class mean number in system


class CtmcModel:
    """State space + sparse generator for one scheduled output port.

    q_matrix is the (n_states, p) occupancy table; serving is the
    in-service class per state (-1 = idle; GPS chains have no serving
    component and keep it None).
    """

    def __init__(self, kind, Q, q_matrix, serving, lam, mu, w, b):
        self.kind = kind                  # "sp" | "gps"
        self.Q = Q
        self.q_matrix = q_matrix
        self.serving = serving
        self.lam = np.asarray(lam, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.w = None if w is None else np.asarray(w, dtype=float)
        self.b = np.asarray(b, dtype=int)
        self.empty_index = 0              # both builders put it first

    @property
    def n_states(self):
        return self.Q.shape[0]

    @property
    def state_space(self):
        """Enumerated states: (s, q-tuple) for SP, q-tuple for GPS."""
        states = getattr(self, "_states", None)
        if states is None:
            qs = [tuple(row) for row in self.q_matrix]
            if self.kind == "sp":
                states = list(zip(self.serving.tolist(), qs))
            else:
                states = qs
            self._states = states
        return states

    def audit(self, tol=1e-12):
        """Row sums ~ 0 and nonnegative off-diagonals; raises on failure."""
        rs = np.abs(np.asarray(self.Q.sum(axis=1)).ravel())
        scale = max(1.0, float(np.abs(self.Q.data).max()) if self.Q.nnz else 1.0)
        if rs.max() > tol * scale:
            raise AssertionError(f"generator row sums off by {rs.max():.3e}")
        off = self.Q.tocoo()
        neg = off.data[(off.row != off.col) & (off.data < 0)]
        if neg.size:
            raise AssertionError("negative off-diagonal rate")


def _finalize(kind, rows, cols, vals, n, q_matrix, serving, lam, mu, w, b):
    Q = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    Q.sum_duplicates()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return CtmcModel(kind, Q.tocsr(), q_matrix, serving, lam, mu, w, b)


def build_gps_generator(lam, mu, w, b):
    """GPS chain on the full product space q_i in 0..b_i.

    Arrivals at lam_i while q_i < b_i; class i departs at rate
    mu_i * w_i / sum of weights of nonempty queues.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=int)
    p = len(b)
    _check_params(lam, mu, b, p)
    if np.any(w <= 0):
        raise ValueError("GPS weights must be positive")
    dims = [int(bi) + 1 for bi in b]
    n = int(np.prod(dims))
    if n > STATE_CAP:
        raise ValueError(f"state space {n} exceeds cap {STATE_CAP}")
    grid = np.indices(dims).reshape(p, -1)            # (p, n), lexicographic
    strides = np.array([int(np.prod(dims[i + 1:])) for i in range(p)])
    idx = np.arange(n)
    active_w = (grid > 0).T.astype(float) @ w
    rows, cols, vals = [], [], []
    for i in range(p):
        if lam[i] > 0:
            m = grid[i] < b[i]
            rows.append(idx[m])
            cols.append(idx[m] + strides[i])
            vals.append(np.full(int(m.sum()), lam[i]))
        m = grid[i] > 0
        rows.append(idx[m])
        cols.append(idx[m] - strides[i])
        vals.append(mu[i] * w[i] / active_w[m])
    q_matrix = grid.T.astype(np.int32).copy()
    return _finalize("gps", rows, cols, vals, n, q_matrix, None,
                     lam, mu, w, b)


def build_sp_generator(lam, mu, b):
    """Strict-priority chain on (s, q) with q_s >= 1, plus the idle state.

    Transition rules: an arrival to the idle system starts service of its
    class; an arrival to a busy system joins queue i iff q_i < b_i; a
    departure that empties the system moves to idle; otherwise the next
    served class is the lowest-index nonempty queue of the post-departure
    vector.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    b = np.asarray(b, dtype=int)
    p = len(b)
    _check_params(lam, mu, b, p)
    dims = [int(bi) + 1 for bi in b]
    block = int(np.prod(dims))                        # per-serving-class grid
    strides = np.array([int(np.prod(dims[i + 1:])) for i in range(p)])
    grid = np.indices(dims).reshape(p, -1)            # shared layout

    # state layout: index 0 = idle; then for each s, the q-grid states with
    # q_s >= 1, in grid order. offsets[s] maps grid index -> state index.
    masks = [grid[s] >= 1 for s in range(p)]
    sizes = [int(m.sum()) for m in masks]
    n = 1 + sum(sizes)
    if n > STATE_CAP:
        raise ValueError(f"state space {n} exceeds cap {STATE_CAP}")
    grid_to_state = np.full((p, block), -1, dtype=np.int64)
    base = 1
    q_rows = [np.zeros((1, p), dtype=np.int32)]
    s_rows = [np.array([-1], dtype=np.int32)]
    for s in range(p):
        k = np.flatnonzero(masks[s])
        grid_to_state[s, k] = base + np.arange(sizes[s])
        base += sizes[s]
        q_rows.append(grid[:, k].T.astype(np.int32))
        s_rows.append(np.full(sizes[s], s, dtype=np.int32))
    q_matrix = np.concatenate(q_rows, axis=0)
    serving = np.concatenate(s_rows)
    layout = (grid_to_state, strides)

    rows, cols, vals = [], [], []
    # idle -> service start
    for i in range(p):
        if lam[i] > 0:
            e_i = int(strides[i])                     # grid index of e_i
            rows.append(np.array([0]))
            cols.append(np.array([grid_to_state[i, e_i]]))
            vals.append(np.array([lam[i]]))
    for s in range(p):
        k = np.flatnonzero(masks[s])                  # grid indices, this block
        st = grid_to_state[s, k]
        # arrivals keep the serving class
        for i in range(p):
            if lam[i] > 0:
                m = grid[i, k] < b[i]
                rows.append(st[m])
                cols.append(grid_to_state[s, k[m] + strides[i]])
                vals.append(np.full(int(m.sum()), lam[i]))
        # service completion of class s
        k_post = k - strides[s]                       # q - e_s, grid index
        q_post = grid[:, k_post]                      # (p, m)
        nonempty = q_post > 0
        any_left = nonempty.any(axis=0)
        # emptied system -> idle
        m = ~any_left
        if m.any():
            rows.append(st[m])
            cols.append(np.zeros(int(m.sum()), dtype=np.int64))
            vals.append(np.full(int(m.sum()), mu[s]))
        # otherwise next class = lowest-index nonempty after removal
        m = any_left
        if m.any():
            nxt = np.argmax(nonempty[:, m], axis=0)
            rows.append(st[m])
            cols.append(grid_to_state[nxt, k_post[m]])
            vals.append(np.full(int(m.sum()), mu[s]))
    model = _finalize("sp", rows, cols, vals, n, q_matrix, serving,
                      lam, mu, None, b)
    model.layout = layout
    return model


def _check_params(lam, mu, b, p):
    if len(lam) != p or len(mu) != p:
        raise ValueError("lam, mu, b must have equal length")
    if np.any(lam < 0):
        raise ValueError("arrival rates must be >= 0")
    if np.any(mu <= 0):
        raise ValueError("service rates must be > 0")
    if np.any(b < 1):
        raise ValueError("buffers must be >= 1")


# ---------------------------------------------------------------------------
# stationary distribution

def stationary_distribution(ctmc):
    """Stationary pi with pi >= 0, sum 1, and residual-checked pi Q ~ 0.

    States unreachable from the empty state (possible when some lam_i = 0)
    get probability 0. Methods: dense solve for tiny chains, else ARPACK on
    the uniformized chain, else direct sparse GBE solve; a RuntimeError with
    the achieved residual is raised if all fail the tolerance.
    """
    Q = ctmc.Q
    n = Q.shape[0]
    reach = _reachable(Q, ctmc.empty_index)
    pi = np.zeros(n)
    if reach.size == 1:
        pi[reach[0]] = 1.0
        return pi
    Qr = Q[reach][:, reach].tocsr()
    # pruning cuts outflow to unreachable states; restore zero row sums
    Qr = Qr - sp.diags(np.asarray(Qr.sum(axis=1)).ravel())
    scale = float(np.abs(Qr.data).max())
    Qn = Qr / scale
    sub = None
    if len(reach) <= _DENSE_CUTOFF:
        sub = _stationary_dense(Qn.toarray())
    else:
        sub = _stationary_arpack(Qn)
        if sub is None or _residual(sub, Qn) > _RESIDUAL_TOL:
            direct = _stationary_direct(Qn)
            if direct is not None and (sub is None or
                                       _residual(direct, Qn) < _residual(sub, Qn)):
                sub = direct
    if sub is None:
        raise RuntimeError("stationary distribution: no method converged")
    res = _residual(sub, Qn)
    if res > _RESIDUAL_TOL:
        raise RuntimeError(f"stationary distribution residual {res:.3e} "
                           f"exceeds {_RESIDUAL_TOL:.1e}")
    pi[reach] = sub
    return pi


def _reachable(Q, start):
    order, _ = breadth_first_order(Q, start, directed=True,
                                   return_predecessors=True)
    return np.sort(order)


def _residual(pi, Qn):
    return float(np.abs(pi @ Qn).max())


def _stationary_dense(Qd):
    n = Qd.shape[0]
    A = Qd.T.copy()
    A[0, :] = 1.0                      # normalization replaces one balance eq
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = np.linalg.solve(A, rhs)
    return _clean(pi)


def _stationary_arpack(Qn):
    n = Qn.shape[0]
    lam_max = float(np.abs(Qn.diagonal()).max())
    P = (sp.eye(n, format="csr") + Qn / (1.1 * lam_max)).T.tocsr()
    try:
        _, vecs = spla.eigs(P, k=1, which="LM", v0=np.ones(n), tol=1e-13,
                            maxiter=50 * n)
    except (spla.ArpackNoConvergence, spla.ArpackError):
        return None
    pi = np.real(vecs[:, 0])
    if np.abs(pi).sum() == 0:
        return None
    return _clean(pi)


def _stationary_direct(Qn):
    n = Qn.shape[0]
    C = Qn.T.tocoo()
    keep = C.row != 0
    rows = np.concatenate([C.row[keep], np.zeros(n, dtype=C.row.dtype)])
    cols = np.concatenate([C.col[keep], np.arange(n)])
    vals = np.concatenate([C.data[keep], np.ones(n)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        pi = spla.spsolve(A, rhs)
    except Exception:
        return None
    return _clean(pi)


def _clean(pi):
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    if pi.sum() < 0:
        pi = -pi
    pi = np.clip(pi, 0.0, None)
    s = pi.sum()
    return pi / s if s > 0 else None


# ---------------------------------------------------------------------------
# metrics from pi

def blocking_probabilities(ctmc, pi):
    """p_b[i] = total probability of states with queue i full."""
    full = ctmc.q_matrix == ctmc.b[None, :]
    return pi @ full


def mean_queue_lengths(ctmc, pi):
    return pi @ ctmc.q_matrix


def class_delay(ctmc, pi, lam, p_b):
    """Little's law on accepted traffic: W_i = E[q_i] / (lam_i (1-p_b_i)).

    Classes with zero accepted rate get NaN (undefined, reported as such).
    """
    lam = np.asarray(lam, dtype=float)
    L = mean_queue_lengths(ctmc, pi)
    acc = lam * (1.0 - p_b)
    W = np.full(len(lam), np.nan)
    ok = acc > 0
    W[ok] = L[ok] / acc[ok]
    return W


# ---------------------------------------------------------------------------
# M/M/1/b closed forms

def mm1b_metrics(lam, mu, b):
    """Single-class FIFO queue with b system slots (in-service included).

    Blocking from the birth-death stationary distribution; delay via
    Little's law on accepted traffic; variance from the accepted-customer
    delay mixture (an arrival seeing n in system waits Erlang(n+1, mu)).
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if b < 1:
        raise ValueError("b must be >= 1")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return QueueMetrics(p_b=np.array([0.0]), W=np.array([1.0 / mu]),
                            Var=np.array([1.0 / mu ** 2]),
                            L=np.array([0.0]))
    rho = lam / mu
    pows = rho ** np.arange(b + 1)
    pi = pows / pows.sum()
    p_b = float(pi[b])
    L = float(np.arange(b + 1) @ pi)
    W = L / (lam * (1.0 - p_b))
    # PASTA mixture over accepted arrivals: Erlang(n+1, mu) delay
    wts = pi[:b] / (1.0 - p_b)
    ns = np.arange(1, b + 1, dtype=float)             # n+1 stages
    ED = float(wts @ ns) / mu
    ED2 = float(wts @ (ns * (ns + 1))) / mu ** 2
    var = max(ED2 - ED * ED, 0.0)
    return QueueMetrics(p_b=np.array([p_b]), W=np.array([W]),
                        Var=np.array([var]), L=np.array([L]))


# ---------------------------------------------------------------------------
# first-passage delay moments (jitter)

def first_passage_delay_moments(ctmc, i, pi=None, p_b=None):
    """Mean and second moment of the accepted class-i delay, plus variance.

    A tagged class-i arrival is absorbed when queue i empties. Per the
    model, no competing arrivals are admitted during the passage: lam_i is
    zeroed for GPS; lam_j for all j <= i for SP. In the modified chain q_i
    never grows, so the transient block is block-lower-bidiagonal in levels
    k = q_i with one shared diagonal block, solved level by level with a
    single LU.

    Entry states mix with PASTA weights pi[s]/(1 - p_b[i]) over the
    non-blocking states of the unmodified chain.
    """
    if pi is None:
        pi = stationary_distribution(ctmc)
    if p_b is None:
        p_b = blocking_probabilities(ctmc, pi)
    if ctmc.lam[i] <= 0 or p_b[i] >= 1.0 - 1e-15:
        return np.nan, np.nan, np.nan

    lam2 = ctmc.lam.copy()
    if ctmc.kind == "gps":
        lam2[i] = 0.0
        mod = build_gps_generator(lam2, ctmc.mu, ctmc.w, ctmc.b)
    else:
        lam2[: i + 1] = 0.0
        mod = build_sp_generator(lam2, ctmc.mu, ctmc.b)

    qi = mod.q_matrix[:, i]
    trans = np.flatnonzero(qi >= 1)
    order = np.argsort(qi[trans], kind="stable")      # group by level k
    trans = trans[order]
    levels = qi[trans]
    A = mod.Q[trans][:, trans].tocsr()
    m1, m2 = _passage_moments(A, levels, int(ctmc.b[i]))

    # map transient-state index -> position in the m vectors
    pos = np.full(mod.n_states, -1, dtype=np.int64)
    pos[trans] = np.arange(len(trans))

    entry = _entry_states(ctmc, mod, i)
    ok = ctmc.q_matrix[:, i] < ctmc.b[i]
    wts = pi[ok] / (1.0 - p_b[i])
    tgt = pos[entry[ok]]
    ED = float(wts @ m1[tgt])
    ED2 = float(wts @ m2[tgt])
    var = ED2 - ED * ED
    if var < -1e-9 * max(1.0, abs(ED2)):
        raise RuntimeError(f"negative delay variance {var:.3e}")
    return ED, ED2, max(var, 0.0)


def _passage_moments(A, levels, b_i):
    """Solve A m1 = -1 and A m2 = -2 m1 exploiting the level structure."""
    n = A.shape[0]
    lev_idx = [np.flatnonzero(levels == k) for k in range(1, b_i + 1)]
    if any(len(ix) == 0 for ix in lev_idx):
        # some level empty (possible only for degenerate b); generic solve
        return _passage_generic(A)
    D = A[lev_idx[0]][:, lev_idx[0]].tocsc()
    S = None
    uniform = True
    for k in range(1, b_i):
        Dk = A[lev_idx[k]][:, lev_idx[k]]
        Sk = A[lev_idx[k]][:, lev_idx[k - 1]]
        if (Dk - D).nnz or (S is not None and (Sk - S).nnz):
            uniform = False
            break
        if S is None:
            S = Sk.tocsr()
    if not uniform:
        return _passage_generic(A)
    lu = spla.splu(D)
    m = len(lev_idx[0])
    m1 = np.empty(n)
    m2 = np.empty(n)
    ones = np.ones(m)
    prev1 = lu.solve(-ones)
    m1[lev_idx[0]] = prev1
    for k in range(1, b_i):
        prev1 = lu.solve(-ones - S @ prev1)
        m1[lev_idx[k]] = prev1
    prev2 = lu.solve(-2.0 * m1[lev_idx[0]])
    m2[lev_idx[0]] = prev2
    for k in range(1, b_i):
        prev2 = lu.solve(-2.0 * m1[lev_idx[k]] - S @ prev2)
        m2[lev_idx[k]] = prev2
    return m1, m2


def _passage_generic(A):
    lu = spla.splu(A.tocsc())
    m1 = lu.solve(-np.ones(A.shape[0]))
    m2 = lu.solve(-2.0 * m1)
    return m1, m2


def _entry_states(ctmc, mod, i):
    """Index in `mod` of the state a class-i arrival lands in, per original
    state. Entries are valid only where q_i < b_i; other slots are -1."""
    n = ctmc.n_states
    entry = np.full(n, -1, dtype=np.int64)
    q = ctmc.q_matrix
    ok = q[:, i] < ctmc.b[i]
    if ctmc.kind == "gps":
        dims = [int(bi) + 1 for bi in ctmc.b]
        strides = np.array([int(np.prod(dims[j + 1:]))
                            for j in range(len(dims))])
        # GPS state index IS the grid index; bumping q_i adds stride_i
        entry[ok] = np.flatnonzero(ok) + strides[i]
        return entry
    # SP: idle -> service of i starts; busy -> queue i grows, serving stays.
    # The (p, b)-determined layout is shared by ctmc and mod.
    grid_to_state, strides = mod.layout
    gidx = q @ strides + strides[i]                   # grid index after bump
    sv = ctmc.serving
    blk = np.where(sv >= 0, sv, i)
    oki = np.flatnonzero(ok)
    entry[oki] = grid_to_state[blk[oki], gidx[oki]]
    return entry


# ---------------------------------------------------------------------------
# port-level dispatch

def port_metrics(policy, lam, mu, b, w=None, want_jitter=True):
    """Per-class (p_b, W, Var, L) for one output port.

    FIFO uses the closed form; SP the priority chain; WFQ and DRR share the
    GPS chain. want_jitter=False skips the first-passage solves (the
    network fixed point only feeds back rates and losses).
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    b = np.asarray(b, dtype=int)
    if policy == "FIFO":
        if len(lam) != 1:
            raise ValueError("FIFO port has exactly one queue")
        return mm1b_metrics(float(lam[0]), float(mu[0]), int(b[0]))
    if policy == "SP":
        ctmc = build_sp_generator(lam, mu, b)
    elif policy in ("WFQ", "DRR"):
        if w is None:
            raise ValueError(f"{policy} needs weights")
        ctmc = build_gps_generator(lam, mu, w, b)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    pi = stationary_distribution(ctmc)
    p_b = blocking_probabilities(ctmc, pi)
    W = class_delay(ctmc, pi, lam, p_b)
    L = mean_queue_lengths(ctmc, pi)
    p = len(lam)
    Var = np.full(p, np.nan)
    if want_jitter:
        for i in range(p):
            if lam[i] > 0:
                _, _, Var[i] = first_passage_delay_moments(ctmc, i, pi, p_b)
    return QueueMetrics(p_b=np.asarray(p_b, dtype=float), W=W, Var=Var, L=L)


def dump_generator(ctmc, fh):
    """Coordinate text format: one 'row col value' line per entry."""
    C = ctmc.Q.tocoo()
    for r, c, v in zip(C.row, C.col, C.data):
        fh.write(f"{r} {c} {v!r}\n")
