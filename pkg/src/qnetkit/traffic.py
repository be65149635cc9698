"""Streaming inter-arrival generators for the five traffic models.

Every model is driven by numpy Generator streams derived from a
SeedSequence, one independent stream per random purpose, so the emitted
sequence is bit-identical for a given (descriptor, seed) regardless of how
callers chunk their draws.

Model semantics (rate is always the long-run packets/s):
  Poisson      iid Exp(rate).
  CBR          exactly 1/rate, every interval.
  OnOff        Poisson at an elevated rate during On periods, silent during
               Off; the arrival clock pauses during Off, so rate is the
               long-run average. Period lengths are uniform in the
               configured bounds.
  AutocorrExp  AR(1) latent z_t; interarrival is the exponential quantile of
               the Gaussian CDF value of z_t, so the marginal stays Exp(rate)
               while autocorrelation is inherited from z.
  ModulatedExp interarrival ~ Exp(lam_t) with lam_t = A e^{z_t}, z_t AR(1);
               A = rate * e^{s2/2} makes E[interarrival] = 1/rate exactly.
"""

import numpy as np
from scipy.special import log_ndtr
from scipy.signal import lfilter

_CHUNK = 4096


def ar1_step(a, sigma2, z, rng):
    """One AR(1) step z' = a z + eps, eps ~ N(0, sigma2).

    Stationary marginal variance is s2 = sigma2 / (1 - a^2).
    """
    if not abs(a) < 1:
        raise ValueError("AR(1) needs |a| < 1")
    return a * z + rng.normal(0.0, np.sqrt(sigma2))


def _ar1_block(a, sigma, z_prev, rng, n):
    # z_k = a z_{k-1} + eps_k for k = 1..n, vectorized via an IIR filter
    eps = rng.normal(0.0, sigma, n)
    zi = np.array([a * z_prev])
    z, _ = lfilter([1.0], [1.0, -a], eps, zi=zi)
    return z


def _gauss_to_exp(z, s, lam):
    # F_E^{-1}(rate, Phi(z/s)) = -ln(1 - Phi(z/s)) / lam, with the
    # complementary CDF evaluated in log space for tail stability
    return -log_ndtr(-z / s) / lam


class TrafficState:
    """Single-owner generator state for one flow.

    next() yields one inter-arrival; block(n) yields n of them. Both consume
    the same underlying streams in the same order.
    """

    def __init__(self, desc, seed):
        self.desc = desc
        ss = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        main_ss, aux_ss = ss.spawn(2)
        self.rng = np.random.default_rng(main_ss)
        self.aux = np.random.default_rng(aux_ss)
        self._buf = None
        self._pos = 0
        m = desc.model
        if m == "AutocorrExp":
            a, s2 = desc.ar
            self.a = a
            self.s = np.sqrt(s2)
            self.sigma = np.sqrt(s2 * (1 - a * a))
            self.z = self.rng.normal(0.0, self.s)   # stationary start
        elif m == "ModulatedExp":
            _, a, sigma2 = desc.mod
            self.a = a
            self.sigma = np.sqrt(sigma2)
            s2 = sigma2 / (1 - a * a)
            self.s = np.sqrt(s2)
            self.A = desc.rate * np.exp(s2 / 2.0)
            self.z = self.rng.normal(0.0, self.s)
        elif m == "OnOff":
            on_min, on_max, off_min, off_max = desc.on_off
            mean_on = (on_min + on_max) / 2.0
            mean_off = (off_min + off_max) / 2.0
            self.lam_on = desc.rate * (mean_on + mean_off) / mean_on
            self.t = 0.0                            # arrival-clock time
            self.on_end = self.aux.uniform(on_min, on_max)
        elif m not in ("Poisson", "CBR"):
            raise ValueError(f"unknown traffic model {m!r}")

    def block(self, n):
        """Next n inter-arrival times as a float64 array."""
        d = self.desc
        m = d.model
        if d.rate == 0:
            return np.full(n, np.inf)
        if m == "Poisson":
            return self.rng.exponential(1.0 / d.rate, n)
        if m == "CBR":
            return np.full(n, 1.0 / d.rate)
        if m == "AutocorrExp":
            z = _ar1_block(self.a, self.sigma, self.z, self.rng, n)
            self.z = z[-1]
            return _gauss_to_exp(z, self.s, d.rate)
        if m == "ModulatedExp":
            z = _ar1_block(self.a, self.sigma, self.z, self.rng, n)
            self.z = z[-1]
            return self.aux.exponential(1.0, n) / (self.A * np.exp(z))
        return self._onoff_block(n)

    def _onoff_block(self, n):
        on_min, on_max, off_min, off_max = self.desc.on_off
        raw = self.rng.exponential(1.0 / self.lam_on, n)
        out = np.empty(n)
        t = self.t
        on_end = self.on_end
        for i in range(n):
            r = raw[i]
            gap = 0.0
            # carry the (memoryless) residual across Off periods
            while t + r > on_end:
                r -= on_end - t
                off = self.aux.uniform(off_min, off_max)
                gap += (on_end - t) + off
                t = on_end + off
                on_end = t + self.aux.uniform(on_min, on_max)
            t += r
            out[i] = gap + r
        self.t = t
        self.on_end = on_end
        return out

    def next(self):
        if self._buf is None or self._pos >= len(self._buf):
            self._buf = self.block(_CHUNK)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


def next_interarrival(desc, state):
    """Functional entry point: returns (delta, state); state is advanced."""
    if state is None:
        raise ValueError("state must be initialized with TrafficState")
    return state.next(), state


def make_state(desc, seed):
    return TrafficState(desc, seed)


# ---------------------------------------------------------------------------
# empirical statistics (validation support)

def empirical_stats(deltas, lags=(1,)):
    """Mean rate, squared coefficient of variation, lag-k autocorrelations.

    Standard estimators: cv2 uses the unbiased variance; autocorrelation is
    the sample autocovariance over the sample variance.
    """
    x = np.asarray(deltas, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 inter-arrivals")
    mean = x.mean()
    var = x.var(ddof=1)
    stats = {"mean_rate": 1.0 / mean, "cv2": var / mean ** 2,
             "autocorr": {}}
    xc = x - mean
    denom = np.dot(xc, xc)
    for k in lags:
        if k >= x.size:
            stats["autocorr"][k] = np.nan
        else:
            stats["autocorr"][k] = float(np.dot(xc[:-k], xc[k:]) / denom)
    return stats


# ---------------------------------------------------------------------------
# fixed-length descriptor encoding (consumed by the GNN front end)

ENCODING_LENGTH = 10
_MODEL_INDEX = {"Poisson": 0, "CBR": 1, "OnOff": 2, "AutocorrExp": 3,
                "ModulatedExp": 4}
# numeric slots after the one-hot prefix: rate, a, s2, A, on_frac
NUMERIC_SLOTS = ("rate", "a", "s2", "A", "on_frac")


def descriptor_numeric(desc):
    """Raw numeric feature values (zeros for slots the model does not use)."""
    rate = desc.rate
    a = s2 = A = on_frac = 0.0
    if desc.model == "AutocorrExp":
        a, s2 = desc.ar
    elif desc.model == "ModulatedExp":
        _, a, sigma2 = desc.mod
        s2 = sigma2 / (1 - a * a)
        A = rate * np.exp(s2 / 2.0)
    elif desc.model == "OnOff":
        on_min, on_max, off_min, off_max = desc.on_off
        mean_on = (on_min + on_max) / 2.0
        mean_off = (off_min + off_max) / 2.0
        on_frac = mean_on / (mean_on + mean_off)
    return {"rate": rate, "a": a, "s2": s2, "A": A, "on_frac": on_frac}


def encode_descriptor(desc, normalizers=None):
    """10-slot vector: one-hot(5 models) + (rate, a, s2, A, on_frac).

    normalizers maps slot name -> (lo, hi) min-max constants from the
    training set; None leaves the raw values (useful for tests).
    """
    vec = np.zeros(ENCODING_LENGTH)
    vec[_MODEL_INDEX[desc.model]] = 1.0
    num = descriptor_numeric(desc)
    for j, name in enumerate(NUMERIC_SLOTS):
        v = num[name]
        if normalizers is not None and name in normalizers:
            lo, hi = normalizers[name]
            v = (v - lo) / (hi - lo) if hi > lo else 0.0
        vec[5 + j] = v
    return vec
