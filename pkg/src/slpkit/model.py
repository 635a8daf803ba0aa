"""Domain model for the MU-MISO downlink: channels, PSK symbols, and the
complex-to-real lifting that turns the strict-phase precoding problem into a
real-valued QP with K equality and K inequality constraints.

Conventions: channel entries are CN(0,1) (real/imag parts N(0,1/2) each); a
PSK constellation of order M sits at angles 2*pi*m/M + pi/M.  The lifted data
for user i is the row Upsilon_i = [Re(h~_i); Im(h~_i)] of length 2N, with
h~_i the symbol-rotated channel.  The skew map Omega = [[0,-I],[I,0]] links
the real and imaginary parts of the received symbol:

    Re(h~_i^T v) = Upsilon_i^T v1,   Im(h~_i^T v) = Upsilon_i^T Omega v1,

where v1 = [Re(v); -Im(v)] is the real optimization variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChannelSet:
    """K x N complex downlink channel gains."""

    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=complex)
        if self.gains.ndim != 2 or min(self.gains.shape) < 1:
            raise ValueError("gains must be a K x N matrix with K,N >= 1")
        if not np.all(np.isfinite(self.gains.view(float))):
            raise ValueError("channel gains must be finite")

    @property
    def K(self) -> int:
        return self.gains.shape[0]

    @property
    def N(self) -> int:
        return self.gains.shape[1]


@dataclass
class PskSymbols:
    """PSK data symbols, one phase per user, drawn from the order-M ring."""

    order: int
    phases: np.ndarray

    def __post_init__(self):
        if self.order < 2 or self.order & (self.order - 1):
            raise ValueError("PSK order must be a power of two >= 2")
        self.phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        ring = constellation_phases(self.order)
        # each phase must sit on the ring up to 2*pi wrap
        dist = np.abs(np.exp(1j * self.phases)[:, None] - np.exp(1j * ring)[None, :])
        if not np.all(dist.min(axis=1) < 1e-9):
            raise ValueError("phases must lie on the order-%d constellation" % self.order)

    @property
    def symbols(self) -> np.ndarray:
        return np.exp(1j * self.phases)


def constellation_phases(order: int) -> np.ndarray:
    """Angles of the order-M PSK ring, offset by pi/M (QPSK at +-pi/4, +-3pi/4)."""
    m = np.arange(order)
    return 2.0 * np.pi * m / order + np.pi / order


def draw_symbols(order: int, count: int, rng: np.random.Generator) -> PskSymbols:
    """Draw one uniform PSK symbol per user."""
    ring = constellation_phases(order)
    return PskSymbols(order, ring[rng.integers(0, order, count)])


@dataclass
class LiftedProblem:
    """Real-lifted problem data: rows Upsilon_i, SINR targets, noise power.

    The cached thresholds g_i = sqrt(Gamma_i * N0) are the right-hand sides
    of the inequality constraints Upsilon_i^T v1 >= g_i.
    """

    upsilon: np.ndarray
    gamma: np.ndarray
    noise_power: float
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if self.upsilon.ndim != 2 or self.upsilon.shape[1] % 2:
            raise ValueError("upsilon must be K x 2N")
        if self.upsilon.shape[0] != self.gamma.shape[0]:
            raise ValueError("gamma length must match the number of users")
        if not np.all(np.isfinite(self.upsilon)):
            raise ValueError("upsilon must be finite")
        if np.any(self.gamma <= 0) or self.noise_power <= 0:
            raise ValueError("SINR targets and noise power must be positive")
        self.g = np.sqrt(self.gamma * self.noise_power)

    @property
    def K(self) -> int:
        return self.upsilon.shape[0]

    @property
    def N(self) -> int:
        return self.upsilon.shape[1] // 2


@dataclass
class RealPrecoder:
    """Real 2N-vector precoder; the complex precoder is a view of it."""

    v1: np.ndarray

    def __post_init__(self):
        self.v1 = np.asarray(self.v1, dtype=float)
        if self.v1.ndim != 1 or self.v1.size % 2:
            raise ValueError("v1 must be a real vector of even length")
        if not np.all(np.isfinite(self.v1)):
            raise ValueError("v1 must be finite")

    @property
    def power(self) -> float:
        return float(self.v1 @ self.v1)

    def as_complex(self) -> np.ndarray:
        return real_to_complex(self.v1)


def draw_channels(K: int, N: int, seed: int) -> ChannelSet:
    """Draw K x N i.i.d. CN(0,1) channel gains, deterministic in the seed."""
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2.0)
    return ChannelSet(h)


def rotate_and_lift(ch: ChannelSet, sym: PskSymbols, gamma, n0: float,
                    literal_sum: bool = False) -> LiftedProblem:
    """Rotate each channel by its data symbol and stack [Re; Im] rows.

    The default rotates user i by e^{j(phi_1 - phi_i)} so that a single
    composite precoder serves every user's symbol.  `literal_sum` instead
    multiplies by sum_k e^{j(phi_k - phi_i)}, kept only for side-by-side
    comparison; it can null the channel when the symbol sum vanishes.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if np.any(gamma <= 0) or n0 <= 0:
        raise ValueError("SINR targets and noise power must be positive")
    if sym.phases.shape[0] != ch.K:
        raise ValueError("need one symbol phase per user")
    if literal_sum:
        rot = np.exp(1j * (sym.phases[:, None] - sym.phases[None, :])).sum(axis=0)
    else:
        rot = np.exp(1j * (sym.phases[0] - sym.phases))
    h_rot = ch.gains * rot[:, None]
    ups = np.hstack([h_rot.real, h_rot.imag])
    return LiftedProblem(ups, gamma, float(n0))


def apply_skew(v1: np.ndarray) -> np.ndarray:
    """Apply Omega = [[0,-I],[I,0]] without materializing it."""
    v1 = np.asarray(v1, dtype=float)
    n = v1.shape[-1]
    if n % 2:
        raise ValueError("vector length must be even")
    half = n // 2
    return np.concatenate([-v1[..., half:], v1[..., :half]], axis=-1)


def real_to_complex(v1: np.ndarray) -> np.ndarray:
    """Complex precoder from its lifted form v1 = [Re(v); -Im(v)]."""
    v1 = np.asarray(v1, dtype=float)
    half = v1.shape[-1] // 2
    return v1[..., :half] - 1j * v1[..., half:]


def complex_to_real(v: np.ndarray) -> np.ndarray:
    """Inverse lift: v -> [Re(v); -Im(v)]."""
    v = np.asarray(v, dtype=complex)
    return np.concatenate([v.real, -v.imag], axis=-1)


def transmit_power(v1: np.ndarray) -> float:
    v1 = np.asarray(v1, dtype=float)
    return float(v1 @ v1)


def re_margin(lp: LiftedProblem, v1: np.ndarray, i: int) -> float:
    """Signed slack of user i's useful-power constraint: Upsilon_i^T v1 - g_i."""
    return float(lp.upsilon[i] @ np.asarray(v1, dtype=float) - lp.g[i])


def im_residual(lp: LiftedProblem, v1: np.ndarray, i: int) -> float:
    """User i's phase-alignment residual Upsilon_i^T Omega v1 (zero when strict)."""
    return float(lp.upsilon[i] @ apply_skew(np.asarray(v1, dtype=float)))


def margins(lp: LiftedProblem, v1: np.ndarray) -> np.ndarray:
    """All inequality slacks Upsilon v1 - g at once."""
    return lp.upsilon @ np.asarray(v1, dtype=float) - lp.g


def eq_residuals(lp: LiftedProblem, v1: np.ndarray) -> np.ndarray:
    """All equality residuals Upsilon_i^T Omega v1 at once."""
    return lp.upsilon @ apply_skew(np.asarray(v1, dtype=float))


# --- dataset records (JSON lines) -----------------------------------------

def sample_record(seed: int, K: int, N: int, order: int,
                  gamma_db_range: tuple[float, float], n0: float) -> dict:
    """Generate one dataset record from a per-record seed."""
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2.0)
    phases = constellation_phases(order)[rng.integers(0, order, K)]
    gamma_db = rng.uniform(gamma_db_range[0], gamma_db_range[1], K)
    return {
        "seed": int(seed),
        "K": int(K),
        "N": int(N),
        "h_re": h.real.tolist(),
        "h_im": h.imag.tolist(),
        "phases": phases.tolist(),
        "gamma_db": gamma_db.tolist(),
        "n0": float(n0),
    }


def record_to_problem(rec: dict, gamma_db_override: float | None = None) -> LiftedProblem:
    """Lift one dataset record; optionally force a common SINR target in dB."""
    h = np.asarray(rec["h_re"], dtype=float) + 1j * np.asarray(rec["h_im"], dtype=float)
    ch = ChannelSet(h)
    phases = np.asarray(rec["phases"], dtype=float)
    order = infer_order(phases)
    sym = PskSymbols(order, phases)
    if gamma_db_override is None:
        gamma_db = np.asarray(rec["gamma_db"], dtype=float)
    else:
        gamma_db = np.full(ch.K, float(gamma_db_override))
    gamma = 10.0 ** (gamma_db / 10.0)
    return rotate_and_lift(ch, sym, gamma, rec["n0"])


def infer_order(phases: np.ndarray) -> int:
    """Smallest power-of-two PSK order whose ring contains all phases."""
    for order in (2, 4, 8, 16, 32, 64):
        ring = np.exp(1j * constellation_phases(order))
        d = np.abs(np.exp(1j * phases)[:, None] - ring[None, :]).min(axis=1)
        if np.all(d < 1e-9):
            return order
    raise ValueError("phases do not match a supported PSK ring")


def write_dataset(path, records) -> str:
    """Write records as JSON lines; returns a sha256 fingerprint of the file."""
    import hashlib

    blob = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records).encode()
    with open(path, "wb") as f:
        f.write(blob)
    return hashlib.sha256(blob).hexdigest()


def read_dataset(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
