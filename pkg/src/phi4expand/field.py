"""Periodic scalar fields on the 2-torus in spectral and grid form.

Spectral storage convention: a field with cutoff ``N`` keeps its Fourier
coefficients in a dense complex array of shape ``(..., 2N+1, 2N+1)`` where
entry ``[n1 + N, n2 + N]`` holds the coefficient of ``exp(i n.x)``. Entries
outside the Euclidean ball ``|n| <= N`` are zero. Leading axes are batch axes.

The torus carries the normalised measure ``(2 pi)^-2 dx``, so the zero mode
is the spatial mean and ``sum |c_n|^2`` is the mean of ``g^2``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"PHI4"
SNAPSHOT_VERSION = 1


def frequencies(N):
    """Integer frequency arrays ``(n1, n2)`` on the ``(2N+1, 2N+1)`` box."""
    r = np.arange(-N, N + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    return n1, n2


def ball_mask(N):
    n1, n2 = frequencies(N)
    return n1 * n1 + n2 * n2 <= N * N


def default_grid_size(N):
    # alias-free for quartic products of a cutoff-N field
    return 4 * N + 4


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, label) -> "RngStream":
        """Child stream keyed by a label; adding labels never perturbs others."""
        return RngStream(derive_seed(self.seed, f"{self.stream_id}/{label}"), 0)


def derive_seed(root, label):
    h = hashlib.blake2b(f"{int(root)}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# reference Gaussian measures


@dataclass(frozen=True)
class ReferenceMeasure:
    """One of the three Gaussian references: ``mu``, ``mu_eps`` or ``mu_w``.

    ``mu`` has mode variance ``1/(1+|n|^2)``; ``mu_eps`` scales it by ``eps``;
    ``mu_w`` is the Hessian Gaussian at the well ``w`` with ``1/(2+|n|^2)``
    (the second derivative of the double well is 2 at both minima).
    """

    kind: str
    eps: float = 1.0
    w: int = 0

    def __post_init__(self):
        if self.kind not in ("mu", "mu_eps", "mu_w"):
            raise ValueError(f"unknown reference measure {self.kind!r}")
        if self.kind == "mu_eps" and not self.eps > 0:
            raise ValueError("mu_eps needs eps > 0")
        if self.kind == "mu_w" and self.w not in (-1, 1):
            raise ValueError("mu_w needs w in {-1, +1}")

    @classmethod
    def mu(cls):
        return cls("mu")

    @classmethod
    def mu_eps(cls, eps):
        return cls("mu_eps", eps=float(eps))

    @classmethod
    def mu_w(cls, w):
        return cls("mu_w", w=int(w))

    def mass(self):
        return 2.0 if self.kind == "mu_w" else 1.0

    def eigenvalues(self, N):
        """Precision ``lambda_n`` on the box (``inf`` outside the ball)."""
        n1, n2 = frequencies(N)
        lam = self.mass() + (n1 * n1 + n2 * n2).astype(float)
        if self.kind == "mu_eps":
            lam = lam / self.eps
        return np.where(ball_mask(N), lam, np.inf)

    def variances(self, N):
        return 1.0 / self.eigenvalues(N)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients on ``|n| <= N``; may carry leading batch axes."""

    N: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        side = 2 * self.N + 1
        if c.shape[-2:] != (side, side):
            raise ValueError(f"coeffs must end in ({side}, {side}), got {c.shape}")
        c = np.where(ball_mask(self.N), c, 0.0)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, N, batch=()):
        side = 2 * N + 1
        return cls(N, np.zeros(tuple(batch) + (side, side), dtype=np.complex128))

    @classmethod
    def constant(cls, N, value, batch=()):
        f = np.zeros(tuple(batch) + (2 * N + 1, 2 * N + 1), dtype=np.complex128)
        f[..., N, N] = value
        return cls(N, f)

    @classmethod
    def from_modes(cls, N, modes):
        """Build from ``{(n1, n2): coeff}``; conjugate partners are filled in."""
        f = np.zeros((2 * N + 1, 2 * N + 1), dtype=np.complex128)
        for (a, b), val in modes.items():
            f[a + N, b + N] = val
            f[-a + N, -b + N] = np.conj(val)
        return cls(N, f)

    @property
    def batch_shape(self):
        return self.coeffs.shape[:-2]

    def mode(self, n1, n2):
        if n1 * n1 + n2 * n2 > self.N * self.N:
            return np.zeros(self.batch_shape, dtype=np.complex128)[()]
        return self.coeffs[..., n1 + self.N, n2 + self.N]

    def __getitem__(self, idx):
        return SpectralField(self.N, self.coeffs[idx])

    def __len__(self):
        return self.coeffs.shape[0]

    def scaled(self, a):
        return SpectralField(self.N, a * self.coeffs)

    def __add__(self, other):
        if isinstance(other, SpectralField):
            N = max(self.N, other.N)
            return SpectralField(N, _pad(self.coeffs, self.N, N) + _pad(other.coeffs, other.N, N))
        return self + SpectralField.constant(self.N, other)

    def __sub__(self, other):
        return self + (other.scaled(-1.0) if isinstance(other, SpectralField) else -other)

    def is_hermitian(self, atol=1e-12):
        c = self.coeffs
        return bool(np.allclose(c, np.conj(c[..., ::-1, ::-1]), atol=atol, rtol=0))


@dataclass(frozen=True)
class GridField:
    """Real samples on the uniform ``M x M`` grid ``x_jk = 2 pi (j, k) / M``."""

    values: np.ndarray = field(repr=False)

    @property
    def M(self):
        return self.values.shape[-1]

    def mean(self):
        return self.values.mean(axis=(-2, -1))


def _pad(c, N_from, N_to):
    if N_from == N_to:
        return c
    out = np.zeros(c.shape[:-2] + (2 * N_to + 1, 2 * N_to + 1), dtype=np.complex128)
    s = N_to - N_from
    out[..., s:s + 2 * N_from + 1, s:s + 2 * N_from + 1] = c
    return out


# ---------------------------------------------------------------------------
# operations


def project(f: SpectralField, N: int) -> SpectralField:
    """Frequency projector onto ``|n| <= N``."""
    if N < 0:
        raise ValueError("cutoff must be non-negative")
    if N >= f.N:
        return f
    s = f.N - N
    sub = f.coeffs[..., s:s + 2 * N + 1, s:s + 2 * N + 1]
    return SpectralField(N, sub)


def sample_gaussian(measure: ReferenceMeasure, N: int, rng, size=None) -> SpectralField:
    """Draw from a reference Gaussian at cutoff ``N``.

    ``rng`` is an :class:`RngStream` (fresh generator per call) or a live
    ``numpy.random.Generator``. ``size`` adds a leading batch axis.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    g = standard_complex_noise(gen, N, size)
    if measure.kind == "mu_eps":
        base = g * np.sqrt(ReferenceMeasure.mu().variances(N))
        return SpectralField(N, np.sqrt(measure.eps) * base)
    return SpectralField(N, g * np.sqrt(measure.variances(N)))


def standard_complex_noise(gen, N, size=None):
    """Hermitian family ``g_n`` with ``E|g_n|^2 = 1``, real ``g_0``."""
    side = 2 * N + 1
    shape = (side, side) if size is None else (int(size), side, side)
    z = (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) * np.sqrt(0.5)
    g = (z + np.conj(z[..., ::-1, ::-1])) * np.sqrt(0.5)
    return np.where(ball_mask(N), g, 0.0)


def _check_grid(N, M):
    if M < 2 * N + 2:
        raise ValueError(f"grid size M={M} too small for cutoff N={N} (need M >= {2 * N + 2})")


def embed(coeffs, N, M):
    """Place box coefficients into an ``M x M`` FFT layout."""
    idx = np.arange(-N, N + 1) % M
    out = np.zeros(coeffs.shape[:-2] + (M, M), dtype=np.complex128)
    out[..., idx[:, None], idx[None, :]] = coeffs
    return out


def extract(fhat, N):
    M = fhat.shape[-1]
    idx = np.arange(-N, N + 1) % M
    return fhat[..., idx[:, None], idx[None, :]]


def to_grid(f: SpectralField, M: int | None = None) -> GridField:
    M = default_grid_size(f.N) if M is None else int(M)
    _check_grid(f.N, M)
    vals = np.fft.ifft2(embed(f.coeffs, f.N, M)).real * (M * M)
    return GridField(vals)


def to_spectral(g, N: int) -> SpectralField:
    vals = g.values if isinstance(g, GridField) else np.asarray(g, dtype=float)
    M = vals.shape[-1]
    _check_grid(N, M)
    fhat = np.fft.fft2(vals) / (M * M)
    return SpectralField(N, extract(fhat, N))


def shell_index(N):
    """Dyadic shell label per box entry: 0 for ``|n| <= 1``, j for ``2^(j-1) < |n| <= 2^j``."""
    n1, n2 = frequencies(N)
    r = np.sqrt(n1 * n1 + n2 * n2)
    j = np.zeros(r.shape, dtype=int)
    big = r > 1
    j[big] = np.ceil(np.log2(r[big]) - 1e-12).astype(int)
    return j


def cminus_norm(f: SpectralField, eta: float, M: int | None = None):
    """Sharp-shell proxy for the negative-regularity Hoelder-Besov norm.

    ``max_j 2^(-eta j) sup_x |Delta_j f(x)|`` with sharp annuli; the sup is
    taken on the grid.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    M = default_grid_size(f.N) if M is None else M
    shells = shell_index(f.N)
    mask = ball_mask(f.N)
    best = np.zeros(f.batch_shape)
    for j in range(int(shells[mask].max()) + 1 if f.N > 0 else 1):
        sel = mask & (shells == j)
        part = np.where(sel, f.coeffs, 0.0)
        vals = np.fft.ifft2(embed(part, f.N, M)).real * (M * M)
        sup = np.abs(vals).max(axis=(-2, -1))
        best = np.maximum(best, 2.0 ** (-eta * j) * sup)
    return best


def norm(f: SpectralField, kind: str = "L2", eta: float = 0.5, M: int | None = None):
    """``L2``, ``H1`` or ``Cminus`` norm; returns an array over batch axes."""
    c2 = np.abs(f.coeffs) ** 2
    if kind == "L2":
        return np.sqrt(c2.sum(axis=(-2, -1)))
    if kind == "H1":
        n1, n2 = frequencies(f.N)
        return np.sqrt(((1.0 + n1 * n1 + n2 * n2) * c2).sum(axis=(-2, -1)))
    if kind == "Cminus":
        return cminus_norm(f, eta, M)
    raise ValueError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# binary snapshots


def write_snapshot(path, grid, N):
    """Write ``PHI4 | u16 version | u32 N | u32 M | M*M float64 LE``."""
    vals = np.asarray(grid.values if isinstance(grid, GridField) else grid, dtype="<f8")
    if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
        raise ValueError("snapshot expects a single square grid")
    M = vals.shape[0]
    header = SNAPSHOT_MAGIC + struct.pack("<HII", SNAPSHOT_VERSION, int(N), M)
    Path(path).write_bytes(header + np.ascontiguousarray(vals).tobytes())


def read_snapshot(path):
    """Return ``(N, GridField)`` from a snapshot file."""
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a PHI4 snapshot")
    version, N, M = struct.unpack("<HII", raw[4:14])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = raw[14:]
    if len(body) != 8 * M * M:
        raise ValueError("truncated snapshot")
    vals = np.frombuffer(body, dtype="<f8").reshape(M, M).astype(np.float64)
    return N, GridField(vals)
