"""Bravais lattices, plane-wave bases, periodic and supercell fields.

Conventions used throughout the package:

* Fourier coefficients are cell averages,
      c(G) = |Omega|^{-1} int_Omega exp(-i G.x) f(x) dx,
  so a field is f(x) = sum_G c(G) exp(i G.x) and Parseval reads
  int_Omega |f|^2 = |Omega| sum_G |c(G)|^2.
* The supercell Fourier transform is fhat(k) = int exp(-i k.x) f(x) dx
  (plain integral, no 2 pi normalization), under which the Bloch fiber
  identity int_Omega f_k = fhat(k) holds exactly on the discrete grid.
* Bloch fibers follow f_k(x) = sum_t exp(-i k.(x+t)) f(x+t); fibers are
  lattice-periodic and the inverse transform is the average over the
  k-grid of exp(i k x) f_k(x).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Lattice",
    "PlaneWaveBasis",
    "PeriodicField",
    "SupercellField",
    "reciprocal_lattice",
    "monkhorst_pack",
    "bloch_decompose",
    "bloch_reconstruct",
    "low_momentum_project",
    "rescale_field",
    "apply_inverse_laplacian",
]

MEAN_TOL = 1e-10


class LatticeError(ValueError):
    pass


class SolvabilityError(ValueError):
    """Poisson right-hand side has a nonzero cell mean (charge imbalance)."""


def reciprocal_lattice(basis):
    """Reciprocal basis vectors satisfying w_i . wstar_j = 2 pi delta_ij.

    Args:
        basis: (d, d) array, lattice vectors as rows.

    Returns:
        (d, d) array, reciprocal vectors as rows (2 pi inverse-transpose).
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    d = basis.shape[0]
    if basis.shape != (d, d):
        raise LatticeError(f"basis must be square, got shape {basis.shape}")
    det = np.linalg.det(basis)
    if abs(det) < 1e-14 * max(1.0, np.abs(basis).max() ** d):
        raise LatticeError("degenerate lattice: basis vectors are linearly dependent")
    return 2.0 * np.pi * np.linalg.inv(basis).T


@dataclass(frozen=True)
class Lattice:
    """Bravais lattice with its reciprocal basis and cell volume."""

    basis: np.ndarray  # (d, d), rows are lattice vectors

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise LatticeError("lattice basis must be a d x d matrix")
        if basis.shape[0] not in (1, 2, 3):
            raise LatticeError("dimension must be 1, 2 or 3")
        basis = basis.copy()
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def reciprocal(self) -> np.ndarray:
        return reciprocal_lattice(self.basis)

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    def supercell(self, factors) -> "Lattice":
        """Integer enlargement: row i scaled by factors[i] (>= 1)."""
        factors = np.atleast_1d(np.asarray(factors, dtype=int))
        if factors.size == 1:
            factors = np.full(self.d, int(factors.ravel()[0]))
        if factors.shape != (self.d,) or np.any(factors < 1):
            raise LatticeError("supercell factors must be positive integers per axis")
        return Lattice(self.basis * factors[:, None])


def _fast_grid_size(n):
    """Smallest 5-smooth integer >= n (FFT-friendly)."""
    m = int(n)
    while True:
        k = m
        for p in (2, 3, 5):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 1


class PlaneWaveBasis:
    """Energy-cutoff plane-wave set on a lattice, with its FFT grid.

    G-vectors are all reciprocal-lattice points with |G|^2 <= 2 E_cut
    (boundary shell included, which keeps the set closed under G -> -G),
    ordered by |G|^2 then by integer coordinates; G = 0 is index 0.
    The FFT grid is chosen alias-free for quadratic products
    (size >= 4 n_max + 1 per axis, above the 2 n_max + 1 minimum needed
    to represent the basis itself).
    """

    def __init__(self, lattice: Lattice, ecut: float, fft_shape=None):
        if ecut <= 0:
            raise ValueError("energy cutoff must be positive")
        self.lattice = lattice
        self.ecut = float(ecut)
        wstar = lattice.reciprocal
        d = lattice.d

        gmax2 = 2.0 * self.ecut
        # bounding box: |n_i| <= sqrt(2 ecut) / (shortest height of wstar)
        inv_norms = np.linalg.norm(np.linalg.inv(wstar), axis=0)
        nmax = np.maximum(1, np.ceil(np.sqrt(gmax2) * inv_norms).astype(int))
        ints, norms2 = [], []
        for n in itertools.product(*(range(-m, m + 1) for m in nmax)):
            g = np.asarray(n, dtype=float) @ wstar
            g2 = float(g @ g)
            if g2 <= gmax2 * (1.0 + 1e-12):
                ints.append(n)
                norms2.append(g2)
        order = sorted(range(len(ints)), key=lambda i: (norms2[i], ints[i]))
        self.g_ints = np.array([ints[i] for i in order], dtype=int)
        self.g_cart = self.g_ints.astype(float) @ wstar
        self.g_norm2 = np.einsum("ij,ij->i", self.g_cart, self.g_cart)
        self.n_pw = len(self.g_ints)

        self._index = {tuple(n): i for i, n in enumerate(self.g_ints)}
        self._neg_index = np.array(
            [self._index.get(tuple(-n), -1) for n in self.g_ints], dtype=int
        )

        per_axis_max = np.abs(self.g_ints).max(axis=0)
        if fft_shape is None:
            fft_shape = tuple(_fast_grid_size(4 * m + 1) for m in per_axis_max)
        fft_shape = tuple(int(s) for s in fft_shape)
        if any(s < 2 * m + 1 for s, m in zip(fft_shape, per_axis_max)):
            raise ValueError("fft grid too small to hold the G-set without aliasing")
        self.fft_shape = fft_shape
        # flat positions of each G in the FFT array
        idx = [np.mod(self.g_ints[:, ax], fft_shape[ax]) for ax in range(d)]
        self._fft_pos = np.ravel_multi_index(idx, fft_shape)

    @property
    def d(self) -> int:
        return self.lattice.d

    def index_of(self, g_int):
        """Index of an integer G-vector, or -1 if outside the cutoff set."""
        return self._index.get(tuple(int(x) for x in np.atleast_1d(g_int)), -1)

    @property
    def negation_index(self):
        """Permutation mapping each G to -G.

        Cutoff-ball bases are always closed under negation; the internal
        fiber bases restricted to an even per-cell grid may carry a -1
        sentinel at the unmatched asymmetric edge modes.
        """
        return self._neg_index

    def kinetic_diagonal(self, k=None):
        """|G + k|^2 for all G (k cartesian, defaults to 0)."""
        if k is None:
            return self.g_norm2.copy()
        k = np.atleast_1d(np.asarray(k, dtype=float))
        gk = self.g_cart + k[None, :]
        return np.einsum("ij,ij->i", gk, gk)

    def coeffs_to_grid(self, coeffs):
        arr = np.zeros(self.fft_shape, dtype=complex)
        arr.flat[self._fft_pos] = coeffs
        return np.fft.ifftn(arr) * np.prod(self.fft_shape)

    def grid_to_coeffs(self, values):
        arr = np.fft.fftn(np.asarray(values, dtype=complex)) / np.prod(self.fft_shape)
        return arr.flat[self._fft_pos].copy()

    def grid_points(self):
        """Real-space grid points, shape fft_shape + (d,)."""
        fracs = np.meshgrid(
            *(np.arange(s) / s for s in self.fft_shape), indexing="ij"
        )
        frac = np.stack(fracs, axis=-1)
        return frac @ self.lattice.basis


class PeriodicField:
    """Lattice-periodic function stored as plane-wave coefficients."""

    def __init__(self, basis: PlaneWaveBasis, coeffs, realness=None):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (basis.n_pw,):
            raise ValueError(
                f"coefficient shape {coeffs.shape} does not match basis ({basis.n_pw},)"
            )
        self.basis = basis
        self.coeffs = coeffs
        if realness is None:
            realness = self._hermitian_deviation() < 1e-12 * max(
                1.0, np.abs(coeffs).max()
            )
        self.realness = bool(realness)

    def _hermitian_deviation(self):
        neg = self.basis.negation_index
        ok = neg >= 0
        dev = 0.0
        if ok.any():
            dev = float(
                np.abs(np.conj(self.coeffs[neg[ok]]) - self.coeffs[ok]).max()
            )
        if (~ok).any():
            dev = max(dev, float(np.abs(self.coeffs[~ok]).max()))
        return dev

    @classmethod
    def from_grid(cls, basis: PlaneWaveBasis, values):
        values = np.asarray(values)
        return cls(basis, basis.grid_to_coeffs(values), realness=np.isrealobj(values))

    @classmethod
    def from_callable(cls, basis: PlaneWaveBasis, func):
        pts = basis.grid_points()
        vals = np.asarray(func(pts[..., 0]) if basis.d == 1 else func(pts))
        return cls.from_grid(basis, vals)

    @classmethod
    def zeros(cls, basis: PlaneWaveBasis):
        return cls(basis, np.zeros(basis.n_pw, dtype=complex), realness=True)

    def values(self):
        """Real-space samples on the FFT grid."""
        grid = self.basis.coeffs_to_grid(self.coeffs)
        return grid.real if self.realness else grid

    @property
    def mean(self):
        m = self.coeffs[0]
        return m.real if self.realness else m

    def l2_norm(self):
        """L^2_per norm, sqrt(int_Omega |f|^2)."""
        return float(
            np.sqrt(self.basis.lattice.volume * np.sum(np.abs(self.coeffs) ** 2))
        )

    def sobolev_norm(self, order=2):
        """H^s_per norm with multiplier (1 + |G|^2)^s."""
        w = (1.0 + self.basis.g_norm2) ** order
        return float(
            np.sqrt(self.basis.lattice.volume * np.sum(w * np.abs(self.coeffs) ** 2))
        )

    def integral(self):
        """int_Omega f."""
        return self.mean * self.basis.lattice.volume

    def conj(self):
        neg = self.basis.negation_index
        if np.any((neg < 0) & (np.abs(self.coeffs) > 0)):
            raise ValueError(
                "conjugate undefined: nonzero modes without negation partners"
            )
        safe = np.where(neg >= 0, neg, 0)
        out = np.where(neg >= 0, np.conj(self.coeffs[safe]), 0.0)
        return PeriodicField(self.basis, out, realness=self.realness)

    def __add__(self, other):
        self._check(other)
        return PeriodicField(
            self.basis,
            self.coeffs + other.coeffs,
            realness=self.realness and other.realness,
        )

    def __sub__(self, other):
        self._check(other)
        return PeriodicField(
            self.basis,
            self.coeffs - other.coeffs,
            realness=self.realness and other.realness,
        )

    def __mul__(self, scalar):
        s = complex(scalar)
        real = self.realness and s.imag == 0.0
        return PeriodicField(self.basis, self.coeffs * s, realness=real)

    __rmul__ = __mul__

    def _check(self, other):
        if not isinstance(other, PeriodicField) or other.basis is not self.basis:
            if not isinstance(other, PeriodicField) or (
                other.basis.n_pw != self.basis.n_pw
                or not np.array_equal(other.basis.g_ints, self.basis.g_ints)
            ):
                raise ValueError("fields live on different plane-wave bases")


def inner(f: PeriodicField, g: PeriodicField):
    """L^2_per inner product int_Omega conj(f) g."""
    f._check(g)
    return f.basis.lattice.volume * np.vdot(f.coeffs, g.coeffs)


def transform(field: PeriodicField, direction: str):
    """Round-trippable change of representation for a periodic field.

    "to_grid" returns the real-space samples on the basis FFT grid;
    "to_coeffs" returns the plane-wave coefficients. Forward followed by
    backward is the identity to round-off, and the grid mean square
    equals |Omega| times the coefficient sum of squares (cell-average
    normalization).
    """
    if direction == "to_grid":
        return field.values()
    if direction == "to_coeffs":
        return field.coeffs.copy()
    raise ValueError("direction must be 'to_grid' or 'to_coeffs'")


class SupercellField:
    """Function on an N-fold supercell stored on its FFT grid.

    The supercell lattice is an integer multiple of the micro lattice;
    plane-wave indices on the supercell are m with wavevectors
    Q = m @ (Wstar / N) so every Q splits uniquely as G + k with G a
    micro reciprocal vector and k on the N^d fractional k-grid.
    """

    def __init__(self, micro: Lattice, factors, values):
        factors = np.atleast_1d(np.asarray(factors, dtype=int))
        if factors.size == 1:
            factors = np.full(micro.d, int(factors.ravel()[0]))
        if np.any(factors < 1):
            raise LatticeError("supercell factors must be >= 1")
        self.micro = micro
        self.factors = factors
        self.supercell = micro.supercell(factors)
        values = np.asarray(values)
        self.values = values.astype(complex) if np.iscomplexobj(values) else values.astype(float)
        self.shape = self.values.shape
        if len(self.shape) != micro.d:
            raise ValueError("value grid dimensionality does not match the lattice")
        for s, n in zip(self.shape, factors):
            if s % n != 0:
                raise ValueError("grid not commensurate with the supercell factors")

    @classmethod
    def zeros(cls, micro: Lattice, factors, per_cell_shape):
        factors = np.atleast_1d(np.asarray(factors, dtype=int))
        if factors.size == 1:
            factors = np.full(micro.d, int(factors.ravel()[0]))
        shape = tuple(int(s * n) for s, n in zip(per_cell_shape, factors))
        return cls(micro, factors, np.zeros(shape))

    @classmethod
    def from_periodic(cls, field: PeriodicField, factors):
        """Tile a micro-periodic field over the supercell grid."""
        vals = field.values()
        factors = np.atleast_1d(np.asarray(factors, dtype=int))
        if factors.size == 1:
            factors = np.full(field.basis.d, int(factors.ravel()[0]))
        tiled = np.tile(vals, tuple(factors))
        return cls(field.basis.lattice, factors, tiled)

    @property
    def d(self):
        return self.micro.d

    @property
    def volume(self):
        return self.supercell.volume

    def copy_with(self, values):
        return SupercellField(self.micro, self.factors, values)

    def coeffs(self):
        """Supercell cell-average Fourier coefficients on the full FFT grid."""
        return np.fft.fftn(np.asarray(self.values, dtype=complex)) / np.prod(self.shape)

    @classmethod
    def from_coeffs(cls, micro, factors, coeffs, real=True):
        vals = np.fft.ifftn(coeffs) * np.prod(coeffs.shape)
        if real:
            vals = vals.real
        return cls(micro, factors, vals)

    def wavevectors(self):
        """Cartesian wavevector Q for every FFT mode, shape + (d,)."""
        wstar_super = self.supercell.reciprocal
        freqs = np.meshgrid(
            *(np.fft.fftfreq(s, 1.0 / s) for s in self.shape), indexing="ij"
        )
        m = np.stack(freqs, axis=-1)
        return m @ wstar_super

    def grid_points(self):
        fracs = np.meshgrid(*(np.arange(s) / s for s in self.shape), indexing="ij")
        frac = np.stack(fracs, axis=-1)
        return frac @ self.supercell.basis

    def fourier(self, k):
        """fhat(k) = int exp(-i k.x) f(x) dx at one supercell wavevector."""
        x = self.grid_points()
        phase = np.exp(-1j * (x @ np.atleast_1d(np.asarray(k, dtype=float))))
        w = self.volume / np.prod(self.shape)
        return w * np.sum(phase * self.values)

    def l2_norm(self):
        w = self.volume / np.prod(self.shape)
        return float(np.sqrt(w * np.sum(np.abs(self.values) ** 2)))

    def h1_seminorm(self):
        q = self.wavevectors()
        q2 = np.einsum("...i,...i->...", q, q)
        c = self.coeffs()
        return float(np.sqrt(self.volume * np.sum(q2 * np.abs(c) ** 2)))

    def mean(self):
        return complex(np.mean(self.values)) if np.iscomplexobj(self.values) else float(np.mean(self.values))

    def __add__(self, other):
        return self.copy_with(self.values + other.values)

    def __sub__(self, other):
        return self.copy_with(self.values - other.values)

    def __mul__(self, s):
        return self.copy_with(self.values * s)

    __rmul__ = __mul__


def monkhorst_pack(lattice: Lattice, nk):
    """Uniform fractional k-grid including k = 0, mapped into [-1/2, 1/2).

    Returns cartesian k-points, shape (prod(nk), d). The point k = 0 is
    always present (required for the 0-fiber quantities).
    """
    nk = np.atleast_1d(np.asarray(nk, dtype=int))
    if nk.size == 1:
        nk = np.full(lattice.d, int(nk.ravel()[0]))
    wstar = lattice.reciprocal
    axes = []
    for n in nk:
        j = np.arange(n)
        frac = j / n
        frac = np.where(frac >= 0.5, frac - 1.0, frac)
        axes.append(frac)
    mesh = np.meshgrid(*axes, indexing="ij")
    frac = np.stack([m.ravel() for m in mesh], axis=-1)
    return frac @ wstar


def bloch_decompose(f: SupercellField):
    """Bloch-Floquet fibers of a supercell field.

    Returns (k_points, fibers): the N^d fractional k-points of the
    supercell grid (cartesian) and, per k, the periodic fiber f_k with
    micro coefficients c_k(G) = N^d chat(G + k).

    The fibers use a plane-wave basis covering every micro G hit by the
    supercell FFT grid, so reconstruction is exact to round-off.
    """
    micro = f.micro
    d = f.d
    factors = f.factors
    chat = f.coeffs()

    per_shape = tuple(s // n for s, n in zip(f.shape, factors))
    basis = _fiber_basis(micro, per_shape)
    nfac = int(np.prod(factors))

    wstar = micro.reciprocal
    kfracs = []
    for n in factors:
        j = np.arange(n)
        frac = j / n
        frac = np.where(frac >= 0.5, frac - 1.0, frac)
        kfracs.append(frac)
    mesh = np.meshgrid(*kfracs, indexing="ij")
    kfrac = np.stack([m.ravel() for m in mesh], axis=-1)
    kkart = kfrac @ wstar

    # supercell FFT integer index of G + k: m = G * N + j with the centered
    # fiber offsets j matching the k-grid fractions in [-1/2, 1/2)
    joffs = []
    for n in factors:
        j = np.arange(n)
        joffs.append(np.where(j / n >= 0.5, j - n, j))
    jmesh = np.meshgrid(*joffs, indexing="ij")
    jlist = np.stack([m.ravel() for m in jmesh], axis=-1)

    fibers = []
    for j in jlist:
        m = basis.g_ints * factors[None, :] + j[None, :]
        pos = np.ravel_multi_index(
            [np.mod(m[:, ax], f.shape[ax]) for ax in range(d)], f.shape
        )
        coeffs = nfac * chat.flat[pos]
        fibers.append(PeriodicField(basis, coeffs, realness=False))
    return kkart, fibers


def _fiber_basis(micro: Lattice, per_shape):
    """Plane-wave basis holding all micro G representable on per_shape."""
    # cutoff large enough to include every |G| with indices in the grid range
    wstar = micro.reciprocal
    corners = []
    for n in itertools.product(*(( -(s // 2), (s - 1) // 2) for s in per_shape)):
        corners.append(np.asarray(n, dtype=float) @ wstar)
    gmax2 = max(float(c @ c) for c in corners)
    basis = PlaneWaveBasis(micro, ecut=0.5 * gmax2, fft_shape=None)
    # restrict to G representable on per_shape per axis
    keep = np.ones(basis.n_pw, dtype=bool)
    for ax, s in enumerate(per_shape):
        lo, hi = -(s // 2), (s - 1) // 2
        keep &= (basis.g_ints[:, ax] >= lo) & (basis.g_ints[:, ax] <= hi)
    if keep.all():
        return basis
    sub = PlaneWaveBasis.__new__(PlaneWaveBasis)
    sub.lattice = basis.lattice
    sub.ecut = basis.ecut
    sub.g_ints = basis.g_ints[keep]
    sub.g_cart = basis.g_cart[keep]
    sub.g_norm2 = basis.g_norm2[keep]
    sub.n_pw = int(keep.sum())
    sub._index = {tuple(n): i for i, n in enumerate(sub.g_ints)}
    sub._neg_index = np.array(
        [sub._index.get(tuple(-n), -1) for n in sub.g_ints], dtype=int
    )
    sub.fft_shape = basis.fft_shape
    idx = [np.mod(sub.g_ints[:, ax], sub.fft_shape[ax]) for ax in range(basis.d)]
    sub._fft_pos = np.ravel_multi_index(idx, sub.fft_shape)
    return sub


def _fiber_values_on(fib: PeriodicField, per_shape):
    """Synthesize a fiber on an arbitrary commensurate per-cell grid."""
    basis = fib.basis
    for ax, s in enumerate(per_shape):
        lo, hi = -(s // 2), (s - 1) // 2
        g = basis.g_ints[:, ax]
        if g.min() < lo or g.max() > hi:
            raise ValueError("fiber holds modes beyond the target grid")
    arr = np.zeros(per_shape, dtype=complex)
    idx = [np.mod(basis.g_ints[:, ax], per_shape[ax]) for ax in range(basis.d)]
    arr.flat[np.ravel_multi_index(idx, per_shape)] = fib.coeffs
    return np.fft.ifftn(arr) * np.prod(per_shape)


def bloch_reconstruct(k_points, fibers, micro: Lattice, factors, shape):
    """Inverse Bloch transform: average of exp(i k x) f_k over the k-grid."""
    factors = np.atleast_1d(np.asarray(factors, dtype=int))
    if factors.size == 1:
        factors = np.full(micro.d, int(factors.ravel()[0]))
    out = SupercellField(micro, factors, np.zeros(shape, dtype=complex))
    x = out.grid_points()
    tiles = tuple(factors)
    per_shape = tuple(int(s // n) for s, n in zip(shape, factors))
    acc = np.zeros(shape, dtype=complex)
    for k, fib in zip(k_points, fibers):
        vals = np.tile(_fiber_values_on(fib, per_shape), tiles)
        phase = np.exp(1j * (x @ np.atleast_1d(k)))
        acc += phase * vals
    acc /= len(k_points)
    return out.copy_with(acc)


def low_momentum_project(f: SupercellField, r: float, complement=False):
    """Zero all Fourier modes with |Q| > r (or keep only those, if complement).

    Pure spectral filter: idempotent, self-adjoint, and P_r + bar P_r = 1.
    """
    q = f.wavevectors()
    q2 = np.einsum("...i,...i->...", q, q)
    mask = q2 <= r * r * (1.0 + 1e-12)
    if complement:
        mask = ~mask
    c = f.coeffs() * mask
    real = not np.iscomplexobj(f.values)
    return SupercellField.from_coeffs(f.micro, f.factors, c, real=real)


def rescale_field(f: SupercellField, delta: float, direction: str, scaling: str = "l2"):
    """Unitary micro/macro rescaling U_delta and its named variants.

    U_delta: f(x) -> delta^{-d/2} f(x / delta) maps the microscopic scale
    to the macroscopic one; grids map one-to-one (points are relabelled
    x = delta y) so only the amplitude changes.

    scaling:
        "l2"        amplitude delta^{-d/2}   (unitary in L^2)
        "charge"    amplitude delta^{-d}     (delta^{-d/2} U_delta; preserves total charge)
        "potential" amplitude delta^{-1}     (delta^{1/2} U_delta when d = 3)
    """
    d = f.d
    if direction not in ("micro_to_macro", "macro_to_micro"):
        raise ValueError("direction must be micro_to_macro or macro_to_micro")
    inv = 1.0 / delta
    if delta <= 0 or abs(inv - round(inv)) > 1e-9:
        raise ValueError(f"non-commensurate delta = {delta}: need 1/N")
    amp = {
        "l2": delta ** (-0.5 * d),
        "charge": delta ** (-float(d)),
        "potential": delta ** (-1.0),
    }[scaling]
    if direction == "macro_to_micro":
        amp = 1.0 / amp
        geom = 1.0 / delta
    else:
        geom = delta
    # commensurability: the rescaled lattice must still be an integer
    # supercell of a scaled micro lattice; we keep the micro lattice and
    # scale the embedding, so only the bookkeeping lattice changes.
    micro = Lattice(f.micro.basis * geom)
    return SupercellField(micro, f.factors, amp * f.values)


def apply_inverse_laplacian(f, tol_mean: float = MEAN_TOL):
    """Solve -Delta phi = f spectrally; requires a mean-zero right side.

    Raises SolvabilityError when |mean f| > tol_mean: the periodic
    Poisson equation is solvable only for charge-balanced sources
    (the per-cell charge conservation constraint).
    """
    if isinstance(f, PeriodicField):
        if abs(f.coeffs[0]) > tol_mean:
            raise SolvabilityError(
                f"nonzero mean {f.coeffs[0]:.3e} violates the per-cell "
                "charge-balance solvability condition"
            )
        out = f.coeffs.copy()
        out[0] = 0.0
        g2 = f.basis.g_norm2
        out[1:] = out[1:] / g2[1:]
        return PeriodicField(f.basis, out, realness=f.realness)
    if isinstance(f, SupercellField):
        c = f.coeffs()
        if abs(c.flat[0]) > tol_mean:
            raise SolvabilityError(
                f"nonzero mean {c.flat[0]:.3e} violates the per-cell "
                "charge-balance solvability condition"
            )
        q = f.wavevectors()
        q2 = np.einsum("...i,...i->...", q, q)
        q2.flat[0] = 1.0
        out = c / q2
        out.flat[0] = 0.0
        real = not np.iscomplexobj(f.values)
        return SupercellField.from_coeffs(f.micro, f.factors, out, real=real)
    raise TypeError("expected a PeriodicField or SupercellField")
