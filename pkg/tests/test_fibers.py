import numpy as np
import pytest

from debye_forge.fibers import (
    ContourGeometryError,
    EigensolverError,
    assemble_fiber,
    compute_bands,
    contour_quadrature,
    density_from_potential,
    diagonalize_fiber,
    spectral_gap,
)
from debye_forge.lattice import Lattice, PeriodicField, PlaneWaveBasis, monkhorst_pack
from debye_forge.occupation import OccupationModel

LAT = Lattice(np.array([[2 * np.pi]]))
BASIS = PlaneWaveBasis(LAT, ecut=50.0)
MATHIEU = PeriodicField.from_callable(BASIS, lambda x: 2.0 * np.cos(x))
ZERO = PeriodicField.zeros(BASIS)


def mathieu_reference_eigs(k, ecut, n=2):
    """Independent dense oracle: the tridiagonal Mathieu fiber at a much
    higher cutoff, built with plain numpy."""
    gmax = int(np.floor(np.sqrt(2 * ecut)))
    g = np.arange(-gmax, gmax + 1, dtype=float)
    H = np.diag((g + k) ** 2)
    off = -np.ones(len(g) - 1)
    H += np.diag(off, 1) + np.diag(off, -1)
    return np.sort(np.linalg.eigvalsh(H))[:n]


class TestAssembly:
    def test_free_gamma_diagonal(self):
        H = assemble_fiber(BASIS, ZERO, [0.0]).matrix
        assert np.abs(H - np.diag(BASIS.g_norm2)).max() == 0.0

    def test_cosine_is_tridiagonal(self):
        A = 1.5
        phi = PeriodicField.from_callable(BASIS, lambda x: 2 * A * np.cos(x))
        H = assemble_fiber(BASIS, phi, [0.0]).matrix
        order = np.argsort(BASIS.g_ints[:, 0])
        Hs = H[np.ix_(order, order)]
        assert np.allclose(np.diag(Hs, 1), -A, atol=1e-13)
        assert np.allclose(np.diag(Hs, -1), -A, atol=1e-13)
        band2 = Hs.copy()
        for off in (-1, 0, 1):
            band2 -= np.diag(np.diag(band2, off), off)
        assert np.abs(band2).max() < 1e-13

    def test_mathieu_vs_high_cutoff_oracle(self):
        basis200 = PlaneWaveBasis(LAT, ecut=200.0)
        phi = PeriodicField.from_callable(basis200, lambda x: 2.0 * np.cos(x))
        ev, _ = diagonalize_fiber(assemble_fiber(basis200, phi, [0.0]))
        ref = mathieu_reference_eigs(0.0, ecut=2000.0, n=2)
        assert np.abs(ev[:2] - ref).max() < 1e-8

    def test_out_of_zone_reduction_warns(self):
        with pytest.warns(UserWarning, match="reduced"):
            fib = assemble_fiber(BASIS, MATHIEU, [1.3])
        ref = assemble_fiber(BASIS, MATHIEU, [0.3])
        assert np.abs(fib.matrix - ref.matrix).max() < 1e-12

    def test_complex_potential_rejected(self):
        c = np.zeros(BASIS.n_pw, dtype=complex)
        c[BASIS.index_of([1])] = 1.0  # e^{ix}, not real
        with pytest.raises(ValueError):
            assemble_fiber(BASIS, PeriodicField(BASIS, c, realness=False), [0.0])

    def test_phase_conjugation_relation(self):
        # fibers at k and k + G0 coincide after relabelling G -> G + G0
        # (Bloch fibers of a periodic operator are periodic in k up to
        # the phase conjugation)
        k = np.array([0.17])
        G0 = np.array([1])
        H1 = assemble_fiber(BASIS, MATHIEU, k + G0 @ LAT.reciprocal, reduce=False).matrix
        H0 = assemble_fiber(BASIS, MATHIEU, k).matrix
        perm = np.array([BASIS.index_of(g - G0) for g in BASIS.g_ints])
        keep = perm >= 0
        sub = np.ix_(keep, keep)
        assert np.abs(H1[np.ix_(perm[keep], perm[keep])] - H0[sub]).max() < 1e-12


class TestDiagonalize:
    def test_diagonal_input_sorted(self):
        fib = assemble_fiber(BASIS, ZERO, [0.2])
        ev, U = diagonalize_fiber(fib)
        assert np.all(np.diff(ev) >= 0)
        assert np.abs(U.conj().T @ U - np.eye(BASIS.n_pw)).max() < 1e-10

    def test_reconstruction(self):
        fib = assemble_fiber(BASIS, MATHIEU, [0.11])
        ev, U = diagonalize_fiber(fib)
        H = fib.matrix
        assert np.abs(U @ np.diag(ev) @ U.conj().T - H).max() <= 1e-10 * np.abs(H).max()

    def test_free_degenerate_pair(self):
        ev, _ = diagonalize_fiber(assemble_fiber(BASIS, ZERO, [0.0]))
        # +-G give equal kinetic energies
        assert abs(ev[1] - ev[2]) < 1e-13
        assert abs(ev[1] - 1.0) < 1e-13

    def test_non_hermitian_rejected(self):
        fib = assemble_fiber(BASIS, MATHIEU, [0.0])
        fib.matrix[0, 1] += 1.0
        with pytest.raises(EigensolverError):
            diagonalize_fiber(fib)


class TestDensity:
    occ = OccupationModel(T=0.05, mu=-1.0)
    kgrid = monkhorst_pack(LAT, 8)

    def test_free_density_constant_and_value(self):
        rho = density_from_potential(ZERO, self.occ, self.kgrid, tail_tol=1.0)
        vals = rho.values()
        assert np.abs(vals - vals.mean()).max() < 1e-13
        # independent scalar oracle: |Omega|^{-1} mean_k sum_G f(|G+k|^2 + 1)
        acc = 0.0
        for k in self.kgrid:
            e = BASIS.kinetic_diagonal(k)
            acc += np.sum(1.0 / (np.exp((e + 1.0) / self.occ.T) + 1.0))
        oracle = acc / len(self.kgrid) / LAT.volume
        assert vals.mean() == pytest.approx(oracle, rel=1e-12)

    def test_density_positive_real_charge(self):
        occ = OccupationModel(T=0.05, mu=0.5)
        rho = density_from_potential(MATHIEU, occ, self.kgrid)
        assert rho.realness
        assert rho.values().min() > 0
        bands = compute_bands(BASIS, MATHIEU, self.kgrid)
        expect = np.mean(np.sum(occ.occ(bands.eigenvalues), axis=1))
        assert rho.integral().real == pytest.approx(expect, rel=1e-12)

    def test_tail_flag(self):
        hot = OccupationModel(T=20.0, mu=30.0)
        with pytest.warns(UserWarning, match="cutoff"):
            density_from_potential(ZERO, hot, self.kgrid)


class TestGap:
    kgrid = monkhorst_pack(LAT, 8)

    def test_free_particle_below_spectrum(self):
        bands = compute_bands(BASIS, ZERO, self.kgrid)
        rep = spectral_gap(bands, -1.0)
        assert rep.in_gap
        assert rep.eta == pytest.approx(1.0, abs=1e-12)

    def test_mathieu_edges_vs_oracle(self):
        basis200 = PlaneWaveBasis(LAT, ecut=200.0)
        phi = PeriodicField.from_callable(basis200, lambda x: 2.0 * np.cos(x))
        kgrid = monkhorst_pack(LAT, 16)
        bands = compute_bands(basis200, phi, kgrid)
        lo, hi = bands.band_ranges()
        # 1D band extrema sit at k = 0 and the zone boundary: oracle there
        ref_lo = mathieu_reference_eigs(0.5, ecut=2000.0, n=2)
        assert abs(hi[0] - ref_lo[0]) < 1e-6
        assert abs(lo[1] - ref_lo[1]) < 1e-6

    def test_band_edge_flag(self):
        bands = compute_bands(BASIS, MATHIEU, self.kgrid)
        lo, hi = bands.band_ranges()
        rep = spectral_gap(bands, float(hi[0]))
        assert rep.eta == 0.0
        assert not rep.in_gap

    def test_eta_monotone_under_refinement(self):
        mu = 0.0
        coarse = spectral_gap(compute_bands(BASIS, MATHIEU, monkhorst_pack(LAT, 8)), mu)
        fine = spectral_gap(compute_bands(BASIS, MATHIEU, monkhorst_pack(LAT, 16)), mu)
        assert fine.eta <= coarse.eta + 1e-14


class TestContour:
    occ = OccupationModel(T=0.05, mu=-0.24)

    def gapped_fiber(self, k=0.0):
        basis = PlaneWaveBasis(LAT, ecut=50.0)
        phi = PeriodicField.from_callable(basis, lambda x: 2.0 * np.cos(x))
        return diagonalize_fiber(assemble_fiber(basis, phi, [k])), basis

    def test_resolvent_matches_eigen_calculus(self):
        (ev, U), basis = self.gapped_fiber()
        H = U @ np.diag(ev) @ U.conj().T
        eye = np.eye(len(ev))

        val, err = contour_quadrature(
            lambda z: np.linalg.solve(z * eye - H, eye), self.occ, ev, tol=1e-11
        )
        ref = U @ np.diag(self.occ.occ(ev)) @ U.conj().T
        assert np.abs(val - ref).max() < 1e-8

    def test_squared_resolvent_gives_derivative(self):
        (ev, U), basis = self.gapped_fiber()
        H = U @ np.diag(ev) @ U.conj().T
        eye = np.eye(len(ev))

        def integrand(z):
            R = np.linalg.solve(z * eye - H, eye)
            return R @ R

        val, err = contour_quadrature(integrand, self.occ, ev, tol=1e-11)
        ref = U @ np.diag(self.occ.occ_deriv(ev)) @ U.conj().T
        assert np.abs(val - ref).max() < 1e-8

    def test_scalar_cauchy(self):
        occ = OccupationModel(T=0.05, mu=1.0)
        val, err = contour_quadrature(
            lambda z: np.array([[1.0 / z]]), occ, np.array([0.0]), tol=1e-12
        )
        assert abs(val[0, 0] - occ.occ(0.0)) < 1e-9

    def test_mu_on_spectrum_refused(self):
        occ = OccupationModel(T=0.05, mu=0.0)
        with pytest.raises(ContourGeometryError):
            contour_quadrature(lambda z: np.eye(1), occ, np.array([0.0]))


def test_threaded_bands_bitwise_deterministic():
    # reductions over k use a fixed order, so worker count cannot change
    # a single bit of the results
    kgrid = monkhorst_pack(LAT, 8)
    b1 = compute_bands(BASIS, MATHIEU, kgrid, threads=1)
    b4 = compute_bands(BASIS, MATHIEU, kgrid, threads=4)
    assert np.array_equal(b1.eigenvalues, b4.eigenvalues)
    occ = OccupationModel(T=0.05, mu=0.2)
    r1 = density_from_potential(MATHIEU, occ, kgrid, threads=1)
    r4 = density_from_potential(MATHIEU, occ, kgrid, threads=4)
    assert np.array_equal(r1.coeffs, r4.coeffs)


def test_contour_matches_eigen_calculus_random_gapped_fibers():
    # random gapped fibers: random lattice-periodic distortions of the
    # cosine crystal, with mu placed mid-way across the widest low-lying
    # level spacing of each draw; the contour route must reproduce the
    # eigen-route f_T(H - mu) on every one
    rng = np.random.default_rng(12)
    for trial in range(3):
        c = np.zeros(BASIS.n_pw, dtype=complex)
        c[BASIS.index_of([1])] = c[BASIS.index_of([-1])] = 1.0
        for n in (2, 3):
            amp = 0.15 * rng.standard_normal()
            c[BASIS.index_of([n])] += 0.5 * amp
            c[BASIS.index_of([-n])] += 0.5 * amp
        phi = PeriodicField(BASIS, 2.0 * c, realness=True)
        k = rng.uniform(-0.5, 0.5)
        ev, U = diagonalize_fiber(assemble_fiber(BASIS, phi, [k]))
        spacings = np.diff(ev[:6])
        j = int(np.argmax(spacings))
        mu = float(0.5 * (ev[j] + ev[j + 1]))
        occ = OccupationModel(T=0.05, mu=mu)
        assert np.min(np.abs(ev - mu)) > 0.2  # a genuine gap per draw
        H = U @ np.diag(ev) @ U.conj().T
        eye = np.eye(len(ev))
        val, err = contour_quadrature(
            lambda z: np.linalg.solve(z * eye - H, eye), occ, ev, tol=1e-11
        )
        ref = U @ np.diag(occ.occ(ev)) @ U.conj().T
        assert np.abs(val - ref).max() < 1e-8
