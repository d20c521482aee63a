import numpy as np
import pytest

from debye_forge import response as R
from debye_forge.fibers import compute_bands, den_coefficients, shift_overlap_tensor
from debye_forge.lattice import Lattice, PeriodicField, PlaneWaveBasis, inner, monkhorst_pack
from debye_forge.occupation import OccupationModel

LAT = Lattice(np.array([[2 * np.pi]]))
BASIS = PlaneWaveBasis(LAT, ecut=50.0)
PHI = PeriodicField.from_callable(BASIS, lambda x: 2.0 * np.cos(x))
ZERO = PeriodicField.zeros(BASIS)
KGRID = monkhorst_pack(LAT, 8)


def midgap_mu():
    bands = compute_bands(BASIS, PHI, KGRID)
    lo, hi = bands.band_ranges()
    return float(0.5 * (hi[0] + lo[1]))


MU = midgap_mu()


@pytest.fixture(scope="module")
def ws():
    return R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / 20, mu=MU))


@pytest.fixture(scope="module")
def ws_free():
    return R.ResponseWorkspace(BASIS, ZERO, OccupationModel(T=1 / 20, mu=-1.0))


class TestMFiber:
    def test_hermitian_and_psd(self, ws):
        for k in ([0.0], [0.13], [-0.31]):
            M = R.m_fiber(ws, k)
            assert np.abs(M - M.conj().T).max() < 1e-10
            lam = np.linalg.eigvalsh(M).min()
            assert lam >= -1e-10 * np.linalg.norm(M, 2)

    def test_m0_applied_to_constant_is_V(self, ws):
        M0 = R.m_fiber(ws, [0.0])
        V = R.screening_density_V(ws)
        assert np.abs(M0[:, 0] - V.coeffs).max() < 1e-13

    def test_free_crystal_fiber_diagonal(self, ws_free):
        M = R.m_fiber(ws_free, [0.2])
        off = M - np.diag(np.diag(M))
        assert np.abs(off).max() < 1e-14

    def test_fd_jacobian_of_gamma_density(self, ws):
        from debye_forge.fibers import density_from_potential

        M0 = R.m_fiber(ws, [0.0])
        rng = np.random.default_rng(0)
        c = rng.standard_normal(BASIS.n_pw) + 1j * rng.standard_normal(BASIS.n_pw)
        c = 0.5 * (c + np.conj(c[BASIS.negation_index]))
        c /= np.linalg.norm(c)
        kg = np.zeros((1, 1))
        errs = []
        for h in (2e-3, 1e-3, 5e-4):
            rp = density_from_potential(
                PeriodicField(BASIS, PHI.coeffs + h * c), ws.occ, kg, tail_tol=1.0
            )
            rm = density_from_potential(
                PeriodicField(BASIS, PHI.coeffs - h * c), ws.occ, kg, tail_tol=1.0
            )
            errs.append(np.linalg.norm((rp.coeffs - rm.coeffs) / (2 * h) - M0 @ c))
        slope = np.polyfit(np.log([2e-3, 1e-3, 5e-4]), np.log(errs), 1)[0]
        assert abs(slope - 2.0) < 0.1

    def test_fiber_periodicity_relabelling(self, ws):
        # phase-conjugated reassembly: the response fiber satisfies
        # M_{k + W}[G + G0, G' + G0] = M_k[G, G'] for W = G0 reciprocal
        # (the k-fiber of the pair relabels while the 0-fiber is pinned).
        # The identity is exact away from the cutoff shell, which
        # truncates differently on the two sides, so compare the
        # interior block |G| <= gmax / 2.
        k = np.array([0.09])
        G0 = np.array([1])
        W = G0 @ LAT.reciprocal
        M1 = R.m_fiber(ws, k + W)
        M0 = R.m_fiber(ws, k)
        perm = np.array([BASIS.index_of(g + G0) for g in BASIS.g_ints])
        keep = perm >= 0
        gmax = int(np.abs(BASIS.g_ints).max())
        keep &= np.abs(BASIS.g_ints[:, 0]) <= gmax // 2
        diff = np.abs(
            M1[np.ix_(perm[keep], perm[keep])] - M0[np.ix_(keep, keep)]
        ).max()
        assert diff < 1e-9

    def test_averaged_fiber_hermitian_psd(self, ws):
        M = R.m_fiber_averaged(ws, [1.0 / 8.0], KGRID)
        assert np.abs(M - M.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(M).min() >= -1e-12

    def test_den_trace_duality(self, ws):
        # int_Omega f den[A] = Tr(f A) for multiplication f and the
        # response integrand A = U (D o (U' W U)) U'^dagger
        rng = np.random.default_rng(2)
        e0, U0 = ws.gamma
        from debye_forge import kernels

        D = kernels.dd1_matrix(e0, e0, ws.occ.T, ws.occ.mu)
        cW = rng.standard_normal(BASIS.n_pw)
        cW = 0.5 * (cW + cW[BASIS.negation_index])
        from debye_forge.fibers import potential_matrix

        Wm = potential_matrix(PeriodicField(BASIS, cW.astype(complex), realness=True))
        A = U0 @ (D * (U0.conj().T @ Wm @ U0)) @ U0.conj().T
        dens = den_coefficients(BASIS, shift_overlap_tensor(BASIS, U0, U0), D * (U0.conj().T @ Wm @ U0))
        f = PeriodicField(BASIS, rng.standard_normal(BASIS.n_pw).astype(complex))
        lhs = inner(f.conj(), PeriodicField(BASIS, dens))  # int f den[A]
        rhs = np.trace(potential_matrix(f) @ A)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(rhs))


class TestScreening:
    def test_V_nonnegative_and_mass(self, ws):
        V = R.screening_density_V(ws)
        assert V.values().min() >= -1e-16
        m = R.screening_mass_m(ws)
        assert m > 0
        assert abs(m - V.integral().real) <= 1e-10 * m

    def test_free_V_constant_and_scalar_sum(self, ws_free):
        V = R.screening_density_V(ws_free)
        vals = V.values()
        assert np.abs(vals - vals.mean()).max() < 1e-13 * max(1.0, np.abs(vals).max())
        e = BASIS.kinetic_diagonal(np.zeros(1))
        oracle = np.sum(-ws_free.occ.occ_deriv(e))
        assert R.screening_mass_m(ws_free) == pytest.approx(oracle, rel=1e-13)

    def test_V_upper_bound_sweep(self):
        # ||V||_{L2_per} / (beta e^{-beta eta0}) stays bounded over beta
        ratios = []
        for beta in (5, 10, 20, 40):
            w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
            V = R.screening_density_V(w)
            e0, _ = w.gamma
            eta0 = np.min(np.abs(e0 - MU))
            ratios.append(V.l2_norm() / (beta * np.exp(-beta * eta0)))
        assert max(ratios) / min(ratios) < 10.0

    def test_m_lower_bound_sweep(self):
        for beta in (5, 10, 20, 40, 60):
            w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
            e0, _ = w.gamma
            eta0 = np.min(np.abs(e0 - MU))
            assert R.screening_mass_m(w) >= 0.25 * beta * np.exp(-beta * eta0)


class TestRhoPrime:
    def test_free_crystal_vanishes(self, ws_free):
        for comp in R.rho_prime(ws_free):
            assert np.abs(comp.coeffs).max() < 1e-14

    def test_parity_odd_for_even_potential(self, ws):
        rp = R.rho_prime(ws)[0]
        vals = rp.values()
        flipped = np.roll(vals[::-1], 1)  # x -> -x on the periodic grid
        assert np.abs(vals + flipped).max() < 1e-10 * max(np.abs(vals).max(), 1e-30)
        # imaginary-valued as a function
        assert np.abs(vals.real).max() < 1e-12 * np.abs(vals).max()

    def test_matches_k_derivative_of_M1(self, ws):
        h = 1e-4
        Mp = R.m_fiber(ws, [h])
        Mm = R.m_fiber(ws, [-h])
        fd = (Mp[:, 0] - Mm[:, 0]) / (2 * h)
        rp = R.rho_prime(ws)[0]
        assert np.abs(fd - rp.coeffs).max() < 1e-7

    def test_dual_route_contour(self, ws):
        rp_eig = R.rho_prime(ws)[0]
        rp_con = R.rho_prime_contour(ws, tol=1e-10)[0]
        assert np.abs(rp_eig.coeffs - rp_con.coeffs).max() < 1e-8


class TestEpsilon:
    def test_symmetric(self, ws):
        eps, ep, epp = R.epsilon_matrix(ws)
        assert np.abs(eps - eps.T).max() <= 1e-10

    def test_free_crystal_scalar_oracle(self, ws_free):
        # eps'' = 0 (rho' = 0); eps' from the diagonal momentum sums
        eps, ep, epp = R.epsilon_matrix(ws_free)
        assert abs(epp[0, 0]) < 1e-13
        from debye_forge.occupation import OccupationModel as OM
        from debye_forge import kernels

        e = BASIS.kinetic_diagonal(np.zeros(1))
        g = BASIS.g_cart[:, 0]
        D3 = kernels.dd3_matrix(e, e, ws_free.occ.T, ws_free.occ.mu)
        oracle = -(4.0 / LAT.volume) * np.sum(D3 * np.outer(g, g) * np.eye(len(g)))
        assert ep[0, 0] == pytest.approx(oracle, rel=1e-12, abs=1e-15)

    def test_three_routes_small(self, ws):
        eps_eig = R.epsilon_matrix(ws)[0][0, 0]
        eps_con = R.epsilon_matrix_contour(ws, tol=1e-9)[0, 0]
        kv = 0.1 * np.geomspace(1 / 64, 1, 16)
        samples = np.array([[s * x] for x in kv for s in (1, -1)])
        eps_fit = R.fit_b_expansion(ws, samples)[1][0, 0]
        assert abs(eps_eig - eps_con) < 1e-6
        assert abs(eps_eig - eps_fit) < 1e-5  # coarser basis than acceptance

    def test_m_fiber_contour_action(self, ws):
        rng = np.random.default_rng(6)
        c = rng.standard_normal(BASIS.n_pw) + 1j * rng.standard_normal(BASIS.n_pw)
        c = 0.5 * (c + np.conj(c[BASIS.negation_index]))
        w = PeriodicField(BASIS, c, realness=True)
        k = [0.125]
        direct = PeriodicField(BASIS, R.m_fiber(ws, k) @ c, realness=False)
        via_contour, err = R.m_fiber_apply_contour(ws, k, w, tol=1e-10)
        assert np.abs(direct.coeffs - via_contour.coeffs).max() < 1e-8


class TestZeroTemperature:
    def test_free_no_occupied_states(self, ws_free):
        eps0 = R.epsilon_zero_temperature(ws_free)
        assert np.abs(eps0 - np.eye(1)).max() < 1e-14

    def test_symmetric_and_limit(self, ws):
        eps0 = R.epsilon_zero_temperature(ws)
        assert np.abs(eps0 - eps0.T).max() < 1e-12
        cold = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / 80, mu=MU))
        eps_cold = R.epsilon_matrix(cold)[0]
        assert np.abs(eps_cold - eps0).max() < 1e-6

    def test_band_edge_refused(self):
        bands = compute_bands(BASIS, PHI, KGRID)
        i0 = bands.gamma_index()
        edge = float(bands.eigenvalues[i0][0])
        w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / 20, mu=edge))
        with pytest.raises(R.GaplessCrystalError):
            R.epsilon_zero_temperature(w)


class TestBFunction:
    def test_even(self, ws):
        for k in (0.05, 0.11, 0.23):
            assert abs(R.b_function(ws, [k]) - R.b_function(ws, [-k])) < 1e-10

    def test_b0_closed_form(self, ws):
        b0 = R.b_function(ws, np.zeros(1))
        m = R.screening_mass_m(ws)
        V = R.screening_density_V(ws)
        M0 = R.m_fiber(ws, np.zeros(1))
        sol = R._kbar_solve(ws, M0, V.coeffs)
        closed = m / LAT.volume - np.vdot(V.coeffs, sol).real
        assert abs(b0 - closed) <= 1e-9 * abs(b0)

    def test_positive_at_small_k(self, ws):
        for k in (0.02, 0.08, 0.15):
            assert R.b_function(ws, [k]) > (1 - 1e-6) * k**2

    def test_fit_recovers_b0(self, ws):
        kv = 0.1 * np.geomspace(1 / 64, 1, 16)
        samples = np.array([[s * x] for x in kv for s in (1, -1)])
        b0f, epsf, quart = R.fit_b_expansion(ws, samples)
        b0 = R.b_function(ws, np.zeros(1))
        assert abs(b0f - b0) < 1e-10
        assert quart > 0

    def test_quartic_residual_scaling(self, ws):
        def qr(kmax):
            kv = kmax * np.geomspace(1 / 64, 1, 16)
            samples = np.array([[s * x] for x in kv for s in (1, -1)])
            return R.fit_b_expansion(ws, samples)[2]

        q1, q2 = qr(0.1), qr(0.05)
        slope = np.log2(q1 / q2)
        assert abs(slope - 4.0) <= 0.3

    def test_fit_preconditions(self, ws):
        with pytest.raises(ValueError, match="at least 12"):
            R.fit_b_expansion(ws, np.array([[0.01], [0.02]]))
        big = np.array([[x] for x in np.linspace(0.01, 0.5, 14)])
        with pytest.raises(ValueError, match="0.2"):
            R.fit_b_expansion(ws, big)


class TestFeshbachEll:
    def test_ell_chain(self, ws):
        delta = 1.0 / 8.0
        r = 2.0
        ks = np.array([[0.0], [0.5], [1.0], [2.0]])
        table = R.feshbach_ell(ws, delta, r, ks)
        nu = R.nu_and_regime(ws, delta, eta0=0.8)["nu"]
        assert table[(0.0,)] == pytest.approx(nu, rel=1e-12)
        direct = delta**-2 * R.b_function(ws, [delta * 1.0])
        assert table[(1.0,)] == pytest.approx(direct, rel=1e-12)

    def test_delta_one_reduces_to_b(self, ws):
        table = R.feshbach_ell(ws, 1.0, 0.2, np.array([[0.1]]))
        assert table[(0.1,)] == pytest.approx(R.b_function(ws, [0.1]), rel=1e-12)

    def test_ball_outside_cell_refused(self, ws):
        with pytest.raises(ValueError, match="ball"):
            R.feshbach_ell(ws, 1.0, 10.0, np.array([[0.1]]))

    def test_ell_lower_bound_scan(self, ws):
        delta, r = 1.0 / 8.0, 3.0
        ks = np.array([[x] for x in np.linspace(0.2, 3.0, 8)])
        table = R.feshbach_ell(ws, delta, r, ks)
        for (k,), val in table.items():
            assert val >= (1 - 1e-6) * k**2


class TestRegime:
    def test_nu_definition(self, ws):
        info = R.nu_and_regime(ws, 0.05, eta0=0.8)
        assert info["nu"] == pytest.approx(info["b0"] / 0.05**2, rel=1e-14)
        assert info["debye_length"] == pytest.approx(1 / np.sqrt(info["nu"]), rel=1e-14)

    def test_delta_one(self, ws):
        info = R.nu_and_regime(ws, 1.0, eta0=0.8)
        assert info["nu"] == pytest.approx(R.b_function(ws, np.zeros(1)), rel=1e-12)

    def test_m_within_cT_band(self):
        # 0 < c m_ratio <= m/(c_T) <= C over the beta sweep
        ratios = []
        for beta in (5, 10, 20, 40, 60):
            w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
            e0, _ = w.gamma
            eta0 = float(np.min(np.abs(e0 - MU)))
            info = R.nu_and_regime(w, 0.1, eta0=eta0)
            ratios.append(info["m"] / info["c_T"])
        assert min(ratios) > 0.02
        assert max(ratios) < 50.0

    def test_nu_vanishes_at_low_T(self):
        nus = []
        for beta in (10, 20, 40, 80):
            w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
            nus.append(R.nu_and_regime(w, 0.1, eta0=0.8)["nu"])
        assert all(nus[i + 1] < nus[i] for i in range(len(nus) - 1))

    def test_nu_vanishes_at_high_T(self):
        # nu -> 0 on the hot side as well (|f_T'| <= 1/4T kills m)
        def nu_at(beta):
            w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
            return R.nu_and_regime(w, 0.1, eta0=0.8)["nu"]

        assert nu_at(0.01) < nu_at(1.0)
        assert nu_at(0.001) < nu_at(0.01)

    def test_gapless_crystal_refused(self):
        class FakeCrystal:
            basis = BASIS
            phi = PHI
            occ = OccupationModel(T=1 / 20, mu=MU)

            class gap:
                in_gap = False

        with pytest.raises(R.GaplessCrystalError):
            R.ResponseWorkspace.from_crystal(FakeCrystal())


class TestResponseOperator:
    def test_assembly_with_metadata(self, ws):
        from debye_forge.fibers import compute_bands, spectral_gap
        from debye_forge.occupation import OccupationModel
        from debye_forge.scf import CrystalState, construct_dielectric_kappa

        T = 1 / 20
        kappa, rho = construct_dielectric_kappa(PHI, MU, T, KGRID)
        bands = compute_bands(BASIS, PHI, KGRID)
        crystal = CrystalState(
            basis=BASIS, k_points=KGRID, kappa=kappa, rho=rho, phi=PHI, mu=MU,
            occ=OccupationModel(T=T, mu=MU), bands=bands,
            gap=spectral_gap(bands, MU),
        )
        kg = np.array([[0.0], [0.05], [-0.05], [0.1]])
        op = R.ResponseOperator.assemble(crystal, kg)
        assert len(op.fibers) == 4
        assert op.m0_min_eigenvalue >= -1e-10 * op.m0_norm
        assert max(op.hermiticity_defects) < 1e-12
        assert 0.0 <= op.dd_coalescent_fraction < 0.5
        assert np.abs(op.fibers[0] - R.m_fiber(ws, [0.0])).max() < 1e-15


def test_eps_fit_converges_to_eigen_route_in_beta():
    # the residual between the quadratic-fit permittivity and the
    # divided-difference one carries the k . O(s_beta) k contamination,
    # so it must shrink as beta grows
    kv = 0.1 * np.geomspace(1 / 16, 1, 10)
    samples = np.array([[s * x] for x in kv for s in (1, -1)])
    gaps = []
    for beta in (10, 20, 40):
        w = R.ResponseWorkspace(BASIS, PHI, OccupationModel(T=1 / beta, mu=MU))
        eps = R.epsilon_matrix(w)[0][0, 0]
        eps_fit = R.fit_b_expansion(w, samples)[1][0, 0]
        gaps.append(abs(eps_fit - eps))
    assert gaps[1] < gaps[0]
    assert gaps[2] <= gaps[1] + 1e-9
