"""Self-consistent solution of the periodic electrostatic fixed point.

The unknown is the potential: phi = (-Lap)^{-1}(kappa - rho(phi, mu)),
with mu re-solved from charge neutrality at every iteration in
fixed-charge mode (so the per-cell charge constraint holds at every
iterate, not only at convergence). Mixing acts on phi, either plain
damping or Anderson acceleration over the phi-residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fibers import BandStructure, GapReport, compute_bands, density_from_potential, spectral_gap
from .lattice import PeriodicField, PlaneWaveBasis
from .occupation import OccupationModel

__all__ = [
    "SCFConfig",
    "CrystalState",
    "solve_chemical_potential",
    "scf_solve",
    "construct_dielectric_kappa",
    "verify_dielectricity",
    "UnreachableChargeError",
]


class UnreachableChargeError(ValueError):
    pass


class DielectricityError(RuntimeError):
    pass


@dataclass
class SCFConfig:
    """Mixing and termination parameters of the fixed-point loop."""

    alpha_mix: float = 0.6
    anderson_depth: int = 5
    tol_residual: float = 1e-10   # on ||rho_out - rho_in||_{L^2_per}
    max_iter: int = 200
    mu_mode: str = "fixed-charge"  # or "fixed-mu"

    def __post_init__(self):
        if not 0.0 < self.alpha_mix <= 1.0:
            raise ValueError("alpha_mix must be in (0, 1]")
        if self.anderson_depth < 0:
            raise ValueError("anderson_depth must be >= 0")
        if self.tol_residual <= 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mu_mode not in ("fixed-charge", "fixed-mu"):
            raise ValueError("mu_mode must be 'fixed-charge' or 'fixed-mu'")


@dataclass
class CrystalState:
    """Converged (or best-effort) periodic crystal data."""

    basis: PlaneWaveBasis
    k_points: np.ndarray
    kappa: PeriodicField
    rho: PeriodicField
    phi: PeriodicField
    mu: float
    occ: OccupationModel
    bands: BandStructure
    gap: GapReport
    residual_history: list = field(default_factory=list)
    charge_history: list = field(default_factory=list)
    converged: bool = True
    dielectric_flag: bool = True

    @property
    def eta(self):
        return self.gap.eta

    @property
    def eta0(self):
        return self.gap.eta0

    def lambda_per(self):
        """||phi||_{H^2_per} + |mu|, the dielectricity size parameter."""
        return self.phi.sobolev_norm(order=2) + abs(self.mu)

    def poisson_defect(self):
        """|| -Lap phi - (kappa - rho) ||_{L^2_per}."""
        lhs = self.phi.coeffs * self.basis.g_norm2
        rhs = self.kappa.coeffs - self.rho.coeffs
        rhs = rhs.copy()
        rhs[0] = 0.0  # phi is mean-free; the mean is the mu constraint
        diff = lhs - rhs
        return float(np.sqrt(self.basis.lattice.volume * np.sum(np.abs(diff) ** 2)))

    def charge_defect(self):
        return float(abs(self.rho.integral().real - self.kappa.integral().real))


def solve_chemical_potential(
    phi: PeriodicField,
    T: float,
    target_charge: float,
    k_points,
    bands: BandStructure | None = None,
    rel_tol: float = 1e-12,
):
    """Bisect mu so the per-cell charge matches target_charge.

    The charge mean_k sum_n f_T(e_nk - mu) is strictly increasing in mu,
    so the root is unique once bracketed. Saturation (target at or above
    the total number of basis states) is unreachable and raises.
    """
    if target_charge <= 0:
        raise UnreachableChargeError("target charge must be positive")
    if bands is None:
        bands = compute_bands(phi.basis, phi, k_points)
    evals = bands.eigenvalues
    n_states = evals.shape[1]
    if target_charge >= n_states * (1.0 - 1e-12):
        raise UnreachableChargeError(
            f"target charge {target_charge} saturates the {n_states} available states"
        )

    def charge(mu):
        x = (evals - mu) / T
        ax = np.abs(x)
        em = np.exp(-ax)
        s = np.where(x >= 0, em / (1 + em), 1 / (1 + em))
        return float(np.mean(np.sum(s, axis=1)))

    tol = rel_tol * target_charge
    margin = T * np.log(max(n_states / tol, 10.0))
    lo = float(evals.min()) - margin - 1.0
    hi = float(evals.max()) + margin + 1.0
    if not (charge(lo) < target_charge < charge(hi)):
        raise UnreachableChargeError(
            f"no bracket for charge {target_charge} in [{lo:.3f}, {hi:.3f}]"
        )
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        c = charge(mid)
        if abs(c - target_charge) <= tol:
            return mid
        if c < target_charge:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


class _AndersonMixer:
    """Anderson acceleration on the phi-residual (depth 0 = plain damping)."""

    def __init__(self, alpha, depth):
        self.alpha = alpha
        self.depth = depth
        self.xs = []
        self.gs = []

    def step(self, x, g):
        if self.depth == 0:
            return x + self.alpha * g
        self.xs.append(x.copy())
        self.gs.append(g.copy())
        if len(self.xs) > self.depth + 1:
            self.xs.pop(0)
            self.gs.pop(0)
        m = len(self.xs) - 1
        if m == 0:
            return x + self.alpha * g
        dX = np.stack([self.xs[-1] - self.xs[i] for i in range(m)], axis=1)
        dG = np.stack([self.gs[-1] - self.gs[i] for i in range(m)], axis=1)
        gamma, *_ = np.linalg.lstsq(dG, g, rcond=None)
        return x + self.alpha * g - (dX + self.alpha * dG) @ gamma


def _poisson_mean_free(basis: PlaneWaveBasis, coeffs):
    out = coeffs.copy()
    out[0] = 0.0
    out[1:] = out[1:] / basis.g_norm2[1:]
    return out


def scf_solve(
    kappa: PeriodicField,
    config: SCFConfig,
    T: float,
    k_points,
    mu: float | None = None,
    phi0: PeriodicField | None = None,
    threads=None,
) -> CrystalState:
    """Solve -Lap phi = kappa - den[f_T(h^phi - mu)] on a k-grid.

    In fixed-charge mode the target is int_Omega kappa and mu is
    re-bisected each iteration; phi is kept mean-free (the constant
    gauge lives in mu). A non-converged run returns the best state
    flagged converged=False rather than raising; a gapless final state
    clears dielectric_flag.
    """
    basis = kappa.basis
    if not kappa.realness:
        raise ValueError("kappa must be real")
    if config.mu_mode == "fixed-mu" and mu is None:
        raise ValueError("fixed-mu mode needs a chemical potential")
    target = kappa.integral().real
    if config.mu_mode == "fixed-charge" and target <= 0:
        raise ValueError("fixed-charge mode needs a positive mean of kappa")

    phi = phi0 if phi0 is not None else PeriodicField.zeros(basis)
    mixer = _AndersonMixer(config.alpha_mix, config.anderson_depth)
    residuals, charges = [], []
    converged = False
    bands = None
    rho = None
    mu_cur = mu

    for _ in range(config.max_iter):
        bands = compute_bands(basis, phi, k_points, threads)
        if config.mu_mode == "fixed-charge":
            mu_cur = solve_chemical_potential(phi, T, target, k_points, bands=bands)
        occ = OccupationModel(T=T, mu=mu_cur)
        rho = density_from_potential(phi, occ, k_points, bands=bands, tail_tol=1e-12)
        charges.append(float(abs(rho.integral().real - target)))

        rhs = kappa.coeffs - rho.coeffs
        phi_new = _poisson_mean_free(basis, rhs)
        g = phi_new - phi.coeffs
        # rho-residual: || -Lap (G(phi) - phi) ||, the density mismatch
        res = float(
            np.sqrt(basis.lattice.volume * np.sum(np.abs(basis.g_norm2 * g) ** 2))
        )
        residuals.append(res)
        if res <= config.tol_residual:
            converged = True
            break
        phi = PeriodicField(basis, mixer.step(phi.coeffs, g), realness=True)

    occ = OccupationModel(T=T, mu=mu_cur)
    gap = spectral_gap(bands, mu_cur)
    return CrystalState(
        basis=basis,
        k_points=np.atleast_2d(np.asarray(k_points, dtype=float)),
        kappa=kappa,
        rho=rho,
        phi=phi,
        mu=mu_cur,
        occ=occ,
        bands=bands,
        gap=gap,
        residual_history=residuals,
        charge_history=charges,
        converged=converged,
        dielectric_flag=bool(gap.in_gap) and converged,
    )


def construct_dielectric_kappa(
    phi: PeriodicField, mu: float, T: float, k_points, threads=None
):
    """Designer dielectric: the background charge whose crystal is (phi, mu).

    rho := den[f_T(h^phi - mu)] and kappa := -Lap phi + rho solve the
    self-consistent equation exactly by construction; mu must lie in a
    spectral gap of h^phi.
    """
    basis = phi.basis
    bands = compute_bands(basis, phi, k_points, threads)
    gap = spectral_gap(bands, mu)
    if not gap.in_gap:
        raise DielectricityError(
            f"mu = {mu} is not inside a spectral gap (eta = {gap.eta:.3e})"
        )
    occ = OccupationModel(T=T, mu=mu)
    rho = density_from_potential(phi, occ, k_points, bands=bands)
    kappa_coeffs = basis.g_norm2 * phi.coeffs + rho.coeffs
    kappa = PeriodicField(basis, kappa_coeffs, realness=True)
    return kappa, rho


def verify_dielectricity(state: CrystalState, lambda_bound: float):
    """Definition-style report: gap data, size bound, and c_T."""
    lam = state.lambda_per()
    c_T = np.exp(-state.eta0 / state.occ.T) / state.occ.T
    return {
        "eta": state.eta,
        "eta0": state.eta0,
        "mu_in_gap": bool(state.gap.in_gap),
        "lambda_per": lam,
        "lambda_bound": lambda_bound,
        "lambda_ok": bool(lam <= lambda_bound),
        "c_T": float(c_T),
        "converged": state.converged,
        "dielectric": bool(state.dielectric_flag),
    }
