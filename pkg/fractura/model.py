"""
Constitutive laws of the reduced phase-field fracture model.

Strains are handled either as 2x2 tensors or in Voigt form [e11, e22, 2 e12]
(engineering shear), stresses in Voigt form [s11, s22, s12].
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from .errors import InvalidParameter
from .quadrature import WEIGHTS, p1_values, triangle_geometry

logger = logging.getLogger(__name__)

QUADRATIC = "quadratic"
CUBIC = "cubic"
FULL = "full"
TENSION_ONLY = "tension_only"
PLANE_STRAIN = "plane_strain"
PLANE_STRESS = "plane_stress"

_TRACE = np.array([1.0, 1.0, 0.0])


@dataclass(frozen=True)
class Degradation:
    """
    g(phi) = phi^2 (quadratic) or S (phi^3 - phi^2) + 3 phi^2 - 2 phi^3 (cubic).
    """

    kind: str = QUADRATIC
    shape: float = 1e-4

    def __post_init__(self):
        if self.kind not in (QUADRATIC, CUBIC):
            raise InvalidParameter(f"unknown degradation '{self.kind}'")
        if self.kind == CUBIC and self.shape < 0.0:
            raise InvalidParameter("cubic shape parameter must be non-negative", {"S": self.shape})

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.kind == QUADRATIC:
            return phi**2, 2.0 * phi, np.full_like(phi, 2.0)
        s = self.shape
        g = s * (phi**3 - phi**2) + 3.0 * phi**2 - 2.0 * phi**3
        dg = s * (3.0 * phi**2 - 2.0 * phi) + 6.0 * phi - 6.0 * phi**2
        ddg = s * (6.0 * phi - 2.0) + 6.0 - 12.0 * phi
        return g, dg, ddg


@dataclass(frozen=True)
class MaterialParams:
    """
    Material and model constants (SI units).

    lam, mu : Lame constants (Pa)
    rho0 : density (kg/m^3)
    gc : Griffith energy (N/m)
    ell : localization length (m)
    eta : phase-field viscosity (s)
    """

    lam: float
    mu: float
    rho0: float
    gc: float
    ell: float
    eta: float = 1e-6
    degradation: Degradation = field(default_factory=Degradation)
    body_force: Tuple[float, float] = (0.0, 0.0)
    kinematics: str = PLANE_STRAIN
    stress_split: str = FULL
    k_res: float = 1e-6

    def __post_init__(self):
        checks = {
            "mu > 0": self.mu > 0.0,
            "lambda + mu > 0": self.lam + self.mu > 0.0,
            "rho0 > 0": self.rho0 > 0.0,
            "Gc > 0": self.gc > 0.0,
            "ell > 0": self.ell > 0.0,
            "eta >= 0": self.eta >= 0.0,
            "0 <= k_res < 1": 0.0 <= self.k_res < 1.0,
        }
        failed = [name for name, ok in checks.items() if not ok]
        if failed:
            raise InvalidParameter("material constraint violated", {"failed": ", ".join(failed)})
        if self.kinematics not in (PLANE_STRAIN, PLANE_STRESS):
            raise InvalidParameter(f"unknown kinematics '{self.kinematics}'")
        if self.stress_split not in (FULL, TENSION_ONLY):
            raise InvalidParameter(f"unknown stress split '{self.stress_split}'")

    @classmethod
    def from_engineering(cls, youngs: float, poisson: float, **kwargs) -> "MaterialParams":
        if youngs <= 0.0 or not -1.0 < poisson < 0.5:
            raise InvalidParameter("need E > 0 and -1 < nu < 0.5", {"E": youngs, "nu": poisson})
        lam = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        mu = youngs / (2.0 * (1.0 + poisson))
        return cls(lam=lam, mu=mu, **kwargs)

    def with_(self, **changes) -> "MaterialParams":
        return replace(self, **changes)

    @property
    def youngs(self) -> float:
        return self.mu * (3.0 * self.lam + 2.0 * self.mu) / (self.lam + self.mu)

    @property
    def poisson(self) -> float:
        return self.lam / (2.0 * (self.lam + self.mu))

    @property
    def lam_2d(self) -> float:
        """
        In-plane first Lame constant: lambda for plane strain, 2 lambda mu / (lambda + 2 mu) for plane stress.
        """
        if self.kinematics == PLANE_STRESS:
            return 2.0 * self.lam * self.mu / (self.lam + 2.0 * self.mu)
        return self.lam

    def elasticity_matrix(self) -> np.ndarray:
        return elasticity_matrix(self.lam_2d, self.mu)

    def shear_speed(self) -> float:
        return float(np.sqrt(self.mu / self.rho0))

    def rayleigh_speed(self) -> float:
        """
        c_R = c_s (0.862 + 1.14 nu) / (1 + nu).
        """
        nu = self.poisson
        return self.shear_speed() * (0.862 + 1.14 * nu) / (1.0 + nu)


@dataclass(frozen=True)
class StrainSplit:
    eps_plus: np.ndarray
    eps_minus: np.ndarray
    psi_plus: float
    psi_minus: float


def elasticity_matrix(lam: float, mu: float) -> np.ndarray:
    return np.array([[lam + 2.0 * mu, lam, 0.0], [lam, lam + 2.0 * mu, 0.0], [0.0, 0.0, mu]])


def to_tensor(voigt) -> np.ndarray:
    """
    [e11, e22, 2 e12] -> symmetric 2x2 tensor, over any leading axes.
    """
    voigt = np.asarray(voigt, dtype=float)
    out = np.empty(voigt.shape[:-1] + (2, 2))
    out[..., 0, 0] = voigt[..., 0]
    out[..., 1, 1] = voigt[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * voigt[..., 2]
    return out


def to_voigt(tensor, engineering: bool = True) -> np.ndarray:
    tensor = np.asarray(tensor, dtype=float)
    shear = tensor[..., 0, 1] * (2.0 if engineering else 1.0)
    return np.stack([tensor[..., 0, 0], tensor[..., 1, 1], shear], axis=-1)


def _bracket_energies(values, trace, lam, mu):
    pos = np.maximum(values, 0.0)
    neg = np.minimum(values, 0.0)
    psi_plus = 0.5 * lam * np.maximum(trace, 0.0) ** 2 + mu * np.sum(pos**2, axis=-1)
    psi_minus = 0.5 * lam * np.minimum(trace, 0.0) ** 2 + mu * np.sum(neg**2, axis=-1)
    return psi_plus, psi_minus


def spectral_split(eps, lam: float, mu: float) -> StrainSplit:
    """
    Split a symmetric 2x2 strain into its tensile and compressive parts.
    """
    eps = np.asarray(eps, dtype=float)
    eps = 0.5 * (eps + eps.T)
    values, vectors = np.linalg.eigh(eps)
    eps_plus = (vectors * np.maximum(values, 0.0)) @ vectors.T
    psi_plus, psi_minus = _bracket_energies(values, np.trace(eps), lam, mu)
    return StrainSplit(eps_plus, eps - eps_plus, float(psi_plus), float(psi_minus))


def elastic_energy(eps, lam: float, mu: float) -> float:
    eps = np.asarray(eps, dtype=float)
    return float(0.5 * lam * np.trace(eps) ** 2 + mu * np.sum(eps * eps))


def tensile_energy(strain_voigt, lam: float, mu: float) -> np.ndarray:
    """
    psi_plus for an array of Voigt strains of shape (..., 3).
    """
    values = np.linalg.eigvalsh(to_tensor(strain_voigt))
    return _bracket_energies(values, np.asarray(strain_voigt)[..., :2].sum(axis=-1), lam, mu)[0]


def tensile_secant(strain_voigt, lam: float, mu: float) -> np.ndarray:
    """
    Tensile part D+ of the elasticity matrix in the principal frame of the given strains,
    shape (..., 3, 3). D+ applied to the reference strain gives the tensile stress exactly.
    """
    strain_voigt = np.asarray(strain_voigt, dtype=float)
    values, vectors = np.linalg.eigh(to_tensor(strain_voigt))
    trace = strain_voigt[..., 0] + strain_voigt[..., 1]
    out = np.asarray(lam * (trace > 0.0))[..., None, None] * np.outer(_TRACE, _TRACE)
    for i in range(2):
        m = vectors[..., :, i]
        a = np.stack([m[..., 0] ** 2, m[..., 1] ** 2, m[..., 0] * m[..., 1]], axis=-1)
        active = np.asarray(2.0 * mu * (values[..., i] > 0.0))[..., None, None]
        out = out + active * (a[..., :, None] * a[..., None, :])
    return out


def degradation(phi, params: MaterialParams):
    """
    Returns (g, g', g'') of the selected degradation family.
    """
    return params.degradation(phi)


def stress(eps, phi, params: MaterialParams) -> np.ndarray:
    """
    Cauchy stress as a 2x2 tensor: g(phi) C:eps, or g sigma+ + sigma- under the tension-only split.
    """
    eps = np.asarray(eps, dtype=float)
    g = float(params.degradation(phi)[0])
    lam = params.lam_2d
    if params.stress_split == FULL:
        return g * (lam * np.trace(eps) * np.eye(2) + 2.0 * params.mu * eps)
    split = spectral_split(eps, lam, params.mu)
    tr = np.trace(eps)
    sigma_plus = lam * max(tr, 0.0) * np.eye(2) + 2.0 * params.mu * split.eps_plus
    sigma_minus = lam * min(tr, 0.0) * np.eye(2) + 2.0 * params.mu * split.eps_minus
    return g * sigma_plus + sigma_minus


def update_history(h_old, psi_plus):
    return np.maximum(h_old, psi_plus)


def dissipation(mesh, phi, params: MaterialParams) -> float:
    """
    Fracture energy Gc/2 * integral of (1 - phi)^2 / ell + ell |grad phi|^2 (J per unit thickness).
    """
    phi = np.asarray(phi, dtype=float)
    areas, grads = triangle_geometry(mesh.vertices, mesh.triangles)
    local = phi[mesh.triangles]  # (M, 3)
    at_points = local @ p1_values().T  # (M, 6)
    bulk = ((1.0 - at_points) ** 2 @ WEIGHTS) * areas
    grad = np.einsum("ei,eid->ed", local, grads)
    surface = np.sum(grad**2, axis=1) * areas
    return float(0.5 * params.gc * np.sum(bulk / params.ell + params.ell * surface))


def phase_overshoot(phi) -> float:
    """
    Largest excursion of phi outside [0, 1].
    """
    phi = np.asarray(phi, dtype=float)
    if phi.size == 0:
        return 0.0
    return float(max(0.0, -phi.min(), phi.max() - 1.0))
