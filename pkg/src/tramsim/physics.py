"""
Material parameters and pointwise drift-diffusion kernels.

Everything here is a pure function of its arguments; units are SI for
voltage/time and centimetres for lengths and densities, matching the
conventions of the device config.
"""

from dataclasses import dataclass

import numpy as np
from scipy import constants

Q = constants.elementary_charge
KB = constants.Boltzmann
EPS0 = constants.epsilon_0 * 1e-2  # F/cm

# below this |x| the Bernoulli function is evaluated from its Taylor series
BERNOULLI_SERIES_SWITCH = 1e-4

MOBILITY_MODELS = ("constant", "caughey_thomas")


@dataclass(frozen=True)
class MaterialParams:
    """Silicon-like material constants used by the transport model."""

    relative_permittivity: float = 11.7
    intrinsic_density_ni: float = 1.0e10
    electron_mobility: float = 1400.0
    hole_mobility: float = 450.0
    srh_tau_n: float = 1e-7
    srh_tau_p: float = 1e-7
    bandgap: float = 1.12
    mobility_model: str = "constant"

    def __post_init__(self):
        for name in ("relative_permittivity", "intrinsic_density_ni",
                     "electron_mobility", "hole_mobility", "srh_tau_n",
                     "srh_tau_p", "bandgap"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"material.{name} must be positive, got {value!r}")
        if self.mobility_model not in MOBILITY_MODELS:
            raise ValueError(
                f"material.mobility_model must be one of {MOBILITY_MODELS}, "
                f"got {self.mobility_model!r}")

    @property
    def permittivity(self):
        """Absolute permittivity in F/cm."""
        return self.relative_permittivity * EPS0


@dataclass(frozen=True)
class ThermalEnv:
    temperature: float = 300.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature!r}")

    @property
    def thermal_voltage(self):
        return KB * self.temperature / Q


def bernoulli(x):
    """
    Bernoulli function ``B(x) = x / (exp(x) - 1)``.

    Uses a Taylor series close to zero. Negative arguments are evaluated
    through ``B(-y) = B(y) + y`` so nothing overflows and the reflection
    identity holds to rounding.

    Parameters
    ----------
    x : float or array_like

    Returns
    -------
    ndarray or float
        Same shape as `x`.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(x)
    out = np.empty_like(y)
    small = y < BERNOULLI_SERIES_SWITCH
    ys = y[small]
    ys2 = ys * ys
    out[small] = 1.0 - ys / 2.0 + ys2 / 12.0 - ys2 * ys2 / 720.0
    yl = y[~small]
    with np.errstate(under="ignore"):
        out[~small] = yl * np.exp(-yl) / -np.expm1(-yl)
    neg = x < 0
    out[neg] += y[neg]
    if out.ndim == 0:
        return float(out)
    return out


def bernoulli_prime(x):
    """Derivative ``dB/dx``; equals ``B(x) * (1 - B(-x)) / x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = -0.5 + xs / 6.0 - xs ** 3 / 180.0
    xl = x[~small]
    b = bernoulli(xl)
    out[~small] = b * (1.0 - b - xl) / xl
    if out.ndim == 0:
        return float(out)
    return out


def diffusivity(mu, env):
    """Einstein relation ``D = mu * V_T``."""
    return mu * env.thermal_voltage


def sg_flux(n_left, n_right, dpsi, spacing, diffusivity, carrier, env=ThermalEnv()):
    """
    Scharfetter-Gummel current density on one edge.

    Parameters
    ----------
    n_left, n_right : float or ndarray
        Carrier density at the two edge nodes (1/cm^3).
    dpsi : float or ndarray
        ``psi_right - psi_left`` in volts.
    spacing : float or ndarray
        Edge length in cm.
    diffusivity : float or ndarray
        cm^2/s.
    carrier : {'electron', 'hole'}

    Returns
    -------
    Conventional current density along +x in A/cm^2.
    """
    delta = np.asarray(dpsi, dtype=float) / env.thermal_voltage
    scale = Q * np.asarray(diffusivity) / np.asarray(spacing)
    if carrier == "electron":
        return scale * (bernoulli(delta) * n_right - bernoulli(-delta) * n_left)
    if carrier == "hole":
        return scale * (bernoulli(delta) * n_left - bernoulli(-delta) * n_right)
    raise ValueError(f"carrier must be 'electron' or 'hole', got {carrier!r}")


def srh_rate(n, p, params, env=ThermalEnv()):
    """
    Shockley-Read-Hall net recombination with a midgap trap.

    Positive values are net recombination, negative values net generation.
    """
    ni = params.intrinsic_density_ni
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    den = params.srh_tau_p * (n + ni) + params.srh_tau_n * (p + ni)
    return (n * p - ni * ni) / den


def equilibrium_guess(net_doping, params, env):
    """Charge-neutral potential (V) for a signed net doping, Boltzmann statistics."""
    ratio = np.asarray(net_doping, dtype=float) / (2.0 * params.intrinsic_density_ni)
    return env.thermal_voltage * np.arcsinh(ratio)


def built_in_potential(na, nd, params, env):
    if na <= 0 or nd <= 0:
        raise ValueError(f"doping must be positive, got Na={na!r}, Nd={nd!r}")
    ni = params.intrinsic_density_ni
    return env.thermal_voltage * np.log(na * nd / ni ** 2)


# Caughey-Thomas fit for silicon at 300 K: (mu_min, mu_max, N_ref, alpha)
_CAUGHEY_THOMAS = {
    "electron": (68.5, 1414.0, 9.20e16, 0.711),
    "hole": (44.9, 470.5, 2.23e17, 0.719),
}


def mobility(net_doping, carrier, params):
    """
    Low-field mobility in cm^2/(V s).

    The Caughey-Thomas model scales its fit so that the undoped limit equals
    the constant mobility in `params`.
    """
    if carrier not in _CAUGHEY_THOMAS:
        raise ValueError(f"carrier must be 'electron' or 'hole', got {carrier!r}")
    mu0 = params.electron_mobility if carrier == "electron" else params.hole_mobility
    doping = np.abs(np.asarray(net_doping, dtype=float))
    if params.mobility_model == "constant":
        out = np.full_like(doping, mu0)
    else:
        mu_min, mu_max, n_ref, alpha = _CAUGHEY_THOMAS[carrier]
        mu_min = mu_min * mu0 / mu_max
        out = mu_min + (mu0 - mu_min) / (1.0 + (doping / n_ref) ** alpha)
    if out.ndim == 0:
        return float(out)
    return out
