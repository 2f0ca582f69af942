"""
Integral quantities of a discrete flow state and the per-step balance
residuals of the midpoint scheme.

Quadratic quantities are evaluated with the same mass matrices the solver
assembles, so the discrete identities show up at round-off level instead of
quadrature-error level.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .assembly import operators_for

CSV_COLUMNS = ("k", "t", "K", "E", "Pal", "W", "divL2",
               "energy_res", "enstrophy_res", "vorticity_res")


@dataclass(frozen=True)
class DiagnosticsRecord:
    k: int
    t: float
    K: float
    E: float
    Pal: float
    W: float
    divL2: float
    energy_residual: float = None
    enstrophy_residual: float = None
    vorticity_residual: float = None

    def row(self):
        d = asdict(self)
        return [d["k"], d["t"], d["K"], d["E"], d["Pal"], d["W"], d["divL2"],
                d["energy_residual"], d["enstrophy_residual"], d["vorticity_residual"]]


def kinetic_energy(u, quad=None):
    """K_h = 1/2 <u_h, u_h>."""
    M = operators_for(u.space, quad).M_D
    return 0.5 * float(u.coeffs @ (M @ u.coeffs))


def enstrophy(omega, quad=None):
    M = operators_for(omega.space, quad).M_C
    return 0.5 * float(omega.coeffs @ (M @ omega.coeffs))


def palinstrophy(omega, quad=None):
    """1/2 <curl omega_h, curl omega_h> with the incidence curl."""
    ops = operators_for(omega.space, quad)
    c = ops.E @ omega.coeffs
    return 0.5 * float(c @ (ops.M_D @ c))


def total_vorticity(omega, quad=None):
    """W_h = <omega_h, 1>; the constant 1 has all-ones nodal coefficients."""
    M = operators_for(omega.space, quad).M_C
    return float(np.ones(omega.space.ndof) @ (M @ omega.coeffs))


def div_l2(u, quad=None):
    ops = operators_for(u.space, quad)
    d = ops.Div @ u.coeffs
    return math.sqrt(max(float(d @ (ops.M_S @ d)), 0.0))


def _mid(a, b):
    return 0.5 * (a.coeffs + b.coeffs)


def balance_residuals(prev, curr, dt, Re, quad=None):
    """Energy, enstrophy and total-vorticity residuals between two states.

    The dissipation terms use the midpoint field omega^{k-1/2}, not the mean
    of the two scalar values.
    """
    ops = operators_for(curr.omega.space, quad)
    nu = 0.0 if math.isinf(Re) else 1.0 / Re
    wm = _mid(prev.omega, curr.omega)
    E_mid = 0.5 * float(wm @ (ops.M_C @ wm))
    cm = ops.E @ wm
    P_mid = 0.5 * float(cm @ (ops.M_D @ cm))
    dK = kinetic_energy(curr.u, quad) - kinetic_energy(prev.u, quad)
    dE = enstrophy(curr.omega, quad) - enstrophy(prev.omega, quad)
    dW = total_vorticity(curr.omega, quad) - total_vorticity(prev.omega, quad)
    return dK / dt + 2.0 * nu * E_mid, dE / dt + 2.0 * nu * P_mid, dW


def record(state, quad=None, prev=None, dt=None, Re=None):
    """DiagnosticsRecord of ``state``; residuals filled when ``prev`` is given."""
    res = (None, None, None)
    if prev is not None:
        res = balance_residuals(prev, state, dt, Re, quad)
    return DiagnosticsRecord(
        k=state.k,
        t=state.t,
        K=kinetic_energy(state.u, quad),
        E=enstrophy(state.omega, quad),
        Pal=palinstrophy(state.omega, quad),
        W=total_vorticity(state.omega, quad),
        divL2=div_l2(state.u, quad),
        energy_residual=res[0],
        enstrophy_residual=res[1],
        vorticity_residual=res[2],
    )
