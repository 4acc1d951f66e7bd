"""
Surface-electrode potentials in the gapless-plane approximation.

Each electrode is a rectangle [x1, x2] × [z1, z2] in the plane y = 0 held at
voltage V, with the rest of the plane grounded. At height h the potential is

    φ = V/(2π) Σ_ij s_ij arctan(X_i Z_j / (h √(X_i² + Z_j² + h²)))

with X_i = x_i − x, Z_j = z_j − z and s = +1 on the (1,1), (2,2) corners and
−1 on the mixed ones. Infinite edges are handled by their limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from casimir.schemas.experiment import ElectrodeConfig

FloatArray = NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class DcPotential:
    """Potential (V) and its derivatives across (x) and along (z) the chain."""

    value: FloatArray
    d2_dx2: FloatArray
    d_dz: FloatArray
    d2_dz2: FloatArray


def _corner(
    xe: float, ze: float, x: FloatArray, z: FloatArray, h: float
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """F and its X, Z derivatives for one corner, with X = xe − x and Z = ze − z."""
    zeros = np.zeros(np.broadcast(x, z).shape)
    x_inf, z_inf = math.isinf(xe), math.isinf(ze)
    if x_inf and z_inf:
        quadrant = math.copysign(1.0, xe) * math.copysign(1.0, ze) * 0.5 * math.pi
        return zeros + quadrant, zeros, zeros, zeros
    if x_inf:
        sx = math.copysign(1.0, xe)
        zz = ze - z + zeros
        f = sx * np.arctan(zz / h)
        f_z = sx * h / (h**2 + zz**2)
        f_zz = -sx * 2.0 * h * zz / (h**2 + zz**2) ** 2
        return f, zeros, f_z, f_zz
    if z_inf:
        sz = math.copysign(1.0, ze)
        xx = xe - x + zeros
        f = sz * np.arctan(xx / h)
        f_xx = -sz * 2.0 * h * xx / (h**2 + xx**2) ** 2
        return f, f_xx, zeros, zeros

    xx = xe - x + zeros
    zz = ze - z + zeros
    r = np.sqrt(xx**2 + zz**2 + h**2)
    px = xx**2 + h**2
    pz = zz**2 + h**2
    f = np.arctan(xx * zz / (h * r))
    f_xx = -h * xx * zz * (2.0 / (px**2 * r) + 1.0 / (px * r**3))
    f_z = h * xx / (pz * r)
    f_zz = -h * xx * zz * (2.0 / (pz**2 * r) + 1.0 / (pz * r**3))
    return f, f_xx, f_z, f_zz


def dc_potential(
    electrodes: Sequence[ElectrodeConfig],
    x: FloatArray | float,
    height: float,
    z: FloatArray | float = 0.0,
) -> DcPotential:
    """Summed electrode potential with analytic curvature across the chain axis."""
    if height <= 0:
        raise ValueError("height must be positive")
    x_arr = np.asarray(x, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    shape = np.broadcast(x_arr, z_arr).shape
    value = np.zeros(shape)
    d2x = np.zeros(shape)
    dz = np.zeros(shape)
    d2z = np.zeros(shape)

    for electrode in electrodes:
        scale = electrode.voltage / (2.0 * math.pi)
        for xe, sx in ((electrode.x_min, -1.0), (electrode.x_max, 1.0)):
            for ze, sz in ((electrode.z_min, -1.0), (electrode.z_max, 1.0)):
                sign = scale * sx * sz
                f, f_xx, f_z, f_zz = _corner(xe, ze, x_arr, z_arr, height)
                value += sign * f
                # ∂/∂x = −∂/∂X and ∂/∂z = −∂/∂Z
                d2x += sign * f_xx
                dz -= sign * f_z
                d2z += sign * f_zz
    return DcPotential(value=value, d2_dx2=d2x, d_dz=dz, d2_dz2=d2z)
