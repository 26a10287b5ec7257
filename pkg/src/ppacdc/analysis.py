"""
Dense-form companion to the simulator.

Stacking ``z = (x, s)`` the quantized iteration reads

    z_{k+1} = (Gamma + Pi) z_k + (Pi - I) e_k,

with ``e_k`` the quantization error, ``Gamma = [[0, g I], [0, -g I]]`` and
``Pi = [[R, 0], [I - R, C]]``. This module builds those matrices, checks the
spectrum of ``Gamma + Pi``, runs the unquantized surplus iteration as a
reference, and extracts quantization errors from simulator traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ppacdc.eigen import eigenvalues
from ppacdc.graph import Digraph, push_weight, pull_weight

DEFAULT_SPECTRAL_TOL = 1e-9


@dataclass(frozen=True)
class AugmentedSystem:
    n: int
    gamma: float
    gamma_block: np.ndarray
    pi_block: np.ndarray
    system: np.ndarray


@dataclass(frozen=True)
class SpectralReport:
    gamma: float
    dominant: complex
    second_modulus: float
    passes: bool
    eigenvalues: np.ndarray

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "dominant_re": float(self.dominant.real),
            "dominant_im": float(self.dominant.imag),
            "second_modulus": float(self.second_modulus),
            "passes": bool(self.passes),
        }


def weight_matrices(g: Digraph) -> tuple[np.ndarray, np.ndarray]:
    """Dense pull (row-stochastic) and push (column-stochastic) matrices."""
    n = g.node_count
    R = np.array([[pull_weight(g, j, i) for i in range(n)] for j in range(n)])
    C = np.array([[push_weight(g, l, j) for j in range(n)] for l in range(n)])
    return R, C


def build_augmented(g: Digraph, gamma: float) -> AugmentedSystem:
    n = g.node_count
    R, C = weight_matrices(g)
    eye = np.eye(n)
    zero = np.zeros((n, n))
    gamma_block = np.block([[zero, gamma * eye], [zero, -gamma * eye]])
    pi_block = np.block([[R, zero], [eye - R, C]])
    return AugmentedSystem(n, float(gamma), gamma_block, pi_block, gamma_block + pi_block)


def lti_step(sys: AugmentedSystem, z, e=None) -> np.ndarray:
    """``(Gamma + Pi) z + (Pi - I) e``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (2 * sys.n,):
        raise ValueError(f"z must have length {2 * sys.n}")
    out = sys.system @ z
    if e is not None:
        e = np.asarray(e, dtype=float)
        if e.shape != (2 * sys.n,):
            raise ValueError(f"e must have length {2 * sys.n}")
        out = out + sys.pi_block @ e - e
    return out


def spectral_check(sys: AugmentedSystem, tol: float = DEFAULT_SPECTRAL_TOL) -> SpectralReport:
    """Check for a simple eigenvalue at 1 with every other eigenvalue inside the unit disc.

    Passes iff exactly one eigenvalue lies within ``tol`` of 1 and all the
    others have modulus at most ``1 - tol``. ``second_modulus`` is the largest
    modulus among the eigenvalues other than the one closest to 1.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    ev = eigenvalues(sys.system)
    i_dom = int(np.argmin(np.abs(ev - 1.0)))
    dominant = complex(ev[i_dom])
    rest = np.delete(ev, i_dom)
    second = float(np.max(np.abs(rest))) if rest.size else 0.0
    near_one = int(np.sum(np.abs(ev - 1.0) <= tol))
    passes = near_one == 1 and abs(dominant - 1.0) <= tol and second <= 1.0 - tol
    return SpectralReport(sys.gamma, dominant, second, passes, ev)


def reference_run(g: Digraph, x0: Sequence[float], gamma: float, iters: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Unquantized surplus consensus, node by node.

    Returns arrays ``x`` and ``s`` of shape ``(iters + 1, n)``.
    """
    n = g.node_count
    x = np.zeros((iters + 1, n))
    s = np.zeros((iters + 1, n))
    x[0] = np.asarray(x0, dtype=float)
    ins = [g.in_neighbors(j) for j in range(n)]
    for k in range(iters):
        xk, sk = x[k], s[k]
        for j in range(n):
            r = 1.0 / (1 + len(ins[j]))
            c_own = 1.0 / (1 + g.out_degree(j))
            x_new = r * xk[j] + gamma * sk[j] + sum(r * xk[i] for i in ins[j])
            s_new = (c_own * sk[j] + xk[j] - x_new
                     + sum(sk[i] / (1 + g.out_degree(i)) for i in ins[j]))
            x[k + 1, j] = x_new
            s[k + 1, j] = s_new
    return x, s


def error_trace(trace) -> np.ndarray:
    """Quantization error ``e_k = (x_q - x, s_q - s)`` for every trace record."""
    rows = []
    for rec in trace:
        if not rec.x_q:
            raise ValueError(f"trace record {rec.k} carries no quantized values")
        e_x = np.subtract(rec.x_q, rec.x)
        e_s = np.subtract(rec.s_q, rec.s)
        rows.append(np.concatenate([e_x, e_s]))
    return np.array(rows)

