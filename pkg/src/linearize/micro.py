"""
Linear multirate model and elimination of the interior micro nodes.

The linearized macro equations are written with the interior fast
configurations zeta = (q^{f,1}, ..., q^{f,p-1}) kept explicit:

    Mx1 dx_{i+1} + Dx0 dx_i + Mz zeta + Ju du = 0      (macro rows)
    Ex1 dx_{i+1} + Ex0 dx_i + Ez zeta + Eu du = 0      (interior rows)

The macro model follows from the Schur complement over Ez, and the micro
deviations from back-substitution.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np

from src.config import CONDITION_LIMIT
from src.errors import LinearizationError
from src.integrators.multirate import MacroAction, MacroStack
from src.linearize.models import LinearModel, MicroMaps


@dataclass(frozen=True)
class ExtendedMultirateModel:
    stack: MacroStack
    action: MacroAction
    y_anchor: np.ndarray
    u_anchor: np.ndarray

    @property
    def n_x(self) -> int:
        return self.stack.partition.n_x

    @property
    def n_q(self) -> int:
        return self.stack.partition.n_q

    @property
    def n_z(self) -> int:
        return self.stack.interior.shape[0]

    # -----------------------
    # Selectors
    # -----------------------
    @cached_property
    def Y0(self) -> np.ndarray:
        """dy contribution of dx_i."""
        st = self.stack
        Y = np.zeros((st.n_y, self.n_x))
        Y[st.slow0, : st.n_s] = np.eye(st.n_s)
        Y[st.fast(0), st.n_s : self.n_q] = np.eye(st.n_f)
        return Y

    @cached_property
    def Y1(self) -> np.ndarray:
        """dy contribution of dx_{i+1}."""
        st = self.stack
        Y = np.zeros((st.n_y, self.n_x))
        Y[st.slow1, : st.n_s] = np.eye(st.n_s)
        Y[st.fast(st.p), st.n_s : self.n_q] = np.eye(st.n_f)
        return Y

    @cached_property
    def Yz(self) -> np.ndarray:
        Y = np.zeros((self.stack.n_y, self.n_z))
        Y[self.stack.interior, np.arange(self.n_z)] = 1.0
        return Y

    @cached_property
    def Rm(self) -> np.ndarray:
        """Signed selection of Gamma entries forming the macro rows."""
        st = self.stack
        R = np.zeros((self.n_x, st.n_y))
        rows = [(st.slow0, 1.0), (st.fast(0), 1.0), (st.slow1, -1.0), (st.fast(st.p), -1.0)]
        r = 0
        for sl, sign in rows:
            k = sl.stop - sl.start
            R[r : r + k, sl] = sign * np.eye(k)
            r += k
        return R

    @cached_property
    def Ri(self) -> np.ndarray:
        R = np.zeros((self.n_z, self.stack.n_y))
        R[np.arange(self.n_z), self.stack.interior] = 1.0
        return R

    # -----------------------
    # Blocks
    # -----------------------
    @cached_property
    def blocks(self) -> dict:
        n, Jy, Ju = self.n_q, self.action.jac_y, self.action.jac_u
        P0 = np.zeros((self.n_x, self.n_x))
        P0[:n, n:] = np.eye(n)
        P1 = np.zeros((self.n_x, self.n_x))
        P1[n:, n:] = np.eye(n)
        return {
            "Mx1": self.Rm @ Jy @ self.Y1 + P1,
            "Dx0": self.Rm @ Jy @ self.Y0 + P0,
            "Mz": self.Rm @ Jy @ self.Yz,
            "Ju": self.Rm @ Ju,
            "Ex1": self.Ri @ Jy @ self.Y1,
            "Ex0": self.Ri @ Jy @ self.Y0,
            "Ez": self.Ri @ Jy @ self.Yz,
            "Eu": self.Ri @ Ju,
        }

    @cached_property
    def Ez_inv(self) -> np.ndarray:
        Ez = self.blocks["Ez"]
        if self.n_z == 0:
            return Ez
        cond = float(np.linalg.cond(Ez))
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise LinearizationError("singular interior micro block", condition=cond)
        return np.linalg.inv(Ez)

    def schur(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = self.blocks
        if self.n_z == 0:
            return b["Mx1"], b["Dx0"], b["Ju"]
        K = b["Mz"] @ self.Ez_inv
        return b["Mx1"] - K @ b["Ex1"], b["Dx0"] - K @ b["Ex0"], b["Ju"] - K @ b["Eu"]

    def reduce_rows(self, gamma_vector: np.ndarray) -> np.ndarray:
        """Macro-row image of a Gamma-shaped vector after eliminating the interior rows."""
        macro = self.Rm @ gamma_vector
        if self.n_z == 0:
            return macro
        return macro - self.blocks["Mz"] @ self.Ez_inv @ (self.Ri @ gamma_vector)

    def interior_response(self, A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """zeta = Zx dx + Zu du along the linear macro prediction."""
        b = self.blocks
        if self.n_z == 0:
            return np.zeros((0, self.n_x)), np.zeros((0, B.shape[1]))
        Zx = -self.Ez_inv @ (b["Ex1"] @ A + b["Ex0"])
        Zu = -self.Ez_inv @ (b["Ex1"] @ B + b["Eu"])
        return Zx, Zu

    def y_maps(self, A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """dy = Ty_x dx + Ty_u du along the linear macro prediction."""
        Zx, Zu = self.interior_response(A, B)
        Ty_x = self.Y0 + self.Y1 @ A + self.Yz @ Zx
        Ty_u = self.Y1 @ B + self.Yz @ Zu
        return Ty_x, Ty_u


def micro_eliminate(ext: ExtendedMultirateModel, model: LinearModel) -> MicroMaps:
    """Express every micro-node fast configuration and momentum linearly in (dx_i, du_i)."""
    st = ext.stack
    part = st.partition
    fast = list(part.fast_q)
    n_s, n_f, n_q = st.n_s, st.n_f, ext.n_q
    A, B = model.A, model.B
    Ty_x, Ty_u = ext.y_maps(A, B)

    Yq = [Ty_x[st.fast(m)] for m in range(st.p + 1)]
    Zq = [Ty_u[st.fast(m)] for m in range(st.p + 1)]

    Yp, Zp = [], []
    first = np.zeros((n_f, ext.n_x))
    first[:, n_q + n_s :] = np.eye(n_f)
    Yp.append(first)
    Zp.append(np.zeros((n_f, B.shape[1])))
    for m in range(1, st.p):
        blk = ext.action.blocks[m]
        Pa, Pb = st.node_maps[m], st.node_maps[m + 1]
        dG1 = blk.G1a[fast] @ Pa + blk.G1b[fast] @ Pb
        Yp.append(-dG1 @ Ty_x)
        Zp.append(-(dG1 @ Ty_u + blk.G1u[fast] @ part.micro_control_map(m)))
    Yp.append(A[n_q + n_s :])
    Zp.append(B[n_q + n_s :])
    return MicroMaps(Yq=Yq, Zq=Zq, Yp=Yp, Zp=Zp)
