from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Tuple
import logging

import numpy as np

from src.errors import UsageError
from src.records import MatrixRecord, TubePolicyRecord
from src.tubes.ellipsoid import check_pd

logger = logging.getLogger(__name__)

MODES = ("constant", "varying")


@dataclass(frozen=True)
class TubePolicy:
    """Tube gains and cross-section shapes for the horizon plus the mode-2 terminal data."""

    mode: str
    rho: float
    K_hat: np.ndarray
    V_hat: np.ndarray
    P: np.ndarray
    K_seq: Tuple[np.ndarray, ...] = ()
    V_seq: Tuple[np.ndarray, ...] = ()
    certificate: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown tube mode {self.mode!r}")
        check_pd(self.V_hat, "V_hat")
        lam = np.linalg.eigvalsh(0.5 * (self.P + self.P.T))
        if lam.size and lam[0] < -1e-9:
            raise UsageError(f"P must be positive semidefinite (smallest eigenvalue {lam[0]:.3e})")
        if len(self.K_seq) != len(self.V_seq):
            raise UsageError("K_seq and V_seq lengths differ")

    @property
    def horizon(self) -> int:
        return len(self.K_seq)

    @property
    def n_x(self) -> int:
        return self.V_hat.shape[0]

    @property
    def n_u(self) -> int:
        return self.K_hat.shape[0]

    def constant(self, horizon: int) -> "TubePolicy":
        """Algorithm-1 sequences: K_i = K_hat and V_i = V_hat for every i."""
        return replace(self, mode="constant", K_seq=(self.K_hat,) * horizon, V_seq=(self.V_hat,) * horizon)

    def shape(self, i: int) -> np.ndarray:
        """V_i for i < N, V_hat at the end of the horizon."""
        return self.V_seq[i] if i < self.horizon else self.V_hat

    def to_record(self) -> TubePolicyRecord:
        return TubePolicyRecord(
            mode=self.mode,
            rho=self.rho if np.isfinite(self.rho) else None,
            K_hat=MatrixRecord.of(self.K_hat),
            V_hat=MatrixRecord.of(self.V_hat),
            P=MatrixRecord.of(self.P),
            K_seq=[MatrixRecord.of(K) for K in self.K_seq],
            V_seq=[MatrixRecord.of(V) for V in self.V_seq],
            certificate=dict(self.certificate),
        )

    @classmethod
    def from_record(cls, record: TubePolicyRecord) -> "TubePolicy":
        return cls(
            mode=record.mode,
            rho=np.inf if record.rho is None else record.rho,
            K_hat=record.K_hat.to_array(),
            V_hat=record.V_hat.to_array(),
            P=record.P.to_array(),
            K_seq=tuple(K.to_array() for K in record.K_seq),
            V_seq=tuple(V.to_array() for V in record.V_seq),
            certificate=dict(record.certificate),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_record().model_dump_json(indent=2))
        logger.info("tube policy written to %s", path)
        return path

    @classmethod
    def load(cls, path) -> "TubePolicy":
        return cls.from_record(TubePolicyRecord.model_validate_json(Path(path).read_text()))
