"""Problem-instance container: the cost matrix and its Frobenius normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

from .linalg import SparseSymmetric, frobenius_norm


@dataclass(frozen=True)
class CostMatrix:
    """Sparse symmetric cost C with cached ||C||_F; source of C_tilde = C/||C||_F."""

    raw: SparseSymmetric
    fro_norm: float = field(init=False)

    def __post_init__(self):
        fro = frobenius_norm(self.raw)
        if fro <= 0.0:
            raise ValueError("cost matrix must be nonzero (zero matrix short-circuits upstream)")
        object.__setattr__(self, "fro_norm", fro)

    @property
    def dim(self) -> int:
        return self.raw.dim

    def c_tilde(self) -> SparseSymmetric:
        """The normalized cost C/||C||_F (unit Frobenius norm)."""
        return self.raw.scaled(1.0 / self.fro_norm)

    @property
    def scale(self) -> float:
        """n * ||C||_F: the factor between normalized and original objectives."""
        return self.dim * self.fro_norm
