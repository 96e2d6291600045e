"""Sample-count heuristic and an empirical rank check for linear varying-coefficient designs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

ENCODER_CLASSES = ("population", "linear_vc")
CONVENTION = ("d_s = p - 1 with p the number of coefficient columns; the offset is read as a "
              "ones column inside X, so it adds no separate degree of freedom")


@dataclass(frozen=True)
class IdentifiabilityReport:
    n: int
    m: int
    p: int
    encoder_class: str
    d_g: int
    d_s: int
    threshold: int
    heuristic_identifiable: bool
    empirical_rank: int | None = None
    empirical_identifiable: bool | None = None
    convention: str = CONVENTION

    def to_dict(self) -> dict:
        return asdict(self)


def heuristic_check(n: int, m: int, p: int, encoder_class: str) -> IdentifiabilityReport:
    """Advisory rule: identifiable when ``n > d_g * d_s``.

    Population models are constant encoders (``d_g = 1``); a linear
    varying-coefficient encoder has ``d_g = m``.  Both use ``d_s = p - 1``.
    """
    if encoder_class not in ENCODER_CLASSES:
        raise ConfigError(f"no redundancy degree is defined for encoder class {encoder_class!r}; "
                          f"supported: {ENCODER_CLASSES}")
    if min(n, m, p) < 1:
        raise ConfigError("n, m and p must all be >= 1")
    d_g = 1 if encoder_class == "population" else m
    d_s = p - 1
    threshold = d_g * d_s
    return IdentifiabilityReport(n, m, p, encoder_class, d_g, d_s, threshold, n > threshold)


def vc_design(C, X) -> np.ndarray:
    """``n x (m*p)`` design whose i-th row is vec(X_i C_i^T)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if C.shape[0] != X.shape[0]:
        raise ValueError(f"C has {C.shape[0]} rows, X has {X.shape[0]}")
    return (X[:, :, None] * C[:, None, :]).reshape(C.shape[0], -1)


def rank_check(C, X, rtol: float = 1e-8) -> tuple[int, bool]:
    """Numerical rank of the VC design and whether it pins down beta uniquely."""
    design = vc_design(C, X)
    if design.size == 0:
        return 0, False
    sv = np.linalg.svd(design, compute_uv=False)
    rank = int((sv > rtol * sv[0]).sum()) if sv[0] > 0 else 0
    return rank, rank == design.shape[1]


def full_report(n: int | None, m: int, p: int, encoder_class: str, C=None, X=None) -> IdentifiabilityReport:
    if n is None:
        if C is None:
            raise ConfigError("either n or data must be provided")
        n = int(np.atleast_2d(C).shape[0])
    report = heuristic_check(n, m, p, encoder_class)
    if C is None:
        return report
    rank, ok = rank_check(C, X)
    return IdentifiabilityReport(**{**report.to_dict(), "empirical_rank": rank, "empirical_identifiable": ok})
