"""Complex vectors and matrices stored as paired real/imaginary arrays.

A complex matrix M = M_R + i*M_C acts on row vectors either through plain
complex arithmetic or through its real block embedding

    embed(M) = [[ M_R, M_C],
                [-M_C, M_R]]

applied to the concatenated form [x_re, x_im].  Both routes are exposed and
agree to machine precision; the embedding is a ring homomorphism, so
embed(A) @ embed(B) == embed(A @ B).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _to_float2d(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a two-dimensional array")
    return arr


@dataclass
class ComplexVector:
    """Length-N complex vector as separate real and imaginary parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.ndim != 1 or self.im.ndim != 1:
            raise ValueError("re and im must be one-dimensional")
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"re has length {self.re.shape[0]} but im has length {self.im.shape[0]}"
            )
        if self.re.shape[0] < 1:
            raise ValueError("vector must have at least one entry")

    @property
    def n(self) -> int:
        return self.re.shape[0]

    def concat(self) -> np.ndarray:
        """Concatenated real form [re, im] of length 2N."""
        return np.concatenate([self.re, self.im])

    @classmethod
    def from_concat(cls, arr) -> "ComplexVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] % 2 != 0:
            raise ValueError("concatenated form must be one-dimensional with even length")
        half = arr.shape[0] // 2
        return cls(arr[:half].copy(), arr[half:].copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z) -> "ComplexVector":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())


@dataclass
class ComplexMatrix:
    """N1 x N2 complex matrix as separate real and imaginary parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        self.re = _to_float2d(self.re)
        self.im = _to_float2d(self.im)
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"re has shape {self.re.shape} but im has shape {self.im.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z) -> "ComplexMatrix":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())


@dataclass
class SvdFactors:
    """Factorization M = beta * V @ diag(sigma) @ U with unitary V and U."""

    V: ComplexMatrix
    sigma: np.ndarray
    U: ComplexMatrix
    beta: float = 1.0

    def __post_init__(self) -> None:
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.ndim != 1:
            raise ValueError("sigma must be one-dimensional")


def embed_block(m: ComplexMatrix) -> np.ndarray:
    """Real 2N1 x 2N2 block embedding [[re, im], [-im, re]]."""
    return np.block([[m.re, m.im], [-m.im, m.re]])


def apply(m: ComplexMatrix, x: ComplexVector) -> ComplexVector:
    """Row-vector product x @ M using complex arithmetic."""
    n1, n2 = m.shape
    if x.n != n1:
        raise ValueError(
            f"cannot apply {n1}x{n2} matrix to length-{x.n} vector "
            f"(matrix input dimension {n1} != vector length {x.n})"
        )
    return ComplexVector.from_complex(x.to_complex() @ m.to_complex())


def apply_embedded(m: ComplexMatrix, x: ComplexVector) -> ComplexVector:
    """Same product as :func:`apply`, computed through the real embedding."""
    n1, n2 = m.shape
    if x.n != n1:
        raise ValueError(
            f"cannot apply {n1}x{n2} matrix to length-{x.n} vector "
            f"(matrix input dimension {n1} != vector length {x.n})"
        )
    return ComplexVector.from_concat(x.concat() @ embed_block(m))


def svd(m: ComplexMatrix) -> SvdFactors:
    """Full SVD with unitary factors; singular values sorted nonincreasing.

    Returned factors satisfy V @ diag(sigma) @ U == M (beta is left at 1;
    see :func:`amplification_normalize`).
    """
    if not (np.all(np.isfinite(m.re)) and np.all(np.isfinite(m.im))):
        raise ValueError("matrix entries must be finite")
    v, sigma, u = np.linalg.svd(m.to_complex(), full_matrices=True)
    return SvdFactors(
        V=ComplexMatrix.from_complex(v),
        sigma=sigma,
        U=ComplexMatrix.from_complex(u),
        beta=1.0,
    )


def reconstruct(f: SvdFactors) -> ComplexMatrix:
    """Product beta * V @ diag(sigma) @ U with a rectangular diagonal."""
    n1 = f.V.shape[0]
    n2 = f.U.shape[0]
    diag = np.zeros((n1, n2))
    np.fill_diagonal(diag, f.sigma)
    return ComplexMatrix.from_complex(
        f.beta * (f.V.to_complex() @ diag @ f.U.to_complex())
    )


def amplification_normalize(f: SvdFactors) -> SvdFactors:
    """Pull a uniform scale beta out of sigma so that max(sigma) <= 1.

    beta is the largest singular value, or 1 for the all-zero matrix so the
    division is well defined.  The product beta * V @ diag(sigma) @ U is
    unchanged.
    """
    if f.beta != 1.0:
        raise ValueError("factors are already normalized (beta != 1)")
    if f.sigma.size == 0:
        raise ValueError("sigma must be nonempty")
    peak = float(f.sigma.max())
    beta = peak if peak > 0.0 else 1.0
    return SvdFactors(V=f.V, sigma=f.sigma / beta, U=f.U, beta=beta)
