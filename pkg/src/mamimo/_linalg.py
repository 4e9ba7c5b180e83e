"""Small complex linear-algebra helpers shared across the package."""

import numpy as np


def herm(a):
    """Conjugate transpose."""
    return a.conj().T


def hermitize(a):
    """Project onto the Hermitian part, killing numerical asymmetry."""
    return 0.5 * (a + a.conj().T)


def herm_sqrt(q, clip_tol=0.0):
    """Principal Hermitian square root via eigendecomposition.

    Eigenvalues below ``-clip_tol`` raise; small negatives are clipped to 0
    so that PSD matrices polluted by round-off stay usable.
    """
    w, v = np.linalg.eigh(hermitize(q))
    if clip_tol > 0 and w.min() < -clip_tol * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError("matrix is not PSD within tolerance")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def logdet(a):
    """log|det A| for a (possibly non-Hermitian) matrix with det > 0."""
    sign, val = np.linalg.slogdet(a)
    return float(val)


def rel_change(new, old):
    """Relative Frobenius change between two matrices."""
    denom = max(np.linalg.norm(old), 1e-300)
    return np.linalg.norm(new - old) / denom


def clip_psd(a):
    """Hermitize and clip negative eigenvalues to zero."""
    w, v = np.linalg.eigh(hermitize(a))
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T
