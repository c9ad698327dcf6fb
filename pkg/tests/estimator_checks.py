"""Synthetic processes with known exponents, shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from lobgpt.stylized import acf, dfa_alpha, excess_kurtosis, hurst_rs


def fgn(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    """Fractional Gaussian noise by Davies-Harte circulant embedding."""
    k = np.arange(n + 1, dtype=np.float64)
    g = 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    c = np.concatenate([g, g[-2:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -1e-9:
        raise ValueError("circulant embedding is not non-negative definite")
    lam = np.maximum(lam, 0.0)
    m = c.size
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return np.fft.fft(np.sqrt(lam / m) * z).real[:n]


def ar1(n: int, phi: float, rng: np.random.Generator) -> np.ndarray:
    e = rng.standard_normal(n + 1000)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, e.size):
        x[i] = phi * x[i - 1] + e[i]
    return x[1000:]


def dfa_replicates(kind: str, n=2**14, reps=20, seed=0) -> np.ndarray:
    rng = np.random.default_rng([seed, 1 if kind == "walk" else 0])
    out = []
    for _ in range(reps):
        w = rng.standard_normal(n)
        out.append(dfa_alpha(np.cumsum(w) if kind == "walk" else w)["alpha"])
    return np.array(out)


def hurst_white(n=2**14, seed=0) -> dict:
    return hurst_rs(np.random.default_rng([seed, 2]).standard_normal(n))


def hurst_fgn(H=0.7, n=2**14, seed=0) -> dict:
    return hurst_rs(fgn(n, H, np.random.default_rng([seed, 3])))


def kurtosis_normal(n=10**6, seed=0) -> float:
    return excess_kurtosis(np.random.default_rng([seed, 4]).standard_normal(n))


def ar1_lag1(n=10**5, phi=0.5, seed=0) -> float:
    return float(acf(ar1(n, phi, np.random.default_rng([seed, 5])), 1).values[1])
