"""PSNR and Gaussian-window SSIM, the latter with its gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5) applied as two separable
zero-padded 'same' filters, C1 = 0.01^2 and C2 = 0.03^2 for unit data range.
Channels are filtered independently and the SSIM map is averaged over all
pixels and channels.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

C1 = 0.01**2
C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5


@lru_cache(maxsize=None)
def gaussian_kernel1d(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _blur(img: np.ndarray) -> np.ndarray:
    k = gaussian_kernel1d()
    out = correlate1d(img, k, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, k, axis=1, mode="constant", cval=0.0)


def _as3(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    return img[..., None] if img.ndim == 2 else img


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _as3(a), _as3(b)
    mu_a, mu_b = _blur(a), _blur(b)
    saa = _blur(a * a) - mu_a**2
    sbb = _blur(b * b) - mu_b**2
    sab = _blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (saa + sbb + C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")
    return float(ssim_map(a, b).mean())


def ssim_and_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM(x, y) and its gradient with respect to ``x``."""
    x3, y3 = _as3(x), _as3(y)
    mx, my = _blur(x3), _blur(y3)
    exx, eyy, exy = _blur(x3 * x3), _blur(y3 * y3), _blur(x3 * y3)
    sxx = exx - mx**2
    syy = eyy - my**2
    sxy = exy - mx * my
    A = 2 * mx * my + C1
    B = 2 * sxy + C2
    C = mx**2 + my**2 + C1
    D = sxx + syy + C2
    S = A * B / (C * D)
    n = S.size
    # partials of S with respect to the blurred moments (mx, exx, exy)
    inv_cd = 1.0 / (C * D)
    d_exy = 2 * A * inv_cd
    d_exx = -S / D
    d_mx = (2 * my * B - 2 * my * A) * inv_cd - S * (2 * mx) / C + S * (2 * mx) / D
    # the blur with a symmetric kernel and zero padding is self-adjoint
    g = _blur(d_mx / n) + 2 * x3 * _blur(d_exx / n) + y3 * _blur(d_exy / n)
    return float(S.mean()), g.reshape(np.shape(x))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-range images; +inf for identical images."""
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / m))
