"""Convergence diagnostics: effective sample size and split-R-hat.

ESS uses the autocovariance through FFT with Geyer's initial positive
sequence truncation; split-R-hat is the classic between/within variance
ratio computed after splitting every chain in half, so it is informative
even for a single chain.
"""

from __future__ import annotations

import numpy as np


def _autocovariance(x):
    """Biased autocovariance function of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real
    return acov / n


def ess(x):
    """Effective sample size of one scalar chain.

    Sums autocorrelations over Geyer's initial positive sequence (pairs
    of consecutive lags kept while their sum stays positive).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    acov = _autocovariance(x)
    if acov[0] <= 0:
        return float(n)  # constant chain
    rho = acov / acov[0]
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / max(tau, 1.0 / n)))


def split_rhat(chains):
    """Split-R-hat over one or more chains of equal length.

    Parameters
    ----------
    chains : ndarray, shape (n_chains, n_draws) or (n_draws,)

    Returns
    -------
    float
        The potential scale reduction factor after splitting each chain
        in half; 1.0 indicates mixing, values > 1.1 typically flag
        non-convergence.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1]
    if n < 4:
        return float("nan")
    half = n // 2
    segments = []
    for c in chains:
        segments.append(c[:half])
        segments.append(c[half:2 * half])
    segs = np.asarray(segments)
    m, n = segs.shape
    means = segs.mean(axis=1)
    variances = segs.var(axis=1, ddof=1)
    W = variances.mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return 1.0 if B <= 0 else float("inf")
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def summarize_chains(named_chains):
    """ESS and split-R-hat for a mapping name -> (n_chains, n_draws) array.

    Returns {"ess": {...}, "rhat": {...}} with ESS pooled across chains.
    """
    out_ess, out_rhat = {}, {}
    for name, arr in named_chains.items():
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        out_ess[name] = float(sum(ess(c) for c in arr))
        out_rhat[name] = split_rhat(arr)
    return {"ess": out_ess, "rhat": out_rhat}
