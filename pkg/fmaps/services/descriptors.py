import logging
from typing import Optional

import numpy as np

from config import get_settings
from fmaps.models.errors import DimensionMismatch, InsufficientSpectrum, ZeroColumn
from fmaps.models.geometry import AreaVector, EigenBasis
from fmaps.models.maps import DescriptorSet, Provenance

settings = get_settings()
logger = logging.getLogger(__name__)

ZERO_EIGENVALUE = 1e-8  # relative to the largest eigenvalue


def wks(basis: EigenBasis, q: Optional[int] = None, variance_scale: Optional[float] = None) -> DescriptorSet:
    """Wave Kernel Signature with q energies spread over the log-spectrum.

    The energy range is [log lambda_1, log lambda_K] shrunk by 2 sigma_w on
    each side, with sigma_w = variance_scale * (range / q). Each column is
    normalized by the sum of its energy weights. Zero eigenvalues are skipped.
    """
    q = settings.WKS_COUNT if q is None else q
    variance_scale = settings.WKS_VARIANCE if variance_scale is None else variance_scale
    if q < 2:
        raise InsufficientSpectrum(f"need at least 2 energies, got q={q}")
    if variance_scale <= 0:
        raise ValueError(f"variance_scale must be positive, got {variance_scale}")

    evals = np.asarray(basis.evals, dtype=np.float64)
    keep = evals > ZERO_EIGENVALUE * max(float(evals.max()), 0.0)
    if np.count_nonzero(keep) < 2:
        raise InsufficientSpectrum(f"basis {basis.name!r} has fewer than 2 nonzero eigenvalues")

    log_evals = np.log(evals[keep])
    phi = basis.phi[:, keep]
    e_min, e_max = float(log_evals.min()), float(log_evals.max())
    if e_max <= e_min:
        raise InsufficientSpectrum("nonzero eigenvalues span no energy range")

    sigma = variance_scale * (e_max - e_min) / q
    energies = np.linspace(e_min + 2 * sigma, e_max - 2 * sigma, q)
    coefs = np.exp(-((energies[:, None] - log_evals[None, :]) ** 2) / (2 * sigma ** 2))

    values = (phi ** 2) @ coefs.T / coefs.sum(axis=1)[None, :]
    logger.debug("wks on %r: %d energies, sigma=%.4f", basis.name, q, sigma)
    return DescriptorSet(values=values, provenance=Provenance.WKS)


def normalize_l2(desc: DescriptorSet, areas: AreaVector) -> DescriptorSet:
    """Scale every column to unit area-weighted L2 norm."""
    if areas.n != desc.n:
        raise DimensionMismatch(f"descriptors have {desc.n} rows, areas have {areas.n}")
    norms = np.sqrt(np.einsum("i,ij,ij->j", areas.values, desc.values, desc.values))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroColumn(f"descriptor columns {zero.tolist()} are identically zero")
    return DescriptorSet(values=desc.values / norms, provenance=desc.provenance)


def spread_energies(desc: DescriptorSet, p: int) -> DescriptorSet:
    """Keep p columns evenly spaced over the energy grid, first and last included."""
    if not 1 <= p <= desc.q:
        raise DimensionMismatch(f"cannot keep {p} of {desc.q} descriptor columns")
    if p == desc.q:
        return desc
    columns = np.round(np.linspace(0, desc.q - 1, p)).astype(np.int64)
    return DescriptorSet(values=desc.values[:, columns], provenance=desc.provenance)
