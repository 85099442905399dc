"""Multi-qubit assignment statistics: assignment matrix, cross-fidelity, correlations.

Preparations and assignments are bit strings enumerated in binary order,
with the first qubit (config order) as the most significant bit.  Bit 0 is
the bare preparation / ground assignment, bit 1 the pi preparation / excited
assignment.
"""

from dataclasses import dataclass
import itertools
import logging

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


def all_preparations(n):
    """All 2^n preparation tuples in binary order."""
    return [tuple(bits) for bits in itertools.product((0, 1), repeat=n)]


def bit_label(bits, ground="g", excited="e"):
    return "".join(excited if b else ground for b in bits)


def prep_label(bits):
    return "".join("π" if b else "0" for b in bits)


def _index(bits):
    n = bits.shape[1]
    return bits.astype(np.int64) @ (1 << np.arange(n - 1, -1, -1))


def assign(shots, thresholds):
    """Per-shot assignments (1 = excited): signal above the channel threshold."""
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape != (shots.s.shape[1],):
        raise InputError("need one threshold per channel")
    return (shots.s > thresholds).astype(np.int8)


@dataclass
class AssignmentMatrix:
    """Row ``p`` holds P(assigned bit string | prepared bit string ``p``)."""

    probs: np.ndarray
    n_per_row: np.ndarray
    names: tuple

    @property
    def n_qubits(self):
        return len(self.names)

    def marginal_excited(self):
        """P(s_i = e | row) for every row and qubit, shape (2^N, N)."""
        bits = np.array(all_preparations(self.n_qubits), dtype=float)
        return self.probs @ bits

    def single_qubit_pcor(self):
        """P_cor of each qubit from the matrix marginals, averaged over the other qubits' preparations."""
        preps = np.array(all_preparations(self.n_qubits))
        pe = self.marginal_excited()
        out = []
        for i in range(self.n_qubits):
            p_e0 = pe[preps[:, i] == 0, i].mean()
            p_epi = pe[preps[:, i] == 1, i].mean()
            out.append(0.5 * ((1 - p_e0) + p_epi))
        return np.array(out)


def assignment_matrix(shots, thresholds, min_shots=1000):
    """Empirical assignment-probability matrix from heralded shots."""
    shots = shots.heralded()
    n = shots.s.shape[1]
    size = 1 << n
    rows = _index(shots.prepared)
    cols = _index(assign(shots, thresholds))
    counts = np.zeros((size, size))
    np.add.at(counts, (rows, cols), 1.0)
    per_row = counts.sum(axis=1)
    missing = np.nonzero(per_row < min_shots)[0]
    if missing.size:
        labels = ", ".join(prep_label(all_preparations(n)[k]) for k in missing[:4])
        raise InputError(f"preparation rows with fewer than {min_shots} heralded shots: {labels}")
    return AssignmentMatrix(probs=counts / per_row[:, None], n_per_row=per_row.astype(int),
                            names=shots.names)


@dataclass
class CrossFidelityMatrix:
    F: np.ndarray
    names: tuple


def cross_fidelity(matrix):
    """F_ij = <1 - P(e_i|0_j) - P(g_i|pi_j)>, averaged over all other preparations."""
    n = matrix.n_qubits
    preps = np.array(all_preparations(n))
    pe = matrix.marginal_excited()
    F = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            p_e_0j = pe[preps[:, j] == 0, i].mean()
            p_g_pij = 1.0 - pe[preps[:, j] == 1, i].mean()
            F[i, j] = 1.0 - p_e_0j - p_g_pij
    return CrossFidelityMatrix(F=F, names=matrix.names)


@dataclass
class CorrelationMatrix:
    C: np.ndarray
    names: tuple
    excluded_cells: int = 0


def correlation_matrix(shots, thresholds):
    """Outcome correlation coefficients averaged with equal weight over preparations.

    Outcomes are encoded as sigma_z = +1 (g) / -1 (e).  A preparation cell in
    which a pair has zero variance is left out of that pair's average.
    """
    shots = shots.heralded()
    z = 1.0 - 2.0 * assign(shots, thresholds)
    n = z.shape[1]
    sums = np.zeros((n, n))
    used = np.zeros((n, n))
    excluded = 0
    for p in np.unique(shots.prep_index):
        cell = z[shots.prep_index == p]
        if cell.shape[0] < 2:
            excluded += 1
            continue
        dev = cell - cell.mean(axis=0)
        cov = dev.T @ dev / cell.shape[0]
        var = np.diag(cov)
        ok = np.outer(var > 0, var > 0)
        if not ok.all():
            excluded += 1
            log.warning("preparation cell %d has zero outcome variance; excluded for affected pairs", p)
        denom = np.sqrt(np.outer(var, var))
        corr = np.divide(cov, denom, out=np.zeros_like(cov), where=ok)
        sums += corr
        used += ok
    with np.errstate(invalid="ignore"):
        C = np.where(used > 0, sums / np.maximum(used, 1), 0.0)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return CorrelationMatrix(C=C, names=shots.names, excluded_cells=excluded)
