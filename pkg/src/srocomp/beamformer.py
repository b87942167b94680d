"""Oracle relative transfer functions and a diagonally loaded LCMV beamformer.

Each loudspeaker is extracted from the microphone array by a beamformer that
passes it undistorted and nulls the other one. The relative transfer functions
(RTFs) come from a solo initialization phase in which only that loudspeaker
plays, with its playback signal as the reference.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram
from .dwacd import ActivityDetector
from .errors import AlignmentError, DataError, DomainError, ShapeError

RTF_FIELDS = ("bin", "mic", "source", "re", "im")
DEGENERATE_FLOOR = 1e-12


@dataclass
class RtfColumn:
    """RTF of one loudspeaker: ``a[k]`` (shape ``(K, M)``) with ``a[k, 0] = 1``.

    ``degenerate[k]`` marks bins whose reference cross-PSD fell below the floor;
    their RTF is the all-ones vector.
    """

    a: np.ndarray
    degenerate: np.ndarray


@dataclass
class RtfMatrix:
    """Per-bin ``M x 2`` RTF matrix ``A[k] = [a_1[k], a_2[k]]``, shape ``(K, M, 2)``."""

    A: np.ndarray
    degenerate: np.ndarray
    reference_mic: int = 0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=complex)
        if self.A.ndim != 3 or self.A.shape[2] != 2:
            raise ShapeError(f"RTF matrix must be (bins, mics, 2), got {self.A.shape}")
        self.degenerate = np.broadcast_to(np.asarray(self.degenerate, dtype=bool),
                                          (self.A.shape[0], 2)).copy()

    @classmethod
    def from_columns(cls, a1: RtfColumn, a2: RtfColumn) -> "RtfMatrix":
        if a1.a.shape != a2.a.shape:
            raise ShapeError("RTF columns differ in shape")
        return cls(np.stack([a1.a, a2.a], axis=-1),
                   np.stack([a1.degenerate, a2.degenerate], axis=-1))

    @property
    def n_bins(self) -> int:
        return self.A.shape[0]

    @property
    def n_mics(self) -> int:
        return self.A.shape[1]

    def save_csv(self, path: str):
        """Text table with columns ``bin, mic, source, re, im`` (``source``
        counts loudspeakers from 1); floats are written exactly."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(RTF_FIELDS)
            for k in range(self.n_bins):
                for q in range(2):
                    for m in range(self.n_mics):
                        v = self.A[k, m, q]
                        w.writerow([k, m, q + 1, repr(float(v.real)), repr(float(v.imag))])

    @classmethod
    def load_csv(cls, path: str) -> "RtfMatrix":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows or tuple(rows[0]) != RTF_FIELDS:
            raise DataError(f"{path}: expected header {','.join(RTF_FIELDS)}")
        body = rows[1:]
        k = np.array([int(r[0]) for r in body])
        m = np.array([int(r[1]) for r in body])
        q = np.array([int(r[2]) for r in body]) - 1
        A = np.zeros((k.max() + 1, m.max() + 1, 2), dtype=complex)
        A[k, m, q] = [complex(float(r[3]), float(r[4])) for r in body]
        return cls(A, _all_ones(A))

    def save_npz(self, path: str):
        np.savez(path, A=self.A, degenerate=self.degenerate,
                 reference_mic=self.reference_mic)

    @classmethod
    def load_npz(cls, path: str) -> "RtfMatrix":
        with np.load(path) as d:
            return cls(d["A"], d["degenerate"], int(d["reference_mic"]))


def _all_ones(A):
    return np.all(A == 1, axis=1)


def estimate_oracle_rtf(solo_mics: Spectrogram, playback: Spectrogram,
                        active=None, floor: float = DEGENERATE_FLOOR) -> RtfColumn:
    """RTF of the only active loudspeaker from a solo initialization phase.

    ``Phi[k] = mean_l Y[k, l] conj(X[k, l])`` over active frames, then
    ``a = Phi / Phi[0]``.

    Args:
        solo_mics: Microphone spectrogram ``(M, L, K)`` while only this
            loudspeaker plays.
        playback: Its playback spectrogram ``(1, L, K)``.
        active: Boolean mask of frames to average; by default frames where the
            playback passes the energy gate.
        floor: Reference cross-PSD magnitude below which a bin is degenerate.

    Returns:
        :class:`RtfColumn` with shape ``(K, M)``.
    """
    Y = np.asarray(solo_mics.data)
    X = np.asarray(playback.data)
    if X.shape[0] != 1:
        raise ShapeError("playback must be a single channel")
    if Y.shape[1:] != X.shape[1:]:
        raise AlignmentError(f"microphone frames {Y.shape[1:]} do not match playback "
                             f"{X.shape[1:]}")
    if active is None:
        gate = ActivityDetector()
        active = np.array([gate(X[0, l]) for l in range(X.shape[1])])
    active = np.asarray(active, dtype=bool)
    if active.shape != (X.shape[1],):
        raise AlignmentError("activity mask does not match frame count")
    if not active.any():
        raise DomainError("no active playback frames in the initialization phase")
    phi = np.mean(Y[:, active] * np.conj(X[:, active]), axis=1).T    # (K, M)
    ref = phi[:, 0]
    degenerate = np.abs(ref) < floor
    a = np.ones_like(phi)
    ok = ~degenerate
    a[ok] = phi[ok] / ref[ok, None]
    a[:, 0] = 1         # exact, not the rounded quotient
    return RtfColumn(a, degenerate)


@dataclass
class BeamformerWeights:
    """LCMV weights ``w[k]`` (shape ``(K, M)``) for target loudspeaker ``target``.

    ``residual[k]`` is ``||w^H A - g||``; ``degenerate[k]`` marks pass-through
    bins that select the reference microphone.
    """

    w: np.ndarray
    target: int
    alpha: float
    residual: np.ndarray
    degenerate: np.ndarray


def lcmv_weights(A: RtfMatrix, q: int, alpha: float = 1e-6) -> BeamformerWeights:
    """Diagonally loaded LCMV weights ``w = A (A^H A + alpha I)^-1 g_q``.

    Args:
        A: RTF matrix.
        q: Target loudspeaker, 1 or 2; the constraint is ``g_1 = [1, 0]`` or
            ``g_2 = [0, 1]``.
        alpha: Diagonal loading, ``> 0``.

    Returns:
        :class:`BeamformerWeights`.
    """
    if q not in (1, 2):
        raise DomainError(f"target loudspeaker must be 1 or 2, got {q}")
    if not alpha > 0:
        raise DomainError(f"diagonal loading must be positive, got {alpha}")
    a = A.A
    if not np.all(np.isfinite(a)):
        raise DataError("RTF matrix contains non-finite entries")
    a1, a2 = a[..., 0], a[..., 1]
    g11 = np.sum(np.abs(a1) ** 2, axis=1) + alpha
    g22 = np.sum(np.abs(a2) ** 2, axis=1) + alpha
    g12 = np.sum(np.conj(a1) * a2, axis=1)
    det = g11 * g22 - np.abs(g12) ** 2
    # column q of the 2x2 inverse of [[g11, g12], [conj(g12), g22]]
    if q == 1:
        c1, c2 = g22 / det, -np.conj(g12) / det
    else:
        c1, c2 = -g12 / det, g11 / det
    w = a1 * c1[:, None] + a2 * c2[:, None]
    degenerate = A.degenerate.any(axis=1)
    w[degenerate] = 0
    w[degenerate, A.reference_mic] = 1
    g = np.zeros(2)
    g[q - 1] = 1
    response = np.einsum("km,kmq->kq", np.conj(w), a)
    residual = np.linalg.norm(response - g, axis=1)
    return BeamformerWeights(w, q, float(alpha), residual, degenerate)


def beamform(w: BeamformerWeights, mics: Spectrogram) -> Spectrogram:
    """Beamformer output ``Z[k, l] = w[k]^H y[k, l]`` as a one-channel spectrogram."""
    Y = np.asarray(mics.data)
    if Y.shape[0] != w.w.shape[1]:
        raise ShapeError(f"{Y.shape[0]} microphones for {w.w.shape[1]}-channel weights")
    if Y.shape[2] != w.w.shape[0]:
        raise ShapeError(f"{Y.shape[2]} bins for weights with {w.w.shape[0]} bins")
    z = np.einsum("km,mlk->lk", np.conj(w.w), Y)
    out = mics.with_data(z[None])
    out.meta["target"] = w.target
    return out


def beamform_frame(w: BeamformerWeights, y) -> np.ndarray:
    """Single-frame version of :func:`beamform`; ``y`` has shape ``(M, K)``."""
    return np.einsum("km,mk->k", np.conj(w.w), y)


def power_ratio_db(target, interferer, band=None) -> float:
    """Ratio of summed ``|target|^2`` to ``|interferer|^2`` in dB over the bins
    selected by ``band`` (boolean mask on the last axis)."""
    t = np.abs(np.asarray(target)) ** 2
    i = np.abs(np.asarray(interferer)) ** 2
    if band is not None:
        t, i = t[..., band], i[..., band]
    return float(10 * np.log10(np.sum(t) / np.sum(i)))
