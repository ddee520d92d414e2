"""Common-mode estimation for multichannel PMU windows and modal feature vectors.

Poles are shared by all PMUs of a channel: the per-PMU Hankel matrices are
stacked vertically, so one SVD sees every stream at once, and the shift
invariance of the dominant right singular vectors yields the poles
(matrix pencil). Residues are then fit per PMU by least squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import CHANNELS, EventRecord, FeatureDataset, feature_dimension


class ModalError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    p: int = 6
    m_prime: int = 10
    L: "int | None" = None  # None -> N // 2
    detrend: bool = True
    rank_tol: float = 1e-9  # singular values below rank_tol * s_max are dropped

    def __post_init__(self):
        if self.p < 1:
            raise ModalError("p must be >= 1")
        if self.m_prime < 1:
            raise ModalError("m_prime must be >= 1")

    def pencil(self, N: int) -> int:
        L = N // 2 if self.L is None else self.L
        if not (1 <= L <= N - 1):
            raise ModalError(f"pencil parameter L={L} outside [1, N-1] for N={N}")
        return L


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Estimated modes of one channel.

    ``sigma``/``omega`` hold one entry per mode (conjugate pairs merged,
    ``omega >= 0``). ``residues`` is m x p complex with the convention
    ``y_i(n) = offsets[i] + sum_k Re(residues[i, k] * exp(lambda_k * n * T_s))``,
    so a merged pair carries twice the residue of its upper pole.
    """

    channel: str
    sigma: np.ndarray
    omega: np.ndarray
    residues: np.ndarray
    offsets: np.ndarray
    p_requested: int = 0

    @property
    def p(self) -> int:
        return len(self.sigma)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.residues)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.residues)

    @property
    def lambdas(self) -> np.ndarray:
        return self.sigma + 1j * self.omega


def synthesize(lambdas, residues, n_samples: int, T_s: float, offsets=None) -> np.ndarray:
    """Evaluate ``offset_i + sum_k Re(R_ik exp(lambda_k n T_s))`` for n = 0..N-1.

    ``residues`` is m x p (complex); returns m x N.
    """
    lambdas = np.asarray(lambdas, dtype=complex)
    residues = np.atleast_2d(np.asarray(residues, dtype=complex))
    n = np.arange(n_samples)
    basis = np.exp(np.outer(lambdas, n * T_s))  # p x N
    y = (residues @ basis).real
    if offsets is not None:
        y = y + np.asarray(offsets, dtype=float)[:, None]
    return y


def build_block_hankel(Y: np.ndarray, L: int) -> np.ndarray:
    """Stack per-PMU Hankel matrices ``H_i[a, b] = y_i(a + b)``; shape (m (N - L), L + 1)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, N = Y.shape
    if not 1 <= L < N:
        raise ModalError(f"pencil parameter L={L} must satisfy 1 <= L < N={N}")
    idx = np.arange(N - L)[:, None] + np.arange(L + 1)[None, :]
    return Y[:, idx].reshape(m * (N - L), L + 1)


def _merge_conjugates(z: np.ndarray) -> np.ndarray:
    """Keep one pole per conjugate pair (upper half plane) plus the real poles."""
    keep = []
    used = np.zeros(len(z), dtype=bool)
    scale = max(1.0, float(np.max(np.abs(z)))) if len(z) else 1.0
    for a in np.argsort(-z.imag, kind="stable"):
        if used[a]:
            continue
        used[a] = True
        if abs(z[a].imag) <= 1e-12 * scale:
            keep.append(complex(z[a].real, 0.0))
            continue
        # drop the nearest unused conjugate partner
        cand = np.where(~used)[0]
        if len(cand):
            b = cand[np.argmin(np.abs(z[cand] - np.conj(z[a])))]
            if abs(z[b] - np.conj(z[a])) <= 1e-6 * scale:
                used[b] = True
        keep.append(complex(z[a].real, abs(z[a].imag)))
    return np.array(keep, dtype=complex)


def estimate_modes(Y: np.ndarray, cfg: ExtractionConfig, T_s: float, channel: str = "") -> ModeSet:
    """Estimate up to ``cfg.p`` channel-common modes of the m x N window ``Y``.

    The SVD truncation rank is ``2p`` (room for p oscillatory pairs), reduced
    to the numerical rank of the block Hankel matrix. After merging conjugate
    pairs the ``p`` modes with the largest mean residue magnitude are kept.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, N = Y.shape
    L = cfg.pencil(N)
    offsets = Y.mean(axis=1) if cfg.detrend else np.zeros(m)
    Yd = Y - offsets[:, None]

    H = build_block_hankel(Yd, L)
    # the triangular factor has the same singular values and right vectors as H
    if H.shape[0] > H.shape[1]:
        H = np.linalg.qr(H, mode="r")
    _, s, Vh = np.linalg.svd(H)
    if s.size == 0 or s[0] == 0.0:
        return ModeSet(channel, np.zeros(0), np.zeros(0), np.zeros((m, 0), complex), offsets, cfg.p)
    numerical_rank = int(np.sum(s > cfg.rank_tol * s[0]))
    r = min(2 * cfg.p, numerical_rank, L)
    V = Vh[:r].T  # (L + 1) x r
    shift = np.linalg.pinv(V[:-1]) @ V[1:]
    z = np.linalg.eigvals(shift)

    # residues of all r poles, per PMU
    n = np.arange(N)
    with np.errstate(over="ignore", invalid="ignore"):
        vander = np.power.outer(z, n).T  # N x r
    finite = np.all(np.isfinite(vander), axis=0)
    z, vander = z[finite], vander[:, finite]
    coef, *_ = np.linalg.lstsq(vander, Yd.T.astype(complex), rcond=None)  # r x m

    upper = _merge_conjugates(z)
    modes, res = [], []
    for zk in upper:
        j = int(np.argmin(np.abs(z - zk)))
        factor = 1.0 if zk.imag == 0.0 else 2.0
        c = factor * coef[j]
        if zk.imag == 0.0:
            c = c.real.astype(complex)
        modes.append(zk)
        res.append(c)
    if not modes:
        return ModeSet(channel, np.zeros(0), np.zeros(0), np.zeros((m, 0), complex), offsets, cfg.p)
    zs = np.array(modes)
    R = np.array(res).T  # m x q
    lam = np.log(zs.astype(complex)) / T_s
    sigma = lam.real
    omega = np.abs(lam.imag)

    order = np.argsort(-np.abs(R).mean(axis=0), kind="stable")[: cfg.p]
    return ModeSet(channel, sigma[order], omega[order], R[:, order], offsets, cfg.p)


def reconstruct(modes: ModeSet, n_samples: int, T_s: float) -> np.ndarray:
    return synthesize(modes.lambdas, modes.residues, n_samples, T_s, modes.offsets)


def reconstruction_error(Y: np.ndarray, modes: ModeSet, T_s: float) -> np.ndarray:
    """Relative l2 error ``||y_i - y_hat_i|| / ||y_i||`` per PMU."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if modes.residues.shape[0] != Y.shape[0]:
        raise ModalError(f"mode set has {modes.residues.shape[0]} PMUs, data has {Y.shape[0]}")
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms == 0):
        raise ModalError("zero-norm stream")
    Yhat = reconstruct(modes, Y.shape[1], T_s)
    return np.linalg.norm(Y - Yhat, axis=1) / norms


def retained_pmus(modes: ModeSet, m_prime: int) -> np.ndarray:
    """Indices of the m' PMUs with the largest mode-1 residue magnitude (ties: lower index)."""
    m = modes.residues.shape[0]
    if m_prime > m:
        raise ModalError(f"m_prime={m_prime} exceeds PMU count m={m}")
    if modes.p == 0:
        return np.arange(m_prime)
    mag = np.abs(modes.residues[:, 0])
    return np.lexsort((np.arange(m), -mag))[:m_prime]


def channel_features(modes: ModeSet, p: int, m_prime: int) -> np.ndarray:
    """Per-channel block ``[omega_1..p, sigma_1..p, (|R_1..p|, theta_1..p) for each kept PMU]``."""
    q = min(modes.p, p)
    out = np.zeros(2 * p * (m_prime + 1))
    out[:q] = modes.omega[:q]
    out[p:p + q] = modes.sigma[:q]
    keep = retained_pmus(modes, m_prime)
    for slot, i in enumerate(keep):
        base = 2 * p + slot * 2 * p
        out[base:base + q] = np.abs(modes.residues[i, :q])
        out[base + p:base + p + q] = np.angle(modes.residues[i, :q])
    return out


def assemble_features(modesets: dict, p: int, m_prime: int, channels=CHANNELS) -> np.ndarray:
    """Concatenate the channel blocks in ``channels`` order; length ``2 p |C| (m' + 1)``.

    Slots beyond a channel's effective mode count are zero.
    """
    parts = []
    for ch in channels:
        ms = modesets[ch]
        if ms.p < 1:
            raise ModalError(f"channel {ch}: no modes estimated")
        parts.append(channel_features(ms, p, m_prime))
    return np.concatenate(parts)


def feature_names(p: int, m_prime: int, channels=CHANNELS) -> list:
    names = []
    for ch in channels:
        names += [f"{ch}_omega{k}" for k in range(1, p + 1)]
        names += [f"{ch}_sigma{k}" for k in range(1, p + 1)]
        for j in range(1, m_prime + 1):
            names += [f"{ch}_pmu{j}_mag{k}" for k in range(1, p + 1)]
            names += [f"{ch}_pmu{j}_theta{k}" for k in range(1, p + 1)]
    return names


@dataclass
class EventFeatures:
    vector: np.ndarray
    modesets: dict
    errors: dict = field(default_factory=dict)
    deficient: bool = False  # some channel had fewer than p modes


def extract_event(rec: EventRecord, cfg: ExtractionConfig) -> EventFeatures:
    if cfg.m_prime > rec.m:
        raise ModalError(f"event {rec.event_id}: m_prime={cfg.m_prime} exceeds PMU count m={rec.m}")
    T_s = 1.0 / rec.sample_rate_hz
    sets, errs = {}, {}
    for ch in rec.channels:
        Y = rec.channel(ch)
        sets[ch] = estimate_modes(Y, cfg, T_s, ch)
        if np.all(np.linalg.norm(Y, axis=1) > 0):
            errs[ch] = reconstruction_error(Y, sets[ch], T_s)
    deficient = any(ms.p < cfg.p for ms in sets.values())
    vec = assemble_features(sets, cfg.p, cfg.m_prime, rec.channels)
    return EventFeatures(vec, sets, errs, deficient)


def extract_dataset(records, cfg: ExtractionConfig) -> tuple:
    """Feature matrix for a list of events; returns (FeatureDataset, per-event diagnostics)."""
    if not records:
        raise ModalError("no events")
    channels = records[0].channels
    rows, diags = [], []
    for rec in records:
        ef = extract_event(rec, cfg)
        rows.append(ef.vector)
        diag = {"event_id": rec.event_id, "deficient": ef.deficient}
        for ch in channels:
            e = ef.errors.get(ch)
            diag[f"{ch}_mean_err"] = float(np.mean(e)) if e is not None else float("nan")
            diag[f"{ch}_max_err"] = float(np.max(e)) if e is not None else float("nan")
            diag[f"{ch}_p_eff"] = ef.modesets[ch].p
        diags.append(diag)
    meta = {
        "p": cfg.p, "m_prime": cfg.m_prime, "L": cfg.L, "detrend": cfg.detrend,
        "channels": list(channels), "d": feature_dimension(cfg.p, cfg.m_prime, len(channels)),
    }
    ds = FeatureDataset(np.vstack(rows), np.array([r.label for r in records]),
                        feature_names(cfg.p, cfg.m_prime, channels),
                        [r.event_id for r in records], meta)
    return ds, diags
