"""Class-conditional synthetic PMU events built from damped sinusoids.

Each event draws a handful of modes from its class signature, places them on
all PMUs with residues that decay away from a random epicenter, and adds the
class-specific slow profile (frequency sag or rise, local angle step, voltage
dip with recovery after fault clearing) plus white noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import CHANNELS, EventClass, EventRecord
from .modal import synthesize


class ConfigError(ValueError):
    pass


def _bands(entry) -> tuple:
    return tuple(tuple(b) for b in entry) if np.ndim(entry) == 2 else (tuple(entry),)


@dataclass(frozen=True)
class ClassSignature:
    # one entry per mode: (f_lo, f_hi) in Hz, or several such bands to pick from per event
    freq_ranges: tuple
    damping_range: tuple  # (sigma_lo, sigma_hi) in 1/s, both < 0
    residue_scale: dict  # channel -> base residue magnitude
    beta: float = 1.0  # spatial decay of mode residues
    step: dict = field(default_factory=dict)  # channel -> signed settled step amplitude
    step_tau: float = 1.0  # s, time constant of the step approach
    step_beta: float = 0.0  # spatial decay of the step (0 = system wide)
    dip: float = 0.0  # Vm dip depth while the fault is on (BF)
    dip_beta: float = 3.0
    recovery_tau: float = 0.3  # s, Vm recovery time constant after clearing
    severity: tuple = (1.0, 1.0)  # per-event factor on step and dip amplitudes
    random_step_sign: bool = False  # step direction drawn per event (e.g. line flow direction)

    def __post_init__(self):
        if not self.freq_ranges:
            raise ConfigError("signature needs at least one mode")
        for entry in self.freq_ranges:
            for lo, hi in _bands(entry):
                if not 0 <= lo <= hi:
                    raise ConfigError(f"bad frequency range ({lo}, {hi})")
        lo, hi = self.damping_range
        if not lo <= hi < 0:
            raise ConfigError(f"damping range ({lo}, {hi}) must satisfy lo <= hi < 0")
        if not 0 <= self.severity[0] <= self.severity[1]:
            raise ConfigError(f"bad severity range {self.severity}")
        unknown = (set(self.residue_scale) | set(self.step)) - set(CHANNELS)
        if unknown:
            raise ConfigError(f"unknown channels {sorted(unknown)}")

    @property
    def p_true(self) -> int:
        return len(self.freq_ranges)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSignature":
        d = dict(d)
        d["freq_ranges"] = tuple(tuple(tuple(b) for b in r) if np.ndim(r) == 2 else tuple(r)
                                 for r in d["freq_ranges"])
        d["damping_range"] = tuple(d["damping_range"])
        if "severity" in d:
            d["severity"] = tuple(d["severity"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freq_ranges"] = [[list(b) for b in _bands(r)] if np.ndim(r) == 2 else list(r)
                            for r in self.freq_ranges]
        d["damping_range"] = list(self.damping_range)
        d["severity"] = list(self.severity)
        return d


@dataclass(frozen=True)
class GeneratorConfig:
    m: int = 20
    sample_rate_hz: float = 30.0
    t_s: float = 10.0
    t_f: float = 1.0  # flat-run length before the disturbance; recorded only
    load_scale: tuple = (0.95, 1.05)
    fluctuation: float = 0.02
    snr_db: "float | None" = 45.0  # None or inf disables noise
    t_clr: float = 0.1
    seed: int = 0  # PMU layout seed

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not self.sample_rate_hz > 0 or not self.t_s > 0:
            raise ConfigError("sample_rate_hz and t_s must be positive")
        if self.n_samples < 2:
            raise ConfigError("window too short")
        lo, hi = self.load_scale
        if not 0 < lo <= hi:
            raise ConfigError(f"bad load_scale range {self.load_scale}")
        if self.snr_db is not None and not self.snr_db > 0:
            raise ConfigError("snr_db must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.t_s * self.sample_rate_hz))

    @property
    def T_s(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def noisy(self) -> bool:
        return self.snr_db is not None and np.isfinite(self.snr_db)

    def layout(self) -> np.ndarray:
        """Fixed PMU coordinates in the unit square, m x 2."""
        return np.random.default_rng(self.seed).uniform(size=(self.m, 2))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "load_scale" in d:
            d["load_scale"] = tuple(d["load_scale"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["load_scale"] = list(self.load_scale)
        return d


# per-channel baselines: Vm in pu, Va in degrees, F in Hz
_BASELINE = {"Vm": 1.0, "Va": 0.0, "F": 60.0}

# Residue scales and spatial decay are shared so that classes differ through
# step and dip profiles and interleaved frequency bands rather than amplitude.
_RESIDUE_SCALE = {"Vm": 0.005, "Va": 0.8, "F": 0.02}

DEFAULT_SIGNATURES = {
    EventClass.GL: ClassSignature(
        freq_ranges=((0.45, 1.1), (0.45, 1.1)),
        damping_range=(-0.6, -0.1),
        residue_scale=_RESIDUE_SCALE,
        beta=1.5,
        step={"Vm": -0.001, "Va": -0.2, "F": -0.01},  # frequency sag
        step_tau=1.5,
        severity=(0.2, 1.0),
    ),
    EventClass.LL: ClassSignature(
        freq_ranges=((0.45, 1.1), (0.45, 1.1)),
        damping_range=(-0.6, -0.1),
        residue_scale=_RESIDUE_SCALE,
        beta=1.5,
        step={"Vm": 0.001, "Va": 0.2, "F": 0.01},  # mirrored rise
        step_tau=1.5,
        severity=(0.2, 1.0),
    ),
    EventClass.LT: ClassSignature(
        freq_ranges=(((0.15, 0.4), (1.2, 1.6)),),
        damping_range=(-0.6, -0.1),
        residue_scale=_RESIDUE_SCALE,
        beta=1.5,
        step={"Vm": -0.002, "Va": 0.5},  # localized angle step, sign set by flow direction
        step_tau=1.0,
        step_beta=3.0,
        severity=(0.2, 1.0),
        random_step_sign=True,
    ),
    EventClass.BF: ClassSignature(
        freq_ranges=(((1.0, 1.5), (2.0, 3.0)), (1.0, 3.0)),
        damping_range=(-1.5, -0.5),
        residue_scale=_RESIDUE_SCALE,
        beta=1.5,
        dip=0.05,
        dip_beta=3.0,
        recovery_tau=0.25,
        severity=(0.2, 1.0),
    ),
}


def _draw_modes(sig: ClassSignature, rng: np.random.Generator) -> np.ndarray:
    f = []
    for entry in sig.freq_ranges:
        bands = _bands(entry)
        lo, hi = bands[rng.integers(len(bands))] if len(bands) > 1 else bands[0]
        f.append(rng.uniform(lo, hi))
    f = np.array(f)
    sigma = rng.uniform(*sig.damping_range, size=len(f))
    return sigma + 2j * np.pi * f


def generate_event(cls: "EventClass | int | str", cfg: GeneratorConfig, sig: ClassSignature,
                   seed: int, event_id: "str | None" = None) -> EventRecord:
    """One event of class ``cls``; identical arguments give identical output."""
    cls = EventClass.parse(cls)
    rng = np.random.default_rng(seed)
    N, T_s = cfg.n_samples, cfg.T_s
    t = np.arange(N) * T_s
    xy = cfg.layout()
    epicenter = rng.uniform(size=2)
    dist = np.linalg.norm(xy - epicenter, axis=1)
    load = rng.uniform(*cfg.load_scale)
    lam = _draw_modes(sig, rng)
    p = len(lam)
    weights = rng.uniform(0.5, 1.0, size=p)
    severity = rng.uniform(*sig.severity)
    if sig.random_step_sign and rng.uniform() < 0.5:
        severity = -severity

    blocks, meta_res = [], {}
    for ch in CHANNELS:
        scale = sig.residue_scale.get(ch, 0.0) * load
        jitter = 1.0 + rng.uniform(-cfg.fluctuation, cfg.fluctuation, size=(cfg.m, p))
        mag = scale * weights[None, :] * jitter * np.exp(-sig.beta * dist)[:, None]
        phase0 = rng.uniform(-np.pi, np.pi, size=p)
        phase = np.angle(np.exp(1j * (phase0[None, :] + 0.5 * np.pi * dist[:, None])))
        R = mag * np.exp(1j * phase)
        base = _BASELINE[ch] * (1.0 + rng.uniform(-cfg.fluctuation, cfg.fluctuation, size=cfg.m) * 0.1)
        y = synthesize(lam, R, N, T_s, base)
        step = sig.step.get(ch, 0.0)
        if step:
            atten = np.exp(-sig.step_beta * dist)
            y = y + (step * severity * load * atten)[:, None] * (1.0 - np.exp(-t / sig.step_tau))[None, :]
        if ch == "Vm" and sig.dip:
            depth = sig.dip * severity * load * np.exp(-sig.dip_beta * dist)
            on = t < cfg.t_clr
            profile = np.where(on, 1.0, np.exp(-(t - cfg.t_clr) / sig.recovery_tau))
            y = y - depth[:, None] * profile[None, :]
        if cfg.noisy:
            dev = y - base[:, None]
            power = np.mean(dev ** 2, axis=1)
            std = np.sqrt(power / 10.0 ** (cfg.snr_db / 10.0))
            y = y + std[:, None] * rng.standard_normal((cfg.m, N))
        blocks.append(y)
        meta_res[ch] = {"mag": np.abs(R).tolist(), "angle": np.angle(R).tolist(), "offset": base.tolist()}

    meta = {
        "class": cls.name,
        "seed": int(seed),
        "sigma": lam.real.tolist(),
        "omega": lam.imag.tolist(),
        "epicenter": epicenter.tolist(),
        "load_scale": float(load),
        "severity": float(severity),
        "residues": meta_res,
        "snr_db": cfg.snr_db if cfg.noisy else None,
        "t_f": cfg.t_f,
    }
    eid = event_id if event_id is not None else f"{cls.name}_{seed}"
    return EventRecord(eid, int(cls), cfg.sample_rate_hz, np.vstack(blocks), meta)


DEFAULT_COUNTS = {EventClass.LL: 500, EventClass.GL: 500, EventClass.LT: 500, EventClass.BF: 327}


def event_seed(master_seed: int, cls: EventClass, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(int(cls), index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(counts: dict, cfg: GeneratorConfig, signatures: "dict | None" = None,
                     master_seed: int = 0) -> list:
    """Events for every class in ``counts``, shuffled by ``master_seed``."""
    signatures = DEFAULT_SIGNATURES if signatures is None else signatures
    records = []
    for cls in sorted(EventClass.parse(c) for c in counts):
        n = counts.get(cls, counts.get(cls.name, counts.get(int(cls))))
        if n is None or int(n) < 1:
            raise ConfigError(f"count for {cls.name} must be positive")
        if cls not in signatures:
            raise ConfigError(f"no signature for class {cls.name}")
        for i in range(int(n)):
            records.append(generate_event(cls, cfg, signatures[cls], event_seed(master_seed, cls, i),
                                          event_id=f"{cls.name}_{i:04d}"))
    order = np.random.default_rng(master_seed).permutation(len(records))
    return [records[i] for i in order]
