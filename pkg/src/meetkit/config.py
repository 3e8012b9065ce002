"""INI pipeline configuration: one section per stage, every key optional with a documented default."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .audio import AudioError, StftConfig
from .augment import OverlapPolicy
from .beamformer import BeamformConfig
from .features import FbankConfig, PitchConfig, SpecAugmentConfig
from .room import RoomRanges
from .rover import AlignCosts
from .wpe import WpeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentSettings:
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    pitch_range: float = 2.0
    snr_range: tuple[float, float] = (5.0, 20.0)
    eq_probability: float = 0.5

    def validate(self) -> None:
        if any(not 0.5 <= f <= 2.0 for f in self.speed_factors):
            raise ConfigError("speed factors must lie in [0.5, 2]")
        if not 0 <= self.pitch_range <= 4:
            raise ConfigError("pitch_range must lie in [0, 4] semitones")
        if self.snr_range[0] > self.snr_range[1]:
            raise ConfigError("snr_range must be ordered")
        if not 0 <= self.eq_probability <= 1:
            raise ConfigError("eq_probability must lie in [0, 1]")


# section name -> (attribute, dataclass)
SECTIONS = {
    "stft": ("stft", StftConfig),
    "wpe": ("wpe", WpeConfig),
    "beamform": ("beamform", BeamformConfig),
    "room": ("room", RoomRanges),
    "overlap": ("overlap", OverlapPolicy),
    "augment": ("augment", AugmentSettings),
    "fbank": ("fbank", FbankConfig),
    "pitch": ("pitch", PitchConfig),
    "specaugment": ("specaugment", SpecAugmentConfig),
    "rover": ("rover", AlignCosts),
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    stft: StftConfig = field(default_factory=StftConfig)
    wpe: WpeConfig = field(default_factory=WpeConfig)
    beamform: BeamformConfig = field(default_factory=BeamformConfig)
    room: RoomRanges = field(default_factory=RoomRanges)
    overlap: OverlapPolicy = field(default_factory=OverlapPolicy)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    fbank: FbankConfig = field(default_factory=FbankConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    rover: AlignCosts = field(default_factory=AlignCosts)

    def validate(self, fs: int = 16000) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.room.validate()
            self.overlap.validate()
            self.augment.validate()
            self.fbank.validate(fs)
            self.specaugment.validate(10**9, 10**9)
        except (AudioError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _convert(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        if isinstance(default, dict):
            out = {}
            for item in raw.split(","):
                k, v = item.split(":")
                out[int(k)] = float(v)
            return out
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v}" for k, v in value.items())
    return str(value)


def _build(cls, section: configparser.SectionProxy, name: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known - set(section.parser.defaults())
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    kwargs = {k: _convert(section[k], getattr(defaults, k), f"{name}.{k}") for k in known if k in section}
    try:
        return cls(**kwargs) if kwargs else defaults
    except (AudioError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Parse an INI file (``[pipeline] seed/workers`` plus one section per stage) and validate it."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    unknown = set(parser.sections()) - set(SECTIONS) - {"pipeline"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    kwargs = {}
    if parser.has_section("pipeline"):
        sec = parser["pipeline"]
        bad = set(sec) - {"seed", "workers"}
        if bad:
            raise ConfigError(f"unknown keys in [pipeline]: {', '.join(sorted(bad))}")
        if "seed" in sec:
            kwargs["seed"] = _convert(sec["seed"], 0, "pipeline.seed")
        if "workers" in sec:
            kwargs["workers"] = _convert(sec["workers"], 1, "pipeline.workers")
    for name, (attr, cls) in SECTIONS.items():
        if parser.has_section(name):
            kwargs[attr] = _build(cls, parser[name], name)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """INI text listing every key with its current value."""
    parser = configparser.ConfigParser()
    parser["pipeline"] = {"seed": str(cfg.seed), "workers": str(cfg.workers)}
    for name, (attr, _) in SECTIONS.items():
        block = getattr(cfg, attr)
        parser[name] = {f.name: _format(getattr(block, f.name)) for f in dataclasses.fields(block)}
    lines = []
    for sec in parser.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in parser[sec].items())
        lines.append("")
    return "\n".join(lines)


def utterance_seed(seed: int, utt_id: str) -> int:
    """Stable 63-bit stream id for one utterance, independent of scheduling order."""
    digest = hashlib.blake2b(f"{seed}\x1f{utt_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
