"""Run configuration: dataclass, flat key=value config files, CLI overrides."""

import dataclasses
import json
from pathlib import Path

from ..datamodel import MODALITIES, SyntheticTaskSpec


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    # data source: a dataset directory, or a synthetic task when unset
    data: str = ""
    synth_classes: int = 7
    synth_train_per_class: int = 100
    synth_strengths: tuple = (0.9, 0.4, 0.2)
    synth_noise: float = 1.0
    synth_sparsity: float = 0.25
    synth_seq_len: tuple = (8, 16)
    synth_dims: tuple = (20, 16, 12)
    synth_seed: int = 0

    # architecture
    channels: int = 32
    kernel_sizes: tuple = (5, 3, 3)
    ca_dim: int = 32
    ca_heads: int = 8
    ca_layers: int = 2
    ca_ffn: int = 64
    gd_hidden: int = 32
    dict_size: int = 512

    # objective
    margin: float = 0.1
    gamma: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.05
    lambda3: float = 0.1
    aux_task_weight: float = 1.0

    # ablation switches
    fd: bool = True
    ca: bool = True
    gd: bool = True
    dm: bool = True

    # optimization
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    out: str = ""
    plots: bool = True

    def validate(self):
        if self.channels < 1 or self.ca_dim < 1 or self.gd_hidden < 1:
            raise ConfigError("hidden widths must be positive")
        if self.dict_size < 1:
            raise ConfigError("dict_size must be >= 1")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError(f"conv kernel sizes must be odd, got {self.kernel_sizes}")
        if self.ca_dim % self.ca_heads != 0:
            raise ConfigError(
                f"ca_dim {self.ca_dim} must be divisible by ca_heads {self.ca_heads}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (triplet mining needs pairs)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (self.margin > 0):
            raise ConfigError("margin must be > 0")
        for lam in (self.lambda1, self.lambda2, self.lambda3, self.gamma):
            if lam < 0:
                raise ConfigError("loss weights must be >= 0")
        return self

    @property
    def switches(self):
        return {"FD": self.fd, "CA": self.ca, "GD": self.gd, "DM": self.dm}

    def synthetic_spec(self):
        lo, hi = self.synth_seq_len
        return SyntheticTaskSpec(
            num_classes=self.synth_classes,
            samples_per_class=self.synth_train_per_class,
            seq_len_range={m: (lo, hi) for m in MODALITIES},
            feature_dims=dict(zip(MODALITIES, self.synth_dims)),
            signal_strength=dict(zip(MODALITIES, self.synth_strengths)),
            noise_sigma=self.synth_noise,
            cue_sparsity=self.synth_sparsity,
            seed=self.synth_seed,
        )

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    if isinstance(raw, str):
        raw = raw.strip()
    if isinstance(default, bool) or _FIELDS[name].type is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {name}={raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        elem = type(default[0])
        if isinstance(raw, (list, tuple)):
            return tuple(elem(v) for v in raw)
        cleaned = str(raw).strip("()[] ")
        parts = [p for p in cleaned.split(",") if p.strip()]
        return tuple(elem(p) for p in parts)
    return str(raw)


def apply_overrides(cfg, overrides):
    """Apply {key: raw value} overrides with type coercion."""
    values = dataclasses.asdict(cfg)
    for key, raw in overrides.items():
        values[key] = _coerce(key, raw)
    out = RunConfig(**{k: (tuple(v) if isinstance(_FIELDS[k].default, tuple) else v)
                       for k, v in values.items()})
    return out


def load_config_file(path):
    """Flat ``key = value`` text file (# comments, blank lines allowed)."""
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = stripped.partition("=")
        overrides[key.strip()] = val.strip()
    return overrides


def config_from_sources(file_path=None, overrides=None):
    cfg = RunConfig()
    merged = {}
    if file_path:
        merged.update(load_config_file(file_path))
    if overrides:
        merged.update(overrides)
    return apply_overrides(cfg, merged).validate()


def parse_ablation(text):
    """'FD,CA' -> switch dict; 'none' (or '') disables everything."""
    mapping = {"FD": "fd", "CA": "ca", "GD": "gd", "DM": "dm"}
    enabled = set()
    text = (text or "").strip()
    if text.lower() not in ("none", ""):
        for tok in text.split(","):
            tok = tok.strip().upper()
            if tok not in mapping:
                raise ConfigError(
                    f"unknown ablation switch {tok!r}; expected subset of FD,CA,GD,DM")
            enabled.add(tok)
    return {field: (name in enabled) for name, field in mapping.items()}
