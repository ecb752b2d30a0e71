"""Run configuration files for the command-line pipeline.

A run config is a plain text file of `key = value` lines. Blank lines
and lines starting with `#` are ignored. Keys are namespaced:

    manifest = data/corpus            dataset directory (or its manifest.csv)
    folds.file = folds.csv            optional saved fold plan
    folds.count = 5                   used when folds.file is absent
    folds.seed = 0
    pretrained = runs/pre/checkpoint.ckpt   transfer-train source
    model.<field> = ...               any architecture field, e.g.
                                      model.encoder_kind = resnet
                                      model.domain = frequency
                                      model.duration_s = 15
    train.<field> = ...               any training field, e.g.
                                      train.epochs = 100
                                      train.base_lr = 1e-5
                                      train.decay_epochs = 5,10,20

Unknown keys are rejected. Relative paths are taken relative to the
directory containing the config file. `--set key=value` flags override
file entries. The resolved config (every field, explicit) is written
into each run directory together with its sha256 hash, so any run can
be reproduced from its output directory alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

from .encoders import ModelSpec
from .errors import ConfigError
from .trainer import TrainConfig

PHASE_TARGETS = {"single": "vs30", "pretrain": "epicenter", "finetune": "vs30"}

_PATH_KEYS = ("manifest", "folds.file", "pretrained")


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_ints(v: str) -> tuple:
    return tuple(int(p.strip()) for p in v.split(","))


def _converters():
    table = {
        "manifest": str,
        "folds.file": str,
        "folds.count": int,
        "folds.seed": int,
        "pretrained": str,
    }
    tuples = {"decay_epochs", "head_widths", "tcn_dilations", "resnet_stages"}
    for prefix, cls in (("model", ModelSpec), ("train", TrainConfig)):
        for f in dataclasses.fields(cls):
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            if f.name in tuples:
                conv = _parse_ints
            elif kind == "bool":
                conv = _parse_bool
            elif kind == "int":
                conv = int
            elif kind == "float":
                conv = float
            else:
                conv = str
            table[f"{prefix}.{f.name}"] = conv
    return table


_SCHEMA = _converters()


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything one training or evaluation run needs, resolved."""

    spec: ModelSpec
    train: TrainConfig
    manifest: str | None = None
    folds_file: str | None = None
    folds_count: int = 5
    folds_seed: int = 0
    pretrained: str | None = None

    def items(self):
        """(key, value) pairs in canonical order, defaults included."""
        out = []
        if self.manifest is not None:
            out.append(("manifest", self.manifest))
        if self.folds_file is not None:
            out.append(("folds.file", self.folds_file))
        out.append(("folds.count", self.folds_count))
        out.append(("folds.seed", self.folds_seed))
        if self.pretrained is not None:
            out.append(("pretrained", self.pretrained))
        for prefix, d in (("model", self.spec.to_dict()),
                          ("train", self.train.to_dict())):
            for field in d:
                out.append((f"{prefix}.{field}", d[field]))
        return out


def parse_kv_lines(text: str, source: str = "config") -> dict:
    """`key = value` lines to a string dict; comments and blanks skipped."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value, "
                              f"got {raw!r}")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _convert(pairs: dict, source: str) -> dict:
    typed = {}
    for key, raw in pairs.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        try:
            typed[key] = _SCHEMA[key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from exc
    return typed


def build_run_config(pairs: dict, *, phase: str, base_dir=".",
                     source: str = "config") -> RunConfig:
    """Typed RunConfig from raw string pairs, for one pipeline phase.

    The subcommand fixes the phase; train.phase/train.target entries are
    allowed only when they agree with it. Relative paths are joined to
    base_dir. Epicenter pretraining defaults the output width to 2.
    """
    if phase not in PHASE_TARGETS:
        raise ConfigError(f"unknown phase {phase!r}")
    typed = _convert(pairs, source)
    if typed.get("train.phase", phase) != phase:
        raise ConfigError(
            f"{source}: train.phase {typed['train.phase']!r} conflicts with "
            f"the {phase!r} subcommand")
    typed["train.phase"] = phase
    typed.setdefault("train.target", PHASE_TARGETS[phase])
    if phase == "pretrain":
        typed.setdefault("model.output_dim", 2)

    base = Path(base_dir)
    for key in _PATH_KEYS:
        if key in typed and not Path(typed[key]).is_absolute():
            typed[key] = str(base / typed[key])

    model_d = {k.split(".", 1)[1]: v for k, v in typed.items()
               if k.startswith("model.")}
    train_d = {k.split(".", 1)[1]: v for k, v in typed.items()
               if k.startswith("train.")}
    for required in ("encoder_kind", "domain", "duration_s"):
        if required not in model_d:
            raise ConfigError(f"{source}: model.{required} is required")
    return RunConfig(
        spec=ModelSpec.from_dict(model_d),
        train=TrainConfig.from_dict(train_d),
        manifest=typed.get("manifest"),
        folds_file=typed.get("folds.file"),
        folds_count=typed.get("folds.count", 5),
        folds_seed=typed.get("folds.seed", 0),
        pretrained=typed.get("pretrained"),
    )


def load_run_config(path, overrides=(), *, phase: str) -> RunConfig:
    """Read a config file and apply `key=value` override strings."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    pairs = parse_kv_lines(text, source=str(path))
    for i, ov in enumerate(overrides, start=1):
        key, sep, value = ov.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set #{i}: expected key=value, got {ov!r}")
        pairs[key.strip()] = value.strip()
    return build_run_config(pairs, phase=phase, base_dir=path.parent,
                            source=str(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def resolved_text(rc: RunConfig) -> str:
    """Canonical full listing; parsing it back reproduces rc exactly."""
    return "".join(f"{key} = {_format_value(value)}\n"
                   for key, value in rc.items())


def config_digest(rc: RunConfig) -> str:
    return hashlib.sha256(resolved_text(rc).encode("utf-8")).hexdigest()


def write_resolved(rc: RunConfig, out_dir) -> Path:
    """Write config.txt: the resolved listing plus its own hash line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    path.write_text(resolved_text(rc) + f"# config_hash: {config_digest(rc)}\n",
                    encoding="utf-8")
    return path
