"""Pipeline configuration: one YAML document, every tunable listed with its default."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SplitSection(_Section):
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    @model_validator(mode="after")
    def _sums_to_one(self):
        if min(self.train, self.val, self.test) <= 0 or abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")
        return self


class DatasetSection(_Section):
    root: str = "data/synthetic"
    label_map: Optional[str] = None  # JSON/YAML: {"classes": [...], "runs": {run_dir: class}}
    channel: Literal["horizontal", "vertical"] = "horizontal"
    window_len: int = Field(1024, ge=2)
    stride: int = Field(1024, ge=1)
    sample_rate: float = Field(25600.0, gt=0)
    split: SplitSection = SplitSection()
    seed: int = 0
    max_windows_per_class: Optional[int] = Field(None, ge=3)
    train_windows_per_class: Optional[int] = Field(None, ge=1)
    healthy_first_n: int = Field(10, ge=0)
    fault_last_n: int = Field(10, ge=0)


class SynthSection(_Section):
    classes: list[str] = ["healthy", "outer_race", "inner_race", "cage"]
    runs_per_class: int = Field(1, ge=1)
    minutes_per_run: int = Field(3, ge=1)
    record_len: int = Field(32768, ge=2)
    shaft_hz: float = Field(35.0, gt=0)
    snr_db: float = 6.0
    resonance_hz: float = Field(500.0, gt=0)
    decay: float = Field(500.0, gt=0)
    sample_rate: float = Field(12800.0, gt=0)
    seed: int = 0


class EncodeSection(_Section):
    image_size: int = Field(64, ge=2)
    M: Optional[int] = None


class GanSection(_Section):
    z_dim: int = Field(64, ge=1)
    lambda_gp: float = Field(10.0, ge=0)
    critic_steps_per_gen: int = Field(5, ge=1)
    warmup_gen_steps: int = Field(0, ge=0)
    warmup_critic_steps: int = Field(25, ge=1)
    batch_size: int = Field(32, ge=2)
    learning_rate: float = Field(1e-4, ge=0)
    adam_betas: tuple[float, float] = (0.0, 0.9)
    total_gen_steps: int = Field(1000, ge=0)
    seed: int = 0
    width: int = Field(32, ge=1)
    checkpoint_every: int = Field(100, ge=1)
    samples_per_class: int = Field(200, ge=1)
    sample_seed: int = 0
    antisymmetrize: bool = False


class ModelSection(_Section):
    wide_kernel: int = 7
    wide_stride: int = 2
    wide_filters: int = 32
    branch_kernels: tuple[int, int, int] = (5, 7, 9)
    stage_filters: tuple[int, int] = (64, 128)
    se_reduction: int = 16
    eca_gamma: float = 2.0
    eca_b: float = 1.0
    num_classes: Optional[int] = None  # taken from the dataset when unset
    dims: Literal["2d_image", "1d_signal"] = "2d_image"


class TrainSection(_Section):
    learning_rate: float = Field(1e-3, ge=0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(50, ge=0)
    seed: int = 0


class EvaluateSection(_Section):
    tsne_perplexity: float = Field(30.0, gt=0)
    tsne_iter: int = Field(1000, ge=250)
    tsne_seed: int = 0


class OutputSection(_Section):
    run_dir: str = "runs/default"


class PipelineConfig(_Section):
    dataset: DatasetSection = DatasetSection()
    synth: SynthSection = SynthSection()
    encode: EncodeSection = EncodeSection()
    gan: GanSection = GanSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    evaluate: EvaluateSection = EvaluateSection()
    output: OutputSection = OutputSection()

    # resolved against the config file location by load_config
    base_dir: str = Field(".", exclude=True)

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def run_dir(self) -> Path:
        return self.path(self.output.run_dir)

    def content_hash(self, sections=None) -> str:
        """sha256 of the canonical JSON of the config, without output paths."""
        d = self.model_dump(mode="json")
        d.pop("output", None)
        if sections is not None:
            d = {k: d[k] for k in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
        cur = nxt
    cur[parts[-1]] = value


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = [f"invalid configuration ({source}):"]
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path=None, overrides: list[str] | None = None) -> PipelineConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply key=value overrides."""
    data: dict = {}
    base = Path.cwd()
    source = "defaults"
    if path is not None:
        path = Path(path)
        source = str(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" line {mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{path}{where}: YAML error: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent.resolve()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    try:
        cfg = PipelineConfig(**data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None
    cfg.base_dir = str(base)
    return cfg


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True))
