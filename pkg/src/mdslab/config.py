"""Run configuration: plain ``section.key = value`` text files.

One assignment per line, ``#`` starts a comment, no nesting. The literal
config name ``default`` resolves to the built-in defaults. Values are
typed by the field they land in; unknown keys are errors so typos cannot
silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .mds import NORM_MODES, StftParams
from .nn import ModelConfig
from .rva import PipelineParams
from .scene import RadarConfig


class ConfigError(Exception):
    """Malformed config text or inconsistent values."""


@dataclass(frozen=True)
class ModelKnobs:
    """Free model hyperparameters; token/input sizes are derived."""

    n_emb: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    r_mlp: int = 4
    k_tar: int = 3
    lambda_wd: float = 0.01
    pool: str = "mean"
    wd_exclude_ln_bias: bool = False


@dataclass(frozen=True)
class TrainKnobs:
    eta: float = 1e-3
    batch: int = 8
    k_epoch: int = 30
    k_fold: int = 5
    seed: int = 0


@dataclass
class RunConfig:
    """All sections of a run; see module docstring for the file format."""

    radar: RadarConfig = field(default_factory=RadarConfig)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    stft: StftParams = field(default_factory=StftParams)
    norm_mode: str = "log1p_minmax"
    model: ModelKnobs = field(default_factory=ModelKnobs)
    train: TrainKnobs = field(default_factory=TrainKnobs)

    def model_config(self) -> ModelConfig:
        """ModelConfig with sizes derived from the pipeline/stft sections."""
        return ModelConfig(
            n_tokens=self.pipeline.n_res_s * self.pipeline.n_res_theta,
            d_in=self.stft.n_fft ** 2,
            n_emb=self.model.n_emb,
            n_heads=self.model.n_heads,
            n_blocks=self.model.n_blocks,
            r_mlp=self.model.r_mlp,
            k_tar=self.model.k_tar,
            lambda_wd=self.model.lambda_wd,
            pool=self.model.pool,
            wd_exclude_ln_bias=self.model.wd_exclude_ln_bias,
        )

    def validate(self) -> None:
        try:
            self.radar.validate()
            self.stft.validate()
            self.model_config().validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if self.norm_mode not in NORM_MODES:
            raise ConfigError(f"stft.norm_mode must be one of {NORM_MODES}")
        if self.stft.n_fft != self.radar.M_c:
            raise ConfigError(
                f"stft.n_fft = {self.stft.n_fft} must equal radar.M_c = "
                f"{self.radar.M_c}")
        if self.stft.window != self.radar.M_c:
            raise ConfigError("stft window must equal radar.M_c")
        n_time = self.radar.M_c * self.radar.K_frame
        if n_time < self.stft.window:
            raise ConfigError("sample too short for one analysis window")
        if self.stft.n_frames(n_time) < self.stft.n_fft:
            raise ConfigError(
                f"only {self.stft.n_frames(n_time)} analysis frames fit a "
                f"{n_time}-chirp sample; lower stft.n_overlap so at least "
                f"{self.stft.n_fft} fit")
        p = self.pipeline
        if p.n_res_s < 1 or p.n_res_theta < 1:
            raise ConfigError("crop sizes must be >= 1")
        if p.n_res_s > self.radar.N_s or p.n_res_theta > self.radar.N_theta:
            raise ConfigError("crop sizes exceed the range/angle axis lengths")
        if not 0.0 < p.pfa < 1.0:
            raise ConfigError("pipeline.pfa must be in (0, 1)")
        if p.cfar_train < 1 or p.cfar_guard < 0:
            raise ConfigError("bad CFAR window sizes")
        t = self.train
        if t.eta <= 0 or t.batch < 1 or t.k_epoch < 0 or t.k_fold < 2:
            raise ConfigError("bad train section values")


# (section, key) -> (converter name, target description)
_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"

_SCHEMA: dict[str, tuple[str, str]] = {
    "radar.f_c": (_FLOAT, "f_c"),
    "radar.B": (_FLOAT, "B"),
    "radar.T_c": (_FLOAT, "T_c"),
    "radar.F_s": (_FLOAT, "F_s"),
    "radar.T_r": (_FLOAT, "T_r"),
    "radar.M_c": (_INT, "M_c"),
    "radar.N_tx": (_INT, "N_tx"),
    "radar.N_rx": (_INT, "N_rx"),
    "radar.N_theta": (_INT, "N_theta"),
    "radar.K_frame": (_INT, "K_frame"),
    "pipeline.cfar_train": (_INT, "cfar_train"),
    "pipeline.cfar_guard": (_INT, "cfar_guard"),
    "pipeline.pfa": (_FLOAT, "pfa"),
    "pipeline.gap_r": (_INT, "gap_r"),
    "pipeline.gap_v": (_INT, "gap_v"),
    "pipeline.gap_theta": (_INT, "gap_theta"),
    "pipeline.n_res_s": (_INT, "n_res_s"),
    "pipeline.n_res_theta": (_INT, "n_res_theta"),
    "stft.n_overlap": (_INT, "n_overlap"),
    "stft.n_fft": (_INT, "n_fft"),
    "stft.norm_mode": (_STR, "norm_mode"),
    "model.n_emb": (_INT, "n_emb"),
    "model.n_heads": (_INT, "n_heads"),
    "model.n_blocks": (_INT, "n_blocks"),
    "model.r_mlp": (_INT, "r_mlp"),
    "model.k_tar": (_INT, "k_tar"),
    "model.lambda_wd": (_FLOAT, "lambda_wd"),
    "model.pool": (_STR, "pool"),
    "model.wd_exclude_ln_bias": (_BOOL, "wd_exclude_ln_bias"),
    "train.eta": (_FLOAT, "eta"),
    "train.batch": (_INT, "batch"),
    "train.k_epoch": (_INT, "k_epoch"),
    "train.k_fold": (_INT, "k_fold"),
    "train.seed": (_INT, "seed"),
}


def _convert(kind: str, key: str, text: str):
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _BOOL:
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_config(text: str) -> RunConfig:
    """Parse config text into a validated RunConfig."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kind, _ = _SCHEMA[key]
        values[key] = _convert(kind, key, value)

    def section(name: str) -> dict:
        out = {}
        for key, value in values.items():
            sec, _, leaf = key.partition(".")
            if sec == name:
                out[_SCHEMA[key][1]] = value
        return out

    radar = replace(RadarConfig(), **section("radar"))
    pipe_kv = section("pipeline")
    gaps = (pipe_kv.pop("gap_r", 2), pipe_kv.pop("gap_v", 2),
            pipe_kv.pop("gap_theta", 4))
    pipeline = replace(PipelineParams(), cluster_gaps=gaps, **pipe_kv)
    stft_kv = section("stft")
    norm_mode = stft_kv.pop("norm_mode", "log1p_minmax")
    stft = StftParams(window=radar.M_c,
                      n_overlap=stft_kv.get("n_overlap", 125),
                      n_fft=stft_kv.get("n_fft", radar.M_c))
    model = replace(ModelKnobs(), **section("model"))
    train = replace(TrainKnobs(), **section("train"))
    rc = RunConfig(radar=radar, pipeline=pipeline, stft=stft,
                   norm_mode=norm_mode, model=model, train=train)
    rc.validate()
    return rc


def load_config(path: str) -> RunConfig:
    """Read a config file; the literal name 'default' gives the defaults."""
    if path == "default":
        rc = RunConfig()
        rc.validate()
        return rc
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)


def config_text(rc: RunConfig) -> str:
    """Serialize a RunConfig to the same text format (round-trips)."""
    r, p, s, m, t = rc.radar, rc.pipeline, rc.stft, rc.model, rc.train
    lines = [
        f"radar.f_c = {r.f_c!r}",
        f"radar.B = {r.B!r}",
        f"radar.T_c = {r.T_c!r}",
        f"radar.F_s = {r.F_s!r}",
        f"radar.T_r = {r.T_r!r}",
        f"radar.M_c = {r.M_c}",
        f"radar.N_tx = {r.N_tx}",
        f"radar.N_rx = {r.N_rx}",
        f"radar.N_theta = {r.N_theta}",
        f"radar.K_frame = {r.K_frame}",
        f"pipeline.cfar_train = {p.cfar_train}",
        f"pipeline.cfar_guard = {p.cfar_guard}",
        f"pipeline.pfa = {p.pfa!r}",
        f"pipeline.gap_r = {p.cluster_gaps[0]}",
        f"pipeline.gap_v = {p.cluster_gaps[1]}",
        f"pipeline.gap_theta = {p.cluster_gaps[2]}",
        f"pipeline.n_res_s = {p.n_res_s}",
        f"pipeline.n_res_theta = {p.n_res_theta}",
        f"stft.n_overlap = {s.n_overlap}",
        f"stft.n_fft = {s.n_fft}",
        f"stft.norm_mode = {rc.norm_mode}",
        f"model.n_emb = {m.n_emb}",
        f"model.n_heads = {m.n_heads}",
        f"model.n_blocks = {m.n_blocks}",
        f"model.r_mlp = {m.r_mlp}",
        f"model.k_tar = {m.k_tar}",
        f"model.lambda_wd = {m.lambda_wd!r}",
        f"model.pool = {m.pool}",
        f"model.wd_exclude_ln_bias = {str(m.wd_exclude_ln_bias).lower()}",
        f"train.eta = {t.eta!r}",
        f"train.batch = {t.batch}",
        f"train.k_epoch = {t.k_epoch}",
        f"train.k_fold = {t.k_fold}",
        f"train.seed = {t.seed}",
    ]
    return "\n".join(lines) + "\n"
