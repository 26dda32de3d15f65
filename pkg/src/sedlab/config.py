"""Experiment configuration: a flat INI file of `key = value` pairs.

Every known key is registered in one schema table with its type, default,
and help text; unknown sections or keys are rejected, and the CLI help is
generated from the same table so documentation cannot drift.  Values can be
overridden on the command line with `--set section.key=value`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any, Callable

from .evaluation import EvalConfig
from .features import FeatureConfig
from .fpdloss import LossConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file or override."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


@dataclass(frozen=True)
class ConfigKey:
    section: str
    option: str
    parse: Callable[[str], Any]
    default: Any
    help: str

    @property
    def dotted(self) -> str:
        return f"{self.section}.{self.option}"

    def format_default(self) -> str:
        if isinstance(self.default, tuple):
            return ",".join(str(v) for v in self.default)
        return str(self.default)


SCHEMA: list[ConfigKey] = [
    # data locations
    ConfigKey("data", "train_manifests", _parse_str_list, (), "comma-separated training manifest paths"),
    ConfigKey("data", "eval_manifest", str, "", "manifest of the held-out strongly labeled evaluation set"),
    ConfigKey("data", "out_dir", str, "runs", "output directory for summaries and checkpoints"),
    # synthesis
    ConfigKey("synth", "classes", _parse_str_list, ("beep", "sweep", "hiss", "warble"), "event class names"),
    ConfigKey("synth", "kinds", _parse_str_list, ("tone", "chirp", "noise_burst", "am_tone"),
              "template kind per class (cycled if shorter)"),
    ConfigKey("synth", "base_freqs", _parse_float_list, (440.0, 880.0, 1800.0, 620.0),
              "template base frequency in Hz per class (cycled)"),
    ConfigKey("synth", "duration_min", float, 0.25, "minimum event duration in seconds"),
    ConfigKey("synth", "duration_max", float, 1.0, "maximum event duration in seconds"),
    ConfigKey("synth", "snr_min", float, 8.0, "minimum event SNR in dB over local background"),
    ConfigKey("synth", "snr_max", float, 18.0, "maximum event SNR in dB over local background"),
    ConfigKey("synth", "clip_duration", float, 2.0, "clip length in seconds"),
    ConfigKey("synth", "events_min", int, 1, "minimum events per clip"),
    ConfigKey("synth", "events_max", int, 3, "maximum events per clip"),
    ConfigKey("synth", "background_db", float, -36.0, "background noise RMS in dBFS"),
    ConfigKey("synth", "class_distribution", _parse_float_list, (),
              "per-class sampling probabilities (empty = uniform)"),
    ConfigKey("synth", "n_clips", int, 20, "number of clips to generate"),
    # features
    ConfigKey("features", "sample_rate", int, 16000, "audio sample rate in Hz"),
    ConfigKey("features", "window", int, 2048, "STFT window length in samples"),
    ConfigKey("features", "hop", int, 255, "STFT hop in samples"),
    ConfigKey("features", "mel_bins", int, 0, "mel bands for the optional mel stage (0 = raw STFT bins)"),
    # model
    ConfigKey("model", "channels", _parse_int_list, (16, 32, 64), "conv channels per block"),
    ConfigKey("model", "freq_pools", _parse_int_list, (4, 4, 0),
              "frequency pooling factor per block (0 collapses the rest)"),
    ConfigKey("model", "proj_dim", int, 64, "projection head output dimension"),
    ConfigKey("model", "bn_eps", float, 1e-5, "batch-norm epsilon"),
    ConfigKey("model", "bn_momentum", float, 0.9, "batch-norm running-stat momentum"),
    # training
    ConfigKey("train", "batch_size", int, 24, "clips per batch (SS + RW)"),
    ConfigKey("train", "ss_ratio", int, 1, "SS share of the batch mix"),
    ConfigKey("train", "rw_ratio", int, 1, "RW share of the batch mix"),
    ConfigKey("train", "learning_rate", float, 1e-3, "Adam learning rate"),
    ConfigKey("train", "beta1", float, 0.9, "Adam beta1"),
    ConfigKey("train", "beta2", float, 0.999, "Adam beta2"),
    ConfigKey("train", "adam_eps", float, 1e-8, "Adam epsilon"),
    ConfigKey("train", "lambda_fpd", float, 1.0, "weight of the pair loss in the total loss"),
    ConfigKey("train", "epochs", int, 30, "training epochs"),
    ConfigKey("train", "seed", int, 0, "base random seed"),
    ConfigKey("train", "tau_pos", float, 0.75, "pseudo-label positive confidence threshold"),
    ConfigKey("train", "tau_neg", float, 0.25, "pseudo-label negative confidence threshold"),
    ConfigKey("train", "warmup_epochs", int, 0, "epochs to skip the pair loss at the start"),
    ConfigKey("train", "tag_threshold", float, 0.5, "clip-probability threshold for tagging output"),
    # pairing
    ConfigKey("pairing", "pair_cap", int, 2000, "max frame pairs kept per case per batch"),
    ConfigKey("pairing", "silence_as_class", _parse_bool, False,
              "treat silent frames as a background class when pairing"),
    # loss
    ConfigKey("loss", "metric", str, "euc", "pair metric: euc or ip"),
    ConfigKey("loss", "alpha", float, 0.1, "hinge margin in (0, 1)"),
    ConfigKey("loss", "mode", str, "distance", "loss reading: as_written or distance"),
    ConfigKey("loss", "norm_scope", str, "negative_only",
              "pairs receiving the IP norm term: all_pairs or negative_only"),
    # evaluation
    ConfigKey("eval", "decode_threshold", float, 0.5, "frame probability threshold for decoding"),
    ConfigKey("eval", "median_window", int, 7, "median filter window in frames (odd)"),
    ConfigKey("eval", "onset_collar", float, 0.2, "event-based onset collar in seconds"),
    ConfigKey("eval", "offset_collar", float, 0.2, "event-based offset collar floor in seconds"),
    ConfigKey("eval", "offset_ratio", float, 0.2, "event-based offset collar as a fraction of duration"),
    ConfigKey("eval", "segment_length", float, 1.0, "segment length in seconds"),
    ConfigKey("eval", "average", str, "micro", "count aggregation: micro or macro"),
]

_SCHEMA_BY_KEY = {k.dotted: k for k in SCHEMA}


@dataclass
class ExperimentConfig:
    """All settings resolved to typed values, keyed by section.option."""

    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, dotted: str) -> Any:
        return self.values[dotted]

    def feature_cfg(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self["features.sample_rate"],
            window=self["features.window"],
            hop=self["features.hop"],
            mel_bins=self["features.mel_bins"],
        )

    def model_cfg(self) -> ModelConfig:
        return ModelConfig(
            channels=self["model.channels"],
            freq_pools=self["model.freq_pools"],
            proj_dim=self["model.proj_dim"],
            bn_eps=self["model.bn_eps"],
            bn_momentum=self["model.bn_momentum"],
        )

    def loss_cfg(self) -> LossConfig:
        try:
            return LossConfig(
                metric=self["loss.metric"],
                alpha=self["loss.alpha"],
                mode=self["loss.mode"],
                norm_scope=self["loss.norm_scope"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_cfg(self) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self["train.batch_size"],
                ss_ratio=self["train.ss_ratio"],
                rw_ratio=self["train.rw_ratio"],
                learning_rate=self["train.learning_rate"],
                beta1=self["train.beta1"],
                beta2=self["train.beta2"],
                adam_eps=self["train.adam_eps"],
                lambda_fpd=self["train.lambda_fpd"],
                epochs=self["train.epochs"],
                seed=self["train.seed"],
                loss=self.loss_cfg(),
                tau_pos=self["train.tau_pos"],
                tau_neg=self["train.tau_neg"],
                pair_cap=self["pairing.pair_cap"],
                silence_as_class=self["pairing.silence_as_class"],
                warmup_epochs=self["train.warmup_epochs"],
                tag_threshold=self["train.tag_threshold"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def eval_cfg(self) -> EvalConfig:
        return EvalConfig(
            decode_threshold=self["eval.decode_threshold"],
            median_window=self["eval.median_window"],
            onset_collar=self["eval.onset_collar"],
            offset_collar=self["eval.offset_collar"],
            offset_ratio=self["eval.offset_ratio"],
            segment_length=self["eval.segment_length"],
            average=self["eval.average"],
            tag_threshold=self["train.tag_threshold"],
        )


def default_config() -> ExperimentConfig:
    return ExperimentConfig({k.dotted: k.default for k in SCHEMA})


def _set_value(cfg: ExperimentConfig, dotted: str, raw: str) -> None:
    key = _SCHEMA_BY_KEY.get(dotted)
    if key is None:
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        cfg.values[dotted] = key.parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {dotted}: {exc}") from exc


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, then the INI file (if given), then --set overrides."""
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for option, raw in parser.items(section):
                _set_value(cfg, f"{section}.{option}", raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        _set_value(cfg, dotted.strip(), raw.strip())
    return cfg


def config_help_text() -> str:
    """One line per config key with its default, grouped by section."""
    lines = ["configuration keys (file sections or --set section.key=value):"]
    current = None
    for key in SCHEMA:
        if key.section != current:
            current = key.section
            lines.append(f"  [{current}]")
        lines.append(f"    {key.option:<20} default={key.format_default():<18} {key.help}")
    return "\n".join(lines)
