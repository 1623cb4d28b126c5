"""Pipeline configuration: an INI-style ``key = value`` file with sections.

Example::

    [data]
    manifest = sessions.tsv
    standardize = yes

    [covariance]
    bandwidth = 5, 10, 20        ; a list is tuned by leave-one-out likelihood

    [solver]
    lambda1 = 0.05, 0.1          ; a list is tuned by AIC
    lambda2 = 1, 3

    [lda]
    positive_label = 2-back
    negative_label = 0-back

    [output]
    directory = out

Relative paths resolve against the directory holding the config file.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from dfcembed.single import SolverConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_str(text: str):
    return text.strip() or None


def _optional_int(text: str):
    return int(text) if text.strip() else None


@dataclass(frozen=True)
class PipelineConfig:
    # [data]
    manifest: Path | None = None
    sampling_interval: float = 0.72
    highpass: bool = False
    highpass_cutoff: float = 1.0 / 130
    standardize: bool = True
    # [covariance]
    bandwidth: tuple[float, ...] = (10.0,)
    # [solver]
    lambda1: tuple[float, ...] = (0.1,)
    lambda2: tuple[float, ...] = (1.0,)
    rho: float = 1.0
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    max_iter: int = 5000
    adaptive_rho: bool = True
    penalize_diagonal: bool = False
    # [pca]
    k: int = 2
    retain_fraction: float = 0.02
    center: bool = True
    # [lda]
    positive_label: str | None = None
    negative_label: str | None = None
    train_acquisition: str = "LR"
    validation_acquisition: str = "RL"
    tau: float = 0.6
    cv_folds: int = 5
    shrinkage: float = 0.1
    ridge: float = 2.0
    n_lambda: int = 20
    lambda_min_ratio: float = 0.01
    # [simulate]
    simulate: bool = False
    kind: str = "two_task"
    subjects: int = 20
    n: int = 120
    p: int = 15
    n_discriminative: int = 6
    block_length: int | None = None
    effect: float = 0.6
    task_labels: tuple[str, ...] = ("0-back", "2-back")
    acquisitions: tuple[str, ...] = ("LR", "RL")
    segment_lengths: tuple[int, ...] = (90, 90)
    edges_per_segment: int = 8
    seed: int = 0
    # [evaluate]
    truth_manifest: Path | None = None
    # [output]
    output_dir: Path = Path("out")

    def solver_template(self) -> SolverConfig:
        return SolverConfig(lambda1=self.lambda1[0], lambda2=self.lambda2[0], rho=self.rho,
                            eps_abs=self.eps_abs, eps_rel=self.eps_rel, max_iter=self.max_iter,
                            adaptive_rho=self.adaptive_rho,
                            penalize_diagonal=self.penalize_diagonal)

    @property
    def manifest_path(self) -> Path:
        """Explicit manifest, else the one written by the simulate stage."""
        if self.manifest is not None:
            return self.manifest
        return self.output_dir / "sim" / "manifest.tsv"

    @property
    def truth_manifest_path(self) -> Path:
        if self.truth_manifest is not None:
            return self.truth_manifest
        return self.output_dir / "sim" / "truth_manifest.tsv"

    @property
    def has_contrast(self) -> bool:
        return self.positive_label is not None and self.negative_label is not None

    def validate(self) -> "PipelineConfig":
        checks = [
            (self.sampling_interval > 0, "sampling_interval must be positive"),
            (self.highpass_cutoff > 0, "highpass_cutoff must be positive"),
            (len(self.bandwidth) > 0 and all(h > 0 for h in self.bandwidth),
             "bandwidth values must be positive"),
            (len(self.lambda1) > 0 and all(v >= 0 for v in self.lambda1),
             "lambda1 values must be nonnegative"),
            (len(self.lambda2) > 0 and all(v >= 0 for v in self.lambda2),
             "lambda2 values must be nonnegative"),
            (self.rho > 0, "rho must be positive"),
            (self.eps_abs > 0 and self.eps_rel > 0, "tolerances must be positive"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (0 < self.retain_fraction <= 1, "retain_fraction must be in (0, 1]"),
            (0 < self.tau <= 1, "tau must be in (0, 1]"),
            (self.cv_folds >= 2, "cv_folds must be >= 2"),
            (0 <= self.shrinkage <= 1, "shrinkage must be in [0, 1]"),
            (self.ridge >= 0, "ridge must be nonnegative"),
            (self.n_lambda >= 1, "n_lambda must be >= 1"),
            (0 < self.lambda_min_ratio <= 1, "lambda_min_ratio must be in (0, 1]"),
            ((self.positive_label is None) == (self.negative_label is None),
             "positive_label and negative_label must be given together"),
            (not self.has_contrast or self.positive_label != self.negative_label,
             "contrast labels must differ"),
            (self.kind in ("two_task", "piecewise"), "kind must be two_task or piecewise"),
            (self.subjects >= 1 and self.n >= 2 and self.p >= 2, "need subjects >= 1, n >= 2, p >= 2"),
            (len(self.task_labels) == 2, "task_labels must name exactly two conditions"),
            (len(self.acquisitions) >= 1 and len(set(self.acquisitions)) == len(self.acquisitions),
             "acquisitions must be distinct and nonempty"),
            (self.seed >= 0, "seed must be nonnegative"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if not self.simulate and self.manifest is None:
            raise ConfigError("[data] manifest is required unless a [simulate] section is present")
        if self.manifest is not None and not self.simulate and not self.manifest.is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if self.truth_manifest is not None and not self.truth_manifest.is_file():
            raise ConfigError(f"truth manifest not found: {self.truth_manifest}")
        return self


# (section, key) -> (field name, parser); keys absent from the file keep their defaults
_SCHEMA = {
    ("data", "manifest"): ("manifest", Path),
    ("data", "sampling_interval"): ("sampling_interval", float),
    ("data", "highpass"): ("highpass", _bool),
    ("data", "highpass_cutoff"): ("highpass_cutoff", float),
    ("data", "standardize"): ("standardize", _bool),
    ("covariance", "bandwidth"): ("bandwidth", _floats),
    ("solver", "lambda1"): ("lambda1", _floats),
    ("solver", "lambda2"): ("lambda2", _floats),
    ("solver", "rho"): ("rho", float),
    ("solver", "eps_abs"): ("eps_abs", float),
    ("solver", "eps_rel"): ("eps_rel", float),
    ("solver", "max_iter"): ("max_iter", int),
    ("solver", "adaptive_rho"): ("adaptive_rho", _bool),
    ("solver", "penalize_diagonal"): ("penalize_diagonal", _bool),
    ("pca", "k"): ("k", int),
    ("pca", "retain_fraction"): ("retain_fraction", float),
    ("pca", "center"): ("center", _bool),
    ("lda", "positive_label"): ("positive_label", _optional_str),
    ("lda", "negative_label"): ("negative_label", _optional_str),
    ("lda", "train_acquisition"): ("train_acquisition", str.strip),
    ("lda", "validation_acquisition"): ("validation_acquisition", str.strip),
    ("lda", "tau"): ("tau", float),
    ("lda", "cv_folds"): ("cv_folds", int),
    ("lda", "shrinkage"): ("shrinkage", float),
    ("lda", "ridge"): ("ridge", float),
    ("lda", "n_lambda"): ("n_lambda", int),
    ("lda", "lambda_min_ratio"): ("lambda_min_ratio", float),
    ("simulate", "kind"): ("kind", str.strip),
    ("simulate", "subjects"): ("subjects", int),
    ("simulate", "n"): ("n", int),
    ("simulate", "p"): ("p", int),
    ("simulate", "n_discriminative"): ("n_discriminative", int),
    ("simulate", "block_length"): ("block_length", _optional_int),
    ("simulate", "effect"): ("effect", float),
    ("simulate", "task_labels"): ("task_labels", lambda s: tuple(s.replace(",", " ").split())),
    ("simulate", "acquisitions"): ("acquisitions", lambda s: tuple(s.replace(",", " ").split())),
    ("simulate", "segment_lengths"): ("segment_lengths", _ints),
    ("simulate", "edges_per_segment"): ("edges_per_segment", int),
    ("simulate", "seed"): ("seed", int),
    ("evaluate", "truth_manifest"): ("truth_manifest", Path),
    ("output", "directory"): ("output_dir", Path),
}

_PATH_FIELDS = ("manifest", "truth_manifest", "output_dir")


def parse_config(text: str, base_dir=".") -> PipelineConfig:
    """Build a validated :class:`PipelineConfig` from INI text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    known_sections = {s for s, _ in _SCHEMA}
    values: dict = {}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if (section, key) not in _SCHEMA:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name, convert = _SCHEMA[(section, key)]
            try:
                values[name] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    if parser.has_section("simulate"):
        values["simulate"] = True
    base = Path(base_dir)
    for name in _PATH_FIELDS:
        if name in values and values[name] is not None and not values[name].is_absolute():
            values[name] = base / values[name]
    if "output_dir" not in values:
        values["output_dir"] = base / PipelineConfig.output_dir
    return PipelineConfig(**values)


def load_config(path, seed: int | None = None, output: str | None = None) -> PipelineConfig:
    """Read a config file, apply command-line overrides and validate."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), base_dir=path.parent)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if output is not None:
        cfg = replace(cfg, output_dir=Path(output))
    return cfg.validate()


def _format(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def format_config(cfg: PipelineConfig) -> str:
    """Serialize a config back to INI text (every key, including defaults)."""
    by_section: dict[str, list[str]] = {}
    for (section, key), (name, _) in _SCHEMA.items():
        value = getattr(cfg, name)
        if (section == "simulate" and not cfg.simulate) or value is None:
            continue
        by_section.setdefault(section, []).append(f"{key} = {_format(value)}")
    return "".join(f"[{s}]\n" + "\n".join(lines) + "\n\n" for s, lines in by_section.items())


def default_config() -> PipelineConfig:
    return PipelineConfig()


__all__ = ["ConfigError", "PipelineConfig", "parse_config", "load_config", "format_config",
           "default_config"]
