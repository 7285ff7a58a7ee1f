"""Flat ``key = value`` run configuration for the batch CLI.

Lines hold one assignment each; ``#`` starts a comment (full-line or
trailing); blank lines are ignored. Angles are radians, distances meters.
Unknown or duplicate keys are errors so that a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .evaluation import default_eval_grid
from .frontview import ProjectionConfig
from .uvpm import UvpmConfig

__all__ = ["ConfigError", "RunConfig", "parse_kv_text"]


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str) -> dict:
    """Raw key -> string-value mapping from flat assignment lines."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _as_int(key, s):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {s!r}") from None


def _as_float(key, s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {s!r}") from None


def _as_list(s):
    return [part.strip() for part in s.split(",") if part.strip()]


_CHOICES = {
    "mode": ("uvpm", "upm"),
    "vote": ("geometric", "learned"),
    "nms_mode": ("bev", "3d", "2d"),
}


@dataclass
class RunConfig:
    """Everything a CLI run needs: data source, stage configs, output dir."""

    data_dir: str | None = None
    synthetic_seeds: tuple = (42,)
    synthetic_objects: int = 3
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    uvpm: UvpmConfig = field(default_factory=UvpmConfig)
    mode: str = "uvpm"
    vote: str = "geometric"
    eval_thresholds: tuple = (0.3, 0.5)
    eval_metrics: tuple = ("ap_2d", "ap_bird", "ap_3d")
    eval_difficulties: tuple = ("easy", "moderate", "hard")
    interpolation: int = 11
    distill_steps: int = 200
    distill_lr: float = 0.05
    distill_seed: int = 7
    out_dir: str = "votebox_out"
    seed: int | None = None

    def __post_init__(self):
        if self.data_dir is not None and self.synthetic_seeds:
            raise ConfigError(
                "exactly one data source: set data_dir or synthetic_seeds, not both"
            )
        if self.data_dir is None and not self.synthetic_seeds:
            raise ConfigError("no data source: set data_dir or synthetic_seeds")
        for name in ("mode", "vote"):
            if getattr(self, name) not in _CHOICES[name]:
                raise ConfigError(f"{name} must be one of {_CHOICES[name]}")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = parse_kv_text(text)
        kwargs = {}
        proj = {}
        uvpm = {}

        def pop(key):
            return raw.pop(key, None)

        value = pop("data_dir")
        if value is not None:
            kwargs["data_dir"] = value
            kwargs["synthetic_seeds"] = ()
        value = pop("synthetic_seeds")
        if value is not None:
            kwargs["synthetic_seeds"] = tuple(
                _as_int("synthetic_seeds", v) for v in _as_list(value)
            )
        value = pop("synthetic_objects")
        if value is not None:
            kwargs["synthetic_objects"] = _as_int("synthetic_objects", value)

        for key, attr in (
            ("delta_theta", "delta_theta"),
            ("delta_phi", "delta_phi"),
        ):
            value = pop(key)
            if value is not None:
                proj[attr] = _as_float(key, value)
        bounds = {}
        for key in ("theta_min", "theta_max", "phi_min", "phi_max"):
            value = pop(key)
            if value is not None:
                bounds[key] = _as_float(key, value)
        if bounds:
            base = ProjectionConfig()
            proj["theta_range"] = (
                bounds.get("theta_min", base.theta_range[0]),
                bounds.get("theta_max", base.theta_range[1]),
            )
            proj["phi_range"] = (
                bounds.get("phi_min", base.phi_range[0]),
                bounds.get("phi_max", base.phi_range[1]),
            )
        if proj:
            kwargs["projection"] = ProjectionConfig(**proj)

        extent = pop("extent")
        if extent is not None:
            parts = [_as_float("extent", v) for v in _as_list(extent)]
            if len(parts) != 4:
                raise ConfigError("extent needs 4 values: x_min,x_max,y_min,y_max")
            uvpm["extent"] = ((parts[0], parts[1]), (parts[2], parts[3]))
        for key, kind in (
            ("spacing", float),
            ("delta", float),
            ("epsilon", float),
            ("shell_tolerance", int),
            ("n_seeds", int),
            ("k_clusters", int),
            ("vote_radius", float),
            ("min_vote_points", int),
            ("cluster_radius", float),
            ("yaw_steps", int),
            ("patch_size", int),
        ):
            value = pop(key)
            if value is not None:
                uvpm[key] = (
                    _as_int(key, value) if kind is int else _as_float(key, value)
                )
        value = pop("nms_threshold")
        if value is not None:
            uvpm["nms_threshold"] = (
                None if value.lower() == "none" else _as_float("nms_threshold", value)
            )
        value = pop("nms_mode")
        if value is not None:
            if value not in _CHOICES["nms_mode"]:
                raise ConfigError(f"nms_mode must be one of {_CHOICES['nms_mode']}")
            uvpm["nms_mode"] = value

        for name in ("mode", "vote"):
            value = pop(name)
            if value is not None:
                kwargs[name] = value

        value = pop("eval_thresholds")
        if value is not None:
            kwargs["eval_thresholds"] = tuple(
                _as_float("eval_thresholds", v) for v in _as_list(value)
            )
        value = pop("eval_metrics")
        if value is not None:
            kwargs["eval_metrics"] = tuple(_as_list(value))
        value = pop("eval_difficulties")
        if value is not None:
            kwargs["eval_difficulties"] = tuple(_as_list(value))
        for key in ("interpolation", "distill_steps", "distill_seed"):
            value = pop(key)
            if value is not None:
                kwargs[key] = _as_int(key, value)
        value = pop("distill_lr")
        if value is not None:
            kwargs["distill_lr"] = _as_float("distill_lr", value)
        value = pop("out_dir")
        if value is not None:
            kwargs["out_dir"] = value
        value = pop("seed")
        if value is not None:
            kwargs["seed"] = _as_int("seed", value)

        if raw:
            raise ConfigError(f"unknown config keys: {sorted(raw)}")
        try:
            cfg = cls(**kwargs)
            if uvpm:
                cfg.uvpm = UvpmConfig(
                    **{**_uvpm_kwargs(cfg.uvpm), **uvpm}
                )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def resolved_uvpm(self) -> UvpmConfig:
        """The UvpmConfig with the mode/vote switches applied."""
        return UvpmConfig(
            **{
                **_uvpm_kwargs(self.uvpm),
                "voting": self.mode == "uvpm",
                "vote_backbone": self.vote,
            }
        )

    def eval_grid(self) -> list:
        return default_eval_grid(
            metrics=self.eval_metrics,
            thresholds=self.eval_thresholds,
            difficulties=self.eval_difficulties,
            interpolation=self.interpolation,
            projection=self.projection,
        )


def _uvpm_kwargs(cfg: UvpmConfig) -> dict:
    return {
        "spacing": cfg.spacing,
        "extent": cfg.extent,
        "prior_scale": cfg.prior_scale,
        "template_z": cfg.template_z,
        "patch_size": cfg.patch_size,
        "delta": cfg.delta,
        "epsilon": cfg.epsilon,
        "shell_tolerance": cfg.shell_tolerance,
        "n_seeds": cfg.n_seeds,
        "k_clusters": cfg.k_clusters,
        "vote_radius": cfg.vote_radius,
        "min_vote_points": cfg.min_vote_points,
        "cluster_radius": cfg.cluster_radius,
        "yaw_steps": cfg.yaw_steps,
        "nms_threshold": cfg.nms_threshold,
        "nms_mode": cfg.nms_mode,
        "voting": cfg.voting,
        "vote_backbone": cfg.vote_backbone,
        "backbone_seed": cfg.backbone_seed,
    }
