"""Plain ``key = value`` configuration files.

Keys are the IgspConfig field names (s_ed_numerator, weight_rate, p1_t, p2_t,
p3_t, sigma_r in radians, sigma_t in length units, max_iterations, ...) and
the DetectorConfig field names. Detector radii may also be given relative to
the source cloud's median spacing via ``nms_radius_spacings`` and
``neighborhood_radius_spacings``. ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .engine import IgspConfig
from .keypoints import DetectorConfig


class ConfigError(ValueError):
    pass


_IGSP_FIELDS = {f.name: f for f in dataclasses.fields(IgspConfig)}
_DETECTOR_FIELDS = {f.name: f for f in dataclasses.fields(DetectorConfig)}
_RELATIVE = ("nms_radius_spacings", "neighborhood_radius_spacings")
_INT_KEYS = {"max_iterations", "max_failed_iterations", "radial_bins", "angular_bins"}


def _convert(key: str, raw: str):
    if raw.lower() in ("none", "auto", ""):
        return None
    try:
        return int(raw) if key in _INT_KEYS else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as a number") from None


def parse_config(text: str, origin: str = "<config>") -> tuple[dict, dict]:
    """Return ``(igsp_overrides, detector_overrides)`` from key-value text."""
    igsp, det = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}, line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _IGSP_FIELDS:
            target = igsp
        elif key in _DETECTOR_FIELDS or key in _RELATIVE:
            target = det
        else:
            raise ConfigError(f"{origin}, line {lineno}: unknown key {key!r}")
        if key in igsp or key in det:
            raise ConfigError(f"{origin}, line {lineno}: duplicate key {key!r}")
        try:
            target[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{origin}, line {lineno}: {exc}") from None
    # validate eagerly so bad values fail before any work starts
    try:
        IgspConfig(**{k: v for k, v in igsp.items() if v is not None or k == "sigma_t"})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return igsp, det


def load_config(path) -> tuple[dict, dict]:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def build_configs(igsp_overrides: dict, detector_overrides: dict, source) -> tuple[IgspConfig, DetectorConfig]:
    """Materialize configs; relative detector radii are resolved against ``source``."""
    from .geometry import median_spacing

    igsp = IgspConfig(**{k: v for k, v in igsp_overrides.items() if v is not None or k == "sigma_t"})
    det = {k: v for k, v in detector_overrides.items() if v is not None or k == "saliency_threshold"}
    rel = {k: det.pop(k) for k in _RELATIVE if k in det}
    if rel:
        s = median_spacing(source)
        if "nms_radius_spacings" in rel:
            det.setdefault("nms_radius", rel["nms_radius_spacings"] * s)
        if "neighborhood_radius_spacings" in rel:
            det.setdefault("neighborhood_radius", rel["neighborhood_radius_spacings"] * s)
    try:
        return igsp, DetectorConfig.for_cloud(source, **det)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def format_config(igsp: IgspConfig, detector: DetectorConfig | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in dataclasses.asdict(igsp).items()]
    if detector is not None:
        lines += [f"{k} = {v}" for k, v in dataclasses.asdict(detector).items()]
    return "\n".join(lines) + "\n"
