"""CSV spectra, INI run configs, and JSON run manifests.

CSV layout: optional '# key=value' metadata lines, then a header row
'detuning_mhz,intensity_cps[,sigma_cps][,theta_deg]', then data rows at
full double precision.  Files are written atomically (temp file + rename).
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .lineshape import EmitterParams, ModalCoupling, Spectrum
from .polarization import JonesField
from .synth import AcquisitionConfig

__all__ = [
    "ConfigError",
    "CsvFormatError",
    "RunManifest",
    "RunConfig",
    "PolarizationConfig",
    "write_spectrum_csv",
    "read_spectrum_csv",
    "load_config",
    "write_manifest",
    "atomic_write_text",
]

_CSV_COLUMNS = ("detuning_mhz", "intensity_cps", "sigma_cps", "theta_deg")


class ConfigError(ValueError):
    """A run configuration file is missing or malformed."""


class CsvFormatError(ValueError):
    """A spectrum CSV does not follow the expected layout."""


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a temp file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_float(x: float) -> str:
    return f"{x:.17g}"


def write_spectrum_csv(
    path: str,
    spectrum: Spectrum,
    metadata: dict[str, object] | None = None,
    theta_deg: float | None = None,
) -> None:
    """Write one spectrum; theta_deg adds a constant analyzer-angle column."""
    lines = []
    for key, value in (metadata or {}).items():
        key = str(key)
        if "=" in key or "," in key or key.startswith("#"):
            raise ValueError(f"metadata key {key!r} contains reserved characters")
        lines.append(f"# {key}={value}")
    header = ["detuning_mhz", "intensity_cps"]
    if spectrum.sigma is not None:
        header.append("sigma_cps")
    if theta_deg is not None:
        header.append("theta_deg")
    lines.append(",".join(header))
    for k in range(len(spectrum)):
        row = [_format_float(spectrum.detunings[k]), _format_float(spectrum.values[k])]
        if spectrum.sigma is not None:
            row.append(_format_float(spectrum.sigma[k]))
        if theta_deg is not None:
            row.append(_format_float(theta_deg))
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class ParsedCsv:
    """Raw columns of a spectrum CSV plus its metadata."""

    detuning_mhz: np.ndarray
    intensity_cps: np.ndarray
    sigma_cps: np.ndarray | None
    theta_deg: np.ndarray | None
    metadata: dict[str, str]

    def to_spectrum(self) -> Spectrum:
        return Spectrum(
            detunings=self.detuning_mhz,
            values=self.intensity_cps,
            sigma=self.sigma_cps,
        )


def read_spectrum_csv(path: str) -> ParsedCsv:
    """Parse a spectrum CSV, reporting the line number of any defect."""
    metadata: dict[str, str] = {}
    header: list[str] | None = None
    rows: list[list[float]] = []
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    metadata[key.strip()] = value.strip()
                continue
            if header is None:
                header = [h.strip() for h in line.split(",")]
                if header[:2] != ["detuning_mhz", "intensity_cps"]:
                    raise CsvFormatError(
                        f"{path}:{lineno}: header must start with "
                        "'detuning_mhz,intensity_cps'"
                    )
                for name in header[2:]:
                    if name not in _CSV_COLUMNS:
                        raise CsvFormatError(
                            f"{path}:{lineno}: unknown column {name!r}"
                        )
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if header is None or not rows:
        raise CsvFormatError(f"{path}: no data rows found")
    data = np.asarray(rows)
    columns = {name: data[:, k] for k, name in enumerate(header)}
    return ParsedCsv(
        detuning_mhz=columns["detuning_mhz"],
        intensity_cps=columns["intensity_cps"],
        sigma_cps=columns.get("sigma_cps"),
        theta_deg=columns.get("theta_deg"),
        metadata=metadata,
    )


@dataclass(frozen=True)
class PolarizationConfig:
    """Tip and emitter polarization ellipses plus the analyzer angles."""

    tip_axis_deg: float
    tip_ellipticity_deg: float
    mol_axis_deg: float
    mol_ellipticity_deg: float
    theta_start_deg: float
    theta_stop_deg: float
    theta_count: int

    def tip_field(self) -> JonesField:
        return JonesField.from_ellipse(
            math.radians(self.tip_axis_deg), math.radians(self.tip_ellipticity_deg)
        )

    def mol_field(self) -> JonesField:
        return JonesField.from_ellipse(
            math.radians(self.mol_axis_deg), math.radians(self.mol_ellipticity_deg)
        )

    def thetas(self) -> np.ndarray:
        return np.radians(
            np.linspace(self.theta_start_deg, self.theta_stop_deg, self.theta_count)
        )


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    emitter: EmitterParams
    coupling: ModalCoupling
    acquisition: AcquisitionConfig
    grid: np.ndarray
    polarization: PolarizationConfig | None


_SECTION_KEYS = {
    "emitter": {
        "nu21_mhz": (float, True),
        "gamma_mhz": (float, True),
        "gamma0_mhz": (float, False),
        "alpha": (float, False),
        "omega_mhz": (float, False),
        "k_ratio": (float, False),
    },
    "coupling": {
        "c_mhz": (float, True),
        "psi_rad": (float, True),
        "i_e_cps": (float, True),
    },
    "acquisition": {
        "dwell_s": (float, False),
        "averages": (int, False),
        "laser_rms": (float, False),
        "seed": (int, False),
    },
    "grid": {
        "start_mhz": (float, True),
        "stop_mhz": (float, True),
        "points": (int, True),
    },
    "polarization": {
        "tip_axis_deg": (float, True),
        "tip_ellipticity_deg": (float, True),
        "mol_axis_deg": (float, True),
        "mol_ellipticity_deg": (float, True),
        "theta_start_deg": (float, False),
        "theta_stop_deg": (float, False),
        "theta_count": (int, False),
    },
}


def _read_section(parser: configparser.ConfigParser, section: str) -> dict:
    spec = _SECTION_KEYS[section]
    if not parser.has_section(section):
        raise ConfigError(f"missing required section [{section}]")
    out: dict[str, float | int] = {}
    for key in parser.options(section):
        if key not in spec:
            raise ConfigError(f"[{section}] has unknown key {key!r}")
    for key, (cast, required) in spec.items():
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                out[key] = cast(raw)
            except ValueError:
                raise ConfigError(
                    f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}"
                ) from None
        elif required:
            raise ConfigError(f"[{section}] missing required key {key!r}")
    return out


def load_config(path: str, need_polarization: bool = False) -> RunConfig:
    """Read and validate an INI run configuration.

    Required sections: [emitter], [coupling], [grid]; [acquisition] falls
    back to defaults; [polarization] is required only when
    need_polarization is set.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    known = set(_SECTION_KEYS)
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")

    em = _read_section(parser, "emitter")
    try:
        if "gamma0_mhz" in em:
            emitter = EmitterParams(
                nu21=em["nu21_mhz"],
                gamma=em["gamma_mhz"],
                gamma0=em["gamma0_mhz"],
                alpha=em.get("alpha", 0.25),
                omega=em.get("omega_mhz", 0.0),
                k_ratio=em.get("k_ratio", 1.0),
            )
        else:
            emitter = EmitterParams.with_gamma0_unknown(
                nu21=em["nu21_mhz"],
                gamma=em["gamma_mhz"],
                alpha=em.get("alpha", 0.25),
                omega=em.get("omega_mhz", 0.0),
                k_ratio=em.get("k_ratio", 1.0),
            )
        co = _read_section(parser, "coupling")
        coupling = ModalCoupling(
            c_amp=co["c_mhz"], psi=co["psi_rad"], i_e=co["i_e_cps"]
        )
        ac = (
            _read_section(parser, "acquisition")
            if parser.has_section("acquisition")
            else {}
        )
        acquisition = AcquisitionConfig(
            dwell=ac.get("dwell_s", 0.01),
            averages=ac.get("averages", 20),
            laser_rms=ac.get("laser_rms", 0.003),
            seed=ac.get("seed"),
        )
        gr = _read_section(parser, "grid")
        if gr["points"] < 2:
            raise ConfigError("[grid] points must be >= 2")
        if gr["stop_mhz"] <= gr["start_mhz"]:
            raise ConfigError("[grid] stop_mhz must exceed start_mhz")
        grid = np.linspace(gr["start_mhz"], gr["stop_mhz"], gr["points"])
        polarization = None
        if need_polarization or parser.has_section("polarization"):
            po = _read_section(parser, "polarization")
            polarization = PolarizationConfig(
                tip_axis_deg=po["tip_axis_deg"],
                tip_ellipticity_deg=po["tip_ellipticity_deg"],
                mol_axis_deg=po["mol_axis_deg"],
                mol_ellipticity_deg=po["mol_ellipticity_deg"],
                theta_start_deg=po.get("theta_start_deg", 0.0),
                theta_stop_deg=po.get("theta_stop_deg", 174.0),
                theta_count=po.get("theta_count", 30),
            )
            if polarization.theta_count < 1:
                raise ConfigError("[polarization] theta_count must be >= 1")
            if abs(polarization.tip_ellipticity_deg) > 45.0:
                raise ConfigError(
                    "[polarization] tip_ellipticity_deg must be in [-45, 45]"
                )
            if abs(polarization.mol_ellipticity_deg) > 45.0:
                raise ConfigError(
                    "[polarization] mol_ellipticity_deg must be in [-45, 45]"
                )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        emitter=emitter,
        coupling=coupling,
        acquisition=acquisition,
        grid=grid,
        polarization=polarization,
    )


@dataclass(frozen=True)
class RunManifest:
    """Machine-readable record of one CLI run, for exact replay."""

    command: str
    parameters: dict
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    seed: int | None
    version: str
    timestamp: str

    @classmethod
    def create(
        cls,
        command: str,
        parameters: dict,
        inputs: tuple[str, ...],
        outputs: tuple[str, ...],
        seed: int | None,
        version: str,
    ) -> "RunManifest":
        return cls(
            command=command,
            parameters=parameters,
            inputs=inputs,
            outputs=outputs,
            seed=seed,
            version=version,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


def write_manifest(path: str, manifest: RunManifest) -> None:
    atomic_write_text(
        path, json.dumps(dataclasses.asdict(manifest), indent=2, sort_keys=True) + "\n"
    )
