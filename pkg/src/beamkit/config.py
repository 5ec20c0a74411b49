"""Scenario configuration: a line-oriented ``key = value`` format with sections.

Example::

    [scenario]
    format_version = 1
    mode = su_sweep_snr
    seed = 7
    trials = 100
    methods = fully_digital, hybrid_fc, asymptotic

    [architecture]
    nt = 64
    nr = 32

    [sweep]
    axis = -10, -5, 0, 5, 10, 15, 20   # assumed: grid not stated

Comments start with ``#`` or ``;`` (whole-line or inline). Required keys are
``mode``, ``seed``, ``methods`` and ``axis``; every other key has a default
that is logged when applied. Unknown sections or keys, malformed values and
violated invariants raise :class:`ConfigError` carrying the line number.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from beamkit.hybrid_su import ArchitectureSpec, Structure

__all__ = [
    "FORMAT_VERSION",
    "MODES",
    "ConfigError",
    "Scenario",
    "SuMethod",
    "MuMethod",
    "parse_config",
    "emit_config",
    "load_preset",
    "preset_names",
    "parse_su_method",
    "parse_mu_method",
]

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SU_MODES = ("su_sweep_snr", "su_sweep_antennas", "asymptotic_sweep")
MU_MODES = ("mu_sum_rate", "mu_cdf")
MODES = SU_MODES + MU_MODES
RECEIVERS = ("hybrid", "digital")
WEIGHT_PROTOCOLS = ("static", "adaptive", "equal")
WMMSE_STARTS = ("rzf", "mf")
MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Invalid scenario configuration; `line` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SuMethod:
    tag: str
    kind: str  # fully_digital | asymptotic | hybrid
    structure: Optional[Structure] = None
    phase_bits: Optional[int] = None


@dataclass(frozen=True)
class MuMethod:
    tag: str
    kind: str  # fully_digital | hybrid
    antennas: Optional[int] = None  # fully-digital array size, None for all Nt
    n_rf: Optional[int] = None
    structure: Structure = Structure.FULLY_CONNECTED
    phase_bits: Optional[int] = None


_SU_RE = re.compile(r"^(?:(fully_digital)|(asymptotic)|hybrid_(fc|pc)(?:_b(\d+))?)$")
_MU_RE = re.compile(r"^(?:fully_digital(?:_nt(\d+))?|hybrid_nrf(\d+)(_pc)?(?:_b(\d+))?)$")


def parse_su_method(tag: str) -> SuMethod:
    """``fully_digital``, ``asymptotic``, ``hybrid_fc`` / ``hybrid_pc`` with optional ``_b<bits>``."""
    m = _SU_RE.match(tag)
    if not m:
        raise ValueError(f"unknown single-user method {tag!r}")
    if m.group(1):
        return SuMethod(tag, "fully_digital")
    if m.group(2):
        return SuMethod(tag, "asymptotic")
    structure = Structure.FULLY_CONNECTED if m.group(3) == "fc" else Structure.PARTIALLY_CONNECTED
    bits = int(m.group(4)) if m.group(4) else None
    if bits is not None and bits < 1:
        raise ValueError(f"{tag}: phase resolution must be at least 1 bit")
    return SuMethod(tag, "hybrid", structure, bits)


def parse_mu_method(tag: str) -> MuMethod:
    """``fully_digital[_nt<N>]`` or ``hybrid_nrf<N>[_pc][_b<bits>]``."""
    m = _MU_RE.match(tag)
    if not m:
        raise ValueError(f"unknown multiuser method {tag!r}")
    if tag.startswith("fully_digital"):
        return MuMethod(tag, "fully_digital", antennas=int(m.group(1)) if m.group(1) else None)
    structure = Structure.PARTIALLY_CONNECTED if m.group(3) else Structure.FULLY_CONNECTED
    bits = int(m.group(4)) if m.group(4) else None
    if bits is not None and bits < 1:
        raise ValueError(f"{tag}: phase resolution must be at least 1 bit")
    return MuMethod(tag, "hybrid", n_rf=int(m.group(2)), structure=structure, phase_bits=bits)


@dataclass(frozen=True)
class Scenario:
    """
    A fully validated experiment description.

    The sweep `axis` holds SNR values in dB (``su_sweep_snr``), antenna
    counts (``su_sweep_antennas`` sweeps Nt, ``asymptotic_sweep`` sweeps
    N = Nt = Nr) or transmit PSD in dBm/Hz (``mu_sum_rate``; ``mu_cdf`` takes
    exactly one value). The angular spread is the Laplacian standard
    deviation in degrees; cluster delays are uniform on
    ``[0, delay_fraction * K]``.
    """

    mode: str
    seed: int
    methods: tuple
    axis: tuple
    trials: int = 100
    format_version: int = FORMAT_VERSION
    # architecture
    nt: int = 64
    nr: int = 32
    n_rf: int = 4
    ns: int = 2
    subcarriers: int = 64
    receiver: str = "hybrid"
    # channel
    clusters: int = 5
    scatterers: int = 10
    angular_spread_deg: float = 10.0
    delay_fraction: float = 0.25
    antenna_spacing: float = 0.5
    # sweep
    snr_db: float = 20.0
    # multiuser
    users: int = 4
    clusters_env: int = 10
    radius_km: float = 0.2
    min_distance_km: float = 0.01
    bandwidth_hz: float = 32e6
    noise_psd_dbm_hz: float = -139.0
    weights: str = "static"
    reference_psd_dbm_hz: float = -55.0
    expected_rate_samples: int = 64
    population: int = 40
    # solver
    max_sweeps: int = 50
    analog_rel_tol: float = 1e-6
    wmmse_rel_tol: float = 1e-5
    wmmse_max_iters: int = 200
    wmmse_init: str = "rzf"

    @property
    def is_multiuser(self) -> bool:
        return self.mode in MU_MODES

    def su_methods(self) -> list[SuMethod]:
        return [parse_su_method(t) for t in self.methods]

    def mu_methods(self) -> list[MuMethod]:
        return [parse_mu_method(t) for t in self.methods]

    def antennas_at(self, axis_value) -> tuple[int, int]:
        """(Nt, Nr) used at one point of the sweep axis."""
        if self.mode == "asymptotic_sweep":
            return int(axis_value), int(axis_value)
        if self.mode == "su_sweep_antennas":
            return int(axis_value), self.nr
        return self.nt, self.nr

    def architecture(self, axis_value=None, method: Optional[SuMethod] = None, power: float = 1.0) -> ArchitectureSpec:
        nt, nr = self.antennas_at(axis_value) if axis_value is not None else (self.nt, self.nr)
        return ArchitectureSpec(
            nt=nt, nr=nr, n_rf=self.n_rf, ns=self.ns, num_subcarriers=self.subcarriers,
            structure=method.structure if method and method.structure else Structure.FULLY_CONNECTED,
            phase_bits=method.phase_bits if method else None,
            power=power,
        )


# (section, key) -> (field name, type); types: int, float, str, "ints", "floats", "strs", "seed"
_SCHEMA = {
    "scenario": {
        "format_version": ("format_version", int),
        "mode": ("mode", str),
        "seed": ("seed", "seed"),
        "trials": ("trials", int),
        "methods": ("methods", "strs"),
    },
    "architecture": {
        "nt": ("nt", int),
        "nr": ("nr", int),
        "n_rf": ("n_rf", int),
        "ns": ("ns", int),
        "subcarriers": ("subcarriers", int),
        "receiver": ("receiver", str),
    },
    "channel": {
        "clusters": ("clusters", int),
        "scatterers": ("scatterers", int),
        "angular_spread_deg": ("angular_spread_deg", float),
        "delay_fraction": ("delay_fraction", float),
        "antenna_spacing": ("antenna_spacing", float),
    },
    "sweep": {
        "axis": ("axis", "floats"),
        "snr_db": ("snr_db", float),
    },
    "multiuser": {
        "users": ("users", int),
        "clusters_env": ("clusters_env", int),
        "radius_km": ("radius_km", float),
        "min_distance_km": ("min_distance_km", float),
        "bandwidth_hz": ("bandwidth_hz", float),
        "noise_psd_dbm_hz": ("noise_psd_dbm_hz", float),
        "weights": ("weights", str),
        "reference_psd_dbm_hz": ("reference_psd_dbm_hz", float),
        "expected_rate_samples": ("expected_rate_samples", int),
        "population": ("population", int),
    },
    "solver": {
        "max_sweeps": ("max_sweeps", int),
        "analog_rel_tol": ("analog_rel_tol", float),
        "wmmse_rel_tol": ("wmmse_rel_tol", float),
        "wmmse_max_iters": ("wmmse_max_iters", int),
        "wmmse_init": ("wmmse_init", str),
    },
}
_REQUIRED = ("mode", "seed", "methods", "axis")
_FIELD_KEY = {fld: (sec, key) for sec, keys in _SCHEMA.items() for key, (fld, _) in keys.items()}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]")


def _line_index(text: str) -> tuple[dict, dict]:
    sections, keys = {}, {}
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            sections.setdefault(current, no)
            continue
        m = _KEY_RE.match(line)
        if m and current is not None and not line[:1].isspace():
            keys.setdefault((current, m.group(1).strip().lower()), no)
    return sections, keys


def _convert(raw: str, kind):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "seed":
        v = int(raw)
        if not 0 <= v <= MAX_SEED:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {v}")
        return v
    items = [x.strip() for x in raw.split(",")]
    if any(not x for x in items):
        raise ValueError("empty list element")
    if kind == "floats":
        return tuple(float(x) for x in items)
    return tuple(items)


def parse_config(text: str) -> Scenario:
    """
    Parse and validate a scenario description.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections or keys, malformed values, missing
        required keys and violated invariants, with the offending line.
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False
    )
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header before the first key", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected 'key = value')", lineno) from None

    sec_lines, key_lines = _line_index(text)
    values, lines = {}, {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", sec_lines.get(section))
        for key, raw in parser.items(section):
            line = key_lines.get((section, key))
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            field_name, kind = _SCHEMA[section][key]
            try:
                values[field_name] = _convert(raw.strip(), kind)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw.strip()!r} ({exc})", line) from None
            lines[field_name] = line

    for name in _REQUIRED:
        if name not in values:
            sec, key = _FIELD_KEY[name]
            raise ConfigError(f"missing required key {sec}.{key}", sec_lines.get(sec))
    for f in dataclasses.fields(Scenario):
        if f.name not in values:
            sec, key = _FIELD_KEY[f.name]
            logger.info("default %s.%s = %r", sec, key, f.default)

    if "axis" in values and values.get("mode") in ("su_sweep_antennas", "asymptotic_sweep"):
        axis = values["axis"]
        if any(a != int(a) for a in axis):
            raise ConfigError("antenna counts on the sweep axis must be integers", lines.get("axis"))
        values["axis"] = tuple(int(a) for a in axis)

    scenario = Scenario(**values)
    _validate(scenario, lines)
    return scenario


def _validate(s: Scenario, lines: dict) -> None:
    def fail(msg, field_name):
        raise ConfigError(msg, lines.get(field_name))

    if s.format_version != FORMAT_VERSION:
        fail(f"unsupported format_version {s.format_version} (this reader understands {FORMAT_VERSION})", "format_version")
    if s.mode not in MODES:
        fail(f"mode must be one of {', '.join(MODES)}, got {s.mode!r}", "mode")
    for name in ("trials", "nt", "nr", "n_rf", "ns", "subcarriers", "clusters", "scatterers", "users",
                 "clusters_env", "expected_rate_samples", "population", "max_sweeps", "wmmse_max_iters"):
        if getattr(s, name) < 1:
            fail(f"{name} must be positive, got {getattr(s, name)}", name)
    for name in ("radius_km", "min_distance_km", "bandwidth_hz", "antenna_spacing", "analog_rel_tol", "wmmse_rel_tol"):
        if not getattr(s, name) > 0:
            fail(f"{name} must be positive, got {getattr(s, name)}", name)
    if s.angular_spread_deg < 0:
        fail("angular_spread_deg must be nonnegative", "angular_spread_deg")
    if s.delay_fraction < 0:
        fail("delay_fraction must be nonnegative", "delay_fraction")
    if s.receiver not in RECEIVERS:
        fail(f"receiver must be one of {', '.join(RECEIVERS)}", "receiver")
    if s.wmmse_init not in WMMSE_STARTS:
        fail(f"wmmse_init must be one of {', '.join(WMMSE_STARTS)}", "wmmse_init")
    if s.weights not in WEIGHT_PROTOCOLS:
        fail(f"weights must be one of {', '.join(WEIGHT_PROTOCOLS)}", "weights")
    if not s.axis:
        fail("sweep axis is empty", "axis")
    if len(set(s.axis)) != len(s.axis):
        fail("sweep axis has repeated values", "axis")
    if len(set(s.methods)) != len(s.methods):
        fail("method list has repeated entries", "methods")

    if s.is_multiuser:
        _validate_mu(s, fail)
    else:
        _validate_su(s, fail)


def _validate_su(s: Scenario, fail) -> None:
    try:
        methods = s.su_methods()
    except ValueError as exc:
        fail(str(exc), "methods")
    for a in s.axis:
        nt, nr = s.antennas_at(a)
        if nt < 1 or nr < 1:
            fail(f"antenna count must be positive, got {a}", "axis")
        for m in methods:
            try:
                s.architecture(a, m)
            except ValueError as exc:
                where = "axis" if s.mode != "su_sweep_snr" else "n_rf"
                fail(f"{m.tag} at axis value {a}: {exc}", where)
        if any(m.kind == "asymptotic" for m in methods) and s.clusters * s.scatterers < s.n_rf:
            fail("asymptotic design needs at least N_RF propagation paths", "clusters")
        if s.ns > min(nt, nr):
            fail(f"Ns={s.ns} exceeds min(Nt, Nr) at axis value {a}", "ns")


def _validate_mu(s: Scenario, fail) -> None:
    try:
        methods = s.mu_methods()
    except ValueError as exc:
        fail(str(exc), "methods")
    for m in methods:
        if m.kind == "hybrid":
            if not s.users <= m.n_rf <= s.nt:
                fail(f"{m.tag}: need users <= N_RF <= Nt (users={s.users}, Nt={s.nt})", "methods")
            if m.structure is Structure.PARTIALLY_CONNECTED and s.nt % m.n_rf:
                fail(f"{m.tag}: partially-connected needs N_RF to divide Nt", "methods")
        elif m.antennas is not None and not 1 <= m.antennas <= s.nt:
            fail(f"{m.tag}: antenna count must lie in 1..Nt", "methods")
    if s.mode == "mu_cdf":
        if len(s.axis) != 1:
            fail("mu_cdf takes exactly one transmit PSD on the axis", "axis")
        if s.population < s.users:
            fail("population must hold at least as many users as are scheduled per slot", "population")
        if s.weights == "static":
            fail("mu_cdf uses adaptive or equal weights", "weights")
    elif s.weights == "adaptive":
        fail("adaptive weights need the mu_cdf mode (weights evolve over time slots)", "weights")


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(s: Scenario) -> str:
    """Serialize every field; ``parse_config(emit_config(s)) == s``."""
    out = []
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key, (field_name, _) in keys.items():
            out.append(f"{key} = {_fmt(getattr(s, field_name))}")
        out.append("")
    return "\n".join(out)


def preset_names() -> list[str]:
    root = resources.files("beamkit.presets")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_preset(name: str) -> tuple[Scenario, str]:
    """Parse a shipped preset; returns the scenario and the preset text."""
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    text = (resources.files("beamkit.presets") / f"{name}.ini").read_text()
    return parse_config(text), text
