"""
Device description, config parsing and mesh construction.

A device is an ordered stack of abruptly doped regions running from the
anode (acceptor end) to the cathode (donor end), optionally with a MOS gate
sitting over one acceptor region.  The config is a YAML document::

    device:
      temperature_K: 300
      area_cm2: 3.0e-10
      regions:
        - {name: p_plus, length_nm: 200, type: acceptor, concentration_cm3: 1.0e20}
        ...
      gate: {region: 3, tox_nm: 5, eps_ox_rel: 3.9, vfb_V: 0.357}
    mesh: {points_per_region: 40, junction_refine_nm: 1.0, refine_ratio: 1.15}
    material: {srh_tau_n: 1.0e-7, ...}
"""

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .physics import MaterialParams

DOPING_TYPES = ("donor", "acceptor", "intrinsic")
DEFAULT_BODY_THICKNESS = 200e-9


class ConfigError(ValueError):
    """Malformed or invalid device config; the message names the offending key."""


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    name: str
    length: float  # m
    doping_type: str
    concentration: float  # 1/cm^3

    def __post_init__(self):
        if not (math.isfinite(self.length) and self.length > 0):
            raise ConfigError(f"region {self.name!r}: length must be > 0, got {self.length!r}")
        if self.doping_type not in DOPING_TYPES:
            raise ConfigError(
                f"region {self.name!r}: type must be one of {DOPING_TYPES}, "
                f"got {self.doping_type!r}")
        if not (math.isfinite(self.concentration) and self.concentration >= 0):
            raise ConfigError(
                f"region {self.name!r}: concentration must be >= 0, got {self.concentration!r}")
        if (self.concentration == 0) != (self.doping_type == "intrinsic"):
            raise ConfigError(
                f"region {self.name!r}: concentration {self.concentration!r} is inconsistent "
                f"with type {self.doping_type!r} (zero iff intrinsic)")

    @property
    def signed_concentration(self):
        if self.doping_type == "donor":
            return self.concentration
        if self.doping_type == "acceptor":
            return -self.concentration
        return 0.0


@dataclass(frozen=True)
class GateSpec:
    covered_region_index: int
    oxide_thickness: float  # m
    oxide_relative_permittivity: float = 3.9
    flatband_voltage: float = 0.0
    body_thickness: float = DEFAULT_BODY_THICKNESS  # m

    def __post_init__(self):
        if not self.oxide_thickness > 0:
            raise ConfigError(f"gate.tox_nm must be > 0, got {self.oxide_thickness * 1e9!r}")
        if not self.oxide_relative_permittivity > 0:
            raise ConfigError(
                f"gate.eps_ox_rel must be > 0, got {self.oxide_relative_permittivity!r}")
        if not self.body_thickness > 0:
            raise ConfigError(
                f"gate.body_thickness_nm must be > 0, got {self.body_thickness * 1e9!r}")


@dataclass(frozen=True)
class DeviceSpec:
    regions: tuple
    cross_section_area: float = 150e-7 * 200e-7  # cm^2
    gate: GateSpec = None
    temperature: float = 300.0

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if len(self.regions) < 2:
            raise ConfigError(f"device.regions: need at least 2 regions, got {len(self.regions)}")
        if self.regions[0].doping_type != "acceptor":
            raise ConfigError(
                f"device.regions[0].type: anode region must be acceptor, "
                f"got {self.regions[0].doping_type!r}")
        if self.regions[-1].doping_type != "donor":
            raise ConfigError(
                f"device.regions[{len(self.regions) - 1}].type: cathode region must be donor, "
                f"got {self.regions[-1].doping_type!r}")
        if not self.cross_section_area > 0:
            raise ConfigError(f"device.area_cm2 must be > 0, got {self.cross_section_area!r}")
        if not self.temperature > 0:
            raise ConfigError(f"device.temperature_K must be > 0, got {self.temperature!r}")
        if self.gate is not None:
            k = self.gate.covered_region_index
            if not 0 <= k < len(self.regions):
                raise ConfigError(f"gate.region: index {k!r} out of range")
            if self.regions[k].doping_type != "acceptor":
                raise ConfigError(
                    f"gate.region: covered region {k} ({self.regions[k].name!r}) "
                    f"must be acceptor-doped, got {self.regions[k].doping_type!r}")

    @property
    def total_length(self):
        return float(sum(r.length for r in self.regions))

    @property
    def boundaries(self):
        """Region edge positions in metres, anode first."""
        return np.concatenate([[0.0], np.cumsum([r.length for r in self.regions])])


@dataclass(frozen=True)
class MeshConfig:
    points_per_region: int = 40
    junction_refine_spacing: float = 1e-9  # m
    refine_ratio: float = 1.15

    def __post_init__(self):
        if int(self.points_per_region) != self.points_per_region or self.points_per_region < 3:
            raise MeshError(f"points_per_region must be an integer >= 3, got {self.points_per_region!r}")
        if not self.junction_refine_spacing > 0:
            raise MeshError(
                f"junction_refine_spacing must be > 0, got {self.junction_refine_spacing!r}")
        if not self.refine_ratio > 1:
            raise MeshError(f"refine_ratio must be > 1, got {self.refine_ratio!r}")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a device config file holds."""

    device: DeviceSpec
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialParams = field(default_factory=MaterialParams)


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """
    Nonuniform 1D grid.

    ``net_doping`` is the control-volume average of the signed doping, so
    junction nodes carry the spacing-weighted mean of their two regions.
    ``gate_fraction`` is the share of each control volume lying under the gate.
    """

    node_positions: np.ndarray  # m
    net_doping: np.ndarray  # 1/cm^3, donors positive
    gate_mask: np.ndarray
    region_index: np.ndarray
    junction_nodes: np.ndarray
    gate_fraction: np.ndarray
    device: DeviceSpec = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def n_nodes(self):
        return self.node_positions.size

    @property
    def spacing(self):
        return np.diff(self.node_positions)

    @property
    def control_volumes(self):
        """Dual-cell lengths in metres (half cells at the two contacts)."""
        h = self.spacing
        cv = np.zeros(self.n_nodes)
        cv[:-1] += h / 2
        cv[1:] += h / 2
        return cv


# ---------------------------------------------------------------- config I/O

_DEVICE_KEYS = {"temperature_K", "area_cm2", "regions", "gate"}
_REGION_KEYS = {"name", "length_nm", "type", "concentration_cm3"}
_GATE_KEYS = {"region", "tox_nm", "eps_ox_rel", "vfb_V", "body_thickness_nm"}
_MESH_KEYS = {"points_per_region", "junction_refine_nm", "refine_ratio"}
_MATERIAL_KEYS = {f.name for f in fields(MaterialParams)}
_TOP_KEYS = {"device", "mesh", "material"}


def _check_keys(mapping, allowed, where, required=()):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")
    for key in required:
        if key not in mapping:
            raise ConfigError(f"{where}.{key}: required key missing")


def _number(value, where, integer=False):
    # PyYAML reads bare '1e20' as a string
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"{where}: expected a finite number, got {value!r}")
    if integer:
        if out != int(out):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(out)
    return out


def _wrap(where, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, MeshError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(config_text):
    """
    Parse a YAML device config into a :class:`SimulationConfig`.

    Raises
    ------
    ConfigError
        On malformed YAML, unknown keys, or any invariant violation.
    """
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    if doc is None:
        raise ConfigError("parse error: empty document")
    _check_keys(doc, _TOP_KEYS, "config", required=("device",))

    dev = doc["device"]
    _check_keys(dev, _DEVICE_KEYS, "device", required=("regions",))
    raw_regions = dev["regions"]
    if not isinstance(raw_regions, list):
        raise ConfigError(f"device.regions: expected a list, got {raw_regions!r}")
    regions = []
    for k, reg in enumerate(raw_regions):
        where = f"device.regions[{k}]"
        _check_keys(reg, _REGION_KEYS, where, required=("length_nm", "type"))
        kind = reg["type"]
        conc = _number(reg.get("concentration_cm3", 0.0), f"{where}.concentration_cm3")
        length = _number(reg["length_nm"], f"{where}.length_nm") * 1e-9
        regions.append(_wrap(where, RegionSpec, str(reg.get("name", f"region{k}")),
                             length, kind, conc))

    gate = None
    if dev.get("gate") is not None:
        g = dev["gate"]
        _check_keys(g, _GATE_KEYS, "device.gate", required=("region", "tox_nm"))
        gate = _wrap("device.gate", GateSpec,
                     covered_region_index=_number(g["region"], "device.gate.region", integer=True),
                     oxide_thickness=_number(g["tox_nm"], "device.gate.tox_nm") * 1e-9,
                     oxide_relative_permittivity=_number(g.get("eps_ox_rel", 3.9),
                                                         "device.gate.eps_ox_rel"),
                     flatband_voltage=_number(g.get("vfb_V", 0.0), "device.gate.vfb_V"),
                     body_thickness=_number(g.get("body_thickness_nm", 200.0),
                                            "device.gate.body_thickness_nm") * 1e-9)

    kwargs = {"regions": regions, "gate": gate}
    if "area_cm2" in dev:
        kwargs["cross_section_area"] = _number(dev["area_cm2"], "device.area_cm2")
    if "temperature_K" in dev:
        kwargs["temperature"] = _number(dev["temperature_K"], "device.temperature_K")
    device = _wrap("device", DeviceSpec, **kwargs)

    mesh = MeshConfig()
    if doc.get("mesh") is not None:
        m = doc["mesh"]
        _check_keys(m, _MESH_KEYS, "mesh")
        mk = {}
        if "points_per_region" in m:
            mk["points_per_region"] = _number(m["points_per_region"], "mesh.points_per_region",
                                              integer=True)
        if "junction_refine_nm" in m:
            mk["junction_refine_spacing"] = _number(m["junction_refine_nm"],
                                                    "mesh.junction_refine_nm") * 1e-9
        if "refine_ratio" in m:
            mk["refine_ratio"] = _number(m["refine_ratio"], "mesh.refine_ratio")
        mesh = _wrap("mesh", MeshConfig, **mk)

    material = MaterialParams()
    if doc.get("material") is not None:
        mat = doc["material"]
        _check_keys(mat, _MATERIAL_KEYS, "material")
        mk = {}
        for key, value in mat.items():
            if key == "mobility_model":
                mk[key] = str(value)
            else:
                mk[key] = _number(value, f"material.{key}")
        material = _wrap("material", MaterialParams, **mk)

    return SimulationConfig(device=device, mesh=mesh, material=material)


def parse_device_config(config_text):
    """Parse config text and return only its :class:`DeviceSpec`."""
    return parse_config(config_text).device


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config(text)


def _nm(metres):
    # 12 significant digits undo the binary noise of the nm -> m conversion
    return float(f"{metres * 1e9:.12g}")


def config_to_dict(cfg):
    if isinstance(cfg, DeviceSpec):
        cfg = SimulationConfig(device=cfg)
    dev = cfg.device
    out_dev = {
        "temperature_K": dev.temperature,
        "area_cm2": dev.cross_section_area,
        "regions": [
            {"name": r.name, "length_nm": _nm(r.length), "type": r.doping_type,
             "concentration_cm3": r.concentration}
            for r in dev.regions
        ],
    }
    if dev.gate is not None:
        g = dev.gate
        out_dev["gate"] = {
            "region": g.covered_region_index,
            "tox_nm": _nm(g.oxide_thickness),
            "eps_ox_rel": g.oxide_relative_permittivity,
            "vfb_V": g.flatband_voltage,
            "body_thickness_nm": _nm(g.body_thickness),
        }
    m = cfg.mesh
    mat = cfg.material
    return {
        "device": out_dev,
        "mesh": {"points_per_region": m.points_per_region,
                 "junction_refine_nm": _nm(m.junction_refine_spacing),
                 "refine_ratio": m.refine_ratio},
        "material": {f.name: getattr(mat, f.name) for f in fields(mat)},
    }


def serialize_config(cfg):
    """Inverse of :func:`parse_config` (accepts a DeviceSpec too)."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def reference_config_text(name):
    """Text of a shipped reference config, ``'pnpnn6'`` or ``'pnpn4'``."""
    return resources.files("tramsim.data").joinpath(f"{name}.cfg").read_text()


def reference_config(name, **mesh_overrides):
    cfg = parse_config(reference_config_text(name))
    if mesh_overrides:
        cfg = replace(cfg, mesh=replace(cfg.mesh, **mesh_overrides))
    return cfg


def scale_doping(cfg, factors):
    """
    Copy of `cfg` with region concentrations multiplied.

    `factors` maps region index (negative indices allowed) to a factor.
    """
    regions = list(cfg.device.regions)
    for k, f in factors.items():
        r = regions[k]
        regions[k] = replace(r, concentration=r.concentration * f)
    return replace(cfg, device=replace(cfg.device, regions=tuple(regions)))


# ---------------------------------------------------------------------- mesh

def _region_positions(length, h_junction, ratio, h_max, refine_left, refine_right):
    """
    Node positions inside one region, 0 and `length` included.

    The target spacing grows linearly with distance from each refined end,
    ``h(d) = h0 + g d`` with ``g = ln(ratio)``, and is capped at `h_max`.
    Nodes are equidistributed in ``s(x) = int dx / h(x)``; with that choice
    the ratio of neighbouring cells never exceeds `ratio` and the first cell
    at a refined end is no wider than `h_junction`.
    """
    g = math.log(ratio)
    h0 = h_junction * g / (ratio - 1.0)
    if h0 >= h_max or not (refine_left or refine_right):
        n = max(1, math.ceil(length / h_max - 1e-9))
        return np.linspace(0.0, length, n + 1)

    d_cap = (h_max - h0) / g

    def sigma(d):
        graded = np.log1p(g * np.minimum(d, d_cap) / h0) / g
        return graded + np.maximum(d - d_cap, 0.0) / h_max

    def sigma_inv(s):
        s_cap = math.log1p(g * d_cap / h0) / g
        return np.where(s <= s_cap, h0 * np.expm1(g * np.minimum(s, s_cap)) / g,
                        d_cap + (s - s_cap) * h_max)

    if refine_left and refine_right:
        half = sigma(length / 2.0)
        total = 2.0 * half
    else:
        total = float(sigma(length))
    n = max(1, math.ceil(total - 1e-9))
    s = np.linspace(0.0, total, n + 1)
    if refine_left and refine_right:
        x = np.where(s <= half, sigma_inv(s), length - sigma_inv(np.maximum(total - s, 0.0)))
    elif refine_left:
        x = sigma_inv(s)
    else:
        x = length - sigma_inv(total - s)
    x[0], x[-1] = 0.0, length
    return x


def build_mesh(dev, mesh_cfg=None):
    """
    Build the node grid for `dev`.

    Every region boundary is a node.  Spacing is graded geometrically away
    from each metallurgical junction (a boundary between regions of
    different signed doping) and uniform, at ``length / points_per_region``,
    elsewhere.

    Raises
    ------
    MeshError
        If a region is too short to hold the requested junction refinement.
    """
    if isinstance(dev, SimulationConfig):
        mesh_cfg = dev.mesh if mesh_cfg is None else mesh_cfg
        dev = dev.device
    if mesh_cfg is None:
        mesh_cfg = MeshConfig()
    elif isinstance(mesh_cfg, dict):
        mesh_cfg = MeshConfig(**mesh_cfg)
    h_j = mesh_cfg.junction_refine_spacing
    regions = dev.regions
    nreg = len(regions)
    signed = [r.signed_concentration for r in regions]
    is_junction = [signed[k] != signed[k + 1] for k in range(nreg - 1)]

    pieces = []
    offset = 0.0
    for k, reg in enumerate(regions):
        left = k > 0 and is_junction[k - 1]
        right = k < nreg - 1 and is_junction[k]
        nref = int(left) + int(right)
        if nref and reg.length < nref * h_j:
            raise MeshError(
                f"region {k} ({reg.name!r}) of length {reg.length * 1e9:g} nm is too short "
                f"for junction_refine_spacing {h_j * 1e9:g} nm")
        h_max = reg.length / mesh_cfg.points_per_region
        x = _region_positions(reg.length, h_j, mesh_cfg.refine_ratio, h_max, left, right)
        pos = offset + x
        if k > 0:
            pos = pos[1:]
        pieces.append((k, pos))
        offset += reg.length

    x = np.concatenate([p for _, p in pieces])
    bounds = dev.boundaries
    # pin boundaries exactly
    jn = [0]
    count = 0
    for k, pos in pieces:
        count += pos.size
        jn.append(count - 1)
    jn = np.array(jn)
    x[jn] = bounds
    h = np.diff(x)
    if np.any(h <= 0):
        raise MeshError("mesh construction produced non-increasing nodes")

    region_index = np.zeros(x.size, dtype=int)
    for k in range(nreg):
        region_index[jn[k]:jn[k + 1] + 1] = k
    region_index[jn[1:-1]] = np.arange(1, nreg)  # boundary nodes take the right region

    # control-volume averaged doping
    left_h = np.concatenate([[0.0], h])
    right_h = np.concatenate([h, [0.0]])
    sig = np.array(signed)
    left_reg = np.concatenate([[0], np.searchsorted(bounds, x[1:], side="left") - 1])
    left_reg = np.clip(left_reg, 0, nreg - 1)
    right_reg = np.clip(np.searchsorted(bounds, x, side="right") - 1, 0, nreg - 1)
    doping = (left_h * sig[left_reg] + right_h * sig[right_reg]) / (left_h + right_h)

    gate_mask = np.zeros(x.size, dtype=bool)
    gate_fraction = np.zeros(x.size)
    if dev.gate is not None:
        g = dev.gate.covered_region_index
        gl = (left_reg == g).astype(float)
        gr = (right_reg == g).astype(float)
        gate_fraction = (left_h * gl + right_h * gr) / (left_h + right_h)
        gate_mask = gate_fraction > 0

    junctions = np.array([jn[k + 1] for k in range(nreg - 1) if is_junction[k]], dtype=int)
    return Mesh1D(node_positions=x, net_doping=doping, gate_mask=gate_mask,
                  region_index=region_index, junction_nodes=junctions,
                  gate_fraction=gate_fraction, device=dev)


def doping_at(mesh, node):
    if not (0 <= node < mesh.n_nodes) or int(node) != node:
        raise IndexError(f"node {node!r} out of range [0, {mesh.n_nodes})")
    return float(mesh.net_doping[int(node)])
