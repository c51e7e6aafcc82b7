"""Parameter files: main, model, grid, observation types and observation data.

All five formats share one lexical convention: one entry per line, ``#``
starts a comment, keys are case-insensitive and the separator between key and
value may be ``=``, ``==`` or plain whitespace.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterator

__all__ = [
    "PrmError",
    "Inflation",
    "Region",
    "BadBatchSpec",
    "ModelVar",
    "ModelConfig",
    "GridConfig",
    "ObsTypeSpec",
    "ErrorStdEntry",
    "ObsDataSection",
    "DaConfig",
    "parse_main",
    "parse_model",
    "parse_grid",
    "parse_obstypes",
    "parse_obsdata",
    "load_config",
    "serialize_main",
    "serialize_model",
    "serialize_grid",
    "serialize_obstypes",
    "serialize_obsdata",
    "describe_format",
]


class PrmError(ValueError):
    """Malformed or inconsistent parameter file."""

    def __init__(self, msg: str, lineno: int | None = None, source: str | None = None):
        where = ""
        if source:
            where += f"{source}: "
        if lineno is not None:
            where += f"line {lineno}: "
        super().__init__(where + msg)
        self.lineno = lineno


# --------------------------------------------------------------------------
# data types


@dataclass
class Inflation:
    mult: float = 1.0
    cap: float = 0.5
    plain: bool = False


@dataclass
class Region:
    name: str
    lon1: float
    lon2: float
    lat1: float
    lat2: float
    zints: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class BadBatchSpec:
    type: str
    max_bias: float
    max_mad: float
    min_nobs: int


@dataclass
class ModelVar:
    name: str
    grid: str | None = None
    inflation: Inflation | None = None
    # (lambda, sigma0) of the forgetting model
    randomise: tuple[float, float] | None = None


@dataclass
class ModelConfig:
    name: str
    variables: list[ModelVar] = field(default_factory=list)

    def var(self, name: str) -> ModelVar:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)


@dataclass
class GridConfig:
    name: str
    usage: str | None = None  # PREP / CALC qualifier
    vtype: str = "z"
    data: str = ""
    xdimname: str | None = None
    ydimname: str | None = None
    zdimname: str | None = None
    xvarname: str = "lon"
    yvarname: str = "lat"
    zvarname: str = "z"
    depthvarname: str = "depth"
    numlevelsvarname: str = "numlevels"
    maskvarname: str | None = None


@dataclass
class ObsTypeSpec:
    name: str
    var: str
    issurface: bool
    hfunction: str
    var2: str | None = None
    offset: tuple[str, str] | None = None
    async_: float | None = None
    locrad: list[float] | None = None
    locweight: list[float] | None = None
    rfactor: float = 1.0
    minvalue: float = -math.inf
    maxvalue: float = math.inf
    xmin: float = -math.inf
    xmax: float = math.inf
    ymin: float = -math.inf
    ymax: float = math.inf
    zmin: float = -math.inf
    zmax: float = math.inf

    @property
    def is_async(self) -> bool:
        return self.async_ is not None


@dataclass
class ErrorStdEntry:
    """One ERROR_STD line: a constant or a (file, variable) pair plus operator."""

    op: str = "EQUAL"
    value: float | None = None
    file: str | None = None
    varname: str | None = None


@dataclass
class ObsDataSection:
    product: str
    reader: str
    type: str
    files: list[str] = field(default_factory=list)
    error_std: list[ErrorStdEntry] = field(default_factory=list)
    parameters: dict[str, str] = field(default_factory=dict)


@dataclass
class DaConfig:
    mode: str
    model: str
    grid: str
    obstypes: str
    obs: str
    date: float
    ensdir: str | None = None
    bgdir: str | None = None
    date_units: str = ""
    scheme: str = "DENKF"
    alpha: float = 1.0
    kfactor: float | None = None  # None: moderation disabled
    rfactor: float = 1.0
    locrad: list[float] = field(default_factory=list)
    locweight: list[float] = field(default_factory=list)
    stride: int = 1
    sobstride: int = 1
    fieldbuffersize: int = 1
    inflation: Inflation = field(default_factory=Inflation)
    zstatints: list[tuple[float, float]] = field(default_factory=list)
    regions: list[Region] = field(default_factory=list)
    pointlogs: list[tuple[int, int]] = field(default_factory=list)
    exitaction: str = "BACKTRACE"
    badbatches: list[BadBatchSpec] = field(default_factory=list)
    modelcfg: ModelConfig | None = None
    gridcfg: GridConfig | None = None
    obstypescfg: list[ObsTypeSpec] | None = None
    obsdatacfg: list[ObsDataSection] | None = None
    prmdir: str = field(default=".", compare=False)

    def obstype(self, name: str) -> ObsTypeSpec:
        for ot in self.obstypescfg or []:
            if ot.name == name:
                return ot
        raise KeyError(name)

    def taper_for(self, ot: ObsTypeSpec) -> tuple[list[float], list[float]]:
        """Support radii and weights effective for observation type `ot`."""
        if ot.locrad is not None:
            return ot.locrad, ot.locweight or _equal_weights(len(ot.locrad))
        return self.locrad, self.locweight

    def inflation_for(self, var: str) -> Inflation:
        if self.modelcfg is not None:
            for v in self.modelcfg.variables:
                if v.name == var and v.inflation is not None:
                    return v.inflation
        return self.inflation

    def path(self, p: str) -> str:
        """Resolve a path from the parameter file relative to its directory."""
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.prmdir, p))


# --------------------------------------------------------------------------
# lexing

_ENTRY = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:={1,2})?\s*(.*?)\s*$")


def _entries(text: str, source: str | None = None) -> Iterator[tuple[int, str, str]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        mt = _ENTRY.match(line)
        if mt is None:
            raise PrmError(f"cannot parse entry '{line.strip()}'", lineno, source)
        yield lineno, mt.group(1).upper(), mt.group(2)


def _float(tok: str, lineno: int, key: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise PrmError(f"{key}: malformed number '{tok}'", lineno) from None


def _int(tok: str, lineno: int, key: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise PrmError(f"{key}: malformed integer '{tok}'", lineno) from None


def _one(rest: str, lineno: int, key: str) -> str:
    if not rest:
        raise PrmError(f"{key}: missing value", lineno)
    return rest


def _floats(rest: str, lineno: int, key: str) -> list[float]:
    toks = rest.replace("[", " ").replace("]", " ").split()
    if not toks:
        raise PrmError(f"{key}: missing value", lineno)
    return [_float(t, lineno, key) for t in toks]


def _equal_weights(n: int) -> list[float]:
    return [1.0 / n] * n


def _normalise(weights: list[float]) -> list[float]:
    total = math.fsum(weights)
    return [w / total for w in weights]


def _taper(locrad: list[float] | None, weight: list[float] | None, lineno: int | None,
           what: str) -> tuple[list[float] | None, list[float] | None]:
    if locrad is None:
        if weight is not None:
            raise PrmError(f"{what}: WEIGHT given without LOCRAD", lineno)
        return None, None
    if any(r <= 0 for r in locrad):
        raise PrmError(f"{what}: LOCRAD must be positive", lineno)
    if weight is None:
        return locrad, _equal_weights(len(locrad))
    if len(weight) != len(locrad):
        raise PrmError(f"{what}: LOCRAD and WEIGHT have different lengths", lineno)
    if any(w < 0 for w in weight) or math.fsum(weight) <= 0:
        raise PrmError(f"{what}: WEIGHT entries must be non-negative with positive sum", lineno)
    return locrad, _normalise(weight)


def _inflation(rest: str, lineno: int, key: str = "INFLATION") -> Inflation:
    toks = rest.split()
    if not toks or len(toks) > 2:
        raise PrmError(f"{key}: expected '<mult> [<cap> | PLAIN]'", lineno)
    mult = _float(toks[0], lineno, key)
    if mult < 1.0:
        raise PrmError(f"{key}: inflation multiple must be >= 1", lineno)
    if len(toks) == 1:
        # a lone multiple means capping by the full spread reduction
        return Inflation(mult, 1.0, False)
    if toks[1].upper() == "PLAIN":
        return Inflation(mult, 1.0, True)
    cap = _float(toks[1], lineno, key)
    if cap < 0.0:
        raise PrmError(f"{key}: capping fraction must be >= 0", lineno)
    return Inflation(mult, cap, False)


def _yesno(tok: str, lineno: int, key: str) -> bool:
    t = tok.strip().lower()
    if t in ("yes", "y", "true", "1"):
        return True
    if t in ("no", "n", "false", "0"):
        return False
    raise PrmError(f"{key}: expected yes or no, got '{tok}'", lineno)


# --------------------------------------------------------------------------
# main parameter file

_MAIN_SCALARS = {
    "MODE", "SCHEME", "ALPHA", "MODEL", "GRID", "OBSTYPES", "OBS", "DATE", "ENSDIR",
    "BGDIR", "KFACTOR", "RFACTOR", "LOCRAD", "WEIGHT", "STRIDE", "SOBSTRIDE",
    "FIELDBUFFERSIZE", "INFLATION", "ZSTATINTS", "EXITACTION",
}
_MAIN_REPEATED = {"REGION", "POINTLOG", "BADBATCHES"}


def _pairs(vals: list[float], lineno: int, key: str) -> list[tuple[float, float]]:
    if len(vals) % 2:
        raise PrmError(f"{key}: depth intervals need an even number of values", lineno)
    out = [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
    for z1, z2 in out:
        if z2 <= z1:
            raise PrmError(f"{key}: empty depth interval [{z1}, {z2}]", lineno)
    return out


def parse_main(text: str, source: str | None = None) -> DaConfig:
    """Parse the main parameter file.

    Sub-configurations are left unset; see :func:`load_config`.
    """
    seen: dict[str, int] = {}
    kv: dict[str, tuple[int, str]] = {}
    regions: list[Region] = []
    pointlogs: list[tuple[int, int]] = []
    badbatches: list[BadBatchSpec] = []

    try:
        for lineno, key, rest in _entries(text, source):
            if key in _MAIN_SCALARS:
                if key in seen:
                    raise PrmError(f"duplicate entry {key} (first at line {seen[key]})", lineno)
                seen[key] = lineno
                kv[key] = (lineno, rest)
            elif key == "REGION":
                toks = rest.replace("[", " ").replace("]", " ").split()
                if len(toks) < 5:
                    raise PrmError("REGION: expected '<name> <lon1> <lon2> <lat1> <lat2>'", lineno)
                lon1, lon2, lat1, lat2 = (_float(t, lineno, key) for t in toks[1:5])
                if lon1 > lon2 or lat1 > lat2:
                    raise PrmError(f"REGION {toks[0]}: bounds must satisfy lon1<=lon2, lat1<=lat2",
                                   lineno)
                zints = _pairs([_float(t, lineno, key) for t in toks[5:]], lineno, key)
                regions.append(Region(toks[0], lon1, lon2, lat1, lat2, zints))
            elif key == "POINTLOG":
                toks = rest.split()
                if len(toks) not in (2, 3):
                    raise PrmError("POINTLOG: expected '<i> <j> [grid name]'", lineno)
                pointlogs.append((_int(toks[0], lineno, key), _int(toks[1], lineno, key)))
            elif key == "BADBATCHES":
                toks = rest.split()
                if len(toks) != 4:
                    raise PrmError(
                        "BADBATCHES: expected '<obstype> <max. bias> <max. mad> <min # obs.>'",
                        lineno)
                badbatches.append(BadBatchSpec(toks[0], _float(toks[1], lineno, key),
                                               _float(toks[2], lineno, key),
                                               _int(toks[3], lineno, key)))
            else:
                raise PrmError(f"unknown entry '{key}'", lineno)

        def get(key: str) -> tuple[int, str] | None:
            return kv.get(key)

        mode_e = get("MODE")
        if mode_e is None:
            raise PrmError("MODE not specified")
        mode = mode_e[1].upper()
        if mode not in ("ENKF", "ENOI"):
            raise PrmError(f"MODE: expected ENKF or ENOI, got '{mode_e[1]}'", mode_e[0])

        for key in ("MODEL", "GRID", "OBSTYPES", "OBS", "DATE"):
            if key not in kv:
                raise PrmError(f"{key} not specified")
        if mode == "ENKF" and "ENSDIR" not in kv:
            raise PrmError("ENSDIR not specified")
        if mode == "ENOI" and "BGDIR" not in kv:
            raise PrmError("BGDIR required for ENOI")

        ln, rest = kv["DATE"]
        dtoks = _one(rest, ln, "DATE").split(maxsplit=1)
        cfg = DaConfig(
            mode=mode,
            model=_one(kv["MODEL"][1], kv["MODEL"][0], "MODEL"),
            grid=_one(kv["GRID"][1], kv["GRID"][0], "GRID"),
            obstypes=_one(kv["OBSTYPES"][1], kv["OBSTYPES"][0], "OBSTYPES"),
            obs=_one(kv["OBS"][1], kv["OBS"][0], "OBS"),
            date=_float(dtoks[0], ln, "DATE"),
            date_units=dtoks[1] if len(dtoks) > 1 else "",
            regions=regions,
            pointlogs=pointlogs,
            badbatches=badbatches,
        )
        if "ENSDIR" in kv:
            cfg.ensdir = _one(kv["ENSDIR"][1], kv["ENSDIR"][0], "ENSDIR")
        if "BGDIR" in kv:
            cfg.bgdir = _one(kv["BGDIR"][1], kv["BGDIR"][0], "BGDIR")
        if e := get("SCHEME"):
            cfg.scheme = e[1].upper()
            if cfg.scheme not in ("DENKF", "ETKF"):
                raise PrmError(f"SCHEME: expected DENKF or ETKF, got '{e[1]}'", e[0])
        if e := get("ALPHA"):
            cfg.alpha = _float(e[1], e[0], "ALPHA")
            if not 0.0 <= cfg.alpha <= 1.0:
                raise PrmError("ALPHA must be in [0, 1]", e[0])
        if e := get("KFACTOR"):
            k = _float(e[1], e[0], "KFACTOR")
            if not math.isnan(k):
                if k <= 0:
                    raise PrmError("KFACTOR must be positive", e[0])
                cfg.kfactor = k
        if e := get("RFACTOR"):
            cfg.rfactor = _float(e[1], e[0], "RFACTOR")
            if cfg.rfactor <= 0:
                raise PrmError("RFACTOR must be positive", e[0])
        locrad = _floats(kv["LOCRAD"][1], kv["LOCRAD"][0], "LOCRAD") if "LOCRAD" in kv else None
        weight = _floats(kv["WEIGHT"][1], kv["WEIGHT"][0], "WEIGHT") if "WEIGHT" in kv else None
        ln_w = kv["WEIGHT"][0] if "WEIGHT" in kv else None
        locrad, weight = _taper(locrad, weight, ln_w, "main")
        cfg.locrad = locrad or []
        cfg.locweight = weight or []
        if e := get("STRIDE"):
            cfg.stride = _int(e[1], e[0], "STRIDE")
            if cfg.stride < 1:
                raise PrmError("STRIDE must be >= 1", e[0])
        if e := get("SOBSTRIDE"):
            cfg.sobstride = _int(e[1], e[0], "SOBSTRIDE")
            if cfg.sobstride < 0:
                raise PrmError("SOBSTRIDE must be >= 0", e[0])
        if e := get("FIELDBUFFERSIZE"):
            cfg.fieldbuffersize = _int(e[1], e[0], "FIELDBUFFERSIZE")
        if e := get("INFLATION"):
            cfg.inflation = _inflation(e[1], e[0])
        if e := get("ZSTATINTS"):
            cfg.zstatints = _pairs(_floats(e[1], e[0], "ZSTATINTS"), e[0], "ZSTATINTS")
        if e := get("EXITACTION"):
            cfg.exitaction = e[1].upper()
            if cfg.exitaction not in ("BACKTRACE", "SEGFAULT"):
                raise PrmError(f"EXITACTION: unknown action '{e[1]}'", e[0])
    except PrmError as err:
        if source and not str(err).startswith(source):
            raise PrmError(str(err), None, source) from None
        raise
    return cfg


# --------------------------------------------------------------------------
# block-structured files


def _blocks(text: str, starter: str, source: str | None) -> Iterator[list[tuple[int, str, str]]]:
    block: list[tuple[int, str, str]] = []
    for lineno, key, rest in _entries(text, source):
        if key == starter and block:
            yield block
            block = []
        if not block and key != starter:
            raise PrmError(f"entry {key} outside of a block (blocks start with {starter})",
                           lineno, source)
        block.append((lineno, key, rest))
    if block:
        yield block


def _check_dup(key: str, seen: dict[str, int], lineno: int, source: str | None) -> None:
    if key in seen:
        raise PrmError(f"duplicate entry {key} (first at line {seen[key]})", lineno, source)
    seen[key] = lineno


def parse_model(text: str, source: str | None = None) -> ModelConfig:
    cfg: ModelConfig | None = None
    current: ModelVar | None = None
    seen: dict[str, int] = {}
    for lineno, key, rest in _entries(text, source):
        if key == "NAME":
            if cfg is not None:
                raise PrmError("duplicate entry NAME", lineno, source)
            cfg = ModelConfig(_one(rest, lineno, key))
        elif key == "VAR":
            if cfg is None:
                raise PrmError("VAR before NAME", lineno, source)
            name = _one(rest, lineno, key)
            if any(v.name == name for v in cfg.variables):
                raise PrmError(f"variable '{name}' described twice", lineno, source)
            current = ModelVar(name)
            cfg.variables.append(current)
            seen = {}
        elif key in ("GRID", "INFLATION", "RANDOMISE", "RANDOMIZE"):
            if current is None:
                raise PrmError(f"{key} outside of a VAR block", lineno, source)
            _check_dup(key, seen, lineno, source)
            if key == "GRID":
                current.grid = _one(rest, lineno, key)
            elif key == "INFLATION":
                current.inflation = _inflation(rest, lineno)
            else:
                vals = _floats(rest, lineno, key)
                if len(vals) != 2:
                    raise PrmError("RANDOMISE: expected '<deflation> <sigma>'", lineno, source)
                if not 0.0 < vals[0] <= 1.0:
                    raise PrmError("RANDOMISE: deflation must be in (0, 1]", lineno, source)
                current.randomise = (vals[0], vals[1])
        else:
            raise PrmError(f"unknown entry '{key}'", lineno, source)
    if cfg is None:
        raise PrmError("NAME not specified", None, source)
    if not cfg.variables:
        raise PrmError("no model variables", None, source)
    return cfg


_GRID_KEYS = {
    "VTYPE": "vtype", "DATA": "data", "XDIMNAME": "xdimname", "YDIMNAME": "ydimname",
    "ZDIMNAME": "zdimname", "XVARNAME": "xvarname", "YVARNAME": "yvarname",
    "ZVARNAME": "zvarname", "DEPTHVARNAME": "depthvarname",
    "NUMLEVELSVARNAME": "numlevelsvarname", "MASKVARNAME": "maskvarname",
}


def parse_grid(text: str, source: str | None = None) -> list[GridConfig]:
    grids = []
    for block in _blocks(text, "NAME", source):
        lineno, _, rest = block[0]
        toks = _one(rest, lineno, "NAME").split()
        if len(toks) > 2:
            raise PrmError("NAME: expected '<name> [PREP | CALC]'", lineno, source)
        g = GridConfig(toks[0])
        if len(toks) == 2:
            g.usage = toks[1].upper()
            if g.usage not in ("PREP", "CALC"):
                raise PrmError(f"NAME: unknown qualifier '{toks[1]}'", lineno, source)
        seen: dict[str, int] = {}
        for ln, key, val in block[1:]:
            if key not in _GRID_KEYS:
                raise PrmError(f"unknown entry '{key}'", ln, source)
            _check_dup(key, seen, ln, source)
            setattr(g, _GRID_KEYS[key], _one(val, ln, key))
        for key in ("VTYPE", "DATA"):
            if key not in seen:
                raise PrmError(f"grid '{g.name}': {key} not specified", lineno, source)
        g.vtype = g.vtype.lower()
        if g.vtype not in ("z", "sigma"):
            raise PrmError(f"grid '{g.name}': VTYPE must be z or sigma", seen["VTYPE"], source)
        if g.vtype == "sigma":
            raise PrmError(f"grid '{g.name}': sigma grids are not supported", seen["VTYPE"], source)
        if any(o.name == g.name for o in grids):
            raise PrmError(f"grid '{g.name}' described twice", lineno, source)
        grids.append(g)
    if not grids:
        raise PrmError("no grids", None, source)
    return grids


_OT_BOUNDS = ("MINVALUE", "MAXVALUE", "XMIN", "XMAX", "YMIN", "YMAX", "ZMIN", "ZMAX")


def parse_obstypes(text: str, source: str | None = None) -> list[ObsTypeSpec]:
    out: list[ObsTypeSpec] = []
    for block in _blocks(text, "NAME", source):
        lineno0, _, rest0 = block[0]
        name = _one(rest0, lineno0, "NAME")
        vals: dict[str, tuple[int, str]] = {}
        for ln, key, val in block[1:]:
            if key not in ("VAR", "VAR2", "ISSURFACE", "OFFSET", "HFUNCTION", "ASYNC", "LOCRAD",
                           "WEIGHT", "RFACTOR") + _OT_BOUNDS:
                raise PrmError(f"unknown entry '{key}'", ln, source)
            if key in vals:
                raise PrmError(f"duplicate entry {key} (first at line {vals[key][0]})", ln, source)
            vals[key] = (ln, val)
        for key in ("VAR", "ISSURFACE", "HFUNCTION"):
            if key not in vals:
                raise PrmError(f"observation type '{name}': {key} not specified", lineno0, source)
        try:
            ot = ObsTypeSpec(
                name=name,
                var=_one(vals["VAR"][1], vals["VAR"][0], "VAR"),
                issurface=_yesno(vals["ISSURFACE"][1], vals["ISSURFACE"][0], "ISSURFACE"),
                hfunction=_one(vals["HFUNCTION"][1], vals["HFUNCTION"][0], "HFUNCTION"),
            )
            if "VAR2" in vals:
                ot.var2 = _one(vals["VAR2"][1], vals["VAR2"][0], "VAR2")
            if "OFFSET" in vals:
                toks = vals["OFFSET"][1].split()
                if len(toks) != 2:
                    raise PrmError("OFFSET: expected '<file name> <variable name>'",
                                   vals["OFFSET"][0])
                ot.offset = (toks[0], toks[1])
            if "ASYNC" in vals:
                ot.async_ = _float(vals["ASYNC"][1], vals["ASYNC"][0], "ASYNC")
                if ot.async_ <= 0:
                    raise PrmError("ASYNC: time interval must be positive", vals["ASYNC"][0])
            if "RFACTOR" in vals:
                ot.rfactor = _float(vals["RFACTOR"][1], vals["RFACTOR"][0], "RFACTOR")
                if ot.rfactor <= 0:
                    raise PrmError("RFACTOR must be positive", vals["RFACTOR"][0])
            locrad = _floats(vals["LOCRAD"][1], vals["LOCRAD"][0], "LOCRAD") \
                if "LOCRAD" in vals else None
            weight = _floats(vals["WEIGHT"][1], vals["WEIGHT"][0], "WEIGHT") \
                if "WEIGHT" in vals else None
            ln_w = vals["WEIGHT"][0] if "WEIGHT" in vals else lineno0
            ot.locrad, ot.locweight = _taper(locrad, weight, ln_w, f"observation type '{name}'")
            for key in _OT_BOUNDS:
                if key in vals:
                    setattr(ot, key.lower(), _float(vals[key][1], vals[key][0], key))
        except PrmError as err:
            if source:
                raise PrmError(str(err), None, source) from None
            raise
        if any(o.name == name for o in out):
            raise PrmError(f"observation type '{name}' described twice", lineno0, source)
        out.append(ot)
    return out


_ERROR_OPS = {"EQ": "EQUAL", "PL": "PLUS", "MU": "MULT", "MI": "MIN", "MA": "MAX"}


def _error_op(tok: str) -> str | None:
    t = tok.upper()
    for short, full in _ERROR_OPS.items():
        if t in (short, full):
            return full
    return None


def _error_std(rest: str, lineno: int, source: str | None) -> ErrorStdEntry:
    toks = rest.split()
    if not toks:
        raise PrmError("ERROR_STD: missing value", lineno, source)
    op = "EQUAL"
    if len(toks) > 1 and _error_op(toks[-1]) is not None:
        op = _error_op(toks[-1])
        toks = toks[:-1]
    try:
        value = float(toks[0])
    except ValueError:
        if len(toks) != 2:
            raise PrmError("ERROR_STD: expected '<data file> <variable name> [<op>]'",
                           lineno, source) from None
        return ErrorStdEntry(op=op, file=toks[0], varname=toks[1])
    if len(toks) != 1:
        raise PrmError("ERROR_STD: unexpected tokens after value", lineno, source)
    if not value > 0:
        raise PrmError("ERROR_STD: value must be positive", lineno, source)
    return ErrorStdEntry(op=op, value=value)


def parse_obsdata(text: str, source: str | None = None) -> list[ObsDataSection]:
    out = []
    for block in _blocks(text, "PRODUCT", source):
        lineno0, _, rest0 = block[0]
        product = _one(rest0, lineno0, "PRODUCT")
        seen: dict[str, int] = {}
        reader = otype = None
        files: list[str] = []
        errs: list[ErrorStdEntry] = []
        params: dict[str, str] = {}
        for ln, key, val in block[1:]:
            if key == "READER":
                _check_dup(key, seen, ln, source)
                reader = _one(val, ln, key)
            elif key == "TYPE":
                _check_dup(key, seen, ln, source)
                otype = _one(val, ln, key)
            elif key == "FILE":
                files.append(_one(val, ln, key))
            elif key == "ERROR_STD":
                errs.append(_error_std(val, ln, source))
            elif key == "PARAMETER":
                mt = _ENTRY.match(val)
                if mt is None or not mt.group(2):
                    raise PrmError("PARAMETER: expected '<name> = <value>'", ln, source)
                params[mt.group(1).upper()] = mt.group(2)
            else:
                raise PrmError(f"unknown entry '{key}'", ln, source)
        if reader is None:
            raise PrmError(f"product '{product}': READER not specified", lineno0, source)
        if otype is None:
            raise PrmError(f"product '{product}': TYPE not specified", lineno0, source)
        if not files:
            raise PrmError(f"product '{product}': no FILE entries", lineno0, source)
        out.append(ObsDataSection(product, reader, otype, files, errs, params))
    return out


# --------------------------------------------------------------------------
# whole configuration


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


def load_config(path: str) -> DaConfig:
    """Read the main parameter file at `path` and the four files it names.

    Relative paths inside the parameter files are resolved against the
    directory of the main parameter file.
    """
    cfg = parse_main(_read(path), source=path)
    cfg.prmdir = os.path.dirname(os.path.abspath(path))
    cfg.modelcfg = parse_model(_read(cfg.path(cfg.model)), source=cfg.model)
    grids = parse_grid(_read(cfg.path(cfg.grid)), source=cfg.grid)
    if len(grids) != 1:
        raise PrmError(f"{cfg.grid}: only a single model grid is supported, got {len(grids)}")
    cfg.gridcfg = grids[0]
    cfg.obstypescfg = parse_obstypes(_read(cfg.path(cfg.obstypes)), source=cfg.obstypes)
    cfg.obsdatacfg = parse_obsdata(_read(cfg.path(cfg.obs)), source=cfg.obs)
    validate(cfg)
    return cfg


def validate(cfg: DaConfig) -> None:
    """Cross-check the sub-configurations against each other."""
    if cfg.modelcfg is not None and cfg.gridcfg is not None:
        for v in cfg.modelcfg.variables:
            if v.grid is not None and v.grid != cfg.gridcfg.name:
                raise PrmError(f"model variable '{v.name}': unknown grid '{v.grid}'")
    if cfg.obstypescfg is not None:
        varnames = {v.name for v in cfg.modelcfg.variables} if cfg.modelcfg else None
        for ot in cfg.obstypescfg:
            if varnames is not None:
                for vn in (ot.var, ot.var2):
                    if vn is not None and vn not in varnames:
                        raise PrmError(f"observation type '{ot.name}': unknown model variable "
                                       f"'{vn}'")
    if cfg.obsdatacfg is not None and cfg.obstypescfg is not None:
        names = {ot.name for ot in cfg.obstypescfg}
        for sec in cfg.obsdatacfg:
            if sec.type not in names:
                raise PrmError(f"product '{sec.product}': unknown observation type '{sec.type}'")
    for bb in cfg.badbatches:
        if cfg.obstypescfg is not None and bb.type not in {o.name for o in cfg.obstypescfg}:
            raise PrmError(f"BADBATCHES: unknown observation type '{bb.type}'")


# --------------------------------------------------------------------------
# canonical serialisation


def _fmt(x: float) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def _fmt_list(xs) -> str:
    return " ".join(_fmt(x) for x in xs)


def _fmt_inflation(inf: Inflation) -> str:
    return f"{_fmt(inf.mult)} {'PLAIN' if inf.plain else _fmt(inf.cap)}"


def serialize_main(cfg: DaConfig) -> str:
    lines = [f"MODE = {cfg.mode}", f"SCHEME = {cfg.scheme}", f"ALPHA = {_fmt(cfg.alpha)}",
             f"MODEL = {cfg.model}", f"GRID = {cfg.grid}", f"OBSTYPES = {cfg.obstypes}",
             f"OBS = {cfg.obs}",
             f"DATE = {_fmt(cfg.date)}" + (f" {cfg.date_units}" if cfg.date_units else "")]
    if cfg.ensdir is not None:
        lines.append(f"ENSDIR = {cfg.ensdir}")
    if cfg.bgdir is not None:
        lines.append(f"BGDIR = {cfg.bgdir}")
    if cfg.kfactor is not None:
        lines.append(f"KFACTOR = {_fmt(cfg.kfactor)}")
    lines.append(f"RFACTOR = {_fmt(cfg.rfactor)}")
    if cfg.locrad:
        lines.append(f"LOCRAD = {_fmt_list(cfg.locrad)}")
        lines.append(f"WEIGHT = {_fmt_list(cfg.locweight)}")
    lines += [f"STRIDE = {cfg.stride}", f"SOBSTRIDE = {cfg.sobstride}",
              f"FIELDBUFFERSIZE = {cfg.fieldbuffersize}",
              f"INFLATION = {_fmt_inflation(cfg.inflation)}"]
    if cfg.zstatints:
        lines.append("ZSTATINTS = " + " ".join(f"[{_fmt(a)} {_fmt(b)}]" for a, b in cfg.zstatints))
    for r in cfg.regions:
        z = "".join(f" [{_fmt(a)} {_fmt(b)}]" for a, b in r.zints)
        lines.append(f"REGION = {r.name} {_fmt(r.lon1)} {_fmt(r.lon2)} {_fmt(r.lat1)} "
                     f"{_fmt(r.lat2)}{z}")
    for i, j in cfg.pointlogs:
        lines.append(f"POINTLOG = {i} {j}")
    lines.append(f"EXITACTION = {cfg.exitaction}")
    for bb in cfg.badbatches:
        lines.append(f"BADBATCHES = {bb.type} {_fmt(bb.max_bias)} {_fmt(bb.max_mad)} "
                     f"{bb.min_nobs}")
    return "\n".join(lines) + "\n"


def serialize_model(cfg: ModelConfig) -> str:
    lines = [f"NAME = {cfg.name}"]
    for v in cfg.variables:
        lines += ["", f"VAR = {v.name}"]
        if v.grid is not None:
            lines.append(f"GRID = {v.grid}")
        if v.inflation is not None:
            lines.append(f"INFLATION = {_fmt_inflation(v.inflation)}")
        if v.randomise is not None:
            lines.append(f"RANDOMISE = {_fmt(v.randomise[0])} {_fmt(v.randomise[1])}")
    return "\n".join(lines) + "\n"


def serialize_grid(grids: list[GridConfig]) -> str:
    lines: list[str] = []
    for g in grids:
        if lines:
            lines.append("")
        lines.append(f"NAME = {g.name}" + (f" {g.usage}" if g.usage else ""))
        for key, attr in _GRID_KEYS.items():
            val = getattr(g, attr)
            if val is not None:
                lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def serialize_obstypes(types: list[ObsTypeSpec]) -> str:
    lines: list[str] = []
    for ot in types:
        if lines:
            lines.append("")
        lines += [f"NAME = {ot.name}", f"VAR = {ot.var}"]
        if ot.var2 is not None:
            lines.append(f"VAR2 = {ot.var2}")
        lines.append(f"ISSURFACE = {'yes' if ot.issurface else 'no'}")
        if ot.offset is not None:
            lines.append(f"OFFSET = {ot.offset[0]} {ot.offset[1]}")
        lines.append(f"HFUNCTION = {ot.hfunction}")
        if ot.async_ is not None:
            lines.append(f"ASYNC = {_fmt(ot.async_)}")
        if ot.locrad is not None:
            lines.append(f"LOCRAD = {_fmt_list(ot.locrad)}")
            lines.append(f"WEIGHT = {_fmt_list(ot.locweight)}")
        lines.append(f"RFACTOR = {_fmt(ot.rfactor)}")
        for key in _OT_BOUNDS:
            val = getattr(ot, key.lower())
            if math.isfinite(val):
                lines.append(f"{key} = {_fmt(val)}")
    return "\n".join(lines) + "\n"


def serialize_obsdata(sections: list[ObsDataSection]) -> str:
    lines: list[str] = []
    for sec in sections:
        if lines:
            lines.append("")
        lines += [f"PRODUCT = {sec.product}", f"READER = {sec.reader}", f"TYPE = {sec.type}"]
        lines += [f"FILE = {f}" for f in sec.files]
        for e in sec.error_std:
            src = _fmt(e.value) if e.value is not None else f"{e.file} {e.varname}"
            lines.append(f"ERROR_STD = {src} {e.op}")
        lines += [f"PARAMETER {k} = {v}" for k, v in sec.parameters.items()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# format descriptions

_FORMATS = {
    "main": """\
  Main parameter file format:

    MODE            = { ENKF | ENOI }
  [ SCHEME          = { DENKF* | ETKF } ]
  [ ALPHA           = <alpha> ]                              (1*)
    MODEL           = <model prm file>
    GRID            = <grid prm file>
    OBSTYPES        = <obs. types prm file>
    OBS             = <obs. data prm file>
    DATE            = <julian day of analysis> [<units>]
    ENSDIR          = <ensemble directory>                   (MODE = ENKF)
    BGDIR           = <background directory>                 (MODE = ENOI)
  [ KFACTOR         = <kfactor> ]                            (NaN*)
  [ RFACTOR         = <rfactor> ]                            (1*)
    LOCRAD          = <loc. radius in km> ...
  [ WEIGHT          = <weight> ... ]                         (equal*)
  [ STRIDE          = <stride> ]                             (1*)
  [ SOBSTRIDE       = <stride> ]                             (1*)
  [ FIELDBUFFERSIZE = <fieldbuffersize> ]                    (1*, ignored)
  [ INFLATION       = <inflation> [ <cap> | PLAIN ] ]        (1 0.5*)
  [ ZSTATINTS       = [<z1> <z2>] ... ]
  [ REGION          = <name> <lon1> <lon2> <lat1> <lat2> [[<z1> <z2>] ... ] ]
    ...
  [ POINTLOG        <i> <j> [grid name] ]
    ...
  [ EXITACTION      = { BACKTRACE* | SEGFAULT } ]
  [ BADBATCHES      = <obstype> <max. bias> <max. mad> <min # obs.> ]
    ...
""",
    "model": """\
  Model parameter file format:

    NAME      = <name>

    VAR       = <name>
  [ GRID      = <name> ]
  [ INFLATION = <value> [<value> | PLAIN] ]
  [ RANDOMISE <deflation> <sigma> ]

  [ <more of the above blocks> ]
""",
    "grid": """\
  Grid parameter file format:

    NAME             = <name> [ PREP | CALC ]
    VTYPE            = z
    DATA             = <directory with grid arrays>
  [ XDIMNAME         = <x dimension name> ]
  [ YDIMNAME         = <y dimension name> ]
  [ ZDIMNAME         = <z dimension name> ]
  [ XVARNAME         = <x variable name> ]                   (lon*)
  [ YVARNAME         = <y variable name> ]                   (lat*)
  [ ZVARNAME         = <z variable name> ]                   (z*)
  [ DEPTHVARNAME     = <depth variable name> ]               (depth*)
  [ NUMLEVELSVARNAME = <# of levels variable name> ]         (numlevels*)
""",
    "obstypes": """\
  Observation types parameter file format:

    NAME      = <name>
    VAR       = <model variable name>
  [ VAR2      = <model variable name> ]
    ISSURFACE = { yes | no }
  [ OFFSET    = <file name> <variable name> ]    (none*)
    HFUNCTION = <H function name>
  [ ASYNC     = <time interval> ]                (synchronous*)
  [ LOCRAD    = <locrad> ... ]                   (global*)
  [ WEIGHT    = <weight> ... ]
  [ RFACTOR   = <rfactor> ]                      (1*)
  [ MINVALUE  = <minimal allowed value> ]        (-inf*)
  [ MAXVALUE  = <maximal allowed value> ]        (+inf*)
  [ XMIN      = <minimal allowed X coordinate> ] (-inf*)
  [ XMAX      = <maximal allowed X coordinate> ] (+inf*)
  [ YMIN      = <minimal allowed Y coordinate> ] (-inf*)
  [ YMAX      = <maximal allowed Y coordinate> ] (+inf*)
  [ ZMIN      = <minimal allowed Z coordinate> ] (-inf*)
  [ ZMAX      = <maximal allowed Z coordinate> ] (+inf*)

  [ <more of the above blocks> ]
""",
    "obsdata": """\
  Observation data parameter file format:

    PRODUCT   = <product>
    READER    = csv
    TYPE      = <observation type>
    FILE      = <data file wildcard>
    ...
  [ ERROR_STD = { <value> | <data file> <variable> } [ EQ* | PL | MU | MI | MA ] ]
    ...
  [ PARAMETER <name> = <value> ]
    ...

  [ <more of the above blocks> ]
""",
}


def describe_format(kind: str = "main") -> str:
    try:
        return _FORMATS[kind]
    except KeyError:
        raise ValueError(f"unknown parameter file kind '{kind}'; expected one of "
                         f"{', '.join(_FORMATS)}") from None
