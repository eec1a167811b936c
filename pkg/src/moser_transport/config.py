"""Run configuration: a line-oriented sectioned key-value text format.

Grammar (EBNF):

    config   = { line } ;
    line     = ( section | entry | blank ) , [ comment ] , newline ;
    section  = "[" , name , "]" ;
    entry    = key , "=" , value ;
    comment  = "#" , { any character } ;

Values are parsed with the same expression parser as densities (so
``v = 1/4`` or ``tol = 1e-3`` both work); string-valued keys (names,
paths, expressions) keep the raw text.  Parsing is strict: unknown
sections and unknown keys are rejected with the offending line.  The
``[family]`` and ``[envelope]`` sections accept arbitrary extra numeric
keys, which are handed to the family/envelope constructor as parameters.
"""

from dataclasses import dataclass, field, asdict

from .density import builtin_family, family_from_expression, make_envelope
from .errors import ConfigurationError
from .expressions import parse_density_expression
from .geometry import make_domain


@dataclass
class DomainSection:
    kind: str = "interval"
    circumference: float = 1.0


@dataclass
class FamilySection:
    name: str = None
    expression: str = None
    k: int = 2
    x_lo: float = None
    x_hi: float = None
    params: dict = field(default_factory=dict)


@dataclass
class EnvelopeSection:
    name: str = None
    params: dict = field(default_factory=dict)


@dataclass
class PipelineSection:
    grid: int = 1024
    steps: int = 256
    v: float = 0.25
    margin: float = 0.5
    mode: str = "auto"
    seed: int = 0
    threads: int = 1
    x_samples: int = 5
    tol_push: float = 1e-3
    tol_mass: float = 1e-4
    solver_tol: float = 1e-10
    floor: float = 1e-6
    floors: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    x_floor_mode: str = "fixed"
    ck_order: int = 1
    growth_threshold: float = 2.0
    samples: int = 1048576
    bins: int = 64
    n_fine: int = 8192
    collar_nodes: int = 320
    dump_fields: int = 0


@dataclass
class ObstructSection:
    xs: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    base: float = 0.0
    h: str = None
    h_x_nodes: int = 21
    slope_threshold: float = -0.05
    r2_threshold: float = 0.9


@dataclass
class OutputsSection:
    report: str = "report.json"
    csv_dir: str = "csv"


@dataclass
class RunConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    family: FamilySection = field(default_factory=FamilySection)
    envelope: EnvelopeSection = None
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    obstruct: ObstructSection = field(default_factory=ObstructSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)

    def to_dict(self):
        out = {
            "domain": asdict(self.domain),
            "family": asdict(self.family),
            "pipeline": asdict(self.pipeline),
            "obstruct": asdict(self.obstruct),
            "outputs": asdict(self.outputs),
        }
        if self.envelope is not None:
            out["envelope"] = asdict(self.envelope)
        return out


_STR_KEYS = {"kind", "name", "expression", "mode", "x_floor_mode", "report",
             "csv_dir", "h"}
_LIST_KEYS = {"floors", "xs"}
_INT_KEYS = {"k", "grid", "steps", "seed", "threads", "x_samples", "ck_order",
             "samples", "bins", "n_fine", "collar_nodes", "h_x_nodes", "dump_fields"}

_SECTIONS = {
    "domain": DomainSection,
    "family": FamilySection,
    "envelope": EnvelopeSection,
    "pipeline": PipelineSection,
    "obstruct": ObstructSection,
    "outputs": OutputsSection,
}


def _eval_scalar(text, line_no, col):
    try:
        ast = parse_density_expression(text, variables=())
        return float(ast.evaluate())
    except Exception as exc:
        raise ConfigurationError(f"cannot parse value {text!r}: {exc}", line_no, col) from None


def _assign(section_name, obj, key, raw, line_no, col):
    known = hasattr(obj, key) and key != "params"
    if not known:
        if section_name in ("family", "envelope"):
            obj.params[key] = _eval_scalar(raw, line_no, col)
            return
        raise ConfigurationError(
            f"unknown key {key!r} in section [{section_name}]", line_no, col
        )
    if key in _STR_KEYS:
        setattr(obj, key, raw)
    elif key in _LIST_KEYS:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        setattr(obj, key, [_eval_scalar(p, line_no, col) for p in parts])
    elif key in _INT_KEYS:
        val = _eval_scalar(raw, line_no, col)
        if val != int(val):
            raise ConfigurationError(f"key {key!r} needs an integer, got {raw!r}",
                                     line_no, col)
        setattr(obj, key, int(val))
    else:
        setattr(obj, key, _eval_scalar(raw, line_no, col))


def parse_config(text):
    """Parse and validate the config text; strict about sections and keys."""
    cfg = RunConfig()
    cfg.envelope = None
    current_name = None
    current = None
    for line_no, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError("malformed section header", line_no, 1)
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{name}]", line_no, 1)
            current_name = name
            if name == "envelope" and cfg.envelope is None:
                cfg.envelope = EnvelopeSection()
            current = getattr(cfg, name)
            continue
        if "=" not in line:
            raise ConfigurationError("expected 'key = value'", line_no, 1)
        if current is None:
            raise ConfigurationError("entry before any section header", line_no, 1)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        col = rawline.index("=") + 2
        _assign(current_name, current, key, raw, line_no, col)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    p = cfg.pipeline
    for key in ("tol_push", "tol_mass", "solver_tol", "floor"):
        if not getattr(p, key) > 0:
            raise ConfigurationError(f"pipeline.{key} must be positive")
    if p.grid < 16:
        raise ConfigurationError(f"pipeline.grid must be >= 16, got {p.grid}")
    if not (1.0 / 6.0 < p.v < 1.0 / 3.0):
        raise ConfigurationError(f"pipeline.v must lie in (1/6, 1/3), got {p.v}")
    if not 0 < p.margin < 1:
        raise ConfigurationError(f"pipeline.margin must lie in (0, 1), got {p.margin}")
    if p.mode not in ("auto", "full", "moser_only"):
        raise ConfigurationError(f"pipeline.mode must be auto|full|moser_only, got {p.mode}")
    if p.x_floor_mode not in ("fixed", "match"):
        raise ConfigurationError("pipeline.x_floor_mode must be fixed|match")
    if cfg.family.name is None and cfg.family.expression is None:
        raise ConfigurationError("family section needs a name or an expression")
    if cfg.family.name is not None and cfg.family.expression is not None:
        raise ConfigurationError("family section takes a name or an expression, not both")
    make_domain(cfg.domain.kind, cfg.domain.circumference)
    return cfg


def serialize_config(cfg):
    """Canonical text form; parsing it back is semantically idempotent."""
    def fmt(v):
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    lines = []

    def emit(name, obj, skip=()):
        lines.append(f"[{name}]")
        data = asdict(obj)
        params = data.pop("params", None)
        for key, val in data.items():
            if key in skip or val is None:
                continue
            if isinstance(val, list):
                lines.append(f"{key} = {', '.join(fmt(v) for v in val)}")
            else:
                lines.append(f"{key} = {fmt(val)}")
        if params:
            for key in sorted(params):
                lines.append(f"{key} = {fmt(params[key])}")
        lines.append("")

    emit("domain", cfg.domain)
    emit("family", cfg.family)
    if cfg.envelope is not None:
        emit("envelope", cfg.envelope)
    emit("pipeline", cfg.pipeline)
    emit("obstruct", cfg.obstruct)
    emit("outputs", cfg.outputs)
    return "\n".join(lines)


def build_domain(cfg):
    return make_domain(cfg.domain.kind, cfg.domain.circumference)


def build_family(cfg):
    dom = build_domain(cfg)
    fam_cfg = cfg.family
    if fam_cfg.name is not None:
        fam = builtin_family(fam_cfg.name, k=fam_cfg.k, **fam_cfg.params)
        if fam_cfg.x_lo is not None and fam_cfg.x_hi is not None:
            fam.x_range = (float(fam_cfg.x_lo), float(fam_cfg.x_hi))
        return fam
    x_range = (
        fam_cfg.x_lo if fam_cfg.x_lo is not None else 0.0,
        fam_cfg.x_hi if fam_cfg.x_hi is not None else 1.0,
    )
    return family_from_expression(
        fam_cfg.expression, domain=dom, x_range=x_range, k=fam_cfg.k,
    )


def build_envelope(cfg):
    if cfg.envelope is None or cfg.envelope.name is None:
        raise ConfigurationError("an [envelope] section with a name is required")
    return make_envelope(cfg.envelope.name, k=cfg.family.k, **cfg.envelope.params)
