"""Event/entity definition schemas and the runtime instances they govern.

A memory schema declares event types (episodic records) and entity types
(persistent states). Each entity property carries an AggregateExpression
binding it to one event property through an operator, which is how entity
states get materialized from the event stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConformanceError, SchemaSyntaxError, SchemaViolationError

PROPERTY_TYPES = ("string", "number", "integer", "boolean", "timestamp")
OPERATORS = ("SUM", "COUNT", "MAX", "AVG", "LLM_MERGE", "TIME_COMPRESS")
STATISTICAL_OPS = ("SUM", "COUNT", "MAX", "AVG")
LLM_OPS = ("LLM_MERGE", "TIME_COMPRESS")

# Ops that read a numeric source property; COUNT accepts any type.
_NUMERIC_OPS = ("SUM", "AVG", "MAX")
_NUMERIC_TYPES = ("number", "integer", "timestamp")

DEFAULT_GROUP_BY = ("user",)


@dataclass(frozen=True)
class PropertyDef:
    name: str
    prop_type: str
    description: str


@dataclass(frozen=True)
class EventTypeDef:
    event_type: str
    description: str
    properties: tuple[PropertyDef, ...]
    instance_weight_field: str | None = None

    def property_map(self) -> dict[str, PropertyDef]:
        return {p.name: p for p in self.properties}


@dataclass(frozen=True)
class AggregateExpression:
    source_event_type: str
    source_property: str
    op: str
    group_by: tuple[str, ...] = DEFAULT_GROUP_BY
    filters: "FilterSpec | None" = None


@dataclass(frozen=True)
class FilterSpec:
    """Optional eligibility predicate on source events.

    equals: property name -> required value.
    time_window_ms: event must be at most this old at routing time.
    """

    equals: tuple[tuple[str, Any], ...] = ()
    time_window_ms: int | None = None


@dataclass(frozen=True)
class EntityPropertyDef:
    prop: PropertyDef
    aggregate: AggregateExpression


@dataclass(frozen=True)
class EntityTypeDef:
    entity_type: str
    description: str
    properties: tuple[EntityPropertyDef, ...]

    def property_map(self) -> dict[str, EntityPropertyDef]:
        return {p.prop.name: p for p in self.properties}


@dataclass(frozen=True)
class MemorySchema:
    tenant: str
    version: int
    events: tuple[EventTypeDef, ...]
    entities: tuple[EntityTypeDef, ...]

    def event_type(self, name: str) -> EventTypeDef | None:
        for ev in self.events:
            if ev.event_type == name:
                return ev
        return None

    def entity_type(self, name: str) -> EntityTypeDef | None:
        for en in self.entities:
            if en.entity_type == name:
                return en
        return None


@dataclass
class EventInstance:
    id: str
    event_type: str
    timestamp: int
    properties: dict[str, Any]
    source_session: str
    topic: str | None = None
    ttl_deadline: int | None = None
    user: str | None = None  # set by the engine from the ingesting session


@dataclass
class EntityInstance:
    id: str
    entity_type: str
    group_key: str
    properties: dict[str, Any]
    accumulators: dict[str, tuple[float, int]] = field(default_factory=dict)
    version: int = 0
    updated_at: int = 0


@dataclass(frozen=True)
class Violation:
    path: str
    message: str
    severity: str = "error"  # "error" blocks install, "info" does not


def _require_keys(obj: dict, allowed: set[str], required: set[str], path: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaViolationError(
            f"unknown keys {sorted(unknown)}", path=path)
    missing = required - set(obj)
    if missing:
        raise SchemaViolationError(
            f"missing keys {sorted(missing)}", path=path)


def _parse_property(obj: dict, path: str) -> PropertyDef:
    _require_keys(obj, {"PropertyName", "PropertyType", "Description", "AggregateExpression"},
                  {"PropertyName", "PropertyType", "Description"}, path)
    ptype = obj["PropertyType"]
    if ptype not in PROPERTY_TYPES:
        raise SchemaViolationError(f"unknown property type {ptype!r}", path=path)
    return PropertyDef(name=str(obj["PropertyName"]), prop_type=ptype,
                       description=str(obj["Description"]))


def _parse_aggregate(obj: dict, path: str) -> AggregateExpression:
    _require_keys(obj, {"EventType", "PropertyName", "Op", "GroupBy", "Filters"},
                  {"EventType", "PropertyName", "Op"}, path)
    op = obj["Op"]
    if op not in OPERATORS:
        raise SchemaViolationError(f"unknown operator {op!r}", path=path)
    group_by = tuple(obj.get("GroupBy") or DEFAULT_GROUP_BY)
    filters = None
    if "Filters" in obj and obj["Filters"] is not None:
        fobj = obj["Filters"]
        _require_keys(fobj, {"equals", "time_window_ms"}, set(), path + ".Filters")
        filters = FilterSpec(
            equals=tuple(sorted((fobj.get("equals") or {}).items())),
            time_window_ms=fobj.get("time_window_ms"),
        )
    return AggregateExpression(
        source_event_type=str(obj["EventType"]),
        source_property=str(obj["PropertyName"]),
        op=op, group_by=group_by, filters=filters,
    )


def parse_schema(document: str) -> MemorySchema:
    """Parse the external JSON schema format into a MemorySchema.

    Unknown keys are rejected; syntax errors report the character position.
    """
    try:
        root = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaSyntaxError(f"schema is not valid JSON: {exc.msg}",
                                position=exc.pos) from exc
    if not isinstance(root, dict):
        raise SchemaSyntaxError("schema root must be an object", position=0)
    _require_keys(root, {"tenant", "version", "events", "entities"},
                  {"tenant", "version", "events", "entities"}, "$")

    events = []
    for i, eobj in enumerate(root["events"]):
        path = f"$.events[{i}]"
        _require_keys(eobj, {"EventType", "Description", "Properties", "InstanceWeightField"},
                      {"EventType", "Description", "Properties"}, path)
        props = tuple(_parse_property(p, f"{path}.Properties[{j}]")
                      for j, p in enumerate(eobj["Properties"]))
        events.append(EventTypeDef(
            event_type=str(eobj["EventType"]),
            description=str(eobj["Description"]),
            properties=props,
            instance_weight_field=eobj.get("InstanceWeightField"),
        ))

    entities = []
    for i, nobj in enumerate(root["entities"]):
        path = f"$.entities[{i}]"
        _require_keys(nobj, {"EntityType", "Description", "Properties"},
                      {"EntityType", "Description", "Properties"}, path)
        eprops = []
        for j, pobj in enumerate(nobj["Properties"]):
            ppath = f"{path}.Properties[{j}]"
            if "AggregateExpression" not in pobj:
                raise SchemaViolationError("entity property needs an AggregateExpression",
                                           path=ppath)
            prop = _parse_property(pobj, ppath)
            agg = _parse_aggregate(pobj["AggregateExpression"], ppath + ".AggregateExpression")
            eprops.append(EntityPropertyDef(prop=prop, aggregate=agg))
        entities.append(EntityTypeDef(
            entity_type=str(nobj["EntityType"]),
            description=str(nobj["Description"]),
            properties=tuple(eprops),
        ))

    return MemorySchema(tenant=str(root["tenant"]), version=int(root["version"]),
                        events=tuple(events), entities=tuple(entities))


def serialize_schema(schema: MemorySchema) -> str:
    """Canonical JSON form; parse_schema(serialize_schema(s)) == s."""
    def prop(p: PropertyDef, agg: AggregateExpression | None = None) -> dict:
        out: dict[str, Any] = {"PropertyName": p.name, "PropertyType": p.prop_type,
                               "Description": p.description}
        if agg is not None:
            aobj: dict[str, Any] = {"EventType": agg.source_event_type,
                                    "PropertyName": agg.source_property, "Op": agg.op,
                                    "GroupBy": list(agg.group_by)}
            if agg.filters is not None:
                fobj: dict[str, Any] = {}
                if agg.filters.equals:
                    fobj["equals"] = dict(agg.filters.equals)
                if agg.filters.time_window_ms is not None:
                    fobj["time_window_ms"] = agg.filters.time_window_ms
                aobj["Filters"] = fobj
            out["AggregateExpression"] = aobj
        return out

    root = {
        "tenant": schema.tenant,
        "version": schema.version,
        "events": [
            {k: v for k, v in {
                "EventType": ev.event_type,
                "Description": ev.description,
                "Properties": [prop(p) for p in ev.properties],
                "InstanceWeightField": ev.instance_weight_field,
            }.items() if v is not None}
            for ev in schema.events
        ],
        "entities": [
            {"EntityType": en.entity_type, "Description": en.description,
             "Properties": [prop(ep.prop, ep.aggregate) for ep in en.properties]}
            for en in schema.entities
        ],
    }
    return json.dumps(root, indent=2, ensure_ascii=False)


def validate_schema(schema: MemorySchema) -> list[Violation]:
    """Check cross-references and operator/type compatibility.

    Returns a list of violations; no error-severity entries means valid.
    Never raises on a parseable schema.
    """
    out: list[Violation] = []

    def dup_check(names: list[str], path: str, kind: str) -> None:
        seen = set()
        for n in names:
            if n in seen:
                out.append(Violation(path, f"duplicate {kind} {n!r}"))
            seen.add(n)

    dup_check([e.event_type for e in schema.events], "$.events", "event type")
    dup_check([e.entity_type for e in schema.entities], "$.entities", "entity type")

    for ev in schema.events:
        path = f"$.events.{ev.event_type}"
        dup_check([p.name for p in ev.properties], path, "property")
        for p in ev.properties:
            if not p.name:
                out.append(Violation(path, "empty property name"))
            if not p.description:
                out.append(Violation(f"{path}.{p.name}", "empty description"))
        if ev.instance_weight_field is not None:
            target = ev.property_map().get(ev.instance_weight_field)
            if target is None:
                out.append(Violation(path, f"instance_weight_field "
                                           f"{ev.instance_weight_field!r} not a property"))
            elif target.prop_type not in _NUMERIC_TYPES:
                out.append(Violation(path, "instance_weight_field must be numeric"))

    # (event_type, property) -> list of consuming entity fields, for fan-out info
    consumers: dict[tuple[str, str], list[str]] = {}

    for en in schema.entities:
        path = f"$.entities.{en.entity_type}"
        dup_check([p.prop.name for p in en.properties], path, "property")
        for ep in en.properties:
            ppath = f"{path}.{ep.prop.name}"
            agg = ep.aggregate
            src = schema.event_type(agg.source_event_type)
            if src is None:
                out.append(Violation(ppath, f"unresolved source_event_type "
                                            f"{agg.source_event_type!r}"))
                continue
            sprop = src.property_map().get(agg.source_property)
            if sprop is None:
                out.append(Violation(ppath, f"unresolved source property "
                                            f"{agg.source_property!r} on "
                                            f"{agg.source_event_type!r}"))
                continue
            if agg.op in _NUMERIC_OPS and sprop.prop_type not in _NUMERIC_TYPES:
                out.append(Violation(ppath, f"{agg.op} requires numeric source"))
            if agg.op in LLM_OPS and sprop.prop_type != "string":
                out.append(Violation(ppath, f"{agg.op} requires string source"))
            for key in agg.group_by:
                if key in ("user", "topic"):
                    continue
                if key not in src.property_map():
                    out.append(Violation(ppath, f"group_by key {key!r} is not a "
                                                f"property of {agg.source_event_type!r}"))
            if agg.filters is not None:
                for fname, _ in agg.filters.equals:
                    if fname not in src.property_map():
                        out.append(Violation(ppath, f"filter property {fname!r} is not a "
                                                    f"property of {agg.source_event_type!r}"))
            consumers.setdefault(
                (agg.source_event_type, agg.source_property), []).append(ppath)

    for (etype, eprop), fields in consumers.items():
        if len(fields) > 1:
            out.append(Violation(f"$.events.{etype}.{eprop}",
                                 f"feeds {len(fields)} entity properties",
                                 severity="info"))
    return out


def schema_is_valid(report: list[Violation]) -> bool:
    return all(v.severity != "error" for v in report)


def _coerce(value: Any, prop: PropertyDef) -> Any:
    """Coerce a raw value to the declared type where lossless, else raise."""
    t = prop.prop_type
    # bool is an int subclass in Python; never let it pass as numeric
    is_bool = isinstance(value, bool)
    if t == "string":
        if isinstance(value, str):
            return value
        if isinstance(value, (int, float, bool)):
            return json.dumps(value)  # "0.8", "true": stable, lossless
        raise ConformanceError(f"property {prop.name!r}: expected string")
    if t == "number":
        if not is_bool and isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConformanceError(f"property {prop.name!r}: expected number")
    if t in ("integer", "timestamp"):
        if not is_bool and isinstance(value, int):
            return int(value)
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise ConformanceError(f"property {prop.name!r}: expected {t}")
    if t == "boolean":
        if is_bool:
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConformanceError(f"property {prop.name!r}: expected boolean")
    raise ConformanceError(f"property {prop.name!r}: unknown type {t!r}")


def conform_event(raw: dict[str, Any], event_def: EventTypeDef, ts: int, *,
                  event_id: str, source_session: str, topic: str | None = None,
                  user: str | None = None,
                  warnings: list[str] | None = None) -> EventInstance:
    """Coerce raw extracted data into a typed EventInstance.

    Extra keys are dropped (with a warning appended to ``warnings``);
    missing declared properties are an error. No partially-conformed
    instance is ever returned.
    """
    if ts <= 0:
        raise ConformanceError("timestamp must be positive epoch milliseconds")
    declared = event_def.property_map()
    extra = set(raw) - set(declared)
    if extra and warnings is not None:
        warnings.append(f"event {event_def.event_type}: dropped unknown keys "
                        f"{sorted(extra)}")
    props: dict[str, Any] = {}
    for name, pdef in declared.items():
        if name not in raw:
            raise ConformanceError(f"missing property {name!r} for event "
                                   f"{event_def.event_type!r}")
        props[name] = _coerce(raw[name], pdef)
    return EventInstance(id=event_id, event_type=event_def.event_type,
                         timestamp=int(ts), properties=props,
                         source_session=source_session, topic=topic, user=user)


def event_text(ev: EventInstance, event_def: EventTypeDef | None = None) -> str:
    """Render an event's properties as retrievable text, one line per field."""
    parts = [f"{ev.event_type}:"]
    for name, value in ev.properties.items():
        parts.append(f"{name}={value}")
    if ev.topic:
        parts.append(f"topic={ev.topic}")
    return " ".join(parts)


def entity_text(entity: EntityInstance) -> str:
    """Render an entity's current state as retrievable text."""
    parts = [f"{entity.entity_type} [{entity.group_key}]:"]
    for name, value in entity.properties.items():
        if value is None or value == "":
            continue
        parts.append(f"{name}={value}")
    return " ".join(parts)
