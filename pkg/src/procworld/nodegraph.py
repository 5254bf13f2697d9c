"""Node-graph documents: parsing, annotation sampling and transpiling.

A document is JSON::

    {
      "nodes": [
        {"id": "r", "type": "constant", "name": "radius ~ U(0.5, 2.0)", "inputs": {"value": 1.0}},
        {"id": "s", "type": "sdf_sphere", "inputs": {"radius": "@r"}}
      ],
      "groups": {
        "Shell": {
          "inputs": [{"name": "t", "kind": "scalar", "default": 0.5}],
          "nodes": [{"id": "m", "type": "multiply", "inputs": {"a": {"input": "t"}, "b": 2}}],
          "outputs": {"out": "@m"}
        }
      },
      "outputs": {"sdf": "@s"}
    }

``type`` is a registered field operator or ``"group"`` (with a ``"group"``
key naming the sub-document).  ``inputs`` binds operator sockets and
parameters.  A socket takes a number, a 3-list for vectors, a list of
bindings for list sockets, ``"position"``, a link (``"@id"``,
``"@id.output"`` or ``{"link": id, "output": name}``) or, inside a
group, ``{"input": name}``.  Parameters take literals only.

A display name may end in a distribution annotation ``label ~ D(...)`` with
``D`` one of ``U(lo, hi)``, ``N(mean, sigma)``, ``LU(lo, hi)`` (log-uniform)
or ``C(a, b, ...)`` (choice).  ``label`` names the socket or parameter to
randomize; otherwise the node's primary one (its first parameter, or first
socket) is used.  On a group node the label ``group`` picks among groups.

Every failure is a :class:`GraphError` with a stable ``code``.
"""

from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import fields as F
from .fields import OPERATORS, POSITION, FieldProgram, node
from .seeding import rng

ERROR_CODES = (
    "syntax",
    "schema",
    "duplicate-id",
    "unknown-type",
    "unknown-socket",
    "unbound-socket",
    "bad-binding",
    "dangling-link",
    "cycle",
    "unknown-group",
    "group-arity",
    "kind-mismatch",
    "bad-annotation",
    "unserializable",
)


class GraphError(ValueError):
    def __init__(self, code: str, message: str, node_id: str | None = None, path: str | None = None):
        assert code in ERROR_CODES, code
        self.code = code
        self.node_id = node_id
        self.path = path
        where = f" [{path}]" if path else (f" [node {node_id}]" if node_id else "")
        super().__init__(f"{code}: {message}{where}")


# --------------------------------------------------------------------------
# document model


@dataclass(frozen=True)
class Const:
    value: Any


@dataclass(frozen=True)
class Link:
    node: str
    output: str | None = None


@dataclass(frozen=True)
class InputRef:
    name: str


@dataclass(frozen=True)
class ListBinding:
    items: tuple


@dataclass(frozen=True)
class DistributionAnnotation:
    target: tuple[str, str]  # (node id, socket or parameter)
    kind: str  # uniform | normal | log-uniform | choice
    params: tuple

    def __post_init__(self):
        p = self.params
        if self.kind in ("uniform", "log-uniform"):
            if len(p) != 2 or not all(isinstance(x, (int, float)) for x in p) or p[0] > p[1]:
                raise ValueError(f"{self.kind} needs lo <= hi")
            if self.kind == "log-uniform" and p[0] <= 0:
                raise ValueError("log-uniform bounds must be positive")
        elif self.kind == "normal":
            if len(p) != 2 or not all(isinstance(x, (int, float)) for x in p) or p[1] < 0:
                raise ValueError("normal needs a mean and sigma >= 0")
        elif self.kind == "choice":
            if not p:
                raise ValueError("choice list is empty")
        else:
            raise ValueError(f"unknown distribution {self.kind!r}")


@dataclass(frozen=True)
class NodeDecl:
    id: str
    type: str
    name: str = ""
    inputs: dict = field(default_factory=dict)
    group: str | None = None
    annotation: DistributionAnnotation | None = None


@dataclass(frozen=True)
class GroupSocket:
    name: str
    kind: str = "scalar"
    default: Any = None


@dataclass(frozen=True)
class GroupDecl:
    name: str
    inputs: tuple[GroupSocket, ...]
    nodes: tuple[NodeDecl, ...]
    outputs: dict


@dataclass(frozen=True)
class NodeGraphDoc:
    nodes: tuple[NodeDecl, ...]
    groups: dict
    outputs: dict

    def node_map(self, scope: str | None = None) -> dict[str, NodeDecl]:
        nodes = self.nodes if scope is None else self.groups[scope].nodes
        return {n.id: n for n in nodes}


# --------------------------------------------------------------------------
# annotations

_ANN = re.compile(r"^(?P<label>[^~]*?)\s*~\s*(?P<dist>[A-Za-z]+)\s*\((?P<args>.*)\)\s*$")
_DIST = {"U": "uniform", "N": "normal", "LU": "log-uniform", "C": "choice"}


def _parse_args(text: str) -> tuple:
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            out.append(float(tok) if re.search(r"[.eE]|inf|nan", tok) else int(tok))
        except ValueError:
            out.append(tok.strip("'\""))
    return tuple(out)


def parse_annotation(
    name: str, node_id: str, default_target: str, known: frozenset | None = None
) -> tuple[str, DistributionAnnotation | None]:
    """Split a display name into ``(label, annotation)``.

    The label's last word is the target when it is in ``known`` (any word
    when ``known`` is None); otherwise ``default_target`` is used.
    """
    if "~" not in name:
        return name, None
    m = _ANN.match(name)
    if not m or m.group("dist") not in _DIST:
        raise GraphError("bad-annotation", f"cannot parse annotation {name!r}", node_id, f"{node_id}.name")
    label = m.group("label").strip()
    word = label.split()[-1] if label else None
    target = word if word is not None and (known is None or word in known) else default_target
    try:
        ann = DistributionAnnotation((node_id, target), _DIST[m.group("dist")], _parse_args(m.group("args")))
    except ValueError as exc:
        raise GraphError("bad-annotation", str(exc), node_id, f"{node_id}.{target}") from None
    return label, ann


def sample_distribution(ann: DistributionAnnotation, r: np.random.Generator):
    p = ann.params
    if ann.kind == "uniform":
        return float(p[0]) if p[0] == p[1] else float(r.uniform(p[0], p[1]))
    if ann.kind == "normal":
        return float(p[0] + p[1] * r.standard_normal())
    if ann.kind == "log-uniform":
        return float(p[0]) if p[0] == p[1] else float(math.exp(r.uniform(math.log(p[0]), math.log(p[1]))))
    return p[int(r.integers(len(p)))]


# --------------------------------------------------------------------------
# parsing


def _primary(op: str) -> str:
    spec = OPERATORS[op]
    if spec.params:
        return spec.params[0][0]
    return spec.inputs[0].name if spec.inputs else ""


def _parse_link(text: str) -> Link:
    ident, _, out = text[1:].partition(".")
    return Link(ident, out or None)


def _parse_binding(raw, kind: str | None, where: str, nid: str):
    """``kind`` is the socket kind, or None for a literal-only parameter."""
    if kind is None:
        if isinstance(raw, dict) or (isinstance(raw, str) and raw.startswith("@")):
            raise GraphError("bad-binding", "parameters take literal values only", nid, where)
        return Const(F._freeze(raw))
    if isinstance(raw, dict):
        if "link" in raw:
            return Link(str(raw["link"]), raw.get("output"))
        if "input" in raw:
            return InputRef(str(raw["input"]))
        raise GraphError("bad-binding", f"unrecognised binding {raw!r}", nid, where)
    if isinstance(raw, str):
        if raw.startswith("@"):
            return _parse_link(raw)
        if raw == "position" and kind == "vector":
            return Const("position")
        raise GraphError("bad-binding", f"unrecognised binding {raw!r}", nid, where)
    if isinstance(raw, bool):
        raise GraphError("bad-binding", "booleans cannot feed a socket", nid, where)
    if kind == "scalar*":
        if not isinstance(raw, list):
            raise GraphError("bad-binding", "list socket needs a list", nid, where)
        return ListBinding(tuple(_parse_binding(x, "scalar", f"{where}[{i}]", nid) for i, x in enumerate(raw)))
    if kind == "vector":
        if isinstance(raw, list) and len(raw) == 3 and all(isinstance(x, (int, float)) for x in raw):
            return Const(tuple(float(x) for x in raw))
        raise GraphError("bad-binding", "vector socket needs three numbers or a link", nid, where)
    if isinstance(raw, (int, float)):
        return Const(float(raw))
    raise GraphError("bad-binding", f"unrecognised binding {raw!r}", nid, where)


def _parse_node(raw, scope: str) -> NodeDecl:
    if not isinstance(raw, dict) or "id" not in raw or "type" not in raw:
        raise GraphError("schema", "every node needs an id and a type", path=scope)
    nid, typ = str(raw["id"]), str(raw["type"])
    name = str(raw.get("name", ""))
    inputs = raw.get("inputs", {})
    if not isinstance(inputs, dict):
        raise GraphError("schema", "inputs must be an object", nid)
    if typ == "group":
        if "group" not in raw:
            raise GraphError("schema", "group node needs a 'group' name", nid)
        label, ann = parse_annotation(name, nid, "group", frozenset(inputs) | {"group"})
        bound = {k: _parse_binding(v, "any", f"{nid}.{k}", nid) for k, v in inputs.items()}
        return NodeDecl(nid, typ, name, bound, str(raw["group"]), ann)
    if typ not in OPERATORS or typ == "custom":
        raise GraphError("unknown-type", f"unknown node type {typ!r}", nid)
    spec = OPERATORS[typ]
    sockets = {s.name: s.kind for s in spec.inputs}
    params = dict(spec.params)
    bound = {}
    for k, v in inputs.items():
        if k in sockets:
            bound[k] = _parse_binding(v, sockets[k], f"{nid}.{k}", nid)
        elif k in params:
            bound[k] = _parse_binding(v, None, f"{nid}.{k}", nid)
        else:
            raise GraphError("unknown-socket", f"{typ} has no input {k!r}", nid, f"{nid}.{k}")
    for s in spec.inputs:
        if s.name not in bound and s.default is None:
            raise GraphError("unbound-socket", f"socket {s.name!r} of {typ} is not bound", nid, f"{nid}.{s.name}")
    _, ann = parse_annotation(name, nid, _primary(typ), frozenset(sockets) | frozenset(params))
    if ann is not None and not ann.target[1]:
        raise GraphError("bad-annotation", f"{typ} has no input to randomise", nid)
    return NodeDecl(nid, typ, name, bound, None, ann)


def _parse_scope(raw_nodes, scope: str) -> tuple[NodeDecl, ...]:
    if not isinstance(raw_nodes, list):
        raise GraphError("schema", "nodes must be a list", path=scope)
    nodes = tuple(_parse_node(r, scope) for r in raw_nodes)
    seen = set()
    for n in nodes:
        if n.id in seen:
            raise GraphError("duplicate-id", f"node id {n.id!r} used twice", n.id)
        seen.add(n.id)
    return nodes


def _parse_outputs(raw, scope: str) -> dict:
    if not isinstance(raw, dict) or not raw:
        raise GraphError("schema", "outputs must be a non-empty object", path=scope)
    return {str(k): _parse_binding(v, "any", f"{scope}.outputs.{k}", None) for k, v in raw.items()}


def doc_from_dict(data) -> NodeGraphDoc:
    if not isinstance(data, dict):
        raise GraphError("schema", "document must be a JSON object")
    groups = {}
    for gname, g in (data.get("groups") or {}).items():
        if not isinstance(g, dict):
            raise GraphError("schema", f"group {gname!r} must be an object", path=gname)
        socks = []
        for s in g.get("inputs", []):
            if not isinstance(s, dict) or "name" not in s:
                raise GraphError("schema", "group inputs need a name", path=gname)
            kind = s.get("kind", "scalar")
            if kind not in ("scalar", "vector"):
                raise GraphError("schema", f"bad group input kind {kind!r}", path=gname)
            d = s.get("default")
            socks.append(GroupSocket(str(s["name"]), kind, tuple(d) if isinstance(d, list) else d))
        groups[str(gname)] = GroupDecl(
            str(gname), tuple(socks), _parse_scope(g.get("nodes", []), gname), _parse_outputs(g.get("outputs"), gname)
        )
    doc = NodeGraphDoc(_parse_scope(data.get("nodes", []), "<root>"), groups, _parse_outputs(data.get("outputs"), "<root>"))
    validate(doc)
    return doc


def parse_graph(text: str | bytes) -> NodeGraphDoc:
    """Parse and validate a document; raises :class:`GraphError`."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GraphError("syntax", f"not UTF-8: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError("syntax", f"{exc.msg} at line {exc.lineno} column {exc.colno}") from None
    return doc_from_dict(data)


# --------------------------------------------------------------------------
# validation


def _links(binding):
    if isinstance(binding, Link):
        yield binding
    elif isinstance(binding, ListBinding):
        for b in binding.items:
            yield from _links(b)


def _input_refs(binding):
    if isinstance(binding, InputRef):
        yield binding
    elif isinstance(binding, ListBinding):
        for b in binding.items:
            yield from _input_refs(b)


def _group_order(doc: NodeGraphDoc) -> list[str]:
    """Groups with callees first; raises on unknown or recursive groups."""
    state: dict[str, int] = {}
    order: list[str] = []

    def callees(g: GroupDecl):
        for n in g.nodes:
            if n.type == "group":
                yield n

    def visit(name, via):
        if name not in doc.groups:
            raise GraphError("unknown-group", f"group {name!r} is not defined", via)
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            raise GraphError("cycle", f"group {name!r} calls itself", via)
        state[name] = 1
        for n in callees(doc.groups[name]):
            for target in _group_targets(n):
                visit(target, n.id)
        state[name] = 2
        order.append(name)

    for n in doc.nodes:
        if n.type == "group":
            for target in _group_targets(n):
                visit(target, n.id)
    for name in doc.groups:
        visit(name, None)
    return order


def _group_targets(n: NodeDecl) -> list[str]:
    if n.annotation is not None and n.annotation.kind == "choice" and n.annotation.target[1] == "group":
        return [str(x) for x in n.annotation.params]
    return [n.group]


def _scope_kinds(doc: NodeGraphDoc, nodes, outputs, scope_inputs, scope, group_kinds) -> dict:
    """Validate one scope; returns output kinds keyed by output name."""
    by_id = {n.id: n for n in nodes}
    kinds: dict[str, Any] = {}

    def out_kind(link: Link, nid):
        if link.node not in by_id:
            raise GraphError("dangling-link", f"link to unknown node {link.node!r}", nid)
        target = by_id[link.node]
        k = kinds[link.node]
        if target.type == "group":
            outs = k
            if link.output is None:
                if len(outs) != 1:
                    raise GraphError("dangling-link", f"group node {link.node!r} has several outputs; name one", nid)
                return next(iter(outs.values()))
            if link.output not in outs:
                raise GraphError("dangling-link", f"group node {link.node!r} has no output {link.output!r}", nid)
            return outs[link.output]
        if link.output not in (None, "out"):
            raise GraphError("dangling-link", f"node {link.node!r} has no output {link.output!r}", nid)
        return k

    def binding_kind(b, nid):
        if isinstance(b, Link):
            return out_kind(b, nid)
        if isinstance(b, InputRef):
            if scope_inputs is None or b.name not in scope_inputs:
                raise GraphError("dangling-link", f"no group input named {b.name!r}", nid)
            return scope_inputs[b.name].kind
        if isinstance(b, Const):
            if b.value == "position" or isinstance(b.value, tuple):
                return "vector"
            return "scalar"
        return "list"

    # cycle check by DFS over links
    state: dict[str, int] = {}
    order: list[str] = []

    def visit(nid):
        if state.get(nid) == 2:
            return
        if state.get(nid) == 1:
            raise GraphError("cycle", f"cycle through node {nid!r}", nid)
        state[nid] = 1
        for b in by_id[nid].inputs.values():
            for link in _links(b):
                if link.node not in by_id:
                    raise GraphError("dangling-link", f"link to unknown node {link.node!r}", nid)
                visit(link.node)
        state[nid] = 2
        order.append(nid)

    for nid in by_id:
        visit(nid)

    for nid in order:
        n = by_id[nid]
        if n.type == "group":
            variants = _group_targets(n)
            for gname in variants:
                g = doc.groups[gname]
                declared = {s.name: s for s in g.inputs}
                extra = set(n.inputs) - set(declared)
                missing = [s.name for s in g.inputs if s.default is None and s.name not in n.inputs]
                if extra or missing:
                    raise GraphError(
                        "group-arity",
                        f"call to {gname!r}: unexpected {sorted(extra)}, missing {missing}",
                        nid,
                    )
                for k, b in n.inputs.items():
                    bk = binding_kind(b, nid)
                    if bk != declared[k].kind:
                        raise GraphError("kind-mismatch", f"{gname}.{k} expects {declared[k].kind}, got {bk}", nid)
            ann = n.annotation
            if ann is not None:
                tgt = ann.target[1]
                if tgt == "group":
                    if ann.kind != "choice":
                        raise GraphError("bad-annotation", "group selection needs a C(...) annotation", nid)
                elif any(tgt not in {s.name for s in doc.groups[g].inputs} for g in variants):
                    raise GraphError("bad-annotation", f"group has no input {tgt!r}", nid, f"{nid}.{tgt}")
                elif isinstance(n.inputs.get(tgt), (Link, InputRef)):
                    raise GraphError("bad-annotation", f"annotated input {tgt!r} is linked", nid, f"{nid}.{tgt}")
            outs = [group_kinds[g] for g in variants]
            if any(o != outs[0] for o in outs[1:]):
                raise GraphError("bad-annotation", "group choices must share output names and kinds", nid)
            kinds[nid] = outs[0]
            continue
        spec = OPERATORS[n.type]
        for s in spec.inputs:
            if s.name not in n.inputs:
                continue
            b = n.inputs[s.name]
            if s.kind == "scalar*":
                for i, item in enumerate(b.items):
                    if binding_kind(item, nid) != "scalar":
                        raise GraphError("kind-mismatch", f"{s.name}[{i}] expects scalar", nid, f"{nid}.{s.name}")
                continue
            bk = binding_kind(b, nid)
            if bk != s.kind:
                raise GraphError("kind-mismatch", f"{s.name} expects {s.kind}, got {bk}", nid, f"{nid}.{s.name}")
        ann = n.annotation
        if ann is not None:
            tgt = ann.target[1]
            if isinstance(n.inputs.get(tgt), (Link, InputRef, ListBinding)):
                raise GraphError("bad-annotation", f"annotated input {tgt!r} is linked", nid, f"{nid}.{tgt}")
            if ann.kind == "choice" and not all(isinstance(v, (int, float)) for v in ann.params):
                raise GraphError("bad-annotation", "choices for an input must be numbers", nid, f"{nid}.{tgt}")
            sock = {s.name: s.kind for s in spec.inputs}.get(tgt)
            if sock == "vector" or sock == "scalar*":
                raise GraphError("bad-annotation", f"cannot sample into {sock} socket {tgt!r}", nid, f"{nid}.{tgt}")
        kinds[nid] = spec.out_kind

    out = {}
    for name, b in outputs.items():
        if isinstance(b, Const) or isinstance(b, ListBinding):
            raise GraphError("bad-binding", f"output {name!r} must be a link", path=f"{scope}.outputs.{name}")
        out[name] = binding_kind(b, None)
    return out


def validate(doc: NodeGraphDoc) -> None:
    group_kinds: dict[str, dict] = {}
    for gname in _group_order(doc):
        g = doc.groups[gname]
        group_kinds[gname] = _scope_kinds(doc, g.nodes, g.outputs, {s.name: s for s in g.inputs}, gname, group_kinds)
    _scope_kinds(doc, doc.nodes, doc.outputs, None, "<root>", group_kinds)


# --------------------------------------------------------------------------
# sampling


def sample_annotations(doc: NodeGraphDoc, seed: int) -> NodeGraphDoc:
    """Replace every annotated input by a sampled constant.

    Each node draws from its own seed substream, so results do not depend on
    node order.  Integer parameters are rounded.
    """

    def bind(nodes, scope):
        out = []
        for n in nodes:
            ann = n.annotation
            if ann is None:
                out.append(n)
                continue
            r = rng(seed, "annotation", scope, n.id)
            value = sample_distribution(ann, r)
            label = n.name.split("~")[0].strip()
            tgt = ann.target[1]
            if n.type == "group" and tgt == "group":
                out.append(replace(n, name=label, group=str(value), annotation=None))
                continue
            default = OPERATORS[n.type].param_defaults().get(tgt) if n.type != "group" else None
            if isinstance(default, int) and not isinstance(default, bool) and not isinstance(value, str):
                value = int(round(value))
            elif not isinstance(value, str):
                value = float(value)
            inputs = dict(n.inputs)
            inputs[tgt] = Const(value)
            out.append(replace(n, name=label, inputs=inputs, annotation=None))
        return tuple(out)

    groups = {k: replace(g, nodes=bind(g.nodes, k)) for k, g in doc.groups.items()}
    bound = NodeGraphDoc(bind(doc.nodes, "<root>"), groups, doc.outputs)
    validate(bound)
    return bound


# --------------------------------------------------------------------------
# serialization


def _plain(v):
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _binding_json(b):
    if isinstance(b, Const):
        return _plain(b.value)
    if isinstance(b, Link):
        return "@" + b.node + (f".{b.output}" if b.output else "")
    if isinstance(b, InputRef):
        return {"input": b.name}
    return [_binding_json(x) for x in b.items]


def _node_json(n: NodeDecl) -> dict:
    d = {"id": n.id, "type": n.type}
    if n.group is not None:
        d["group"] = n.group
    if n.name:
        d["name"] = n.name
    if n.inputs:
        d["inputs"] = {k: _binding_json(v) for k, v in n.inputs.items()}
    return d


def doc_to_dict(doc: NodeGraphDoc) -> dict:
    out = {"nodes": [_node_json(n) for n in doc.nodes]}
    if doc.groups:
        out["groups"] = {
            k: {
                "inputs": [
                    {"name": s.name, "kind": s.kind, **({"default": _plain(s.default)} if s.default is not None else {})}
                    for s in g.inputs
                ],
                "nodes": [_node_json(n) for n in g.nodes],
                "outputs": {o: _binding_json(b) for o, b in g.outputs.items()},
            }
            for k, g in doc.groups.items()
        }
    out["outputs"] = {k: _binding_json(v) for k, v in doc.outputs.items()}
    return out


def dump_graph(doc: NodeGraphDoc) -> str:
    return json.dumps(doc_to_dict(doc), indent=2, sort_keys=False)


def program_to_doc(program: FieldProgram, output: str = "out") -> NodeGraphDoc:
    """Express a field program as a flat document (custom nodes are rejected)."""
    ids: dict[int, str] = {}
    nodes = []
    for nd in program.walk():
        if nd is POSITION and nd is not program:
            continue
        if nd.op == "custom":
            raise GraphError("unserializable", f"custom node {nd.params.get('label')!r} has no document form")
        nid = f"n{len(nodes)}"
        ids[id(nd)] = nid
        spec = OPERATORS[nd.op]
        inputs = {}
        for sock, x in zip(spec.inputs, nd.inputs):
            if isinstance(x, tuple):
                inputs[sock.name] = ListBinding(tuple(Link(ids[id(y)]) for y in x))
            elif x is POSITION:
                inputs[sock.name] = Const("position")
            else:
                inputs[sock.name] = Link(ids[id(x)])
        for k, v in nd.params.items():
            inputs[k] = Const(F._freeze(_plain(v)))
        nodes.append(NodeDecl(nid, nd.op, "", inputs))
    doc = NodeGraphDoc(tuple(nodes), {}, {output: Link(ids[id(program)])})
    validate(doc)
    return doc


# --------------------------------------------------------------------------
# lowering to a FieldProgram


def _lower_scope(doc, nodes, outputs, args, memo_groups):
    by_id = {n.id: n for n in nodes}
    built: dict[str, Any] = {}

    def resolve(b):
        if isinstance(b, Link):
            v = build(b.node)
            if isinstance(v, dict):
                return v[b.output] if b.output else next(iter(v.values()))
            return v
        if isinstance(b, InputRef):
            return args[b.name]
        if isinstance(b, Const):
            return POSITION if b.value == "position" else b.value
        return tuple(resolve(x) for x in b.items)

    def build(nid):
        if nid in built:
            return built[nid]
        n = by_id[nid]
        if n.type == "group":
            g = doc.groups[n.group]
            call_args = {}
            for s in g.inputs:
                if s.name in n.inputs:
                    val = resolve(n.inputs[s.name])
                else:
                    val = s.default
                call_args[s.name] = F._as_program(val, s.kind, n.group, s.name)
            val = _lower_scope(doc, g.nodes, g.outputs, call_args, memo_groups)
        else:
            spec = OPERATORS[n.type]
            ins = []
            for s in spec.inputs:
                if s.name in n.inputs:
                    ins.append(resolve(n.inputs[s.name]))
                else:
                    ins.append(s.default)
            params = {k: b.value for k, b in n.inputs.items() if k in dict(spec.params)}
            try:
                val = node(n.type, *ins, **params)
            except F.FieldBuildError as exc:
                raise GraphError("kind-mismatch", str(exc), nid) from None
        built[nid] = val
        return val

    return {k: resolve(b) for k, b in outputs.items()}


def lower(doc: NodeGraphDoc, output: str | None = None) -> FieldProgram:
    """Build the field program for one output (the first by default)."""
    outs = _lower_scope(doc, doc.nodes, doc.outputs, {}, {})
    name = output or next(iter(doc.outputs))
    if name not in outs:
        raise GraphError("dangling-link", f"no output named {name!r}")
    return outs[name]


# --------------------------------------------------------------------------
# source emission


_IDENT = re.compile(r"[^0-9A-Za-z_]")


def _var(prefix: str, ident: str) -> str:
    return f"{prefix}_{_IDENT.sub('_', ident)}"


def _literal(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else f"float({str(v)!r})"
    if isinstance(v, tuple):
        return "(" + ", ".join(_literal(x) for x in v) + ("," if len(v) == 1 else "") + ")"
    return repr(v)


def _fn_name(group: str) -> str:
    return "group_" + _IDENT.sub("_", group)


def _post_order(nodes, outputs) -> list[str]:
    by_id = {n.id: n for n in nodes}
    order: list[str] = []
    seen: set[str] = set()

    def visit(nid):
        if nid in seen:
            return
        seen.add(nid)
        for b in by_id[nid].inputs.values():
            for link in _links(b):
                visit(link.node)
        order.append(nid)

    for b in outputs.values():
        for link in _links(b):
            visit(link.node)
    return order


def _emit_scope(doc, nodes, outputs, args: dict[str, str], prefix: str, inline: bool, lines: list, indent: str):
    """Append statements; returns output name -> expression."""
    by_id = {n.id: n for n in nodes}
    expr: dict[str, Any] = {}

    def ref(b) -> str:
        if isinstance(b, Link):
            e = expr[b.node]
            if isinstance(e, dict):
                return e[b.output] if b.output else next(iter(e.values()))
            return e
        if isinstance(b, InputRef):
            return args[b.name]
        if isinstance(b, Const):
            return "POSITION" if b.value == "position" else _literal(b.value)
        return "[" + ", ".join(ref(x) for x in b.items) + "]"

    for nid in _post_order(nodes, outputs):
        n = by_id[nid]
        var = _var(prefix, nid)
        if n.type == "group":
            g = doc.groups[n.group]
            call = {s.name: ref(n.inputs[s.name]) for s in g.inputs if s.name in n.inputs}
            if inline:
                full = {s.name: call.get(s.name, _literal(s.default)) for s in g.inputs}
                # group inputs are coerced to programs exactly as a call would
                for s in g.inputs:
                    v = f"{var}__in_{_IDENT.sub('_', s.name)}"
                    lines.append(f"{indent}{v} = as_input({full[s.name]}, {s.kind!r})")
                    full[s.name] = v
                expr[nid] = _emit_scope(doc, g.nodes, g.outputs, full, var + "_", True, lines, indent)
            else:
                kw = ", ".join(f"{k}={v}" for k, v in call.items())
                lines.append(f"{indent}{var} = {_fn_name(n.group)}({kw})")
                expr[nid] = {o: f"{var}[{o!r}]" for o in g.outputs}
            continue
        spec = OPERATORS[n.type]
        pos = []
        for s in spec.inputs:
            if s.name in n.inputs:
                pos.append(ref(n.inputs[s.name]))
            elif s.default == "position":
                pos.append("POSITION")
            else:
                pos.append(_literal(s.default))
        kw = [f"{k}={_literal(b.value)}" for k, b in n.inputs.items() if k in dict(spec.params)]
        lines.append(f"{indent}{var} = node({', '.join([repr(n.type)] + pos + kw)})")
        expr[nid] = var
    return {k: ref(b) for k, b in outputs.items()}


def emit_source(doc: NodeGraphDoc, output: str | None = None, inline_groups: bool = False) -> str:
    """Python source with one assignment per reachable node, in post-order.

    Each group becomes one function ``group_<name>`` returning a dict of its
    outputs, unless ``inline_groups`` splices group bodies into the caller.
    """
    name = output or next(iter(doc.outputs))
    lines = ["# generated from a node graph", "from procworld.fields import POSITION, as_input, node", ""]
    if not inline_groups:
        for gname in _group_order(doc):
            g = doc.groups[gname]
            params = ", ".join(
                s.name if s.default is None else f"{s.name}={_literal(s.default)}" for s in g.inputs
            )
            lines.append(f"def {_fn_name(gname)}({params}):")
            args = {}
            for s in g.inputs:
                lines.append(f"    {s.name} = as_input({s.name}, {s.kind!r})")
                args[s.name] = s.name
            outs = _emit_scope(doc, g.nodes, g.outputs, args, "v", False, lines, "    ")
            lines.append("    return {" + ", ".join(f"{k!r}: {v}" for k, v in outs.items()) + "}")
            lines.append("")
            lines.append("")
    lines.append("def build():")
    outs = _emit_scope(doc, doc.nodes, {name: doc.outputs[name]}, {}, "v", inline_groups, lines, "    ")
    lines.append(f"    return {outs[name]}")
    return "\n".join(lines) + "\n"


def transpile(doc: NodeGraphDoc, output: str | None = None, inline_groups: bool = False) -> tuple[FieldProgram, str]:
    """Lower a validated document to ``(program, emitted source)``."""
    for n in list(doc.nodes) + [m for g in doc.groups.values() for m in g.nodes]:
        if n.type != "group" and (n.type not in OPERATORS or n.type == "custom"):
            raise GraphError("unknown-type", f"unknown node type {n.type!r}", n.id)
    return lower(doc, output), emit_source(doc, output, inline_groups)


# --------------------------------------------------------------------------
# loading emitted source


class _SourceEvaluator:
    """Evaluates the small Python subset that :func:`emit_source` produces."""

    def __init__(self, tree: ast.Module):
        self.functions: dict[str, ast.FunctionDef] = {}
        for stmt in tree.body:
            if isinstance(stmt, ast.FunctionDef):
                self.functions[stmt.name] = stmt
            elif isinstance(stmt, ast.ImportFrom) and stmt.module == "procworld.fields":
                continue
            elif isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant):
                continue
            else:
                raise GraphError("syntax", f"unsupported top-level statement at line {stmt.lineno}")
        if "build" not in self.functions:
            raise GraphError("syntax", "source defines no build() function")

    def call(self, name: str, kwargs: dict):
        fn = self.functions[name]
        a = fn.args
        names = [x.arg for x in a.args]
        defaults = dict(zip(names[len(names) - len(a.defaults):], a.defaults))
        env = {}
        for n in names:
            if n in kwargs:
                env[n] = kwargs[n]
            elif n in defaults:
                env[n] = self.expr(defaults[n], {})
            else:
                raise GraphError("syntax", f"{name}() missing argument {n!r}")
        for stmt in fn.body:
            if isinstance(stmt, ast.Assign) and len(stmt.targets) == 1 and isinstance(stmt.targets[0], ast.Name):
                env[stmt.targets[0].id] = self.expr(stmt.value, env)
            elif isinstance(stmt, ast.Return):
                return self.expr(stmt.value, env)
            else:
                raise GraphError("syntax", f"unsupported statement at line {stmt.lineno}")
        raise GraphError("syntax", f"{name}() does not return")

    def expr(self, e, env):
        if isinstance(e, ast.Constant):
            return e.value
        if isinstance(e, ast.Name):
            if e.id in env:
                return env[e.id]
            if e.id == "POSITION":
                return POSITION
            raise GraphError("syntax", f"unknown name {e.id!r} at line {e.lineno}")
        if isinstance(e, (ast.Tuple, ast.List)):
            items = [self.expr(x, env) for x in e.elts]
            return tuple(items) if isinstance(e, ast.Tuple) else items
        if isinstance(e, ast.Dict):
            return {self.expr(k, env): self.expr(v, env) for k, v in zip(e.keys, e.values)}
        if isinstance(e, ast.UnaryOp) and isinstance(e.op, (ast.USub, ast.UAdd)):
            v = self.expr(e.operand, env)
            return -v if isinstance(e.op, ast.USub) else v
        if isinstance(e, ast.Subscript):
            return self.expr(e.value, env)[self.expr(e.slice, env)]
        if isinstance(e, ast.Call) and isinstance(e.func, ast.Name):
            args = [self.expr(x, env) for x in e.args]
            kw = {k.arg: self.expr(k.value, env) for k in e.keywords}
            if e.func.id == "node":
                return node(*args, **kw)
            if e.func.id == "as_input":
                return F.as_input(*args, **kw)
            if e.func.id == "float" and len(args) == 1:
                return float(args[0])
            if e.func.id in self.functions and not args:
                return self.call(e.func.id, kw)
        raise GraphError("syntax", f"unsupported expression at line {getattr(e, 'lineno', '?')}")


def load_source(text: str) -> FieldProgram:
    """Re-parse emitted source and rebuild its program without executing it."""
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        raise GraphError("syntax", f"{exc.msg} at line {exc.lineno}") from None
    return _SourceEvaluator(tree).call("build", {})


# --------------------------------------------------------------------------
# reference interpreter


def interpret(doc: NodeGraphDoc, points: np.ndarray, output: str | None = None) -> np.ndarray:
    """Evaluate a document directly from its declarations (no program objects)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)

    def scope(nodes, outputs, args):
        by_id = {x.id: x for x in nodes}
        cache: dict[str, Any] = {}

        def value(b, kind):
            if isinstance(b, Link):
                v = run(b.node)
                return (v[b.output] if b.output else next(iter(v.values()))) if isinstance(v, dict) else v
            if isinstance(b, InputRef):
                return args[b.name]
            if isinstance(b, ListBinding):
                return [value(x, "scalar") for x in b.items]
            return const(b.value, kind)

        def run(nid):
            if nid in cache:
                return cache[nid]
            x = by_id[nid]
            if x.type == "group":
                g = doc.groups[x.group]
                a = {
                    s.name: value(x.inputs[s.name], s.kind) if s.name in x.inputs else const(s.default, s.kind)
                    for s in g.inputs
                }
                out = scope(g.nodes, g.outputs, a)
            else:
                spec = OPERATORS[x.type]
                ins = []
                for s in spec.inputs:
                    if s.name in x.inputs:
                        ins.append(value(x.inputs[s.name], s.kind))
                    elif s.kind == "scalar*":
                        ins.append([const(v, "scalar") for v in s.default])
                    else:
                        ins.append(const(s.default, s.kind))
                params = spec.param_defaults()
                params.update({k: b.value for k, b in x.inputs.items() if k in params})
                out = pts if x.type == "position" else spec.fn(n, *ins, **params)
            cache[nid] = out
            return out

        return {k: value(b, "any") for k, b in outputs.items()}

    def const(v, kind):
        if v == "position":
            return pts
        if kind == "vector" or isinstance(v, tuple):
            return np.tile(np.asarray(v, dtype=np.float64), (n, 1))
        return np.full(n, float(v))

    outs = scope(doc.nodes, doc.outputs, {})
    return outs[output or next(iter(doc.outputs))]


def load_graph(path) -> NodeGraphDoc:
    with open(path, "rb") as fh:
        return parse_graph(fh.read())
