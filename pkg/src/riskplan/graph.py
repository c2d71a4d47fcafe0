"""Typed in-memory scene graph with conjunctive pattern matching.

Nodes are entities (typed against a tree-shaped ontology), relations (typed,
with named role edges to the things they connect) and attributes (name/value
leaves owned by an entity or relation).  Queries are conjunctive patterns
over typed variables with attribute comparisons, role constraints and
negation-as-failure; conflicting relation conclusions are resolved by an
explicit priority attribute with a risk-averse tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union


class OntologyError(ValueError):
    """Unknown or ill-formed type, role or attribute name."""


class GraphIntegrityError(ValueError):
    """Operation would corrupt the graph structure."""


class PatternError(ValueError):
    """Malformed query pattern."""


ROOT_TYPE = "thing"


class Ontology:
    """Registry of entity types (a tree), relation types and attribute names."""

    def __init__(self) -> None:
        self._parents: Dict[str, Optional[str]] = {ROOT_TYPE: None}
        self._relation_roles: Dict[str, frozenset] = {}
        self._attributes: set = set()

    # -- registration -------------------------------------------------
    def register_entity_type(self, name: str, parent: str = ROOT_TYPE) -> None:
        if name in self._parents:
            raise OntologyError(f"entity type {name!r} already registered")
        if parent not in self._parents:
            raise OntologyError(f"unknown parent entity type {parent!r}")
        self._parents[name] = parent

    def register_relation_type(self, name: str, roles: Iterable[str]) -> None:
        if name in self._relation_roles:
            raise OntologyError(f"relation type {name!r} already registered")
        roles = frozenset(roles)
        if not roles:
            raise OntologyError("a relation type needs at least one role")
        self._relation_roles[name] = roles

    def register_attribute(self, name: str) -> None:
        self._attributes.add(name)

    # -- queries ------------------------------------------------------
    def has_entity_type(self, name: str) -> bool:
        return name in self._parents

    def has_relation_type(self, name: str) -> bool:
        return name in self._relation_roles

    def has_attribute(self, name: str) -> bool:
        return name in self._attributes

    def roles_of(self, relation_type: str) -> frozenset:
        try:
            return self._relation_roles[relation_type]
        except KeyError:
            raise OntologyError(f"unknown relation type {relation_type!r}") from None

    def is_subtype(self, name: str, ancestor: str) -> bool:
        cur: Optional[str] = name
        while cur is not None:
            if cur == ancestor:
                return True
            cur = self._parents.get(cur)
        return False


#: attribute vocabulary used by the default scene construction
_DEFAULT_ATTRIBUTES = (
    "lane_marking_type",
    "side_of_ego_lane",
    "poly_c0",
    "poly_c1",
    "poly_c2",
    "poly_c3",
    "classification_certainty",
    "collision_probability",
    "distance_to_ego",
    "in_front_of_ego",
    "is_oncoming",
    "crossing_road",
    "length",
    "width",
    "height",
    "pos_x",
    "pos_y",
    "heading",
    "speed",
    "acceptability",
    "priority",
    "risk_level",
    "lane_index",
    "name",
)


def default_ontology() -> Ontology:
    """Entity tree, relation types and attribute names for road scenes."""
    onto = Ontology()
    for name, parent in (
        ("physical-entity", ROOT_TYPE),
        ("object", "physical-entity"),
        ("vehicle", "object"),
        ("pedestrian", "object"),
        ("artificial-object", "object"),
        ("ego", "physical-entity"),
        ("road-part", ROOT_TYPE),
        ("lane", "road-part"),
        ("lane-marking", ROOT_TYPE),
    ):
        onto.register_entity_type(name, parent)
    onto.register_relation_type("is_on", ("physical", "road"))
    onto.register_relation_type("crossing_acceptability", ("lane_marking", "ego"))
    onto.register_relation_type("has_risk_level", ("object",))
    for attr in _DEFAULT_ATTRIBUTES:
        onto.register_attribute(attr)
    return onto


class NodeKind(Enum):
    ENTITY = "entity"
    RELATION = "relation"
    ATTRIBUTE = "attribute"


@dataclass
class GraphNode:
    node_id: int
    kind: NodeKind
    type_name: str  # entity/relation type, or attribute name
    value: Any = None  # attribute nodes only


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    role: Optional[str] = None  # None marks an ownership edge

    @property
    def label(self) -> str:
        return "owns" if self.role is None else f"role:{self.role}"


# -- pattern conjuncts ---------------------------------------------------

_COMPARE_OPS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class TypeIs:
    """Variable is an entity of the given type (or a subtype), or a relation
    of the given relation type."""

    var: str
    type_name: str


@dataclass(frozen=True)
class AttrCmp:
    """Attribute of a bound variable compares against a constant."""

    var: str
    attribute: str
    op: str
    value: Any


@dataclass(frozen=True)
class HasRole:
    """Relation variable has a role edge with this name to the target."""

    relation: str
    role: str
    target: str


@dataclass(frozen=True)
class NotExists:
    """No assignment of the sub-pattern is consistent with the outer binding
    (negation-as-failure)."""

    conjuncts: tuple

    def __init__(self, conjuncts: Sequence) -> None:
        object.__setattr__(self, "conjuncts", tuple(conjuncts))


Conjunct = Union[TypeIs, AttrCmp, HasRole, NotExists]
Pattern = Sequence[Conjunct]

#: ranking used by the risk-averse tie-break: lower rank wins
_RISK_LEVEL_RANK = {"high": 0, "medium": 1, "low": 2}


class SceneGraph:
    """Mutable typed graph; every mutation advances a generation counter."""

    def __init__(self, ontology: Optional[Ontology] = None) -> None:
        self.ontology = ontology if ontology is not None else default_ontology()
        self._nodes: Dict[int, GraphNode] = {}
        self._out: Dict[int, List[GraphEdge]] = {}
        self._in: Dict[int, List[GraphEdge]] = {}
        self._attr_index: Dict[int, Dict[str, int]] = {}
        self._by_exact_type: Dict[str, set] = {}
        self._generation = 0
        self._next_id = 1

    # -- bookkeeping ---------------------------------------------------
    @property
    def generation(self) -> int:
        return self._generation

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, node_id: int) -> GraphNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise GraphIntegrityError(f"unknown node id {node_id}") from None

    def edges(self) -> List[GraphEdge]:
        out: List[GraphEdge] = []
        for src in sorted(self._out):
            out.extend(self._out[src])
        return out

    def _bump(self) -> None:
        self._generation += 1

    def _new_node(self, kind: NodeKind, type_name: str, value: Any = None) -> int:
        nid = self._next_id
        self._next_id += 1
        self._nodes[nid] = GraphNode(nid, kind, type_name, value)
        self._out[nid] = []
        self._in[nid] = []
        self._by_exact_type.setdefault(type_name, set()).add(nid)
        return nid

    def _add_edge(self, src: int, dst: int, role: Optional[str]) -> None:
        edge = GraphEdge(src, dst, role)
        self._out[src].append(edge)
        self._in[dst].append(edge)

    # -- mutation -------------------------------------------------------
    def add_entity(
        self, type_name: str, attributes: Iterable[Tuple[str, Any]] = ()
    ) -> int:
        """Insert an entity of a known type with owned attributes."""
        if not self.ontology.has_entity_type(type_name):
            raise OntologyError(f"unknown entity type {type_name!r}")
        nid = self._new_node(NodeKind.ENTITY, type_name)
        self._attr_index[nid] = {}
        for name, value in attributes:
            self._attach_attribute(nid, name, value)
        self._bump()
        return nid

    def add_relation(
        self,
        relation_type: str,
        roles: Iterable[Tuple[str, int]],
        attributes: Iterable[Tuple[str, Any]] = (),
    ) -> int:
        """Insert a relation node with role edges to existing nodes."""
        allowed = self.ontology.roles_of(relation_type)
        role_pairs = list(roles)
        if not role_pairs:
            raise GraphIntegrityError("a relation needs at least one role")
        for role, target in role_pairs:
            if role not in allowed:
                raise OntologyError(
                    f"role {role!r} not declared for relation {relation_type!r}"
                )
            target_node = self.node(target)
            if target_node.kind is NodeKind.ATTRIBUTE:
                raise GraphIntegrityError("role edges cannot point at attributes")
        nid = self._new_node(NodeKind.RELATION, relation_type)
        self._attr_index[nid] = {}
        for role, target in role_pairs:
            self._add_edge(nid, target, role)
        for name, value in attributes:
            self._attach_attribute(nid, name, value)
        self._bump()
        return nid

    def _attach_attribute(self, owner: int, name: str, value: Any) -> None:
        if not self.ontology.has_attribute(name):
            raise OntologyError(f"unknown attribute {name!r}")
        attr_id = self._new_node(NodeKind.ATTRIBUTE, name, value)
        self._add_edge(owner, attr_id, None)
        self._attr_index[owner][name] = attr_id

    def set_attribute(self, node_id: int, name: str, value: Any) -> None:
        """Create or overwrite an attribute on an entity or relation."""
        owner = self.node(node_id)
        if owner.kind is NodeKind.ATTRIBUTE:
            raise GraphIntegrityError("attributes cannot own attributes")
        existing = self._attr_index.get(node_id, {}).get(name)
        if existing is not None:
            self._nodes[existing].value = value
        else:
            self._attach_attribute(node_id, name, value)
        self._bump()

    def get_attribute(self, node_id: int, name: str, default: Any = None) -> Any:
        attr_id = self._attr_index.get(node_id, {}).get(name)
        if attr_id is None:
            return default
        return self._nodes[attr_id].value

    def attributes_of(self, node_id: int) -> Dict[str, Any]:
        return {
            name: self._nodes[attr_id].value
            for name, attr_id in sorted(self._attr_index.get(node_id, {}).items())
        }

    def remove_node(self, node_id: int) -> None:
        """Remove an entity or relation, cascading to owned attributes and to
        any relation holding a role edge to it."""
        target = self.node(node_id)
        if target.kind is NodeKind.ATTRIBUTE:
            raise GraphIntegrityError("attributes are removed with their owner")
        self._remove_recursive(node_id)
        self._bump()

    def _remove_recursive(self, node_id: int) -> None:
        if node_id not in self._nodes:
            return
        # relations pointing at this node die with it
        dependents = [
            e.src for e in self._in[node_id] if e.role is not None and e.src in self._nodes
        ]
        for dep in dependents:
            self._remove_recursive(dep)
        if node_id not in self._nodes:
            return
        for attr_id in list(self._attr_index.get(node_id, {}).values()):
            self._drop_node(attr_id)
        self._attr_index.pop(node_id, None)
        self._drop_node(node_id)

    def _drop_node(self, node_id: int) -> None:
        node = self._nodes.pop(node_id, None)
        if node is None:
            return
        self._by_exact_type[node.type_name].discard(node.node_id)
        for edge in self._out.pop(node_id, []):
            if edge.dst in self._in:
                self._in[edge.dst] = [e for e in self._in[edge.dst] if e.src != node_id]
        for edge in self._in.pop(node_id, []):
            if edge.src in self._out:
                self._out[edge.src] = [
                    e for e in self._out[edge.src] if e.dst != node_id
                ]

    def retract_relations(self, relation_type: str) -> int:
        """Remove every relation of a type (with its attributes)."""
        self.ontology.roles_of(relation_type)  # validates the type
        ids = sorted(self._by_exact_type.get(relation_type, ()))
        for rid in ids:
            if rid in self._nodes:
                self._remove_recursive(rid)
        if ids:
            self._bump()
        return len(ids)

    # -- lookup ----------------------------------------------------------
    def entities_of_type(self, type_name: str) -> List[int]:
        """Entity ids whose type equals or specializes the given type."""
        if not self.ontology.has_entity_type(type_name):
            raise OntologyError(f"unknown entity type {type_name!r}")
        out = [
            nid
            for exact, ids in self._by_exact_type.items()
            if self.ontology.has_entity_type(exact)
            and self.ontology.is_subtype(exact, type_name)
            for nid in ids
            if self._nodes[nid].kind is NodeKind.ENTITY
        ]
        return sorted(out)

    def relations_of_type(self, relation_type: str) -> List[int]:
        self.ontology.roles_of(relation_type)
        return sorted(self._by_exact_type.get(relation_type, ()))

    def roles_of_relation(self, rel_id: int) -> Dict[str, int]:
        node = self.node(rel_id)
        if node.kind is not NodeKind.RELATION:
            raise GraphIntegrityError(f"node {rel_id} is not a relation")
        return {e.role: e.dst for e in self._out[rel_id] if e.role is not None}

    def relations_at(self, anchor: int, relation_type: str) -> List[int]:
        """Relations of a type holding any role edge to the anchor node."""
        self.node(anchor)
        self.ontology.roles_of(relation_type)
        found = {
            e.src
            for e in self._in.get(anchor, [])
            if e.role is not None
            and self._nodes[e.src].type_name == relation_type
        }
        return sorted(found)

    def has_relation(
        self,
        relation_type: str,
        roles: Mapping[str, int],
        attributes: Mapping[str, Any],
    ) -> bool:
        """True when a relation with exactly these roles and attribute values
        already exists."""
        roles = dict(roles)
        attributes = dict(attributes)
        for rid in self._by_exact_type.get(relation_type, ()):
            if self.roles_of_relation(rid) != roles:
                continue
            if self.attributes_of(rid) == attributes:
                return True
        return False

    # -- pattern matching -------------------------------------------------
    def match(self, pattern: Pattern) -> List[Dict[str, int]]:
        """All variable bindings satisfying the conjunctive pattern.

        Bindings are returned sorted by the bound node ids (variables in
        name order), so results are deterministic.
        """
        conjuncts = tuple(pattern)
        self._validate_pattern(conjuncts, frozenset())
        results = self._solve(conjuncts, {})
        var_order = sorted({c.var for c in conjuncts if isinstance(c, TypeIs)})
        results.sort(key=lambda b: tuple(b[v] for v in var_order))
        return results

    def _validate_pattern(self, conjuncts: tuple, outer_vars: frozenset) -> None:
        if not conjuncts:
            raise PatternError("empty pattern")
        local_vars = set(outer_vars)
        for c in conjuncts:
            if isinstance(c, TypeIs):
                if not (
                    self.ontology.has_entity_type(c.type_name)
                    or self.ontology.has_relation_type(c.type_name)
                ):
                    raise PatternError(f"unknown type {c.type_name!r} in pattern")
                local_vars.add(c.var)
        for c in conjuncts:
            if isinstance(c, AttrCmp):
                if c.op not in _COMPARE_OPS:
                    raise PatternError(f"unknown comparison operator {c.op!r}")
                if not self.ontology.has_attribute(c.attribute):
                    raise PatternError(f"unknown attribute {c.attribute!r} in pattern")
                if c.var not in local_vars:
                    raise PatternError(f"variable {c.var!r} is not typed in pattern")
            elif isinstance(c, HasRole):
                if c.relation not in local_vars or c.target not in local_vars:
                    raise PatternError(
                        f"role constraint uses untyped variable "
                        f"{c.relation!r} or {c.target!r}"
                    )
            elif isinstance(c, NotExists):
                self._validate_pattern(c.conjuncts, frozenset(local_vars))
            elif not isinstance(c, TypeIs):
                raise PatternError(f"unsupported conjunct {c!r}")

    def _candidates(self, type_name: str) -> List[int]:
        if self.ontology.has_entity_type(type_name):
            return self.entities_of_type(type_name)
        return self.relations_of_type(type_name)

    def _check_filter(self, c: Conjunct, binding: Dict[str, int]) -> bool:
        if isinstance(c, AttrCmp):
            value = self.get_attribute(binding[c.var], c.attribute)
            if value is None:
                return False
            try:
                return _COMPARE_OPS[c.op](value, c.value)
            except TypeError:
                return False
        if isinstance(c, HasRole):
            rel = binding[c.relation]
            if self._nodes[rel].kind is not NodeKind.RELATION:
                return False
            return any(
                e.role == c.role and e.dst == binding[c.target]
                for e in self._out[rel]
            )
        raise PatternError(f"not a filter conjunct: {c!r}")

    def _solve(self, conjuncts: tuple, outer: Dict[str, int]) -> List[Dict[str, int]]:
        type_conjs = [c for c in conjuncts if isinstance(c, TypeIs)]
        filters = [c for c in conjuncts if isinstance(c, (AttrCmp, HasRole))]
        negatives = [c for c in conjuncts if isinstance(c, NotExists)]

        def filter_vars(c: Conjunct) -> tuple:
            if isinstance(c, AttrCmp):
                return (c.var,)
            return (c.relation, c.target)

        results: List[Dict[str, int]] = []

        def extend(i: int, binding: Dict[str, int], pending: List[Conjunct]) -> None:
            if i == len(type_conjs):
                if pending:  # filters whose variables come only from outer scope
                    if not all(self._check_filter(f, binding) for f in pending):
                        return
                for neg in negatives:
                    if self._solve(neg.conjuncts, binding):
                        return
                results.append({k: v for k, v in binding.items() if k not in outer})
                return
            conj = type_conjs[i]
            if conj.var in binding:
                node = self._nodes.get(binding[conj.var])
                ok = node is not None and (
                    (
                        node.kind is NodeKind.ENTITY
                        and self.ontology.has_entity_type(conj.type_name)
                        and self.ontology.is_subtype(node.type_name, conj.type_name)
                    )
                    or (
                        node.kind is NodeKind.RELATION
                        and node.type_name == conj.type_name
                    )
                )
                candidates = [binding[conj.var]] if ok else []
            else:
                candidates = self._candidates(conj.type_name)
            later_vars = {c.var for c in type_conjs[i + 1 :] if c.var not in binding}
            ready, later = [], []
            for f in pending:
                if any(v in later_vars and v != conj.var for v in filter_vars(f)):
                    later.append(f)
                else:
                    ready.append(f)
            for cand in candidates:
                nb = dict(binding)
                nb[conj.var] = cand
                if all(self._check_filter(f, nb) for f in ready):
                    extend(i + 1, nb, later)

        extend(0, dict(outer), list(filters))
        return results

    # -- priority resolution ----------------------------------------------
    def highest_priority_relation(
        self, relation_type: str, anchor: int
    ) -> Optional[Tuple[int, Dict[str, Any]]]:
        """The relation of the given type at the anchor with the highest
        ``priority`` attribute.

        Ties resolve to the risk-averse conclusion (acceptability 0 beats 1,
        higher risk level beats lower), then to the lowest relation id, so the
        result does not depend on insertion order.
        """
        candidates = []
        for rid in self.relations_at(anchor, relation_type):
            attrs = self.attributes_of(rid)
            priority = attrs.get("priority", 0)
            candidates.append((priority, self._risk_rank(attrs), rid, attrs))
        if not candidates:
            return None
        best_priority = max(c[0] for c in candidates)
        top = [c for c in candidates if c[0] == best_priority]
        top.sort(key=lambda c: (c[1], c[2]))
        _, _, rid, attrs = top[0]
        return rid, attrs

    @staticmethod
    def _risk_rank(attrs: Mapping[str, Any]) -> tuple:
        """Sort key preferring the more cautious conclusion."""
        acceptability = attrs.get("acceptability")
        accept_rank = 0 if acceptability == 0 else 1
        risk = attrs.get("risk_level")
        risk_rank = _RISK_LEVEL_RANK.get(risk, len(_RISK_LEVEL_RANK))
        return (accept_rank, risk_rank)

    # -- diagnostics --------------------------------------------------------
    def dump(self) -> str:
        """Deterministic text dump: one node per line, then one edge per line."""
        lines = ["# nodes: id\tkind\ttype\tvalue"]
        for nid in sorted(self._nodes):
            node = self._nodes[nid]
            value = "" if node.value is None else repr(node.value)
            lines.append(f"{nid}\t{node.kind.value}\t{node.type_name}\t{value}")
        lines.append("# edges: src\tlabel\tdst")
        for edge in self.edges():
            lines.append(f"{edge.src}\t{edge.label}\t{edge.dst}")
        return "\n".join(lines) + "\n"

    def integrity_errors(self) -> List[str]:
        """Structural problems, empty when the graph is consistent."""
        problems = []
        for nid, node in self._nodes.items():
            for edge in self._out[nid]:
                if edge.dst not in self._nodes:
                    problems.append(f"edge from {nid} to missing node {edge.dst}")
                    continue
                dst = self._nodes[edge.dst]
                if edge.role is None and dst.kind is not NodeKind.ATTRIBUTE:
                    problems.append(f"ownership edge {nid}->{edge.dst} to non-attribute")
                if edge.role is not None:
                    if node.kind is not NodeKind.RELATION:
                        problems.append(f"role edge out of non-relation {nid}")
                    if dst.kind is NodeKind.ATTRIBUTE:
                        problems.append(f"role edge {nid}->{edge.dst} into attribute")
            if node.kind is NodeKind.ATTRIBUTE:
                owners = [e for e in self._in[nid] if e.role is None]
                if len(owners) != 1:
                    problems.append(f"attribute {nid} has {len(owners)} owners")
        return problems
