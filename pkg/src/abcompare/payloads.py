"""Builders for the input blocks each stage sends to the gateway.

Formats (one record per line, fields escaped as in the output grammar):

    EXTRACT          ENTITY<TAB>name, then DOC<TAB>url lines each followed by
                     bare escaped sentence lines
    ATTRIBUTE_MERGE  ATTR<TAB>attribute
    VALUE_MERGE      ATTRIBUTE<TAB>attr, THRESHOLD<TAB>t, VALUE<TAB>A|B<TAB>index<TAB>value
    CONTRAST         ROW<TAB>attr followed by VAL<TAB>A|B<TAB>value<TAB>support
    USEFULNESS       ENTITY lines, ROW<TAB>attr, VAL lines
    AUTORATE         ENTITY lines, KNOWN lines, ROW<TAB>attr<TAB>members, CELL lines
    CRITIQUE         SCOPE<TAB>EXTRACT|COMPARE, ENTITY/KNOWN lines, then
                     EXTRACTION<TAB>id<TAB>attr<TAB>value<TAB>evidence<TAB>url or ROW + CELL lines
    REVISE           KIND, TARGET, NOTE, ENTITY/KNOWN lines, the target record(s),
                     plus CONTEXT<TAB>url<TAB>sentence, POOL<TAB>side<TAB>attr<TAB>value<TAB>url<TAB>evidence
                     and DOC<TAB>side<TAB>url<TAB>rank lines where relevant

ENTITY lines are ``ENTITY<TAB>role<TAB>name<TAB>alias|alias`` with role SELF/OTHER
(extraction scope) or A/B (comparison scope).
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .gateway.grammar import CellRecord, escape, record, render_cell
from .model import AttributeCluster, CellValue, ComparisonRow, Entity, Extraction, Tile


def extract_payload(entity: Entity, tile: Tile) -> str:
    lines = [record("ENTITY", entity.display_name)]
    url = None
    for s in tile.sentences:
        if s.doc_url != url:
            url = s.doc_url
            lines.append(record("DOC", url))
        lines.append(escape(s.text))
    return "\n".join(lines)


def attribute_merge_payload(attributes: Iterable[str]) -> str:
    return "\n".join(record("ATTR", a) for a in attributes)


def value_merge_payload(cluster: AttributeCluster, threshold: float) -> str:
    lines = [record("ATTRIBUTE", cluster.canonical_attribute), record("THRESHOLD", repr(threshold))]
    for side, exs in (("A", cluster.values_a), ("B", cluster.values_b)):
        lines += [record("VALUE", side, i, x.value) for i, x in enumerate(exs)]
    return "\n".join(lines)


def _val_lines(cells_a: Sequence[CellValue], cells_b: Sequence[CellValue]) -> list[str]:
    return [
        record("VAL", side, c.value, c.support_count)
        for side, cells in (("A", cells_a), ("B", cells_b)) for c in cells
    ]


def contrast_payload(items: Iterable[tuple[str, Sequence[CellValue], Sequence[CellValue]]]) -> str:
    lines = []
    for attr, a, b in items:
        lines.append(record("ROW", attr))
        lines += _val_lines(a, b)
    return "\n".join(lines)


def entity_lines(roles: Sequence[tuple[str, Entity]], alias_table: Mapping[str, Sequence[str]]) -> list[str]:
    """ENTITY lines for the given roles plus KNOWN lines for every other alias-table entry."""
    lines = []
    named = set()
    for role, e in roles:
        aliases = tuple(a for a in dict.fromkeys([*e.aliases, *alias_table.get(e.display_name, ())])
                        if a != e.display_name)
        lines.append(record("ENTITY", role, e.display_name, list(aliases)))
        named.add(e.display_name)
    for name in sorted(alias_table):
        if name not in named:
            lines.append(record("KNOWN", name, [a for a in alias_table[name] if a != name]))
    return lines


def usefulness_payload(a: Entity, b: Entity, row: ComparisonRow) -> str:
    lines = [record("ENTITY", "A", a.display_name), record("ENTITY", "B", b.display_name),
             record("ROW", row.attribute)]
    lines += _val_lines(row.cell_a, row.cell_b)
    return "\n".join(lines)


def cell_records(row: ComparisonRow) -> list[CellRecord]:
    return [
        CellRecord(side, c.value, c.support_count, c.source_urls, c.evidence)
        for side in ("A", "B") for c in row.cell(side)
    ]


def row_lines(row: ComparisonRow, members: Sequence[str] = ()) -> list[str]:
    lines = [record("ROW", row.attribute, list(members or (row.attribute,)))]
    lines += [render_cell(c) for c in cell_records(row)]
    return lines


def autorate_payload(a: Entity, b: Entity, row: ComparisonRow, alias_table) -> str:
    lines = entity_lines((("A", a), ("B", b)), alias_table)
    return "\n".join(lines + row_lines(row))


def extraction_line(x: Extraction) -> str:
    return record("EXTRACTION", x.id, x.attribute, x.value, x.evidence, x.source_url)


def pool_lines(cluster: AttributeCluster) -> list[str]:
    return [
        record("POOL", side, x.attribute, x.value, x.source_url, x.evidence)
        for side, exs in (("A", cluster.values_a), ("B", cluster.values_b)) for x in exs
    ]


def compare_task_payload(a: Entity, b: Entity, cluster: AttributeCluster) -> str:
    """Input of the single-step comparison task exported for distillation."""
    lines = [record("ENTITY", "A", a.display_name), record("ENTITY", "B", b.display_name),
             record("ROW", cluster.canonical_attribute, list(cluster.member_attributes))]
    lines += pool_lines(cluster)
    return "\n".join(lines)
