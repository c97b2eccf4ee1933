"""Helpers shared by the scenario tool handlers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable

from ..errors import ToolExecutionError
from ..matching import DEFAULT_JACCARD, fuzzy_match
from ..store import CatalogRecord, LedgerItem, ScenarioDatabase, normalize_name
from . import calc
from .calls import ToolResult, ToolStatus
from .schema import ToolKind

LABELS = {
    "products": "product_name",
    "dishes": "dish_name",
    "ingredients": "ingredient_name",
    "recipes": "recipe_name",
    "set_meals": "set_meal_name",
}

NOUNS = {
    "products": "product(s)",
    "dishes": "dish(es)",
    "ingredients": "ingredient(s)",
    "recipes": "recipe(s)",
    "set_meals": "set meal(s)",
}


@dataclass(frozen=True)
class ToolContext:
    threshold: float = DEFAULT_JACCARD


Handler = Callable[[ScenarioDatabase, dict, ToolContext], ToolResult]

HANDLERS: dict[str, tuple[ToolKind, Handler]] = {}


def tool(name: str, kind: ToolKind) -> Callable[[Handler], Handler]:
    def register(fn: Handler) -> Handler:
        if name in HANDLERS:
            raise ValueError(f"handler {name!r} registered twice")
        HANDLERS[name] = (kind, fn)
        return fn

    return register


def fail(message: str) -> ToolExecutionError:
    return ToolExecutionError(message)


# -- name resolution ----------------------------------------------------------


def resolve_fuzzy(db: ScenarioDatabase, coll: str, query: str, ctx: ToolContext) -> list[CatalogRecord]:
    catalog = db.catalogs.get(coll, {})
    return [catalog[n] for n in fuzzy_match(query, catalog.keys(), ctx.threshold).matches]


def resolve_exact(db: ScenarioDatabase, coll: str, query: str) -> CatalogRecord | None:
    return db.catalogs.get(coll, {}).get(normalize_name(query))


def require_exact(db: ScenarioDatabase, coll: str, query: str) -> CatalogRecord:
    rec = resolve_exact(db, coll, query)
    if rec is None:
        noun = NOUNS.get(coll, "item(s)").split("(")[0]
        raise fail(f"{noun.capitalize()} '{query}' not found in catalog.")
    return rec


def _tag_form(text: str) -> str:
    return normalize_name(str(text).replace("_", " ").replace("-", " "))


def tag_matches(query: str, tags: Iterable[str], ctx: ToolContext) -> bool:
    pool = [_tag_form(t) for t in tags]
    return bool(pool) and bool(fuzzy_match(_tag_form(query), pool, ctx.threshold))


def filter_names(
    db: ScenarioDatabase, coll: str, pred: Callable[[CatalogRecord], bool]
) -> list[str]:
    return [rec.name for rec in db.catalogs.get(coll, {}).values() if pred(rec)]


# -- payload builders ---------------------------------------------------------


def field_lookup(
    db: ScenarioDatabase,
    coll: str,
    query: str,
    ctx: ToolContext,
    getter: Callable[[CatalogRecord], dict[str, Any]],
) -> ToolResult:
    """``{"<coll>": [{"<label>": name, ...fields}], "count": n}`` over fuzzy matches."""
    label = LABELS[coll]
    rows = [{label: rec.name, **getter(rec)} for rec in resolve_fuzzy(db, coll, query, ctx)]
    payload: dict[str, Any] = {coll: rows, "count": len(rows)}
    if not rows:
        payload["message"] = f"No {NOUNS[coll]} matched '{query}'."
    return ToolResult.success(payload)


def attr(name: str) -> Callable[[CatalogRecord], dict[str, Any]]:
    def get(rec: CatalogRecord) -> dict[str, Any]:
        value = getattr(rec, name) if hasattr(rec, name) else rec.extra.get(name)
        if isinstance(value, list):
            value = list(value)
        return {name: value}

    return get


def extra(*names: str) -> Callable[[CatalogRecord], dict[str, Any]]:
    def get(rec: CatalogRecord) -> dict[str, Any]:
        return {n: rec.extra.get(n) for n in names}

    return get


def nutrition_of(rec: CatalogRecord) -> dict[str, Any]:
    return {"nutrition": rec.nutrition.to_dict() if rec.nutrition else None}


def names_payload(key: str, names: list[str]) -> ToolResult:
    return ToolResult.success({key: names})


def price_range(db: ScenarioDatabase, coll: str, p: dict) -> ToolResult:
    lo = p.get("min_price", 0)
    hi = p.get("max_price", float("inf"))
    if lo > hi:
        raise fail(f"min_price {lo} exceeds max_price {hi}.")
    label = LABELS[coll]
    rows = [
        {label: rec.name, "price": rec.price}
        for rec in db.catalogs.get(coll, {}).values()
        if rec.price is not None and lo <= rec.price <= hi
    ]
    return ToolResult.success({coll: rows, "count": len(rows)})


def discounted(db: ScenarioDatabase, coll: str) -> ToolResult:
    label = LABELS[coll]
    rows = [
        {label: rec.name, "discount": rec.discount}
        for rec in db.catalogs.get(coll, {}).values()
        if rec.discount is not None and rec.discount < 1
    ]
    return ToolResult.success({coll: rows, "count": len(rows)})


# -- catalog writes -----------------------------------------------------------

RECORD_FIELDS = (
    "category",
    "price",
    "tax_rate",
    "discount",
    "taste",
    "nutritional_characteristics",
    "country_of_origin",
    "allergens",
    "nutrition",
)


def add_catalog_record(db: ScenarioDatabase, coll: str, raw_name: str, p: dict) -> CatalogRecord:
    from ..errors import HarnessError

    doc = {"name": raw_name, **{k: p[k] for k in RECORD_FIELDS if k in p}}
    try:
        rec = CatalogRecord.from_dict(doc, coll)
    except HarnessError as exc:
        raise fail(str(exc)) from exc
    catalog = db.catalog(coll)
    if rec.name in catalog:
        raise fail(f"'{raw_name}' already exists in catalog.")
    catalog[rec.name] = rec
    return rec


# -- ledger writes ------------------------------------------------------------


def add_line(db: ScenarioDatabase, kind: str, user_id: str, item: LedgerItem) -> None:
    ledger = db.ledger(kind, user_id, create=True)
    for line in reversed(ledger.items):
        if line.same_line(item):
            line.quantity += item.quantity
            return
    ledger.items.append(item)


def remove_lines(
    db: ScenarioDatabase, kind: str, user_id: str, raw_name: str, qty: float | None, noun: str
) -> float:
    """Remove ``qty`` (or everything) of a name, newest line first."""
    ledger = db.ledger(kind, user_id)
    name = normalize_name(raw_name)
    lines = [line for line in (ledger.items if ledger else []) if line.name == name]
    if not lines:
        raise fail(f"'{raw_name}' is not in user '{user_id}' {noun}.")
    held = sum(line.quantity for line in lines)
    if qty is None:
        ledger.items = [line for line in ledger.items if line.name != name]
        return held
    if qty > held:
        raise fail(f"Cannot remove {qty} of '{raw_name}': only {held} in user '{user_id}' {noun}.")
    left = qty
    for line in reversed(lines):
        take = min(line.quantity, left)
        line.quantity -= take
        left -= take
        if left <= 0:
            break
    ledger.items = [line for line in ledger.items if not (line.name == name and line.quantity <= 0)]
    return qty


def clear_ledger(db: ScenarioDatabase, kind: str, user_id: str) -> int:
    ledger = db.ledger(kind, user_id)
    if ledger is None:
        return 0
    n = len(ledger.items)
    ledger.items = []
    return n


def fmt_qty(q: float) -> str:
    return str(int(q)) if float(q).is_integer() else str(q)


# -- calculation plumbing -----------------------------------------------------


@dataclass
class CalcLine:
    label: str
    name: str
    quantity: float
    record: CatalogRecord | None = None
    item: LedgerItem | None = None


def gather_items(p: dict, list_keys: tuple[str, ...], name_keys: tuple[str, ...]) -> list[tuple[str, float]]:
    raw = None
    for key in list_keys:
        if key in p:
            raw = p[key]
            break
    out = []
    for entry in raw or []:
        name = next((entry[k] for k in name_keys if k in entry), None)
        if not isinstance(name, str):
            raise fail(f"item {entry!r} has no name field.")
        qty = entry.get("quantity", 1)
        if isinstance(qty, bool) or not isinstance(qty, (int, float)) or qty <= 0:
            raise fail(f"quantity for '{name}' must be a positive number.")
        out.append((name, qty))
    return out


def resolve_lines(
    db: ScenarioDatabase, coll: str, items: list[tuple[str, float]]
) -> tuple[list[CalcLine], list[str]]:
    found: list[CalcLine] = []
    missing: list[str] = []
    for raw, qty in items:
        rec = resolve_exact(db, coll, raw)
        if rec is None:
            missing.append(normalize_name(raw))
        else:
            found.append(CalcLine(label=LABELS[coll], name=rec.name, quantity=qty, record=rec))
    return found, missing


def calc_result(payload: dict[str, Any], found: int, missing: list[str], noun: str) -> ToolResult:
    if missing and not found:
        payload["status"] = "error"
        payload["message"] = f"No valid items. {len(missing)} {noun} not found in catalog: {', '.join(missing)}"
        return ToolResult(ToolStatus.ERROR, payload, "EXECUTION_ERROR")
    if missing:
        payload["status"] = "partial_success"
        payload["message"] = (
            f"Calculated successfully. However, {len(missing)} {noun} not found in catalog: "
            + ", ".join(missing)
        )
        return ToolResult(ToolStatus.PARTIAL, payload)
    payload["status"] = "success"
    payload["message"] = "Calculation completed successfully."
    return ToolResult.success(payload)


def priced(line: CalcLine) -> tuple[float, float, float]:
    """(price, tax_rate, discount) from the ledger capture, else the catalog."""
    src_item, src_rec = line.item, line.record
    values = []
    for field_name in ("price", "tax_rate", "discount"):
        value = getattr(src_item, field_name, None) if src_item is not None else None
        if value is None and src_rec is not None:
            value = getattr(src_rec, field_name)
        if value is None:
            if field_name == "tax_rate":
                value = 0.0
            elif field_name == "discount":
                value = 1.0
            else:
                raise fail(f"'{line.name}' has no price.")
        values.append(value)
    return values[0], values[1], values[2]


def payment(user_id: str | None, lines: list[CalcLine], missing: list[str], noun: str) -> ToolResult:
    details = []
    total = 0.0
    for line in lines:
        price, _, discount = priced(line)
        amount = calc.line_amount(price, discount, line.quantity)
        total += amount
        details.append({line.label: line.name, "quantity": line.quantity, "subtotal": calc.round_money(amount)})
    payload = {"user_id": user_id, "total": calc.round_money(total), "details": details}
    return calc_result(payload, len(lines), missing, noun)


def tax(user_id: str | None, lines: list[CalcLine], missing: list[str], noun: str) -> ToolResult:
    details = []
    total = 0.0
    for line in lines:
        price, rate, discount = priced(line)
        amount = calc.round_money(calc.line_tax(price, rate, discount, line.quantity))
        total += amount
        details.append({line.label: line.name, "quantity": line.quantity, "tax_amount": amount})
    payload = {"user_id": user_id, "total_tax": calc.round_money(total), "details": details}
    return calc_result(payload, len(lines), missing, noun)


def nutrition(
    user_id: str | None,
    lines: list[CalcLine],
    missing: list[str],
    noun: str,
    per_gram: bool = False,
) -> ToolResult:
    """Servings by default; with ``per_gram`` quantities are grams."""
    parts = []
    for line in lines:
        facts = line.record.nutrition if line.record else None
        if facts is None:
            raise fail(f"'{line.name}' has no nutrition record.")
        if per_gram and not facts.serving_size_g:
            raise fail(f"'{line.name}' has a zero serving size.")
        factor = line.quantity / facts.serving_size_g if per_gram else line.quantity
        parts.append((facts, factor))
    totals = calc.total_nutrition(parts)
    payload = {
        "user_id": user_id,
        "total_nutrition": calc.nutrition_payload(totals),
        "details": [{line.label: line.name, "quantity": line.quantity} for line in lines],
    }
    return calc_result(payload, len(lines), missing, noun)
