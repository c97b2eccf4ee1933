"""Scenario databases: loading, canonical snapshots, reset and equivalence.

A scenario document is a JSON object whose top-level keys are catalog
collections (``products``, ``dishes``, ``set_meals``, ``recipes``,
``ingredients``) and per-user ledgers (``user_carts``, ``user_orders``,
``user_shopping_lists``, ``user_menus``).  Everything mutable is covered by
the digest; nothing is excluded.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .errors import IntegrityError, ScenarioMismatch, SchemaError

CATALOG_COLLECTIONS = ("products", "dishes", "set_meals", "recipes", "ingredients")

LEDGER_COLLECTIONS = {
    "cart": "user_carts",
    "order": "user_orders",
    "shopping_list": "user_shopping_lists",
    "menu": "user_menus",
}
_LEDGER_KIND_BY_KEY = {v: k for k, v in LEDGER_COLLECTIONS.items()}

# Record fields compared as sets in the digest.
UNORDERED_TAG_FIELDS = ("taste", "nutritional_characteristics", "allergens")

NUTRITION_COMPONENTS = (
    "calories_kcal",
    "protein_g",
    "fat_g",
    "carbs_g",
    "sugar_g",
    "sodium_mg",
    "fiber_g",
)

_ITEM_NAME_KEYS = ("product_name", "dish_name", "ingredient_name", "recipe_name", "name")
_PRICED_FIELDS = ("category", "price", "tax_rate", "discount")

DIGEST_PRECISION = 6


def normalize_name(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(str(text).lower().split())


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_number(value: Any, where: str) -> int | float:
    if not _is_number(value):
        raise SchemaError(f"{where}: expected a number, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise SchemaError(f"{where}: non-finite number")
    return value


def _check_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: expected a string, got {type(value).__name__}")
    return value


def _check_str_list(value: Any, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where}: expected a list of strings")
    return list(value)


class NutritionBasis(str, Enum):
    PER_100G = "PER_100G"
    TOTAL = "TOTAL"


@dataclass
class NutritionFacts:
    basis: NutritionBasis = NutritionBasis.PER_100G
    serving_size_g: float = 100
    calories_kcal: float = 0
    protein_g: float = 0
    fat_g: float = 0
    carbs_g: float = 0
    sugar_g: float = 0
    sodium_mg: float = 0
    fiber_g: float = 0

    @classmethod
    def from_dict(cls, data: Any, where: str = "nutrition") -> "NutritionFacts":
        if not isinstance(data, dict):
            raise SchemaError(f"{where}: expected an object")
        basis_raw = data.get("basis", "PER_100G")
        try:
            basis = NutritionBasis(basis_raw)
        except ValueError:
            raise SchemaError(f"{where}.basis: unknown basis {basis_raw!r}") from None
        if basis is NutritionBasis.TOTAL:
            raise IntegrityError(f"{where}: TOTAL facts cannot be stored in a catalog")
        values = {}
        for name in ("serving_size_g",) + NUTRITION_COMPONENTS:
            if name in data:
                num = _check_number(data[name], f"{where}.{name}")
                if num < 0:
                    raise IntegrityError(f"{where}.{name}: negative value {num}")
                values[name] = num
        unknown = set(data) - {"basis", "serving_size_g", *NUTRITION_COMPONENTS}
        if unknown:
            raise SchemaError(f"{where}: unknown nutrition fields {sorted(unknown)}")
        return cls(basis=basis, **values)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"basis": self.basis.value, "serving_size_g": self.serving_size_g}
        for name in NUTRITION_COMPONENTS:
            out[name] = getattr(self, name)
        return out


@dataclass
class CatalogRecord:
    name: str
    category: str | None = None
    price: int | float | None = None
    tax_rate: int | float | None = None
    discount: int | float | None = None
    taste: list[str] = field(default_factory=list)
    nutritional_characteristics: list[str] = field(default_factory=list)
    country_of_origin: str | None = None
    allergens: list[str] = field(default_factory=list)
    nutrition: NutritionFacts | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Any, where: str) -> "CatalogRecord":
        if not isinstance(data, dict):
            raise SchemaError(f"{where}: expected an object")
        if "name" not in data:
            raise SchemaError(f"{where}: missing field 'name'")
        rec = cls(name=normalize_name(_check_str(data["name"], f"{where}.name")))
        if not rec.name:
            raise SchemaError(f"{where}.name: empty name")
        for key, value in data.items():
            path = f"{where}.{key}"
            if key == "name":
                continue
            if key in ("category", "country_of_origin"):
                setattr(rec, key, None if value is None else _check_str(value, path))
            elif key in ("price", "tax_rate", "discount"):
                setattr(rec, key, _check_number(value, path))
            elif key in UNORDERED_TAG_FIELDS:
                setattr(rec, key, _check_str_list(value, path))
            elif key == "nutrition":
                rec.nutrition = NutritionFacts.from_dict(value, path)
            else:
                rec.extra[key] = copy.deepcopy(value)
        rec.check(where)
        return rec

    def check(self, where: str = "record") -> None:
        if self.price is not None and self.price < 0:
            raise IntegrityError(f"{where}: negative price {self.price}")
        if self.tax_rate is not None and self.tax_rate < 0:
            raise IntegrityError(f"{where}: negative tax_rate {self.tax_rate}")
        if self.discount is not None and not 0 <= self.discount <= 1:
            raise IntegrityError(f"{where}: discount {self.discount} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name}
        for key in ("category", "price", "tax_rate", "discount"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        for key in UNORDERED_TAG_FIELDS:
            out[key] = list(getattr(self, key))
        if self.country_of_origin is not None:
            out["country_of_origin"] = self.country_of_origin
        if self.nutrition is not None:
            out["nutrition"] = self.nutrition.to_dict()
        out.update(copy.deepcopy(self.extra))
        return out


@dataclass
class LedgerItem:
    name: str
    quantity: int | float
    category: str | None = None
    price: int | float | None = None
    tax_rate: int | float | None = None
    discount: int | float | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def priced_fields(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in _PRICED_FIELDS if getattr(self, k) is not None}

    def same_line(self, other: "LedgerItem") -> bool:
        """Two lines merge when name and captured attributes all agree."""
        return (
            self.name == other.name
            and self.priced_fields() == other.priced_fields()
            and self.extra == other.extra
        )


@dataclass
class UserLedger:
    kind: str
    user_id: str
    items: list[LedgerItem] = field(default_factory=list)
    attributes: dict[str, Any] = field(default_factory=dict)
    item_key: str = "product_name"

    def find(self, name: str) -> list[LedgerItem]:
        key = normalize_name(name)
        return [item for item in self.items if item.name == key]


@dataclass(frozen=True)
class StateDigest:
    digest: str
    covered_collections: tuple[str, ...] = field(default=(), compare=False)
    algorithm: str = "sha256"

    def __str__(self) -> str:
        return self.digest


@dataclass
class ScenarioDatabase:
    scenario_id: str
    catalogs: dict[str, dict[str, CatalogRecord]] = field(default_factory=dict)
    ledgers: dict[str, dict[str, UserLedger]] = field(default_factory=dict)
    dangling: list[str] = field(default_factory=list)

    @property
    def primary_catalog(self) -> str:
        for name in ("products", "dishes", "ingredients", "recipes"):
            if name in self.catalogs:
                return name
        return "products"

    def catalog(self, name: str) -> dict[str, CatalogRecord]:
        return self.catalogs.setdefault(name, {})

    def ledger(self, kind: str, user_id: str, create: bool = False) -> UserLedger | None:
        by_user = self.ledgers.get(kind, {})
        ledger = by_user.get(user_id)
        if ledger is None and create:
            ledger = UserLedger(kind=kind, user_id=user_id, item_key=self._item_key_for(kind))
            self.ledgers.setdefault(kind, {})[user_id] = ledger
        return ledger

    def _item_key_for(self, kind: str) -> str:
        for ledger in self.ledgers.get(kind, {}).values():
            return ledger.item_key
        if kind == "menu":
            return "recipes"
        return {
            "products": "product_name",
            "dishes": "dish_name",
            "ingredients": "ingredient_name",
        }.get(self.primary_catalog, "product_name")

    def reference_catalog(self, kind: str) -> str:
        return "recipes" if kind == "menu" else self.primary_catalog

    def copy(self) -> "ScenarioDatabase":
        return copy.deepcopy(self)

    def replace_contents(self, other: "ScenarioDatabase") -> None:
        self.catalogs = other.catalogs
        self.ledgers = other.ledgers

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        for name in CATALOG_COLLECTIONS:
            if name in self.catalogs:
                doc[name] = [rec.to_dict() for rec in self.catalogs[name].values()]
        for kind, key in LEDGER_COLLECTIONS.items():
            if kind not in self.ledgers:
                continue
            rows = []
            for ledger in self.ledgers[kind].values():
                row: dict[str, Any] = {"user_id": ledger.user_id}
                row.update(copy.deepcopy(ledger.attributes))
                if ledger.item_key == "recipes":
                    row["recipes"] = [item.name for item in ledger.items]
                else:
                    row["items"] = [_item_to_dict(item, ledger.item_key) for item in ledger.items]
                rows.append(row)
            doc[key] = rows
        return doc


def _item_to_dict(item: LedgerItem, item_key: str) -> dict[str, Any]:
    out: dict[str, Any] = {item_key: item.name, "quantity": item.quantity}
    out.update(item.priced_fields())
    out.update(copy.deepcopy(item.extra))
    return out


def _parse_item(data: Any, where: str) -> tuple[LedgerItem, str]:
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    name_key = next((k for k in _ITEM_NAME_KEYS if k in data), None)
    if name_key is None:
        raise SchemaError(f"{where}: missing item name field")
    name = normalize_name(_check_str(data[name_key], f"{where}.{name_key}"))
    if "quantity" not in data:
        raise SchemaError(f"{where}: missing field 'quantity'")
    qty = _check_number(data["quantity"], f"{where}.quantity")
    if qty <= 0:
        raise IntegrityError(f"{where}: quantity must be positive, got {qty}")
    item = LedgerItem(name=name, quantity=qty)
    for key, value in data.items():
        if key in (name_key, "quantity"):
            continue
        if key == "category":
            item.category = None if value is None else _check_str(value, f"{where}.category")
        elif key in ("price", "tax_rate", "discount"):
            setattr(item, key, _check_number(value, f"{where}.{key}"))
        else:
            item.extra[key] = copy.deepcopy(value)
    if item.price is not None and item.price < 0:
        raise IntegrityError(f"{where}: negative price")
    if item.tax_rate is not None and item.tax_rate < 0:
        raise IntegrityError(f"{where}: negative tax_rate")
    if item.discount is not None and not 0 <= item.discount <= 1:
        raise IntegrityError(f"{where}: discount {item.discount} outside [0, 1]")
    return item, name_key


def _parse_ledger(kind: str, data: Any, where: str) -> UserLedger:
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    if "user_id" not in data:
        raise SchemaError(f"{where}: missing field 'user_id'")
    user_id = _check_str(data["user_id"], f"{where}.user_id")
    ledger = UserLedger(kind=kind, user_id=user_id)
    if kind == "menu" and "recipes" in data:
        names = _check_str_list(data["recipes"], f"{where}.recipes")
        ledger.item_key = "recipes"
        ledger.items = [LedgerItem(name=normalize_name(n), quantity=1) for n in names]
        rest = {k: v for k, v in data.items() if k not in ("user_id", "recipes")}
    else:
        raw_items = data.get("items")
        if not isinstance(raw_items, list):
            raise SchemaError(f"{where}: missing or mistyped field 'items'")
        name_keys = set()
        for i, raw in enumerate(raw_items):
            item, name_key = _parse_item(raw, f"{where}.items[{i}]")
            ledger.items.append(item)
            name_keys.add(name_key)
        if len(name_keys) > 1:
            raise SchemaError(f"{where}: mixed item name fields {sorted(name_keys)}")
        if name_keys:
            ledger.item_key = name_keys.pop()
        rest = {k: v for k, v in data.items() if k not in ("user_id", "items")}
    ledger.attributes = copy.deepcopy(rest)
    return ledger


def parse_database(document: Any, scenario_id: str) -> ScenarioDatabase:
    """Build a validated database from an already-decoded JSON document."""
    if not isinstance(document, dict):
        raise SchemaError("scenario document must be a JSON object")
    known = set(CATALOG_COLLECTIONS) | set(LEDGER_COLLECTIONS.values())
    unknown = set(document) - known
    if unknown:
        raise SchemaError(f"unknown top-level keys: {sorted(unknown)}")

    db = ScenarioDatabase(scenario_id=scenario_id)
    for coll in CATALOG_COLLECTIONS:
        if coll not in document:
            continue
        rows = document[coll]
        if not isinstance(rows, list):
            raise SchemaError(f"{coll}: expected a list")
        catalog: dict[str, CatalogRecord] = {}
        for i, row in enumerate(rows):
            rec = CatalogRecord.from_dict(row, f"{coll}[{i}]")
            if rec.name in catalog:
                raise IntegrityError(f"{coll}: duplicate name {rec.name!r}")
            catalog[rec.name] = rec
        db.catalogs[coll] = catalog

    for key, kind in _LEDGER_KIND_BY_KEY.items():
        if key not in document:
            continue
        rows = document[key]
        if not isinstance(rows, list):
            raise SchemaError(f"{key}: expected a list")
        by_user: dict[str, UserLedger] = {}
        for i, row in enumerate(rows):
            ledger = _parse_ledger(kind, row, f"{key}[{i}]")
            if ledger.user_id in by_user:
                raise IntegrityError(f"{key}: duplicate ledger for user {ledger.user_id!r}")
            by_user[ledger.user_id] = ledger
        db.ledgers[kind] = by_user

    db.dangling = find_dangling(db)
    return db


def find_dangling(db: ScenarioDatabase) -> list[str]:
    out = []
    for kind, by_user in db.ledgers.items():
        ref = db.catalogs.get(db.reference_catalog(kind))
        if ref is None:
            continue
        for ledger in by_user.values():
            for item in ledger.items:
                if item.name not in ref:
                    out.append(f"{kind}:{ledger.user_id}:{item.name}")
    return out


def load_database(path: str | Path, scenario_id: str | None = None) -> ScenarioDatabase:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return parse_database(document, scenario_id or path.stem)


# -- canonical form ---------------------------------------------------------


def canonical_number(value: int | float) -> str:
    text = f"{round(float(value), DIGEST_PRECISION):.{DIGEST_PRECISION}f}"
    if text.lstrip("-").strip("0.") == "":
        text = text.lstrip("-")
    return text


def _canon(value: Any) -> Any:
    # Every scalar carries a type tag so "45" and 45 never collide.
    if value is None:
        return "z:"
    if isinstance(value, bool):
        return "b:" + ("1" if value else "0")
    if _is_number(value):
        return "n:" + canonical_number(value)
    if isinstance(value, str):
        return "s:" + value
    if isinstance(value, Enum):
        return "s:" + str(value.value)
    if isinstance(value, dict):
        return {str(k): _canon(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    raise TypeError(f"cannot canonicalize {type(value).__name__}")


def _sorted_canon(values: Iterable[Any]) -> list[Any]:
    canon = [_canon(v) for v in values]
    return sorted(canon, key=lambda c: json.dumps(c, sort_keys=True, ensure_ascii=False))


def _record_canon(rec: CatalogRecord) -> dict[str, Any]:
    out = _canon(
        {
            "name": rec.name,
            "category": rec.category,
            "price": rec.price,
            "tax_rate": rec.tax_rate,
            "discount": rec.discount,
            "country_of_origin": rec.country_of_origin,
            "nutrition": rec.nutrition.to_dict() if rec.nutrition else None,
            "extra": rec.extra,
        }
    )
    for key in UNORDERED_TAG_FIELDS:
        out[key] = _sorted_canon(getattr(rec, key))
    return out


def _item_canon(item: LedgerItem) -> dict[str, Any]:
    return _canon(
        {
            "name": item.name,
            "quantity": item.quantity,
            "category": item.category,
            "price": item.price,
            "tax_rate": item.tax_rate,
            "discount": item.discount,
            "extra": item.extra,
        }
    )


def canonical_form(db: ScenarioDatabase) -> dict[str, Any]:
    catalogs = {
        coll: [_record_canon(records[name]) for name in sorted(records)]
        for coll, records in sorted(db.catalogs.items())
        if records
    }
    ledgers = []
    for kind in sorted(db.ledgers):
        for user_id in sorted(db.ledgers[kind]):
            ledger = db.ledgers[kind][user_id]
            if not ledger.items:
                # an emptied ledger is indistinguishable from a missing one
                continue
            items = sorted(
                (_item_canon(item) for item in ledger.items),
                key=lambda c: (c["name"], json.dumps(c, sort_keys=True, ensure_ascii=False)),
            )
            ledgers.append(
                {
                    "kind": kind,
                    "user_id": user_id,
                    "attributes": _canon(ledger.attributes),
                    "items": items,
                }
            )
    return {"catalogs": catalogs, "ledgers": ledgers}


def canonical_bytes(db: ScenarioDatabase) -> bytes:
    return json.dumps(
        canonical_form(db), sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")


def snapshot(db: ScenarioDatabase, algorithm: str = "sha256") -> StateDigest:
    h = hashlib.new(algorithm)
    h.update(canonical_bytes(db))
    covered = tuple(sorted(db.catalogs)) + tuple(
        LEDGER_COLLECTIONS[k] for k in sorted(db.ledgers) if db.ledgers[k]
    )
    return StateDigest(digest=h.hexdigest(), covered_collections=covered, algorithm=algorithm)


def reset(db: ScenarioDatabase, pristine: ScenarioDatabase) -> ScenarioDatabase:
    if db.scenario_id != pristine.scenario_id:
        raise ScenarioMismatch(f"cannot reset {db.scenario_id!r} from {pristine.scenario_id!r}")
    db.catalogs = copy.deepcopy(pristine.catalogs)
    db.ledgers = copy.deepcopy(pristine.ledgers)
    db.dangling = list(pristine.dangling)
    return db


def states_equivalent(a: ScenarioDatabase, b: ScenarioDatabase) -> bool:
    if a.scenario_id != b.scenario_id:
        raise ScenarioMismatch(f"{a.scenario_id!r} vs {b.scenario_id!r}")
    return snapshot(a).digest == snapshot(b).digest
