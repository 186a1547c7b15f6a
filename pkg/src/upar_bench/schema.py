"""Binary attribute schema: the ordered column contract all matrices align to.

A schema is a fixed, ordered list of binary attributes, each belonging to a
category.  Attribute order defines column order for every label, confidence
and prediction matrix in the toolkit.  Schemas are treated as immutable after
construction and are safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class SchemaError(ValueError):
    """Invalid schema definition or schema file."""


class DuplicateName(SchemaError):
    """Two attributes share the same name."""


class UnknownCategory(SchemaError):
    """An attribute references a category not declared by the schema."""


@dataclass(frozen=True)
class AttributeDef:
    name: str
    category: str


@dataclass(eq=False)
class AttributeSchema:
    """Ordered attribute definitions plus the ordered category list."""

    attributes: list[AttributeDef]
    categories: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        cats = set(self.categories)
        for attr in self.attributes:
            if not attr.name:
                raise SchemaError("attribute name must be non-empty")
            if attr.name in seen:
                raise DuplicateName(f"duplicate attribute name {attr.name!r}")
            seen.add(attr.name)
            if not attr.category:
                raise SchemaError(f"attribute {attr.name!r} has empty category")
            if attr.category not in cats:
                raise UnknownCategory(
                    f"attribute {attr.name!r} references unknown category {attr.category!r}"
                )
        if len(cats) != len(self.categories):
            raise SchemaError("duplicate category identifier")
        self._index = {a.name: i for i, a in enumerate(self.attributes)}

    def __len__(self):
        return len(self.attributes)

    def __eq__(self, other):
        if not isinstance(other, AttributeSchema):
            return NotImplemented
        return self.attributes == other.attributes and self.categories == other.categories

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def to_json_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "attributes": [{"name": a.name, "category": a.category} for a in self.attributes],
        }


def column_index(schema: AttributeSchema, name: str) -> int | None:
    """Index of `name` in schema column order, or None if absent."""
    return schema._index.get(name)


def load_schema(path) -> AttributeSchema:
    """Load and validate a schema JSON file; file order is column order."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"cannot parse schema file {path}: {exc}") from exc
    if not isinstance(raw, dict) or "categories" not in raw or "attributes" not in raw:
        raise SchemaError(f"schema file {path} must be an object with 'categories' and 'attributes'")
    try:
        attrs = [AttributeDef(str(a["name"]), str(a["category"])) for a in raw["attributes"]]
    except (TypeError, KeyError) as exc:
        raise SchemaError(f"malformed attribute entry in {path}: {exc}") from exc
    return AttributeSchema(attrs, [str(c) for c in raw["categories"]])


def save_schema(schema: AttributeSchema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json_dict(), fh, indent=2)
        fh.write("\n")


# Default unified schema: 40 binary attributes over 12 categories.  The
# category set follows the published benchmark (age, gender, hair length,
# clothing lengths/colors/type, four accessory categories); the per-category
# attribute lists are a documented approximation and fully replaceable via a
# schema file, since downstream code is schema-generic.
_COLORS = [
    "black", "white", "grey", "red", "blue", "yellow",
    "orange", "green", "purple", "pink", "brown", "other",
]
_LOWER_BODY_TYPES = ["trousers", "jeans", "shorts", "skirt", "dress", "leggings", "tights"]

_DEFAULT_CATEGORIES = [
    "age",
    "gender",
    "hair_length",
    "upper_body_length",
    "upper_body_color",
    "lower_body_length",
    "lower_body_color",
    "lower_body_type",
    "accessory_backpack",
    "accessory_bag",
    "accessory_glasses",
    "accessory_hat",
]


def default_upar_schema() -> AttributeSchema:
    """The embedded default schema (40 attributes, 12 categories)."""
    attrs = [
        AttributeDef("age_young", "age"),
        AttributeDef("gender_female", "gender"),
        AttributeDef("hair_long", "hair_length"),
        AttributeDef("upper_body_short", "upper_body_length"),
    ]
    attrs += [AttributeDef(f"upper_body_color_{c}", "upper_body_color") for c in _COLORS]
    attrs.append(AttributeDef("lower_body_short", "lower_body_length"))
    attrs += [AttributeDef(f"lower_body_color_{c}", "lower_body_color") for c in _COLORS]
    attrs += [AttributeDef(f"lower_body_type_{t}", "lower_body_type") for t in _LOWER_BODY_TYPES]
    attrs += [
        AttributeDef("accessory_backpack", "accessory_backpack"),
        AttributeDef("accessory_bag", "accessory_bag"),
        AttributeDef("accessory_glasses", "accessory_glasses"),
        AttributeDef("accessory_hat", "accessory_hat"),
    ]
    return AttributeSchema(attrs, list(_DEFAULT_CATEGORIES))
