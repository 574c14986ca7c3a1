"""
Functions and classes for converting raw configuration values (strings from
flags and the environment, primitives from json and toml files) into the
types declared by configclass fields.
"""

from decimal import Decimal
from enum import Enum
from typing import Any, Dict, List, Type, Union

T = Union[bool, str, bytes, bytearray, int, float, Decimal]


def to_bool(value: T) -> bool:
    """
    Convert a bool, string type or numeric type to a bool. ``on``/``off`` and
    ``yes``/``no`` are accepted alongside ``true``/``false`` and ``1``/``0``.

    :raises ValueError: on invalid values
    :raises TypeError: on invalid `value` types.
    """
    if isinstance(value, bool):
        return value
    elif isinstance(value, (str, bytes, bytearray)):
        upper = value.decode() if isinstance(value, (bytes, bytearray)) else value
        upper = upper.strip().upper()
        if upper in ["TRUE", "1", "ON", "YES"]:
            return True
        elif upper in ["FALSE", "0", "OFF", "NO"]:
            return False
        raise ValueError(f"{value!r} is not a valid boolean value")
    elif isinstance(value, (int, float, Decimal)):
        if value == 0:
            return False
        elif value == 1:
            return True
        raise ValueError(f"{value} is not a valid boolean value")
    raise TypeError(f"{type(value)} cannot be converted to a bool")


class EnumConversionRegistry():
    """
    Resolves raw values to enum variants by case-insensitive name or value.
    """
    def __init__(self):
        self.name_mappings: Dict[Type[Enum], Dict[str, str]] = {}
        self.value_mappings: Dict[Type[Enum], Dict[Any, Any]] = {}

    def add_enum(self, enum: Type[Enum]) -> None:
        if enum in self.name_mappings:
            return
        self.value_mappings[enum] = {variant.value: variant.value for variant in enum}

        variants_by_name = {}
        for variant in enum:
            variants_by_name[variant.name.upper()] = variant.name
            self.value_mappings[enum][str(variant.value).upper()] = variant.value
        self.name_mappings[enum] = variants_by_name

    def to_enum(self, enum: Type[Enum], raw_value: Any) -> Enum:
        if not (enum in self.name_mappings and enum in self.value_mappings):
            raise ValueError(f"Enum type {enum} not registered")
        if isinstance(raw_value, enum):
            return raw_value
        if isinstance(raw_value, (str, bytes, bytearray)):
            canonical = raw_value.strip().upper()
        else:
            canonical = raw_value

        try:
            if canonical in self.name_mappings[enum]:
                return enum[self.name_mappings[enum][canonical]]
            elif canonical in self.value_mappings[enum]:
                return enum(self.value_mappings[enum][canonical])
        except TypeError:
            # unhashable raw values fall through to the error below
            pass
        choices = ", ".join(variant.name for variant in enum)
        raise ValueError(f"Invalid value {raw_value!r} for {enum.__name__}, expected one of: {choices}")


# Registry shared by every configclass in the package.
ENUMS = EnumConversionRegistry()


def quote_stripped(value: str) -> str:
    """
    Strip out a single level of single (') or double (") quotes.
    """
    single, double = "'", '"'
    if len(value) >= 2 and ((value.startswith(single) and value.endswith(single)) or
                            (value.startswith(double) and value.endswith(double))):
        return value[1:-1]
    return value


def csv_pairs(value: str) -> Dict[str, str]:
    """
    Kv lists are comma separated pairs of values where a pair is defined as
    ``"key=value"``. Whitespace around a key or value is stripped unless
    text is quoted. Empty pairs are skipped.

    :raises ValueError: on a malformed key value pair.

    >>> csv_pairs("sampler.P=8,loss.margin=0.5")
    {"sampler.P": "8", "loss.margin": "0.5"}
    """
    kv = {}
    for pair in value.split(","):
        if not pair.strip():
            continue
        if "=" not in pair:
            raise ValueError(f"Malformed key=value pair {pair.strip()!r}")
        key, val = pair.split("=", 1)
        key, val = quote_stripped(key.strip()), quote_stripped(val.strip())
        if not key:
            raise ValueError(f"Empty key in pair {pair.strip()!r}")
        kv[key] = val

    return kv


def csv_list(value: str) -> List[str]:
    """
    csv_lists are comma separated values. Whitespace around a value is stripped
    unless text is quoted. Empty values are skipped.

    >>> csv_list("R, G, B,X")
    ["R", "G", "B", "X"]
    """
    return [quote_stripped(elem.strip()) for elem in value.split(",") if elem.strip()]


def nested(pairs: Dict[str, Any]) -> Dict[str, Any]:
    """
    Expand dotted keys into nested dicts, ``{"sampler.P": 8}`` becomes
    ``{"sampler": {"P": 8}}``.
    """
    tree: Dict[str, Any] = {}
    for dotted, value in pairs.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"Key {dotted!r} conflicts with a scalar value")
        node[leaf] = value
    return tree
