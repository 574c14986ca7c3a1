"""
Contains the configclass wrapper used by every configuration object in the
package, and the registry used to recognise configclasses when they are
nested inside one another.

A configclass is a frozen dataclass that can validate its fields and build
itself from an ordered list of sources (see ``cdpreid.sources``). Unlike a
global settings object, any number of instances may coexist, so two
experiments with different configurations can run in one process.
"""

import dataclasses
import typing
from dataclasses import MISSING
from enum import Enum
from typing import Any, Dict, Set, Type

from .conversions import ENUMS, csv_list, to_bool
from .sources import MappingSource, Source

# The global wrap registry is used to check whether a class has already been
# wrapped as a configclass and to recognise nested configclass fields.
_WRAP_REGISTRY: Set[Type] = set()

_NONE_STRINGS = {"", "NONE", "NULL"}


def field(*, converter=None, validator=None, default=MISSING, default_factory=MISSING, doc=None):
    """
    Declare a configclass field that differs from the default functionality.

    :param converter: is a function that takes a single raw value and constructs a return value that is the same as the configclass field's type annotation.
    :param validator: is a function that takes a single argument and returns True or False depending on whether that argument is considered a valid value, or a container of the valid values.
    :param default: is the default value of the field.
    :param default_factory: is a 0-argument function called to initialize a field's value.
    :param doc: one line description, shown by the command line help.

    :raises ValueError: It is an error to specify both default and default_factory.
    """
    if default is not MISSING and default_factory is not MISSING:
        raise ValueError('cannot specify both default and default_factory')
    metadata = {"converter": converter, "validator": validator, "doc": doc}
    if default_factory is not MISSING:
        return dataclasses.field(default_factory=default_factory, metadata=metadata)
    return dataclasses.field(default=default, metadata=metadata)


def is_configclass(obj) -> bool:
    cls = obj if isinstance(obj, type) else type(obj)
    return cls in _WRAP_REGISTRY


def configclass(_cls=None, *, frozen=True):
    """
    Turn a class into a configclass.

    >>> from cdpreid.configclass import configclass, field
    >>> @configclass
    ... class SamplerConfig:
    ...     P: int = field(default=16, validator=lambda p: p >= 2)
    ...     K: int = 4

    The returned class gains a ``from_sources(*sources)`` classmethod. Sources
    are prioritized from first to last, giving the last source the highest
    priority, and fields missing from every source keep their defaults.

    Field validators also run on direct construction, so an invalid
    configuration cannot be built in any way.
    """
    def wrap(cls):
        return _process_config_class(cls, frozen)

    # Called with keyword args
    if _cls is None:
        return wrap

    # Called with defaults
    return wrap(_cls)


def _process_config_class(cls, frozen):
    if cls in _WRAP_REGISTRY:
        raise RuntimeError("Cannot double register a class as a `configclass`")

    user_post_init = cls.__dict__.get("__post_init__")

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _validate(type(self), f, getattr(self, f.name))
        if user_post_init is not None:
            user_post_init(self)

    cls.__post_init__ = __post_init__
    datacls = dataclasses.dataclass(cls, frozen=frozen)
    datacls.from_sources = classmethod(_from_sources)
    datacls.from_mapping = classmethod(lambda c, mapping: c.from_sources(MappingSource(mapping)))
    _WRAP_REGISTRY.add(datacls)
    return datacls


def _validate(cls, f, value):
    validator = f.metadata.get("validator")
    if validator is None:
        return
    try:
        if callable(validator):
            ok = validator(value)
        else:
            ok = value in validator
    except TypeError as exc:
        raise TypeError(f"Bad validation function for {cls.__name__}.{f.name}") from exc
    if not ok:
        raise ValueError(f"{cls.__name__}.{f.name}={value!r} fails validation")


def _from_sources(cls, *sources: Source):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for source in sources:
        if source.strict:
            unknown = sorted(set(source.keys()) - names)
            if unknown:
                raise ValueError(f"Unknown {cls.__name__} configuration keys: {', '.join(unknown)}")

    kwargs: Dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        if is_configclass(tp):
            kwargs[f.name] = tp.from_sources(*[source.child(f.name) for source in sources])
            continue

        # Try to fetch the value from the various sources in right-to-left order,
        # breaking after the first non-MISSING value
        value = MISSING
        for source in reversed(sources):
            this_value = source.get(f.name)
            if this_value is not MISSING:
                value = this_value
                break
        if value is MISSING:
            continue
        try:
            kwargs[f.name] = convert_raw_value(tp, value, f.metadata.get("converter"))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{cls.__name__}.{f.name}: cannot use {value!r}: {exc}") from exc

    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in kwargs and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        field_fields = "fields" if len(missing) > 1 else "field"
        raise ValueError(f"'{cls.__name__}' is missing {len(missing)} required configuration {field_fields}: {', '.join(missing)}")
    return cls(**kwargs)


def convert_raw_value(tp, raw_value, converter=None):
    """
    Convert a raw value from a source into the annotated type ``tp``.
    """
    if converter is not None:
        return converter(raw_value)

    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [arg for arg in args if arg is not type(None)]
        if raw_value is None or (isinstance(raw_value, str) and raw_value.strip().upper() in _NONE_STRINGS):
            return None
        return convert_raw_value(inner[0], raw_value)
    if origin is tuple:
        items = csv_list(raw_value) if isinstance(raw_value, str) else list(raw_value)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(convert_raw_value(args[0], item) for item in items)
        if len(items) != len(args):
            raise ValueError(f"expected {len(args)} values, got {len(items)}")
        return tuple(convert_raw_value(arg, item) for arg, item in zip(args, items))
    if isinstance(tp, type) and issubclass(tp, Enum):
        ENUMS.add_enum(tp)
        return ENUMS.to_enum(tp, raw_value)
    if tp is bool:
        return to_bool(raw_value)
    if tp is int:
        if isinstance(raw_value, bool):
            raise TypeError("a bool is not an integer")
        if isinstance(raw_value, float):
            if not raw_value.is_integer():
                raise ValueError(f"{raw_value} is not an integer")
            return int(raw_value)
        return int(raw_value)
    if tp is float:
        return float(raw_value)
    if tp is str:
        return str(raw_value)
    if tp is Any or isinstance(raw_value, tp):
        return raw_value
    # Most primitive types handle conversions in the constructor.
    return tp(raw_value)


def as_dict(config) -> Dict[str, Any]:
    """
    Serialize a configclass tree into json and toml friendly primitives.
    Enums become their names and tuples become lists.
    """
    def plain(value):
        if is_configclass(value):
            return as_dict(value)
        if isinstance(value, Enum):
            return value.name
        if isinstance(value, (tuple, list)):
            return [plain(item) for item in value]
        return value

    return {f.name: plain(getattr(config, f.name)) for f in dataclasses.fields(config)}


replace = dataclasses.replace
