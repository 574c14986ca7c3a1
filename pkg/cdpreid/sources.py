"""
`Source` classes know how to fetch configuration values from the places an
experiment can be configured from: in-memory mappings (command line flag
overrides), environment variables, json files and toml files.

**Builtin sources:**
"""

import json
import os
from collections.abc import Mapping
from dataclasses import MISSING
from typing import Any, Iterable, List, Optional

import toml

from .conversions import quote_stripped


class Source:
    """
    Base class that all sources should inherit from.

    A strict source must not hold keys the consuming configclass does not
    declare. Sources fed by files and flags are strict, the environment is not.
    """
    strict = True
    namespace: Any = None
    canonical_kv_mapping: dict

    def _namespace_stripped_key(self, key):
        """
        Strips a namespace from a key when the namespace simply prepends the key.
        """
        if self.namespace is None:
            return key
        if key.startswith(self.namespace):
            return key[len(self.namespace):]
        return None

    def get(self, field, default=MISSING):
        value = self.canonical_kv_mapping.get(field, MISSING)
        if value is MISSING:
            return default
        return value

    def keys(self) -> Iterable[str]:
        return self.canonical_kv_mapping.keys()

    def child(self, name: str) -> "Source":
        """
        Source over the nested section ``name``. A missing section is empty.

        :raises TypeError: when ``name`` holds a scalar instead of a section.
        """
        value = self.canonical_kv_mapping.get(name, MISSING)
        if value is MISSING or value is None:
            return MappingSource({}, strict=self.strict)
        if not isinstance(value, Mapping):
            raise TypeError(f"Expected a section of values for '{name}', got {type(value).__name__}")
        return MappingSource(value, strict=self.strict)

    def reload(self):
        """ Child classes that have a sensible reload strategy should override this method """
        pass

    def __repr__(self):
        return f"{type(self).__name__}(keys={sorted(self.keys())!r})"


class MappingSource(Source):
    """
    Get configuration values from an in-memory mapping, such as parsed
    command line flags. Nested mappings are sections.

    :param mapping: mapping of field names to raw values.
    :param strict: reject keys that no field declares.
    """
    def __init__(self, mapping: Mapping, strict: bool = True):
        self.mapping = mapping
        self.strict = strict
        self.reload()

    def reload(self):
        self.canonical_kv_mapping = dict(self.mapping)


class EnvironmentSource(Source):
    """
    Get configuration values from environment variables.

    :param namespace: An optional string prefix to match on with environment variables.
    :param environ: A different source of environment variables can be passed if you don't want to use os.environ.

    If ``namespace`` is provided, only environment variable names that start with
    the namespace value will be considered. The namespace is also stripped off
    the variable name before it is stored.
    """
    strict = False

    def __init__(self, namespace: Optional[str] = None, environ: Mapping = os.environ):
        self.namespace = namespace
        self.environ = environ
        self.reload()

    def reload(self):
        """
        Fetch and parse values from the environment dict and store them.
        """
        self.canonical_kv_mapping = {}
        for key, value in self.environ.items():
            key = self._namespace_stripped_key(key)
            if key:
                self.canonical_kv_mapping[key] = quote_stripped(value)


class FileSource(Source):
    def __init__(self, path=None, filehandle=None, namespace: Optional[List[str]] = None):
        self.path = path
        self.filehandle = filehandle
        self.namespace = namespace
        self.filestart = None
        if self.filehandle is not None and self.filehandle.seekable():
            self.filestart = self.filehandle.tell()
        self.reload()

    def reload(self):
        """
        Fetch and parse values from the file source and store them.

        If a ``path`` was provided to the source, the path will be reopened and read.
        If a ``filehandle`` was provided and the handle supports seeking, it will
        seek to the position the handle was at when passed to the source.
        """
        if self.path is not None and self.filehandle is not None:
            raise ValueError("Cannot pass both path and filehandle. Try passing one or the other.")
        elif self.path is None and self.filehandle is None:
            raise ValueError("Either path or filehandle argument must be passed.")
        if self.path:
            with open(self.path) as fh:
                obj = self.parse(fh)
        else:
            if self.filestart is not None:
                self.filehandle.seek(self.filestart)
            obj = self.parse(self.filehandle)

        for ns in self.namespace or []:
            obj = obj[ns]
        if not isinstance(obj, Mapping):
            raise TypeError(f"{type(self).__name__} expects a table of values at the top level")
        self.canonical_kv_mapping = dict(obj)

    def parse(self, fh) -> Any:
        raise NotImplementedError


class JsonSource(FileSource):
    """
    Get configuration values from a json encoded file or filehandle.

    :param path: path to read from.
    :param filehandle: open file handle to read from.
    :param namespace: list of keys used to access a nested configuration object.

    :raises ValueError: It is an error if both ``path`` and ``filehandle`` are defined `or` neither ``path`` nor ``filehandle`` are defined.

    >>> src = JsonSource(path="experiment.json")
    >>> src.child("sampler").get("P")
    8
    """
    def parse(self, fh):
        return json.load(fh)


class TomlSource(FileSource):
    """
    Get configuration values from a `.toml` file.

    :param path: path to read from.
    :param filehandle: open file handle to read from.
    :param namespace: optional list of nested tables to search for configuration fields

    :raises ValueError: It is an error if both ``path`` and ``filehandle`` are defined `or` neither ``path`` nor ``filehandle`` are defined.
    """
    def parse(self, fh):
        return toml.load(fh)


def file_source(path: str) -> FileSource:
    """
    Pick the file source matching the suffix of ``path``.
    """
    if str(path).lower().endswith(".toml"):
        return TomlSource(path=path)
    return JsonSource(path=path)
