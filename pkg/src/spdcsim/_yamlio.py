"""YAML loading that remembers the source line of every key."""
from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError


class LocatedData:
    """Parsed YAML plus a map from key paths to 1-based line numbers."""

    def __init__(self, data, lines: dict, source=None):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, path: tuple):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None

    def error(self, path: tuple, message: str) -> ConfigError:
        return ConfigError(message, path=".".join(map(str, path)) or None,
                           line=self.line(tuple(path)), source=self.source)


def _walk(node, path, lines):
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            lines[path + (key,)] = k.start_mark.line + 1
            _walk(v, path + (key,), lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            lines[path + (i,)] = v.start_mark.line + 1
            _walk(v, path + (i,), lines)


def load_located(text: str, source=None) -> LocatedData:
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None, source=source) from None
    lines = {}
    if node is not None:
        _walk(node, (), lines)
    return LocatedData(data if data is not None else {}, lines, source)


def load_located_file(path) -> LocatedData:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", source=str(p)) from None
    return load_located(text, source=str(p))
