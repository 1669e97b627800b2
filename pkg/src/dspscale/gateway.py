"""Walkers as external entry points.

An invocation runs four steps, each recorded in the invocation trace:
instantiate the walker, map parameters onto its properties, spawn it at the
caller's root, and collect the mapped result once it stops.
"""

from __future__ import annotations

import itertools
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import DuplicateEntryPoint, UnknownArchetype, UnknownEntryPoint, ValidationError
from .graph import Runtime
from .values import check_value, clone, type_tag

TYPES = ("any", "null", "bool", "int", "float", "number", "str", "list", "map")

STEPS = ("instantiate", "map-params", "spawn-at-root", "collect-result")


@dataclass(frozen=True)
class Param:
    name: str
    prop: str | None = None
    type: str = "any"
    required: bool = True
    validator: Callable[[Any], bool] | None = None

    @property
    def target(self) -> str:
        return self.prop or self.name


@dataclass(frozen=True)
class EntryPointSpec:
    name: str
    walker: str
    params: tuple = ()
    # (walker result key, external field name); None means return ``result`` as is
    results: tuple | None = None


@dataclass
class Invocation:
    id: str
    user: str
    entrypoint: str
    params: dict
    result: dict | None = None
    error: BaseException | None = None
    trace: list = field(default_factory=list)
    path: list = field(default_factory=list)
    walker: str | None = None


def _matches(tag: str, value) -> bool:
    actual = type_tag(value)
    if tag == "any":
        return True
    if tag == "number":
        return actual in ("int", "float")
    if tag == "float":
        return actual in ("int", "float")
    return actual == tag


class _Quiescence:
    """Many invocations, or one exclusive holder (snapshot)."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._shared = 0
        self._exclusive = False

    @contextmanager
    def shared(self):
        with self._cond:
            while self._exclusive:
                self._cond.wait()
            self._shared += 1
        try:
            yield
        finally:
            with self._cond:
                self._shared -= 1
                self._cond.notify_all()

    @contextmanager
    def exclusive(self):
        with self._cond:
            while self._exclusive or self._shared:
                self._cond.wait()
            self._exclusive = True
        try:
            yield
        finally:
            with self._cond:
                self._exclusive = False
                self._cond.notify_all()


class Gateway:
    """Registry of entry points over one runtime, with per-user serial execution."""

    def __init__(self, runtime: Runtime | None = None, keep_log: bool = True) -> None:
        self.runtime = runtime if runtime is not None else Runtime()
        self.keep_log = keep_log
        self.log: list[Invocation] = []
        self._specs: dict[str, EntryPointSpec] = {}
        self._user_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._quiescence = _Quiescence()
        self._ids = itertools.count(1)

    def register_entrypoint(self, spec: EntryPointSpec) -> None:
        if spec.name in self._specs:
            raise DuplicateEntryPoint(f"entry point {spec.name!r} already registered")
        fields = self.runtime.walker_fields(spec.walker)
        externals = [p.name for p in spec.params]
        if len(set(externals)) != len(externals):
            raise ValueError(f"{spec.name}: duplicate parameter names")
        for param in spec.params:
            if param.type not in TYPES:
                raise ValueError(f"{spec.name}: unknown type {param.type!r} for {param.name}")
            if param.target not in fields:
                raise UnknownArchetype(f"{spec.name}: walker {spec.walker!r} has no property {param.target!r}")
        if spec.results is not None:
            names = [external for _, external in spec.results]
            if len(set(names)) != len(names):
                raise ValueError(f"{spec.name}: duplicate result names")
        self._specs[spec.name] = spec

    def entrypoint(self, name: str, walker: str | None = None, params=(), results=None) -> EntryPointSpec:
        spec = EntryPointSpec(name, walker or name, tuple(params), None if results is None else tuple(results))
        self.register_entrypoint(spec)
        return spec

    def entrypoints(self) -> list[str]:
        return sorted(self._specs)

    def spec(self, name: str) -> EntryPointSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownEntryPoint(f"no entry point {name!r}") from None

    def validate(self, name: str, params: dict | None) -> dict:
        """Check ``params`` and return the walker property assignments they map to."""
        spec = self.spec(name)
        if params is None:
            params = {}
        if not isinstance(params, dict):
            raise ValidationError({"<body>": "parameters must be a map"})
        errors: dict[str, str] = {}
        known = {p.name for p in spec.params}
        for extra in sorted(set(params) - known):
            errors[extra] = "unexpected parameter"
        assignments = {}
        for param in spec.params:
            if param.name not in params:
                if param.required:
                    errors[param.name] = "required parameter missing"
                continue
            value = params[param.name]
            try:
                check_value(value, param.name)
            except TypeError as exc:
                errors[param.name] = str(exc)
                continue
            if not _matches(param.type, value):
                errors[param.name] = f"expected {param.type}, got {type_tag(value)}"
                continue
            if param.validator is not None and not param.validator(value):
                errors[param.name] = "rejected by validator"
                continue
            if param.type == "float" and type_tag(value) == "int":
                value = float(value)
            assignments[param.target] = clone(value)
        if errors:
            raise ValidationError(errors)
        return assignments

    def _user_lock(self, user: str) -> threading.Lock:
        with self._locks_guard:
            return self._user_locks[user]

    def call(self, user: str, name: str, params: dict | None = None) -> Invocation:
        """Run the entry point for ``user``; errors are re-raised after being recorded."""
        if not isinstance(user, str) or not user:
            raise ValidationError({"user": "a user id is required"})
        spec = self.spec(name)
        assignments = self.validate(name, params)
        inv = Invocation(f"inv{next(self._ids)}", user, name, clone(params or {}))
        rt = self.runtime
        with self._quiescence.shared(), self._user_lock(user):
            try:
                wid = rt.new_walker(spec.walker, user=user)
                inv.walker = wid
                inv.trace.append("instantiate")
                walker = rt.walker(wid)
                walker.properties.update(assignments)
                inv.trace.append("map-params")
                root = rt.resolve_root(user)
                inv.trace.append("spawn-at-root")
                rt.start(wid, root, run=True)
                inv.path = list(walker.path)
                inv.result = self._map_result(spec, walker.result)
                inv.trace.append("collect-result")
            except BaseException as exc:
                inv.error = exc
                raise
            finally:
                if inv.walker is not None and inv.walker in rt.walkers:
                    w = rt.walkers[inv.walker]
                    inv.path = list(w.path)
                    if w.status.value != "active":
                        rt.discard_walker(inv.walker)
                if self.keep_log:
                    self.log.append(inv)
        return inv

    def invoke(self, user: str, name: str, params: dict | None = None) -> dict:
        return self.call(user, name, params).result

    @staticmethod
    def _map_result(spec: EntryPointSpec, result: dict) -> dict:
        check_value(result, f"{spec.name} result")
        if spec.results is None:
            return clone(result)
        return {external: clone(result.get(key)) for key, external in spec.results}

    @contextmanager
    def quiescent(self):
        """Block new invocations and wait for running ones to drain."""
        with self._quiescence.exclusive():
            yield self.runtime

    def snapshot(self, path):
        from .persistence import snapshot

        with self.quiescent() as rt:
            return snapshot(rt, path)
