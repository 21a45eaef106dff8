"""Static network infrastructure: hosts, subnets, services, access grants.

Loaded from a YAML config; the bundled default (``data/cage2.yaml``) is the
11-host / 3-subnet / 9-service CAGE-2 network. A :class:`Scenario` is
immutable after load and shared read-only by every other module.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources

import numpy as np
import yaml

from . import kernels

ACCESS_GRANTS = ("N", "U", "S")
_GRANT_CODE = {"N": kernels.T_NONE, "U": kernels.T_USER, "S": kernels.T_SUPER}

DEFAULT_SCENARIO_RESOURCE = "cage2.yaml"


class ScenarioError(ValueError):
    """Configuration problem, with enough context to locate it."""


@dataclass(frozen=True)
class HostSpec:
    """One host: subnet membership, services with their access grants, and an
    optional connectivity link exposing another host once this one is rooted."""

    name: str
    subnet: int
    services: tuple[tuple[str, str], ...]
    connectivity: str | None = None


@dataclass(frozen=True, eq=False)
class ScenarioTables:
    """Kernel-ready lookup arrays derived from a scenario."""

    subnet_of: np.ndarray        # int64[n] subnet id per host
    gm: np.ndarray               # int64[n] connectivity target index, -1 if none
    ehost_mask: np.ndarray       # int64[n] bitmask of real services per host
    taccess: np.ndarray          # int8[n, m] access-grant codes, T_ABSENT if not offered
    subnet_ids: np.ndarray       # int64 sorted unique subnet ids
    entry_subnet: int            # subnet sweepable without a foothold
    target_index: int


@dataclass(frozen=True)
class Scenario:
    hosts: tuple[HostSpec, ...]
    subnets: tuple[int, ...]
    services: tuple[str, ...]
    target_host: str

    def __post_init__(self):
        _validate(self)

    # -- lookups -----------------------------------------------------------

    @cached_property
    def host_index(self) -> dict[str, int]:
        return {h.name: i for i, h in enumerate(self.hosts)}

    @cached_property
    def service_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.services)}

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    @property
    def n_services(self) -> int:
        return len(self.services)

    def host(self, name: str) -> HostSpec:
        try:
            return self.hosts[self.host_index[name]]
        except KeyError:
            raise ScenarioError(f"unknown host {name!r}") from None

    def service_access(self, host: str, service: str) -> str | None:
        """Access grant t(h,e), or None when the host does not offer the
        service (the decoy/failed-exploit case)."""
        spec = self.host(host)
        for e, grant in spec.services:
            if e == service:
                return grant
        return None

    def connectivity(self, host: str) -> str | None:
        return self.host(host).connectivity

    def host_services_mask(self, index: int) -> int:
        return int(self.tables.ehost_mask[index])

    @cached_property
    def tables(self) -> ScenarioTables:
        n, m = self.n_hosts, self.n_services
        subnet_of = np.zeros(n, dtype=np.int64)
        gm = np.full(n, -1, dtype=np.int64)
        ehost_mask = np.zeros(n, dtype=np.int64)
        taccess = np.full((n, m), kernels.T_ABSENT, dtype=np.int8)
        for i, h in enumerate(self.hosts):
            subnet_of[i] = h.subnet
            if h.connectivity is not None:
                gm[i] = self.host_index[h.connectivity]
            for e, grant in h.services:
                j = self.service_index[e]
                ehost_mask[i] |= np.int64(1) << j
                taccess[i, j] = _GRANT_CODE[grant]
        subnet_ids = np.array(sorted(self.subnets), dtype=np.int64)
        for arr in (subnet_of, gm, ehost_mask, taccess, subnet_ids):
            arr.setflags(write=False)
        return ScenarioTables(
            subnet_of=subnet_of,
            gm=gm,
            ehost_mask=ehost_mask,
            taccess=taccess,
            subnet_ids=subnet_ids,
            entry_subnet=int(subnet_ids[0]),
            target_index=self.host_index[self.target_host],
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "subnets": list(self.subnets),
            "services": list(self.services),
            "target_host": self.target_host,
            "hosts": [
                {
                    "name": h.name,
                    "subnet": h.subnet,
                    "services": {e: grant for e, grant in h.services},
                    **({"connectivity": h.connectivity} if h.connectivity else {}),
                }
                for h in self.hosts
            ],
        }

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(canon).hexdigest()[:16]


def _validate(s: Scenario) -> None:
    if not s.hosts:
        raise ScenarioError("scenario has no hosts")
    if len(set(s.services)) != len(s.services):
        raise ScenarioError("duplicate service identifiers")
    if len(s.services) > 62:
        raise ScenarioError("at most 62 services supported (bitmask packing)")
    subnets = set(s.subnets)
    names = set()
    for i, h in enumerate(s.hosts):
        where = f"hosts[{i}] ({h.name!r})"
        if h.name in names:
            raise ScenarioError(f"{where}: duplicate host name")
        names.add(h.name)
        if h.subnet not in subnets:
            raise ScenarioError(f"{where}: subnet {h.subnet} not declared")
        seen = set()
        for e, grant in h.services:
            if e not in s.services:
                raise ScenarioError(f"{where}: unknown service {e!r}")
            if e in seen:
                raise ScenarioError(f"{where}: service {e!r} listed twice")
            seen.add(e)
            if grant not in ACCESS_GRANTS:
                raise ScenarioError(
                    f"{where}: access for {e!r} must be one of {ACCESS_GRANTS}, got {grant!r}")
    for i, h in enumerate(s.hosts):
        if h.connectivity is not None and h.connectivity not in names:
            raise ScenarioError(
                f"hosts[{i}] ({h.name!r}): connectivity target {h.connectivity!r} is not a defined host")
    if s.target_host not in names:
        raise ScenarioError(f"target_host {s.target_host!r} is not a defined host")


def _host_from_dict(i: int, raw: dict) -> HostSpec:
    where = f"hosts[{i}]"
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    for key in ("name", "subnet", "services"):
        if key not in raw:
            raise ScenarioError(f"{where}: missing key {key!r}")
    services = raw["services"]
    if not isinstance(services, dict):
        raise ScenarioError(f"{where} ({raw.get('name')!r}): services must be a mapping of service -> access")
    if not isinstance(raw["subnet"], int):
        raise ScenarioError(f"{where} ({raw.get('name')!r}): subnet must be an integer")
    return HostSpec(
        name=str(raw["name"]),
        subnet=raw["subnet"],
        services=tuple((str(e), str(grant)) for e, grant in services.items()),
        connectivity=raw.get("connectivity"),
    )


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a mapping")
    for key in ("subnets", "services", "target_host", "hosts"):
        if key not in data:
            raise ScenarioError(f"missing top-level key {key!r}")
    subnets = data["subnets"]
    if not all(isinstance(z, int) for z in subnets):
        raise ScenarioError("subnets must be integers")
    hosts = tuple(_host_from_dict(i, raw) for i, raw in enumerate(data["hosts"]))
    return Scenario(
        hosts=hosts,
        subnets=tuple(subnets),
        services=tuple(str(e) for e in data["services"]),
        target_host=str(data["target_host"]),
    )


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario config from YAML text."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"config does not parse as YAML: {exc}") from exc
    return scenario_from_dict(data)


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.to_dict(), sort_keys=False)


def default_scenario() -> Scenario:
    text = resources.files(__package__).joinpath("data", DEFAULT_SCENARIO_RESOURCE).read_text()
    return load_scenario(text)
