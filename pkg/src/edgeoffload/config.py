"""System configuration: population sizes, caps, distributions and policy knobs.

The on-disk format is a flat TOML file with dotted keys, for example::

    num_servers = 3
    devices_per_type = [15, 15, 15]
    epsilon = 20.0
    device.Q_max = 100
    device.7.tau_max = 40
    server.Q_max = 50
    server.2.u_max = 3.0
    server.2.0.d_max = 25
    type.0.arrival_high = 1.0

Entity indices are zero-based.  Every omitted key takes its default from the
simulation setup table (M=3, K=3, L=20, arrival/service bands per type).
"""

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_ARRIVAL_BANDS = ((0.8, 1.0), (0.4, 0.6), (0.0, 0.4))
DEFAULT_SERVICE_BANDS = ((0.5, 1.5), (1.0, 2.0), (1.5, 2.5))
# used when K != 3 (the K-sweep setup draws every type from these)
GENERIC_ARRIVAL_BAND = (0.0, 1.0)
GENERIC_SERVICE_BAND = (0.0, 3.0)

DEVICE_FIELDS = ("a_max", "xi_max", "d_max", "Q_max", "tau_max", "zeta", "utility_weight")
VM_FIELDS = ("u_max", "d_max", "Q_max", "zeta")
TYPE_FIELDS = ("arrival_low", "arrival_high", "service_low", "service_high")

DEFAULT_DEVICE = {
    "a_max": None,
    "xi_max": None,
    "d_max": 20.0,
    "Q_max": 100.0,
    "tau_max": 50,
    "zeta": None,
    "utility_weight": 1.0,
}
DEFAULT_VM = {"u_max": None, "d_max": 20.0, "Q_max": 50.0, "zeta": None}

UTILITIES = ("log1p", "linear")
SOLVERS = ("hungarian", "auction")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def default_bands(num_types):
    if num_types == 3:
        return DEFAULT_ARRIVAL_BANDS, DEFAULT_SERVICE_BANDS
    return (GENERIC_ARRIVAL_BAND,) * num_types, (GENERIC_SERVICE_BAND,) * num_types


@dataclass(frozen=True)
class SystemConfig:
    """Static parameters of one edge system plus the controller's knobs.

    Per-entity caps are stored as defaults plus sparse overrides so that the
    population sizes can be changed with :meth:`replace` without rebuilding
    every array by hand.  The dense per-entity views (``a_max``, ``Q_s_max``,
    ...) are derived lazily.
    """

    devices_per_type: tuple = (15, 15, 15)
    num_servers: int = 3
    num_channels: int = 20
    arrival_bands: Optional[tuple] = None
    service_bands: Optional[tuple] = None
    channel_band: tuple = (0.0, 1.0)
    xi_band: tuple = (1.0, 1.0)
    c_max: Optional[float] = None
    device: dict = field(default_factory=lambda: dict(DEFAULT_DEVICE))
    device_overrides: dict = field(default_factory=dict)
    vm: dict = field(default_factory=lambda: dict(DEFAULT_VM))
    server_overrides: dict = field(default_factory=dict)
    vm_overrides: dict = field(default_factory=dict)
    epsilon: Optional[float] = None
    delta: int = 1
    zeta_margin: float = 1.0
    utility: str = "log1p"
    solver: str = "hungarian"
    solver_hops: int = 1
    horizon: int = 2000

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "devices_per_type", tuple(int(n) for n in self.devices_per_type))
        arr, srv = default_bands(len(self.devices_per_type))
        if self.arrival_bands is None:
            set_(self, "arrival_bands", arr)
        if self.service_bands is None:
            set_(self, "service_bands", srv)
        set_(self, "arrival_bands", tuple(tuple(map(float, b)) for b in self.arrival_bands))
        set_(self, "service_bands", tuple(tuple(map(float, b)) for b in self.service_bands))
        set_(self, "channel_band", tuple(map(float, self.channel_band)))
        set_(self, "xi_band", tuple(map(float, self.xi_band)))
        set_(self, "device", {**DEFAULT_DEVICE, **self.device})
        set_(self, "vm", {**DEFAULT_VM, **self.vm})
        self._validate()

    def replace(self, **changes):
        """Return a copy with ``changes`` applied (derived arrays are rebuilt)."""
        return dataclasses.replace(self, **changes)

    # -- sizes ---------------------------------------------------------------

    @property
    def num_types(self):
        return len(self.devices_per_type)

    @property
    def num_devices(self):
        return sum(self.devices_per_type)

    @cached_property
    def device_type(self):
        return np.repeat(np.arange(self.num_types), self.devices_per_type)

    # -- derived per-entity arrays ------------------------------------------

    def _device_array(self, name, fallback=None):
        out = np.empty(self.num_devices)
        for n in range(self.num_devices):
            value = self.device_overrides.get(n, {}).get(name, self.device[name])
            if value is None:
                value = fallback(n) if fallback is not None else np.nan
            out[n] = value
        return out

    def _vm_array(self, name, fallback=None):
        out = np.empty((self.num_servers, self.num_types))
        for m in range(self.num_servers):
            for k in range(self.num_types):
                value = self.vm_overrides.get((m, k), {}).get(
                    name, self.server_overrides.get(m, {}).get(name, self.vm[name])
                )
                if value is None:
                    value = fallback(m, k) if fallback is not None else np.nan
                out[m, k] = value
        return out

    @property
    def channel_cap(self):
        return self.channel_band[1] if self.c_max is None else float(self.c_max)

    @cached_property
    def a_max(self):
        return self._device_array(
            "a_max", lambda n: self.arrival_bands[self.device_type[n]][1]
        )

    @cached_property
    def xi_max(self):
        return self._device_array("xi_max", lambda n: self.xi_band[1])

    @cached_property
    def d_u_max(self):
        return self._device_array("d_max")

    @cached_property
    def Q_u_max(self):
        return self._device_array("Q_max")

    @cached_property
    def tau_max(self):
        return self._device_array("tau_max")

    @cached_property
    def zeta_u(self):
        """Explicit delay-penalty rates, NaN where they should be selected."""
        return self._device_array("zeta")

    @cached_property
    def utility_weight(self):
        return self._device_array("utility_weight")

    @cached_property
    def u_max(self):
        return self._vm_array("u_max", lambda m, k: self.service_bands[k][1])

    @cached_property
    def d_s_max(self):
        return self._vm_array("d_max")

    @cached_property
    def Q_s_max(self):
        return self._vm_array("Q_max")

    @cached_property
    def zeta_s(self):
        return self._vm_array("zeta")

    # -- validation ----------------------------------------------------------

    def _validate(self):
        K = self.num_types
        if K < 1 or any(n < 1 for n in self.devices_per_type):
            raise ConfigError("devices_per_type: need at least one type with >= 1 device each")
        if self.num_servers < 1:
            raise ConfigError("num_servers: must be >= 1")
        if self.num_channels < 0:
            raise ConfigError("num_channels: must be >= 0")
        if len(self.arrival_bands) != K or len(self.service_bands) != K:
            raise ConfigError(f"type.*: expected bands for {K} task types")
        for key, (lo, hi) in [("channel", self.channel_band), ("xi", self.xi_band)] + [
            (f"type.{k}.arrival", b) for k, b in enumerate(self.arrival_bands)
        ] + [(f"type.{k}.service", b) for k, b in enumerate(self.service_bands)]:
            if not (0 <= lo <= hi) or not np.isfinite(hi):
                raise ConfigError(f"{key}_low/{key}_high: need 0 <= low <= high, got [{lo}, {hi}]")
        if self.channel_cap < self.channel_band[1]:
            raise ConfigError(f"c_max: must be >= channel.high ({self.channel_band[1]})")
        if self.epsilon is not None and not (self.epsilon >= 0):
            raise ConfigError(f"epsilon: must be >= 0, got {self.epsilon}")
        if int(self.delta) != self.delta or self.delta < 1:
            raise ConfigError(f"delta: must be an integer >= 1, got {self.delta}")
        if not self.zeta_margin > 0:
            raise ConfigError(f"zeta_margin: must be > 0, got {self.zeta_margin}")
        if self.utility not in UTILITIES:
            raise ConfigError(f"utility: must be one of {UTILITIES}, got {self.utility!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver: must be one of {SOLVERS}, got {self.solver!r}")
        if self.solver_hops < 1:
            raise ConfigError("solver_hops: must be >= 1")
        if self.horizon < 1:
            raise ConfigError(f"horizon: must be >= 1, got {self.horizon}")
        for n in self.device_overrides:
            if not 0 <= n < self.num_devices:
                raise ConfigError(f"device.{n}: index out of range (N={self.num_devices})")
        for m in self.server_overrides:
            if not 0 <= m < self.num_servers:
                raise ConfigError(f"server.{m}: index out of range (M={self.num_servers})")
        for m, k in self.vm_overrides:
            if not (0 <= m < self.num_servers and 0 <= k < K):
                raise ConfigError(f"server.{m}.{k}: index out of range")

        def bad_device(mask, what):
            n = int(np.flatnonzero(mask)[0])
            raise ConfigError(f"device.{n}.{what}")

        arrival_hi = np.array([self.arrival_bands[k][1] for k in self.device_type])
        for name, arr in [("a_max", self.a_max), ("xi_max", self.xi_max),
                          ("d_max", self.d_u_max), ("Q_max", self.Q_u_max),
                          ("utility_weight", self.utility_weight)]:
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                bad_device(~np.isfinite(arr) | (arr < 0), f"{name}: must be finite and >= 0")
        if np.any(self.utility_weight <= 0):
            bad_device(self.utility_weight <= 0, "utility_weight: must be > 0")
        if np.any(self.a_max < arrival_hi):
            bad_device(self.a_max < arrival_hi, "a_max: must cover the arrival band upper end")
        if np.any(self.xi_max < self.xi_band[1]):
            bad_device(self.xi_max < self.xi_band[1], "xi_max: must cover xi.high")
        if np.any(self.tau_max < 2) or np.any(self.tau_max != np.round(self.tau_max)):
            bad_device((self.tau_max < 2) | (self.tau_max != np.round(self.tau_max)),
                       "tau_max: must be an integer >= 2")
        if np.any(self.Q_u_max < self.a_max):
            bad_device(self.Q_u_max < self.a_max, "Q_max: buffer must be >= a_max")
        z = self.zeta_u
        if np.any(z[np.isfinite(z)] < 0) or np.any(np.isinf(z)):
            bad_device(np.isinf(z) | (np.nan_to_num(z) < 0), "zeta: must be >= 0")

        def bad_vm(mask, what):
            m, k = map(int, np.argwhere(mask)[0])
            raise ConfigError(f"server.{m}.{k}.{what}")

        service_hi = np.array([b[1] for b in self.service_bands])[None, :]
        for name, arr in [("u_max", self.u_max), ("d_max", self.d_s_max), ("Q_max", self.Q_s_max)]:
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                bad_vm(~np.isfinite(arr) | (arr < 0), f"{name}: must be finite and >= 0")
        if np.any(self.u_max < service_hi):
            bad_vm(self.u_max < service_hi, "u_max: must cover the service band upper end")
        floor = self.channel_cap * self.num_channels
        if np.any(self.Q_s_max < floor):
            bad_vm(self.Q_s_max < floor, f"Q_max: buffer must be >= c_max*L ({floor:g})")
        z = self.zeta_s
        if np.any(z[np.isfinite(z)] < 0) or np.any(np.isinf(z)):
            bad_vm(np.isinf(z) | (np.nan_to_num(z) < 0), "zeta: must be >= 0")


# -- file format -------------------------------------------------------------

_SCALARS = {
    "num_types": int,
    "devices_per_type": None,
    "num_servers": int,
    "num_channels": int,
    "c_max": float,
    "epsilon": float,
    "delta": int,
    "zeta_margin": float,
    "utility": str,
    "solver": str,
    "solver_hops": int,
    "horizon": int,
}


def _number(key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return kind(value)


def _index(key, text):
    if not text.isdigit():
        raise ConfigError(f"{key}: unknown key")
    return int(text)


def config_from_mapping(data):
    """Build a :class:`SystemConfig` from the nested mapping of a parsed file."""
    kwargs = {}
    num_types = None
    device, device_overrides = {}, {}
    vm, server_overrides, vm_overrides = {}, {}, {}
    type_fields = {}
    bands = {}

    for key, value in data.items():
        if key in _SCALARS:
            if key == "devices_per_type":
                if isinstance(value, list):
                    kwargs[key] = tuple(_number(key, v, int) for v in value)
                else:
                    kwargs[key] = _number(key, value, int)
            elif key == "num_types":
                num_types = _number(key, value, int)
            elif _SCALARS[key] is str:
                if not isinstance(value, str):
                    raise ConfigError(f"{key}: expected a string, got {value!r}")
                kwargs[key] = value
            elif key == "epsilon" and value == "auto":
                kwargs[key] = None
            else:
                kwargs[key] = _number(key, value, _SCALARS[key])
        elif key in ("channel", "xi"):
            if not isinstance(value, dict) or set(value) - {"low", "high"}:
                raise ConfigError(f"{key}: only {key}.low and {key}.high are allowed")
            bands[key] = {f: _number(f"{key}.{f}", v) for f, v in value.items()}
        elif key == "type":
            for k_text, fields in value.items():
                k = _index(f"type.{k_text}", k_text)
                if not isinstance(fields, dict):
                    raise ConfigError(f"type.{k}: expected type.{k}.<field>")
                for f, v in fields.items():
                    if f not in TYPE_FIELDS:
                        raise ConfigError(f"type.{k}.{f}: unknown key")
                    type_fields.setdefault(k, {})[f] = _number(f"type.{k}.{f}", v)
        elif key == "device":
            for sub, v in value.items():
                if sub in DEVICE_FIELDS:
                    device[sub] = _number(f"device.{sub}", v)
                    continue
                n = _index(f"device.{sub}", sub)
                if not isinstance(v, dict):
                    raise ConfigError(f"device.{n}: expected device.{n}.<field>")
                for f, x in v.items():
                    if f not in DEVICE_FIELDS:
                        raise ConfigError(f"device.{n}.{f}: unknown key")
                    device_overrides.setdefault(n, {})[f] = _number(f"device.{n}.{f}", x)
        elif key == "server":
            for sub, v in value.items():
                if sub in VM_FIELDS:
                    vm[sub] = _number(f"server.{sub}", v)
                    continue
                m = _index(f"server.{sub}", sub)
                if not isinstance(v, dict):
                    raise ConfigError(f"server.{m}: expected server.{m}.<field>")
                for f, x in v.items():
                    if f in VM_FIELDS:
                        server_overrides.setdefault(m, {})[f] = _number(f"server.{m}.{f}", x)
                        continue
                    k = _index(f"server.{m}.{f}", f)
                    if not isinstance(x, dict):
                        raise ConfigError(f"server.{m}.{k}: expected server.{m}.{k}.<field>")
                    for g, y in x.items():
                        if g not in VM_FIELDS:
                            raise ConfigError(f"server.{m}.{k}.{g}: unknown key")
                        vm_overrides.setdefault((m, k), {})[g] = _number(
                            f"server.{m}.{k}.{g}", y
                        )
        else:
            raise ConfigError(f"{key}: unknown key")

    dpt = kwargs.pop("devices_per_type", None)
    if isinstance(dpt, int):
        dpt = (dpt,) * (num_types if num_types is not None else 3)
    elif dpt is None:
        dpt = (15,) * num_types if num_types is not None else (15, 15, 15)
    elif num_types is not None and len(dpt) != num_types:
        raise ConfigError(f"devices_per_type: {len(dpt)} entries but num_types = {num_types}")
    K = len(dpt)

    arrival, service = (list(b) for b in default_bands(K))
    for k, fields in type_fields.items():
        if k >= K:
            raise ConfigError(f"type.{k}: index out of range (K={K})")
        arrival[k] = (fields.get("arrival_low", arrival[k][0]),
                      fields.get("arrival_high", arrival[k][1]))
        service[k] = (fields.get("service_low", service[k][0]),
                      fields.get("service_high", service[k][1]))
    for name in ("channel", "xi"):
        if name in bands:
            base = SystemConfig.__dataclass_fields__[f"{name}_band"].default
            kwargs[f"{name}_band"] = (bands[name].get("low", base[0]),
                                      bands[name].get("high", base[1]))
    return SystemConfig(
        devices_per_type=dpt,
        arrival_bands=tuple(arrival),
        service_bands=tuple(service),
        device=device,
        device_overrides=device_overrides,
        vm=vm,
        server_overrides=server_overrides,
        vm_overrides=vm_overrides,
        **kwargs,
    )


def parse_config(path):
    """Read and validate a config file; omitted keys take the default setup."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed config ({exc})") from exc
    return config_from_mapping(data)
