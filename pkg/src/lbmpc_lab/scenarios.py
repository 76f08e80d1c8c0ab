"""Built-in scenarios and JSON scenario loading.

Scenario JSON is either ``{"preset": name, "overrides": {...}}`` or a full
description with matrices, sets (``{"box": {"lo", "hi"}}`` or
``{"normals", "offsets"}``), a residual selector and a reward selector.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .dynamics import (
    Residual,
    RewardMean,
    RewardModel,
    Scenario,
    example1_reward,
    example2_residual,
    example2_reward,
    lti_residual,
    quadratic_reward,
    zero_residual,
)
from .errors import ContractError
from .hvac import HvacParams, build_hvac_scenario
from .polytope import HPolytope

_CUSTOM_RESIDUALS: dict[str, Callable[..., Residual]] = {}
_CUSTOM_REWARDS: dict[str, Callable[..., RewardMean]] = {}


def register_residual(name: str, factory: Callable[..., Residual]) -> None:
    """Make a code-defined residual available to JSON scenarios by name."""
    _CUSTOM_RESIDUALS[name] = factory


def register_reward(name: str, factory: Callable[..., RewardMean]) -> None:
    _CUSTOM_REWARDS[name] = factory


def example1(**overrides) -> Scenario:
    """Scalar ``x+ = u`` with reward ``-(u^2 + (x-1)^2)`` and trivial W and Theta."""
    base = dict(
        name="example1",
        A=np.zeros((1, 1)),
        B=np.ones((1, 1)),
        residual=zero_residual(1, 1),
        theta_true=np.zeros(1),
        Theta=HPolytope.box([0.0], [0.0]),
        W=HPolytope.box([0.0], [0.0]),
        X=HPolytope.box([-1.0], [1.0]),
        U=HPolytope.box([-1.0], [1.0]),
        reward=RewardModel(example1_reward(), "gaussian", 1.0),
        gain_K=np.zeros((1, 1)),
        feedback_offset=np.zeros(1),
        nominal_offset=np.zeros(1),
        x0=np.ones(1),
    )
    base.update(overrides)
    return Scenario(**base)


def example2(**overrides) -> Scenario:
    """Scalar plant with nominal part zero and residual ``-(2 - u) x^2``.

    The published residual sign ``-(2 + u)`` is available through
    ``residual=example2_residual(+1.0)`` together with ``check_samples=0``;
    its range is not contained in W.
    """
    base = dict(
        name="example2",
        A=np.zeros((1, 1)),
        B=np.zeros((1, 1)),
        residual=example2_residual(-1.0),
        theta_true=np.zeros(1),
        Theta=HPolytope.box([0.0], [1.0]),
        W=HPolytope.box([-0.5], [0.5]),
        X=HPolytope.box([-0.5], [0.5]),
        U=HPolytope.box([0.0], [1.0]),
        reward=RewardModel(example2_reward(), "gaussian", 1.0),
        gain_K=np.zeros((1, 1)),
        feedback_offset=np.zeros(1),
        nominal_offset=np.zeros(1),
        x0=np.array([-0.5]),
    )
    base.update(overrides)
    return Scenario(**base)


def lti(**overrides) -> Scenario:
    """Two-state, one-input linear plant with an unknown linear residual.

    ``theta`` holds ``vec(Theta_A)`` (4 entries) and ``Theta_B`` (2 entries);
    the feedback gain makes Omega a non-box polygon.
    """
    theta_true = np.array([0.02, -0.01, 0.0, 0.03, 0.01, -0.02])
    base = dict(
        name="lti",
        A=np.array([[0.9, 0.2], [0.0, 0.7]]),
        B=np.array([[0.0], [1.0]]),
        residual=lti_residual(2, 1),
        theta_true=theta_true,
        Theta=HPolytope.box(np.full(6, -0.05), np.full(6, 0.05)),
        W=HPolytope.box([-0.2, -0.2], [0.2, 0.2]),
        X=HPolytope.box([-5.0, -5.0], [5.0, 5.0]),
        U=HPolytope.box([-1.0], [1.0]),
        reward=RewardModel(quadratic_reward(-np.eye(2), [[-0.1]]), "gaussian", 1.0),
        gain_K=np.array([[-0.1, -0.4]]),
        feedback_offset=np.zeros(1),
        nominal_offset=np.zeros(2),
        x0=np.array([2.0, -1.0]),
    )
    base.update(overrides)
    return Scenario(**base)


def lti_scalar(**overrides) -> Scenario:
    """Scalar linear plant ``x+ = 0.8 x + u + a x + b u`` with theta = (a, b)."""
    base = dict(
        name="lti_scalar",
        A=np.array([[0.8]]),
        B=np.array([[1.0]]),
        residual=lti_residual(1, 1),
        theta_true=np.array([0.05, -0.1]),
        Theta=HPolytope.box([-0.1, -0.2], [0.1, 0.2]),
        W=HPolytope.box([-0.3], [0.3]),
        X=HPolytope.box([-2.0], [2.0]),
        U=HPolytope.box([-0.5], [0.5]),
        reward=RewardModel(quadratic_reward([[-1.0]], [[-0.5]]), "gaussian", 1.0),
        gain_K=np.array([[-0.4]]),
        feedback_offset=np.zeros(1),
        nominal_offset=np.zeros(1),
        x0=np.array([1.0]),
    )
    base.update(overrides)
    return Scenario(**base)


def hvac(**overrides) -> Scenario:
    extra = {k: overrides.pop(k) for k in ("check_samples", "mle_state_source") if k in overrides}
    return build_hvac_scenario(HvacParams.from_dict(overrides), **extra)


PRESETS: dict[str, Callable[..., Scenario]] = {
    "example1": example1,
    "example2": example2,
    "lti": lti,
    "lti_scalar": lti_scalar,
    "hvac": hvac,
}


def _poly(obj: Any) -> HPolytope:
    if isinstance(obj, HPolytope):
        return obj
    return HPolytope.from_json(obj)


def _residual(spec: dict, n: int, q: int) -> Residual:
    name = spec.get("name", "zero")
    if name == "zero":
        return zero_residual(n, q)
    if name == "example2":
        return example2_residual(float(spec.get("sign", -1.0)))
    if name == "lti":
        return lti_residual(n, q)
    if name in _CUSTOM_RESIDUALS:
        return _CUSTOM_RESIDUALS[name](**{k: v for k, v in spec.items() if k != "name"})
    raise ContractError(f"unknown residual {name!r}")


def _reward(spec: dict) -> RewardModel:
    name = spec.get("name")
    if name == "example1":
        mean = example1_reward()
    elif name == "example2":
        mean = example2_reward()
    elif name == "quadratic":
        mean = quadratic_reward(spec["Q"], spec["R"])
    elif name in _CUSTOM_REWARDS:
        mean = _CUSTOM_REWARDS[name](**{k: v for k, v in spec.items() if k not in ("name", "family", "sigma")})
    else:
        raise ContractError(f"unknown reward {name!r}")
    return RewardModel(mean, spec.get("family", "gaussian"), float(spec.get("sigma", 1.0)))


_ARRAY_FIELDS = ("A", "B", "gain_K", "feedback_offset", "nominal_offset", "theta_true", "x0")
_SET_FIELDS = ("Theta", "W", "X", "U")


def _convert_fields(d: dict, scalar_dims: tuple[int, int] | None = None) -> dict:
    out = {}
    for k, v in d.items():
        if k == "K":
            k = "gain_K"
        if k in _ARRAY_FIELDS:
            out[k] = np.asarray(v, dtype=float)
        elif k in _SET_FIELDS:
            out[k] = _poly(v)
        else:
            out[k] = v
    return out


def scenario_from_dict(obj: dict) -> Scenario:
    """Build a scenario from its JSON form."""
    if "preset" in obj:
        name = obj["preset"]
        if name not in PRESETS:
            raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        overrides = dict(obj.get("overrides", {}))
        if name == "hvac":
            return hvac(**overrides)
        if "reward" in overrides:
            overrides["reward"] = _reward(overrides["reward"])
        if "residual" in overrides:
            base = PRESETS[name]()
            overrides["residual"] = _residual(overrides["residual"], base.n, base.q)
        if "sigma" in overrides:
            sigma = float(overrides.pop("sigma"))
            base_reward = overrides.get("reward") or PRESETS[name]().reward
            overrides["reward"] = RewardModel(base_reward.mean_h, base_reward.family, sigma)
        return PRESETS[name](**_convert_fields(overrides))
    d = _convert_fields(obj)
    A = np.atleast_2d(d["A"])
    n = A.shape[0]
    B = np.asarray(d["B"], dtype=float).reshape(n, -1)
    q = B.shape[1]
    residual = _residual(obj.get("residual", {"name": "zero"}), n, q)
    reward = _reward(obj["reward"])
    return Scenario(
        name=obj.get("name", "custom"),
        A=A,
        B=B,
        residual=residual,
        theta_true=d["theta_true"],
        Theta=d["Theta"],
        W=d["W"],
        X=d["X"],
        U=d["U"],
        reward=reward,
        gain_K=d.get("gain_K", np.zeros((q, n))),
        feedback_offset=d.get("feedback_offset", np.zeros(q)),
        nominal_offset=d.get("nominal_offset", np.zeros(n)),
        x0=d.get("x0"),
        mle_state_source=obj.get("mle_state_source", "regenerate"),
        transition_sigma=float(obj.get("transition_sigma", 1e-3)),
        lipschitz_metadata=obj.get("lipschitz_metadata"),
        check_samples=int(obj.get("check_samples", 10_000)),
    )


def load_scenario(ref: str | dict) -> Scenario:
    """Load from a preset name, a JSON file path or an already parsed dict."""
    if isinstance(ref, dict):
        return scenario_from_dict(ref)
    if ref in PRESETS:
        return PRESETS[ref]()
    path = Path(ref)
    if not path.exists():
        raise ContractError(f"scenario {ref!r} is neither a preset nor a file")
    return scenario_from_dict(json.loads(path.read_text()))


def certificate_for(scn: Scenario, **kw):
    """Invariant-set certificate for the scenario's feedback law, cached per scenario object."""
    from .polytope import max_output_admissible_set

    cache = _CERT_CACHE.get(id(scn))
    if cache is not None and cache[0] is scn:
        return cache[1]
    cert = max_output_admissible_set(
        scn.A, scn.B, scn.gain_K, scn.X, scn.U, scn.W, offset=scn.feedback_offset, **kw
    )
    _CERT_CACHE[id(scn)] = (scn, cert)
    return cert


_CERT_CACHE: dict[int, tuple[Scenario, Any]] = {}
