"""Scenario files: YAML documents validated against a bundled JSON schema.

A scenario fixes the plant, the offline basis and initial policy, the
barrier list, the simulation grid and the output file names. Loading turns
the document into concrete library objects.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from hjbsafe.cbf import IntegratorBox, pointing_barrier
from hjbsafe.dynamics import ControlAffineModel, hovercraft_model, spacecraft_model
from hjbsafe.polyalgebra import Basis, generate_even_basis
from hjbsafe.sga import PolicyIterationConfig, PolynomialPolicy
from hjbsafe.sim import SimulationConfig

BUNDLED = ("hovercraft", "hovercraft_sweep", "spacecraft_case1", "spacecraft_case2")


class ScenarioError(ValueError):
    pass


def schema() -> dict:
    text = resources.files("hjbsafe.scenarios").joinpath("schema.json").read_text()
    return json.loads(text)


def bundled_path(name: str):
    return resources.files("hjbsafe.scenarios").joinpath(f"{name}.yaml")


def _error_path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc) -> None:
    """Raise ScenarioError naming the first offending key."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), e.path))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    # the if/then wrapper reports the nested error; its context has the real cause
    while err.context:
        err = jsonschema.exceptions.best_match(err.context)
    raise ScenarioError(f"invalid scenario at '{_error_path(err)}': {err.message}")


def read_document(source) -> tuple[dict, str]:
    """Load a YAML document from a path or a bundled scenario name."""
    text = None
    path = Path(str(source))
    if path.is_file():
        text = path.read_text()
        origin = str(path)
    elif str(source) in BUNDLED:
        text = bundled_path(str(source)).read_text()
        origin = f"bundled:{source}"
    else:
        raise FileNotFoundError(f"scenario not found: {source}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{origin}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{origin}: expected a mapping at the top level")
    return doc, origin


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    doc: dict
    model: ControlAffineModel
    basis: Basis
    u0: PolynomialPolicy
    pi_config: PolicyIterationConfig
    pi_method: str
    switch_tol: float
    barriers: tuple
    sim_config: SimulationConfig
    x0: np.ndarray
    cost_rule: str
    alphas: tuple
    outputs: dict
    reference: dict

    def with_alpha(self, alpha: float) -> Scenario:
        """Same scenario with every integrator box using the given alpha."""
        bars = tuple(
            dataclasses.replace(b, alpha=float(alpha)) if isinstance(b, IntegratorBox) else b
            for b in self.barriers
        )
        return dataclasses.replace(self, barriers=bars)

    @property
    def has_integrator_box(self) -> bool:
        return any(isinstance(b, IntegratorBox) for b in self.barriers)


def _build_model(spec: dict) -> ControlAffineModel:
    kind = spec["kind"]
    if kind == "hovercraft":
        model = hovercraft_model(v_max=spec.get("v_max", 1.0), u_max=spec.get("u_max", 1.0))
    else:
        J = np.asarray(spec["inertia"], dtype=float) if "inertia" in spec else None
        try:
            model = spacecraft_model(J=J, u_max=spec.get("u_max", 0.123), h_max=spec.get("h_max", 0.4))
        except ValueError as exc:
            raise ScenarioError(f"model/inertia: {exc}") from exc
    qw, rw = spec.get("state_weight", 1.0), spec.get("input_weight", 1.0)
    if qw != 1.0 or rw != 1.0:
        model = dataclasses.replace(model, Q=qw * model.Q, R=rw * model.R)
    return model


def _state_index(model: ControlAffineModel, ref) -> int:
    if isinstance(ref, int):
        if ref >= model.n:
            raise ScenarioError(f"barrier state index {ref} out of range for n={model.n}")
        return ref
    if ref not in model.state_names:
        raise ScenarioError(f"unknown barrier state {ref!r}; expected one of {list(model.state_names)}")
    return model.state_names.index(ref)


def _build_barriers(model: ControlAffineModel, specs: list) -> tuple:
    out = []
    for k, spec in enumerate(specs):
        if spec["kind"] == "integrator_box":
            i = _state_index(model, spec["state"])
            name = spec.get("name", model.state_names[i] if model.state_names else f"x{i}")
            if not spec["lo"] < spec["hi"]:
                raise ScenarioError(f"barriers/{k}: lo must be below hi")
            out.append(IntegratorBox(i, float(spec["lo"]), float(spec["hi"]), float(spec["alpha"]), name))
        else:
            if model.name != "spacecraft":
                raise ScenarioError(f"barriers/{k}: pointing barrier needs the spacecraft model")
            b = np.asarray(spec["boresight"], dtype=float)
            n = np.asarray(spec["direction"], dtype=float)
            if b.shape != (3,) or n.shape != (3,):
                raise ScenarioError(f"barriers/{k}: boresight and direction must have 3 entries")
            out.append(
                pointing_barrier(b / np.linalg.norm(b), n, np.deg2rad(spec["theta_deg"]),
                                 model.params["J"], spec["alpha1"], spec["alpha2"],
                                 spec.get("name", "pointing"))
            )
    return tuple(out)


def from_document(doc: dict) -> Scenario:
    validate(doc)
    model = _build_model(doc["model"])
    basis_spec = doc["basis"]
    if basis_spec["nvars"] != model.n_offline:
        raise ScenarioError(
            f"basis/nvars is {basis_spec['nvars']} but the {model.name} value function "
            f"has {model.n_offline} variables"
        )
    basis = generate_even_basis(basis_spec["nvars"], basis_spec["degrees"])
    gain = np.asarray(doc["initial_policy"]["gain"], dtype=float)
    if gain.shape != (model.m, model.n_offline):
        raise ScenarioError(
            f"initial_policy/gain has shape {gain.shape}, expected ({model.m}, {model.n_offline})"
        )
    pi = dict(doc.get("policy_iteration", {}))
    method = pi.pop("method", "galerkin")
    switch_tol = pi.pop("switch_tol", 1e-3)
    sim = dict(doc["simulation"])
    x0 = np.asarray(sim.pop("x0"), dtype=float)
    if x0.shape != (model.n,):
        raise ScenarioError(f"simulation/x0 has {x0.size} entries, expected {model.n}")
    cost_rule = sim.pop("cost_rule", "sample")
    barriers = _build_barriers(model, doc.get("barriers", []))
    alphas = tuple(float(a) for a in doc.get("sweep", {}).get("alphas", ()))
    return Scenario(
        name=doc["name"],
        doc=doc,
        model=model,
        basis=basis,
        u0=PolynomialPolicy.linear(gain),
        pi_config=PolicyIterationConfig(**pi),
        pi_method=method,
        switch_tol=switch_tol,
        barriers=barriers,
        sim_config=SimulationConfig(**sim),
        x0=x0,
        cost_rule=cost_rule,
        alphas=alphas,
        outputs=dict(doc["outputs"]),
        reference=dict(doc.get("reference", {})),
    )


def load_scenario(source) -> Scenario:
    doc, _ = read_document(source)
    return from_document(doc)
