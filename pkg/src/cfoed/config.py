"""Run configuration: a JSON file validated against ``config.schema.json``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import CfoedError, ConfigError
from .fem import ExperimentDesign, Mesh1D, build_case_system
from .oracle import CaseKind, Criterion, ModelProblemSpec
from .priors import DEFAULT_NODES, PriorSpec


def load_schema() -> dict:
    return json.loads(resources.files("cfoed").joinpath("config.schema.json").read_text())


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.01

    def __post_init__(self):
        if not self.sigma >= 0.0:
            raise ConfigError("noise sigma must be >= 0")


@dataclass
class RunConfig:
    case: CaseKind
    spec: ModelProblemSpec
    prior: PriorSpec
    elements: int = 64
    quad_nodes: int = DEFAULT_NODES
    positions: list = field(default_factory=lambda: [0.5])
    bounds: list | None = None
    min_separation: float | None = None
    criterion: Criterion = Criterion.ECFM
    seed: int = 0
    output: str = "out"
    sweep_resolution: int | None = None
    eps0: list | None = None
    support: tuple | None = None
    data_source: str = "analytic"
    data_path: str | None = None
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(0.01))
    trials: int = 1000

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {path}: {exc.message}") from exc
        try:
            spec = ModelProblemSpec(**{k: float(v) for k, v in raw["spec"].items()})
            prior = PriorSpec.from_dict(raw["prior"])
        except CfoedError as exc:
            raise ConfigError(str(exc)) from exc
        design = raw.get("design", {})
        inverse = raw.get("inverse", {})
        data = inverse.get("data", {"source": "analytic"})
        path = data.get("path")
        if data["source"] == "file":
            if not path:
                raise ConfigError("file data source needs a path")
            if base_dir is not None and not Path(path).is_absolute():
                path = str(base_dir / path)
        noise = raw.get("noise", {})
        support = inverse.get("support")
        cfg = cls(
            case=CaseKind(raw["case"]),
            spec=spec,
            prior=prior,
            elements=raw.get("mesh", {}).get("elements", 64),
            quad_nodes=raw.get("quadrature", {}).get("nodes", DEFAULT_NODES),
            positions=list(design.get("positions", [0.5])),
            bounds=design.get("bounds"),
            min_separation=design.get("min_separation"),
            criterion=Criterion(raw.get("criterion", "ecfm")),
            seed=raw.get("seed", 0),
            output=raw.get("output", "out"),
            sweep_resolution=raw.get("sweep", {}).get("resolution"),
            eps0=inverse.get("eps0"),
            support=None if support is None else tuple(
                (-np.inf if s is None and i == 0 else np.inf if s is None else float(s)) for i, s in enumerate(support)
            ),
            data_source=data["source"],
            data_path=path,
            noise=NoiseModel(float(noise.get("sigma", 0.01))),
            trials=noise.get("trials", 1000),
        )
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def check(self) -> None:
        """Cross-field validation that the schema cannot express."""
        if self.prior.dim != 1:
            raise ConfigError("the model-problem cases take a single model parameter")
        if self.sweep_resolution is not None and self.sweep_resolution < 2:
            raise ConfigError("sweep resolution must be at least 2")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        try:
            self.design()
            self.system()
        except CfoedError as exc:
            raise ConfigError(str(exc)) from exc

    def mesh(self) -> Mesh1D:
        return Mesh1D.uniform(self.elements)

    def system(self):
        return build_case_system(self.case, self.spec, self.mesh())

    def design(self) -> ExperimentDesign:
        mesh = self.mesh()
        design = ExperimentDesign.on_mesh(mesh, self.positions, self.bounds, self.min_separation)
        design.check_separation(mesh)
        return design

    def quadrature(self):
        return self.prior.quadrature(self.quad_nodes)

    def initial_eps(self) -> np.ndarray:
        return np.asarray(self.eps0, dtype=float) if self.eps0 is not None else self.prior.mean()

    def inverse_support(self):
        """Box for the inverse problems; defaults to unbounded (positive for the material case)."""
        if self.support is not None:
            return self.support
        if self.case is CaseKind.PARAMETERIZED_MATERIAL:
            return (1e-6 * float(self.prior.mean()[0]), np.inf)
        return None
