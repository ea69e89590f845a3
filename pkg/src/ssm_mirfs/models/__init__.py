"""Model families and their JSON-serializable parameter specs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

from ..core import ParamVector
from .ararch import ArArchModel, ararch_closed_form_beta1
from .base import InadmissibleParameterError, StateSpaceModel
from .finite import FiniteGaussianHMM, FixedChainModel, IidGaussian, stationary_distribution
from .garch import Garch11Model, GarchSpec, SimulateOnlyError, garch11_conditional_loglik
from .lingauss import LinGaussModel, kalman_filter, kalman_loglik
from .msar import MsArModel
from .sv import SvModel
from .toy import SwitchingArModel

__all__ = [
    "ArArchModel",
    "ArArchSpec",
    "FiniteGaussianHMM",
    "FixedChainModel",
    "Garch11Model",
    "GarchSpec",
    "IidGaussian",
    "InadmissibleParameterError",
    "LinGaussModel",
    "LinGaussSpec",
    "MODEL_TAGS",
    "MsArModel",
    "MsArSpec",
    "SimulateOnlyError",
    "StateSpaceModel",
    "SvModel",
    "SvSpec",
    "SwitchingArModel",
    "ararch_closed_form_beta1",
    "garch11_conditional_loglik",
    "garch_state_space",
    "kalman_filter",
    "kalman_loglik",
    "spec_from_dict",
    "stationary_distribution",
    "sv_model",
]


class _SpecBase:
    """Shared plumbing: the numeric fields map one-to-one onto model parameters."""

    _options: tuple[str, ...] = ()

    def model(self) -> StateSpaceModel:
        raise NotImplementedError

    def theta(self) -> ParamVector:
        m = self.model()
        return m.params(**{n: getattr(self, n) for n in m.param_template.names})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"{cls.__name__}: unknown field(s) {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class MsArSpec(_SpecBase):
    p11: float
    p21: float
    phi1: float
    mu1: float
    mu2: float
    sigma2: float

    def model(self):
        return MsArModel()


@dataclass(frozen=True)
class LinGaussSpec(_SpecBase):
    alpha: float
    sigma_eta2: float
    sigma_eps2: float
    noise: str = "gaussian"

    def model(self):
        return LinGaussModel(self.noise)


@dataclass(frozen=True)
class ArArchSpec(_SpecBase):
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float

    def model(self):
        return ArArchModel()


@dataclass(frozen=True)
class SvSpec(_SpecBase):
    alpha: float
    sigma_eta2: float
    omega: float
    qml: bool = False

    def model(self):
        return SvModel(self.qml)


def garch_state_space(spec: GarchSpec) -> Garch11Model:
    """Grid-ready model for a GARCH spec (p = q = 1 only)."""
    return spec.model()


def sv_model(spec: SvSpec) -> SvModel:
    return spec.model()


SPECS = {
    "msar": MsArSpec,
    "lingauss": LinGaussSpec,
    "ararch": ArArchSpec,
    "garch11": GarchSpec,
    "sv": SvSpec,
}
MODEL_TAGS = tuple(SPECS)


def spec_from_dict(tag: str, data: Mapping[str, Any]):
    """Build the spec for a model-family tag; raises ``ValueError`` for unknown tags."""
    if tag not in SPECS:
        raise ValueError(f"unknown model tag {tag!r}; expected one of {list(MODEL_TAGS)}")
    spec = SPECS[tag].from_dict(data)
    # validate parameter bounds and cross constraints eagerly
    spec.model().check(spec.theta())
    return spec
