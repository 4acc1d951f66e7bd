from typing import Annotated

from pydantic import BaseModel, BeforeValidator, ConfigDict

from casimir.core.units import parse_quantity


class ConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _quantity(dimension: str) -> BeforeValidator:
    return BeforeValidator(lambda raw: parse_quantity(raw, dimension))


# all quantities are stored in SI after validation; frequencies are angular
Length = Annotated[float, _quantity("length")]
Voltage = Annotated[float, _quantity("voltage")]
Duration = Annotated[float, _quantity("time")]
AngularFrequency = Annotated[float, _quantity("frequency")]
Mass = Annotated[float, _quantity("mass")]
SpectralDensity = Annotated[float, _quantity("spectral_density")]
