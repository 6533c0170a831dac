"""Scan-by-scan filter driver: predict, update, reduce, extract."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ggiw_pmbm.association import AssociationBuilder, AssociationConfig
from ggiw_pmbm.ggiw import MotionModel, SensorModel
from ggiw_pmbm.pmbm import (
    Estimate,
    PMBMDensity,
    PPPIntensity,
    exhaustive_source,
    extract_estimate,
    predict,
    update,
)
from ggiw_pmbm.reduction import ReductionConfig, ReductionReport, reduce_density


@dataclass(frozen=True)
class FilterConfig:
    association: AssociationConfig = field(default_factory=AssociationConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    exhaustive: bool = False
    reduce: bool = True
    r_extract: float = 0.5


class PMBMTracker:
    def __init__(
        self,
        motion: MotionModel,
        sensor: SensorModel,
        birth: PPPIntensity,
        initial: Optional[PPPIntensity] = None,
        config: FilterConfig = FilterConfig(),
    ):
        self.motion = motion
        self.sensor = sensor
        self.birth = birth
        self.config = config
        self.density = PMBMDensity(initial if initial is not None else PPPIntensity())
        self.report = ReductionReport()
        self._builder = AssociationBuilder(config.association)

    def step(self, Z, sensor: Optional[SensorModel] = None) -> list[Estimate]:
        sensor = sensor if sensor is not None else self.sensor
        Z = np.asarray(Z, dtype=float).reshape(-1, 2)
        d = predict(self.density, self.motion, sensor, self.birth)
        if self.config.exhaustive:
            d = update(d, Z, sensor, exhaustive_source)
        else:
            d = update(d, Z, sensor, self._builder, self.config.association.gate_prob)
        if self.config.reduce:
            d, self.report = reduce_density(d, self.config.reduction)
        self.density = d
        return extract_estimate(d, self.config.r_extract)
