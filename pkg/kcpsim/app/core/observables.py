import csv
import logging
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Optional, Union

from .dynamics import LatticeState, Trajectory
from .event_engine import DomainSpec, Site
from .exceptions import HorizonError

logger = logging.getLogger('observables')

Configuration = Union[LatticeState, Dict[Site, float]]


@dataclass(frozen=True)
class ObservableRecord:
    time: float
    total_knowledge: float
    support_size: int
    density_above_half: float
    max_value: float


def _values(state: Configuration) -> Dict[Site, float]:
    return state.values if isinstance(state, LatticeState) else state


def total_knowledge(state: Configuration) -> float:
    """Sum of all site values"""
    return math.fsum(_values(state).values())


def support(state: Configuration) -> FrozenSet[Site]:
    """Sites holding positive knowledge (the contact-process projection)"""
    return frozenset(site for site, value in _values(state).items() if value > 0)


def density_above(state: Configuration, theta: float, domain: DomainSpec) -> float:
    """Fraction of domain sites with value above theta; a plain count on lazy domains"""
    count = sum(1 for value in _values(state).values() if value > theta)
    if not domain.is_finite:
        logger.warning(f"density_above on {domain.describe()} returns the count {count}, not a fraction")
        return float(count)
    return count / domain.num_sites


def record(state: Configuration, time: float, domain: DomainSpec) -> ObservableRecord:
    """Collect the observables of one configuration at time"""
    values = _values(state)
    if domain.is_finite:
        density = density_above(values, 0.5, domain)
    else:
        density = float(sum(1 for v in values.values() if v > 0.5))
    return ObservableRecord(
        time=time,
        total_knowledge=total_knowledge(values),
        support_size=len(support(values)),
        density_above_half=density,
        max_value=max(values.values(), default=0.0),
    )


def survival_proxy(trajectory: Trajectory, horizon: float, delta: float = 0.0) -> bool:
    """Finite-horizon survival: total knowledge at the horizon exceeds delta"""
    for sample in reversed(trajectory.samples):
        if sample.time == horizon:
            return total_knowledge(sample.values) > delta
    if trajectory.censored:
        raise HorizonError(f"trajectory was censored before t={horizon}")
    raise HorizonError(f"trajectory was not sampled at t={horizon}")


def write_trajectory_csv(trajectories: Iterable[Trajectory], path: Path, header: str = '',
                         domain: Optional[DomainSpec] = None):
    """Long-format export: replica, time, observable name, value"""
    names = [f.name for f in fields(ObservableRecord) if f.name != 'time']
    with open(path, 'w', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['replica', 'time', 'observable', 'value'])
        for replica, trajectory in enumerate(trajectories):
            space = domain or trajectory.params.domain
            for sample in trajectory.samples:
                rec = record(sample.values, sample.time, space)
                for name, value in zip(names, astuple(rec)[1:]):
                    writer.writerow([replica, repr(sample.time), name, repr(value)])
